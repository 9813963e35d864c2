"""Loader for the committed constants table (``data/constants.yaml``)."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

import yaml


@lru_cache(maxsize=None)
def table() -> dict:
    text = resources.files("cpt3").joinpath("data/constants.yaml").read_text()
    return yaml.safe_load(text)


_T = table()
_P = _T["physical"]
_CA = _T["calcium40"]

C_LIGHT = float(_P["c"])
H_PLANCK = float(_P["h"])
K_B = float(_P["k_B"])
AMU = float(_P["atomic_mass_unit"])
MU_B_HZ_PER_T = float(_P["bohr_magneton_hz_per_t"])

#: 40Ca+ ion mass in kg (neutral atomic mass minus one electron)
MASS_CA40 = (float(_CA["atomic_mass_u"]) - float(_P["electron_mass_u"])) * AMU

LANDE_G = {k: float(v) for k, v in _CA["lande_g"].items()}
WAVELENGTH = {k: float(v) for k, v in _CA["wavelength"].items()}
BETA = float(_CA["branching_beta"])
GAMMA_P = 1.0 / float(_CA["lifetime_p12"])
GAMMA_D32 = 1.0 / float(_CA["lifetime_d32"])
GAMMA_D52 = 1.0 / float(_CA["lifetime_d52"])

FREQ_PS = float(_CA["freq_ps"])
FREQ_D52S = float(_CA["freq_d52s"])
FREQ_DD = float(_CA["freq_dd"])
FREQ_DD_SIGMA = float(_CA["freq_dd_uncertainty"])

F_REP = float(_T["comb"]["f_rep"])
SIGMA_REP = float(_T["comb"]["sigma_rep"])
WAVEMETER_ACCURACY = float(_T["comb"]["wavemeter_accuracy"])

GAUSS = 1e-4  # tesla


def atomic_frequencies(f_dd: float = FREQ_DD) -> dict[str, float]:
    """Absolute transition frequencies (Hz) of the B, R and C lines.

    The R line is derived from the other two and ``f_dd`` so that
    ``nu_R + nu_C - nu_B == f_dd`` holds by construction.
    """
    return {
        "B": FREQ_PS,
        "C": FREQ_D52S,
        "R": FREQ_PS - FREQ_D52S + f_dd,
    }
