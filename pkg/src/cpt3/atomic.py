"""Static description of the 40Ca+ four-level system and its Zeeman structure.

Half-integer angular momenta are handled as :class:`fractions.Fraction` so
that line labels (``m_thz``) are exact rationals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from sympy import Rational
from sympy.physics.wigner import clebsch_gordan

from . import constants as const

LEVEL_NAMES = ("S12", "P12", "D32", "D52")


@dataclass(frozen=True)
class Level:
    name: str
    J: Fraction
    lande_g: float
    lifetime: float  # s, inf for the ground state

    @property
    def sublevels(self) -> tuple[Fraction, ...]:
        twoj = int(2 * self.J)
        return tuple(Fraction(k, 2) for k in range(-twoj, twoj + 1, 2))


LEVELS = {
    "S12": Level("S12", Fraction(1, 2), const.LANDE_G["S12"], math.inf),
    "P12": Level("P12", Fraction(1, 2), const.LANDE_G["P12"], 1.0 / const.GAMMA_P),
    "D32": Level("D32", Fraction(3, 2), const.LANDE_G["D32"], 1.0 / const.GAMMA_D32),
    "D52": Level("D52", Fraction(5, 2), const.LANDE_G["D52"], 1.0 / const.GAMMA_D52),
}

# Exact Lande factors used for line labelling (electron g-factor taken as 2).
LANDE_EXACT = {
    "S12": Fraction(2),
    "P12": Fraction(2, 3),
    "D32": Fraction(4, 5),
    "D52": Fraction(6, 5),
}


@dataclass(frozen=True)
class TransitionSpec:
    lower: Level
    upper: Level
    kind: str  # dipole | quadrupole | magnetic-dipole
    wavelength: float  # m
    label: str
    delta_m_allowed: frozenset[int]

    @property
    def rank(self) -> int:
        return 2 if self.kind == "quadrupole" else 1

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi / self.wavelength


def _lambda_thz() -> float:
    return const.C_LIGHT / const.FREQ_DD


TRANSITIONS = {
    "B": TransitionSpec(LEVELS["S12"], LEVELS["P12"], "dipole",
                        const.WAVELENGTH["B"], "B", frozenset({-1, 1})),
    "R": TransitionSpec(LEVELS["D32"], LEVELS["P12"], "dipole",
                        const.WAVELENGTH["R"], "R", frozenset({-1, 0, 1})),
    "C": TransitionSpec(LEVELS["S12"], LEVELS["D52"], "quadrupole",
                        const.WAVELENGTH["C"], "C", frozenset({-2, 2})),
    "THz": TransitionSpec(LEVELS["D32"], LEVELS["D52"], "magnetic-dipole",
                          _lambda_thz(), "THz", frozenset({-1, 0, 1})),
}


class DomainError(ValueError):
    pass


def as_half_integer(x) -> Fraction:
    """Convert ``x`` (int, float, str or Fraction) to an exact half-integer."""
    try:
        f = Fraction(x)
    except (ValueError, TypeError) as exc:
        raise DomainError(f"{x!r} is not a half-integer") from exc
    if (2 * f).denominator != 1:
        raise DomainError(f"{x!r} is not a half-integer")
    return f


def _check_m(m: Fraction, J: Fraction, what: str) -> None:
    if abs(m) > J or (m - J).denominator != 1:
        raise DomainError(f"{what}: m_J={m} not a sublevel of J={J}")


def m_thz(mj_d32, mj_d52) -> Fraction:
    """Zeeman label of the D3/2(mj_d32) <-> D5/2(mj_d52) THz component.

    >>> m_thz(Fraction(-3, 2), Fraction(5, 2))
    Fraction(21, 5)
    """
    a = as_half_integer(mj_d32)
    b = as_half_integer(mj_d52)
    _check_m(a, LEVELS["D32"].J, "D3/2")
    _check_m(b, LEVELS["D52"].J, "D5/2")
    return LANDE_EXACT["D52"] * b - LANDE_EXACT["D32"] * a


def zeeman_shift(m_label, B: float) -> float:
    """Shift ``m_thz * mu_B * B / h`` in Hz for a field ``B`` in tesla."""
    if B < 0:
        raise DomainError("B must be non-negative")
    return float(m_label) * const.MU_B_HZ_PER_T * B


# --- angular-momentum coupling --------------------------------------------

def _rat(f: Fraction) -> Rational:
    return Rational(f.numerator, f.denominator)


@lru_cache(maxsize=None)
def clebsch(j1: Fraction, m1: Fraction, k: int, q: int, j2: Fraction, m2: Fraction) -> float:
    """<j1 m1; k q | j2 m2> as a float."""
    return float(clebsch_gordan(_rat(j1), k, _rat(j2), _rat(m1), q, _rat(m2)))


@lru_cache(maxsize=None)
def _stretched(label: str) -> float:
    tr = TRANSITIONS[label]
    best = 0.0
    for m1 in tr.lower.sublevels:
        for q in range(-tr.rank, tr.rank + 1):
            m2 = m1 + q
            if abs(m2) <= tr.upper.J:
                best = max(best, abs(clebsch(tr.lower.J, m1, tr.rank, q, tr.upper.J, m2)))
    return best


def relative_amplitude(label: str, m_lower, m_upper) -> float:
    """Coupling amplitude between two sublevels, relative to the strongest one.

    Signed (Condon-Shortley phase); zero when the rank forbids it.
    """
    tr = TRANSITIONS[label]
    m1, m2 = as_half_integer(m_lower), as_half_integer(m_upper)
    q = m2 - m1
    if q.denominator != 1 or abs(q) > tr.rank:
        return 0.0
    return clebsch(tr.lower.J, m1, tr.rank, int(q), tr.upper.J, m2) / _stretched(label)


@dataclass(frozen=True)
class ZeemanLine:
    mj_d32: Fraction
    mj_d52: Fraction
    m_thz: Fraction
    rel_rabi_C: float
    rel_rabi_R: float
    mj_p12: Fraction
    mj_s12: Fraction

    @property
    def q_R(self) -> int:
        return int(self.mj_p12 - self.mj_d32)


def enumerate_loops(
    r_components: Iterable[int] = (-1, 0, 1),
    b_components: Iterable[int] = (-1, 1),
    c_components: Iterable[int] = (-2, 2),
) -> list[ZeemanLine]:
    """All D3/2 -R- P1/2 -B- S1/2 -C- D5/2 paths allowed by the given Δm sets."""
    out = []
    J = {k: v.J for k, v in LEVELS.items()}
    for md in LEVELS["D32"].sublevels:
        for qr in r_components:
            mp = md + qr
            if abs(mp) > J["P12"]:
                continue
            for qb in b_components:
                ms = mp - qb
                if abs(ms) > J["S12"]:
                    continue
                for qc in c_components:
                    m5 = ms + qc
                    if abs(m5) > J["D52"]:
                        continue
                    out.append(ZeemanLine(
                        md, m5, m_thz(md, m5),
                        abs(relative_amplitude("C", ms, m5)),
                        abs(relative_amplitude("R", md, mp)),
                        mp, ms,
                    ))
    return out


# Sublevel pairs (m_J(D3/2), m_J(D5/2)) of the ten observed lines, upper sign.
OBSERVED_PAIRS = (
    (Fraction(-3, 2), Fraction(5, 2)),
    (Fraction(1, 2), Fraction(5, 2)),
    (Fraction(-1, 2), Fraction(3, 2)),
    (Fraction(1, 2), Fraction(3, 2)),
    (Fraction(3, 2), Fraction(3, 2)),
)


def relative_couplings() -> list[ZeemanLine]:
    """The ten observed THz components with CG-derived relative Rabi frequencies.

    Each sublevel pair is closed by a unique path through P1/2 and S1/2
    once B is restricted to σ± and C to Δm = ±2; the R leg is σ or π
    as the pair requires. Ordered by decreasing m_thz.
    """
    loops = enumerate_loops()
    by_pair = {}
    for ln in loops:
        by_pair.setdefault((ln.mj_d32, ln.mj_d52), []).append(ln)
    lines = []
    for md, m5 in OBSERVED_PAIRS:
        for sgn in (1, -1):
            cands = by_pair[(sgn * md, sgn * m5)]
            if len(cands) != 1:
                raise RuntimeError(f"ambiguous path for {(sgn * md, sgn * m5)}")
            lines.append(cands[0])
    return sorted(lines, key=lambda ln: -ln.m_thz)


# --- kinematics ------------------------------------------------------------

def doppler_fwhm(T: float, lambda_eff: float, mass: float = const.MASS_CA40) -> float:
    """1-D Maxwell-Boltzmann Doppler FWHM (Hz) for an effective wavelength."""
    if T <= 0 or lambda_eff <= 0 or mass <= 0:
        raise DomainError("temperature, wavelength and mass must be positive")
    return math.sqrt(8 * math.log(2) * const.K_B * T / mass) / lambda_eff


def velocity_sigma(T: float, mass: float = const.MASS_CA40) -> float:
    return math.sqrt(const.K_B * T / mass) if T > 0 else 0.0


def _unit(v: Sequence[float]) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    n = np.linalg.norm(a)
    if n == 0:
        raise DomainError("zero direction vector")
    return a / n


def effective_wavevector(dir_B, dir_R, dir_C, wavelengths: dict | None = None) -> np.ndarray:
    """k_B dir_B - k_R dir_R - k_C dir_C (rad/m) of the three-photon process."""
    lam = dict(const.WAVELENGTH if wavelengths is None else wavelengths)
    k = {lbl: 2 * math.pi / lam[lbl] for lbl in "BRC"}
    return k["B"] * _unit(dir_B) - k["R"] * _unit(dir_R) - k["C"] * _unit(dir_C)


def phase_matched_directions(wavelengths: dict | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coplanar directions with k_B = k_R + k_C (B along z, all in the x-z plane)."""
    lam = dict(const.WAVELENGTH if wavelengths is None else wavelengths)
    kB, kR, kC = (2 * math.pi / lam[x] for x in "BRC")
    # triangle with sides kR, kC and base kB
    cos_r = (kB**2 + kR**2 - kC**2) / (2 * kB * kR)
    if abs(cos_r) > 1:
        raise DomainError("wavelengths cannot be phase matched")
    sin_r = math.sqrt(1 - cos_r**2)
    dir_R = np.array([sin_r, 0.0, cos_r])
    vec_C = np.array([0.0, 0.0, kB]) - kR * dir_R
    return np.array([0.0, 0.0, 1.0]), dir_R, vec_C / np.linalg.norm(vec_C)
