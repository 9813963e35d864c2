"""Dark-line shift versus Ω_R² with and without laser dephasing.

The line is read on the ratio of the P population with C on to C off, so the
sloped one-photon background cancels. Prints one row per (Δ_R, Ω_R).
"""

import argparse

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import argrelmin

from cpt3 import dressed
from cpt3.lindblad import AtomModel, DetuningPencil, LaserField, ReducedScheme, population_observable


def pencil(lasers):
    m = AtomModel(ReducedScheme(), lasers, 0.0, metastable_decay=True)
    return DetuningPencil(m.with_detuning("R", 0.0).liouvillian().matrix, m.detuning_derivative("R"),
                          population_observable(m.scheme, "P12"))


def shift(delta_r, rabi_r, lw, delta_c=-30e6, rabi_b=4e6, rabi_c=2e5):
    dB = delta_r + delta_c
    mk = lambda oc: pencil((LaserField("B", dB, rabi_b, lw), LaserField("R", 0.0, rabi_r, lw),
                            LaserField("C", delta_c, oc, lw)))
    on, off = mk(rabi_c), mk(0.0)
    f = lambda p: on.evaluate(np.atleast_1d(p))[0][0] / off.evaluate(np.atleast_1d(p))[0][0]
    x0 = dressed.dark_resonance_detuning(dB, delta_c, dressed.quadrupole_light_shift(rabi_c, delta_c))
    g = x0 + np.arange(-300e3, 300e3 + 1, 500.0)
    y = f(g)
    mins = argrelmin(y)[0]
    if len(mins) != 1:
        return float("nan")
    i = int(np.clip(mins[0], 1, len(g) - 2))
    r = minimize_scalar(lambda p: f(p)[0], bounds=(g[i - 1], g[i + 1]), method="bounded",
                        options={"xatol": 1e-4})
    return float(r.x) - x0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--linewidth", type=float, default=20e3, help="per-laser linewidth, Hz")
    ap.add_argument("--rabi", type=float, nargs="+", default=[0.1e6, 0.15e6, 0.2e6, 0.3e6, 0.45e6, 0.6e6])
    ap.add_argument("--delta-r", type=float, nargs="+", default=[-15e6, -10e6, -6e6, 6e6, 10e6, 15e6])
    a = ap.parse_args(argv)
    print(f"{'Delta_R/MHz':>11} {'Omega_R/MHz':>11} {'shift/Hz':>10} {'no-dephasing/Hz':>16} {'shift/Omega_R^2':>16}")
    for dr in a.delta_r:
        for o in a.rabi:
            s, s0 = shift(dr, o, a.linewidth), shift(dr, o, 0.0)
            print(f"{dr / 1e6:11.1f} {o / 1e6:11.3f} {s:10.1f} {s0:16.1f} {s / (o / 1e6) ** 2:16.1f}")


if __name__ == "__main__":
    main()
