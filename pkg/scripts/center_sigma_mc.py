"""Calibration of the fitted line-centre uncertainty.

Draws shot-noise realisations of a single Lorentzian dip and compares the
reported centre σ with the observed scatter and the pull distribution.
"""

import argparse

import numpy as np

from cpt3 import analysis as an
from cpt3 import spectroscopy as sp


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--fwhm", type=float, default=70e3)
    ap.add_argument("--contrast", type=float, default=0.4)
    ap.add_argument("--rate", type=float, default=3e6, help="off-resonant count rate, 1/s")
    ap.add_argument("--time", type=float, default=0.15, help="integration per point, s")
    ap.add_argument("--step", type=float, default=2e3)
    ap.add_argument("--realisations", type=int, default=500)
    a = ap.parse_args(argv)
    x = np.arange(-600e3, 600e3, a.step)
    hw = a.fwhm / 2
    y = a.rate * (1 - a.contrast * hw**2 / (x**2 + hw**2))
    clean = sp.Spectrum(x, y, np.sqrt(y * a.time) / a.time, {"integration_time": a.time})
    c, s = [], []
    for seed in range(a.realisations):
        res = [f for _, f in an.fit_spectrum(sp.add_shot_noise(clean, seed)) if f is not None and f.converged]
        if len(res) == 1:
            c.append(res[0].center)
            s.append(res[0].center_sigma)
    c, s = np.array(c), np.array(s)
    pulls = c / s
    print(f"fits: {len(c)} of {a.realisations}")
    print(f"reported centre sigma: {s.mean():.1f} Hz, observed scatter: {c.std(ddof=1):.1f} Hz")
    print(f"pull mean {pulls.mean():+.3f}, pull std {pulls.std(ddof=1):.3f}, "
          f"within 1 sigma {np.mean(np.abs(pulls) <= 1):.1%}")


if __name__ == "__main__":
    main()
