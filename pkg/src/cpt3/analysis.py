"""Dark-line detection, Lorentzian fits, Zeeman-ladder regression and the
THz-referenced shift δf.

Contrast convention: depth / (baseline - background), with the stray-light
background supplied separately.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, signal, stats
from scipy.ndimage import median_filter, uniform_filter1d

from . import __version__
from . import constants as const
from .spectroscopy import Spectrum


class FitError(RuntimeError):
    pass


# --- detection ---------------------------------------------------------------

@dataclass
class Window:
    lo: int  # first index
    hi: int  # one past the last index
    minimum: int  # index of the deepest point
    blended: bool = False
    n_minima: int = 1

    def __len__(self):
        return self.hi - self.lo


def rolling_baseline(rate: np.ndarray, width: int, noise: np.ndarray | None = None,
                     clip: float = 2.5) -> np.ndarray:
    """Running median. With ``noise`` given, a second pass replaces points more
    than ``clip`` noise units below the first estimate, so dips do not pull the
    baseline down while pure noise is left untouched."""
    width = max(3, int(width) | 1)
    base = median_filter(rate, size=width, mode="mirror")
    if noise is None:
        return base
    masked = np.where(base - rate > clip * noise, base, rate)
    return median_filter(masked, size=width, mode="mirror")


def _noise(spec: Spectrum, resid: np.ndarray) -> np.ndarray:
    mad = 1.4826 * np.median(np.abs(resid - np.median(resid)))
    floor = 1e-9 * max(np.nanmax(np.abs(spec.rate)), 1e-300)
    sig = np.where(spec.sigma > 0, spec.sigma, 0.0)
    if not np.any(sig > 0):
        sig = np.full_like(spec.rate, mad)
    return np.maximum(sig, floor)


def _smoothed_snr(depth: np.ndarray, noise: np.ndarray, k: int) -> np.ndarray:
    """Boxcar sum of the depth over its propagated noise; the box is truncated
    (not padded) at the spectrum edges."""
    if k <= 1:
        return depth / noise
    box = lambda a: uniform_filter1d(a, k, mode="constant", cval=0.0)
    return box(depth) / np.sqrt(box(noise**2) / k)


def detect_dark_lines(spec: Spectrum, min_depth_sigma: float = 5.0, baseline_width: int | None = None,
                      smooth: int | None = None, half_width_factor: float = 3.0,
                      min_points: int = 7) -> list[Window]:
    """Windows around local minima more than ``min_depth_sigma`` noise units
    below a rolling-median baseline. Minima that share a window, or that are
    not separated by a return below the threshold, are merged into one window
    flagged blended."""
    n = len(spec)
    if n < 20:
        raise ValueError("detection needs at least 20 points")
    rate = np.where(np.isfinite(spec.rate), spec.rate, np.nanmedian(spec.rate))
    noisy = bool(np.any(spec.sigma > 0))
    k = max(1, int(smooth if smooth is not None else (5 if noisy else 1)))
    bw = baseline_width or max(21, n // 10)
    for _ in range(2):
        noise = _noise(spec, rate - median_filter(rate, size=max(3, bw | 1), mode="mirror"))
        base = rolling_baseline(rate, bw, noise)
        depth = base - rate
        snr = _smoothed_snr(depth, noise, k)
        peaks, _ = signal.find_peaks(snr, height=min_depth_sigma, prominence=min_depth_sigma)
        if peaks.size == 0:
            return []
        widths = signal.peak_widths(snr, peaks, rel_height=0.5)[0]
        # re-run with a baseline much wider than the lines it must ignore
        wider = int(10 * np.max(widths)) | 1
        if baseline_width or wider <= bw:
            break
        bw = min(wider, n | 1)
    wins = []
    for p, w in zip(peaks, widths):
        half = max(half_width_factor * max(w, 1.0) / 2, (min_points - 1) / 2)
        lo = max(0, int(math.floor(p - half)))
        hi = min(n, int(math.ceil(p + half)) + 1)
        wins.append(Window(lo, hi, int(p)))
    merged = [wins[0]]
    for prev, w in zip(wins, wins[1:]):
        last = merged[-1]
        # one region when the windows overlap or the signal stays above half the threshold
        if w.lo < last.hi or snr[prev.minimum:w.minimum + 1].min() > 0.5 * min_depth_sigma:
            deeper = w.minimum if rate[w.minimum] < rate[last.minimum] else last.minimum
            merged[-1] = Window(last.lo, max(last.hi, w.hi), deeper, True, last.n_minima + w.n_minima)
        else:
            merged.append(w)
    return merged


# --- Lorentzian fit ----------------------------------------------------------

def lorentzian_dip(x, center, fwhm, depth, baseline):
    h2 = (0.5 * fwhm) ** 2
    return baseline - depth * h2 / ((x - center) ** 2 + h2)


def _jacobian(x, center, fwhm, depth):
    h = 0.5 * fwhm
    u = x - center
    den = u**2 + h**2
    L = h**2 / den
    d_center = -depth * 2 * u * h**2 / den**2
    d_fwhm = -depth * (u**2 * h) / den**2  # d/dγ = ½ d/dh
    d_depth = -L
    d_base = np.ones_like(x)
    return np.column_stack([d_center, d_fwhm, d_depth, d_base])


@dataclass
class FitResult:
    center: float
    fwhm: float
    contrast: float
    baseline: float
    depth: float
    center_sigma: float
    fwhm_sigma: float
    covariance: np.ndarray  # order: center, fwhm, depth, baseline
    residual_rms: float
    chi2_red: float
    n_points: int
    converged: bool
    background: float = 0.0
    flags: list = field(default_factory=list)
    m_thz: Fraction | None = None

    @property
    def ok(self) -> bool:
        return self.converged and not self.flags

    def to_dict(self) -> dict:
        d = asdict(self)
        d["covariance"] = self.covariance.tolist()
        d["m_thz"] = None if self.m_thz is None else str(self.m_thz)
        return d


def _initial_guess(x, y):
    i = int(np.argmin(y))
    edge = max(1, len(y) // 7)
    base = float(np.median(np.concatenate([y[:edge], y[-edge:]])))
    depth = base - float(y[i])
    half = base - depth / 2
    below = np.flatnonzero(y < half)
    width = float(x[below[-1]] - x[below[0]]) if below.size >= 2 else 0.0
    if width <= 0:
        width = (x[-1] - x[0]) / 4
    return np.array([x[i], width, max(depth, 1e-12 * abs(base) + 1e-300), base])


def fit_lorentzian(spec: Spectrum, window: Window | tuple[int, int], guess: Sequence[float] | None = None,
                   background: float | None = None, mismatch_p: float = 1e-3) -> FitResult:
    """Damped least-squares fit of a Lorentzian dip.

    Uncertainties come from the covariance at the optimum. When the spectrum
    carries shot-noise σ the weights are absolute; otherwise the covariance is
    scaled by the reduced χ².
    """
    lo, hi = (window.lo, window.hi) if isinstance(window, Window) else window
    x = spec.detuning[lo:hi]
    y = spec.rate[lo:hi]
    s = spec.sigma[lo:hi]
    good = np.isfinite(y)
    x, y, s = x[good], y[good], s[good]
    n = x.size
    if n < 7:
        raise ValueError("fit window needs at least 7 points")
    if background is None:
        background = float(spec.config.get("background", 0.0)) if spec.config else 0.0
    absolute = bool(np.all(s > 0))
    w = 1.0 / s if absolute else np.ones(n)
    # centre and scale the abscissa for conditioning
    x0 = float(x[n // 2])
    xs = float(x[-1] - x[0]) or 1.0
    ys = float(np.max(np.abs(y))) or 1.0
    u = (x - x0) / xs
    p0 = np.asarray(guess, float) if guess is not None else _initial_guess(x, y)
    q0 = np.array([(p0[0] - x0) / xs, p0[1] / xs, p0[2] / ys, p0[3] / ys])
    ws = w * ys

    def res(q):
        return ws * (lorentzian_dip(u, *q) - y / ys)

    def jac(q):
        return ws[:, None] * _jacobian(u, q[0], q[1], q[2])

    flags = []
    try:
        sol = optimize.least_squares(res, q0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15,
                                     gtol=1e-15, max_nfev=2000)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise FitError(str(exc)) from exc
    q = sol.x
    converged = sol.status > 0
    if not converged:
        flags.append("not_converged")
    scale = np.array([xs, xs, ys, ys])
    p = q * scale
    p[0] += x0
    p[1] = abs(p[1])
    J = sol.jac
    JTJ = J.T @ J
    chi2 = float(np.sum(sol.fun**2))
    dof = max(n - 4, 1)
    chi2_red = chi2 / dof
    try:
        if np.linalg.cond(JTJ) > 1e15:
            raise np.linalg.LinAlgError
        cov_q = np.linalg.inv(JTJ)
    except np.linalg.LinAlgError:
        flags.append("singular_jacobian")
        cov_q = np.full((4, 4), np.nan)
    if not absolute:
        cov_q = cov_q * chi2_red
    cov = cov_q * np.outer(scale, scale)
    resid = y - lorentzian_dip(x, *p)
    rms = float(np.sqrt(np.mean(resid**2)))
    center, fwhm, depth, base = (float(v) for v in p)
    if not (x[0] <= center <= x[-1]):
        flags.append("center_outside_window")
    if 0.5 * (x[-1] - x[0]) < 0.5 * fwhm:
        flags.append("window_too_narrow")
    if absolute and stats.chi2.sf(chi2, dof) < mismatch_p:
        flags.append("model_mismatch")
    if base > background:
        contrast = depth / (base - background)
    else:
        contrast = math.nan
        flags.append("baseline_below_background")
    return FitResult(center, fwhm, contrast, base, depth,
                     float(math.sqrt(cov[0, 0])) if cov[0, 0] >= 0 else math.nan,
                     float(math.sqrt(cov[1, 1])) if cov[1, 1] >= 0 else math.nan,
                     cov, rms, chi2_red, n, converged, float(background), flags)


def line_metrics(fit: FitResult, background: float) -> tuple[float, float]:
    """(FWHM, contrast) with contrast measured above the stray-light background."""
    if not fit.converged:
        raise FitError("fit did not converge")
    if fit.baseline <= background:
        raise FitError("baseline at or below background: contrast undefined")
    return fit.fwhm, fit.depth / (fit.baseline - background)


# --- Zeeman ladder -----------------------------------------------------------

@dataclass
class ZeemanFit:
    B_estimate: float  # T
    B_sigma: float
    intercept: float  # Hz, field-free line centre
    intercept_sigma: float
    slope: float  # Hz per unit m_thz, = μ_B B / h
    slope_sigma: float
    residuals: dict  # m_thz -> Hz
    chi2_red: float
    covariance: np.ndarray

    def delta_z(self, m) -> float:
        return float(m) * self.slope

    def delta_z_sigma(self, m) -> float:
        return abs(float(m)) * self.slope_sigma


def zeeman_linear_fit(lines: Sequence[tuple]) -> ZeemanFit:
    """Weighted fit of centre = intercept + m_thz·(μ_B/h)·B over (m_thz, centre, σ) triples."""
    m = np.array([float(l[0]) for l in lines])
    c = np.array([float(l[1]) for l in lines])
    s = np.array([float(l[2]) if len(l) > 2 and l[2] else 1.0 for l in lines])
    if len(set(m.tolist())) < 2:
        raise np.linalg.LinAlgError("zeeman fit needs at least two distinct m_thz values")
    if np.any(s <= 0):
        raise ValueError("sigmas must be positive")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(s))):
        raise ValueError("line centres and sigmas must be finite")
    A = np.column_stack([np.ones_like(m), m]) / s[:, None]
    b = c / s
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    cov = np.linalg.inv(A.T @ A)
    r = c - (coef[0] + coef[1] * m)
    dof = max(len(m) - 2, 1)
    chi2_red = float(np.sum((r / s) ** 2) / dof)
    slope = float(coef[1])
    ss = float(math.sqrt(cov[1, 1]))
    return ZeemanFit(slope / const.MU_B_HZ_PER_T, ss / const.MU_B_HZ_PER_T,
                     float(coef[0]), float(math.sqrt(cov[0, 0])), slope, ss,
                     {l[0]: float(ri) for l, ri in zip(lines, r)},
                     chi2_red, cov)


def thz_shift(center: float, omega_c: float, omega_b: float, delta_z: float, f_dd: float,
              delta_shift_c: float = 0.0) -> float:
    """δf = (ω_R^c + ω_C - ω_B) - δ_Z - f_DD (+ δ_C if supplied), all in Hz.

    Summed exactly before rounding: the optical terms are ~1e14 Hz.
    """
    tot = (Fraction(center) + Fraction(omega_c) - Fraction(omega_b)
           - Fraction(delta_z) - Fraction(f_dd) + Fraction(delta_shift_c))
    return float(tot)


def assign_lines(fits: Sequence[FitResult], predicted: Mapping, tolerance: float) -> list[FitResult]:
    """Label each converged fit with the nearest predicted m_thz within ``tolerance`` Hz.

    A label goes to at most one fit, the one closest to its prediction.
    """
    keys = list(predicted)
    pos = np.array([predicted[k] for k in keys], float)
    best: dict = {}
    for f in fits:
        if not f.converged or not math.isfinite(f.center_sigma) or "low_significance" in f.flags:
            continue
        i = int(np.argmin(np.abs(pos - f.center)))
        d = abs(pos[i] - f.center)
        if d <= tolerance and (i not in best or d < best[i][0]):
            best[i] = (d, f)
    for i, (_, f) in best.items():
        f.m_thz = keys[i]
    return list(fits)


def fit_spectrum(spec: Spectrum, min_depth_sigma: float = 5.0, predicted: Mapping | None = None,
                 tolerance: float | None = None, **detect_kw) -> list[tuple[Window, FitResult | None]]:
    """Detect and fit every dark line; fits that raise are returned as None."""
    out = []
    for w in detect_dark_lines(spec, min_depth_sigma, **detect_kw):
        try:
            fr = fit_lorentzian(spec, w)
        except FitError:
            out.append((w, None))
            continue
        if w.blended:
            fr.flags.append("blended")
        if fr.converged and not fr.depth > min_depth_sigma * math.sqrt(max(fr.covariance[2, 2], 0.0)):
            fr.flags.append("low_significance")
        out.append((w, fr))
    if predicted:
        tol = tolerance if tolerance is not None else 5 * (spec.detuning[1] - spec.detuning[0]) + 50e3
        assign_lines([f for _, f in out if f is not None], predicted, tol)
    return out


# --- reports -----------------------------------------------------------------

def fit_report(results: Sequence[tuple[Window, FitResult | None]], spec: Spectrum) -> dict:
    recs = []
    for w, f in results:
        rec = {"window": [w.lo, w.hi], "blended": w.blended}
        if f is None:
            rec["error"] = "fit failed"
        else:
            rec.update(f.to_dict())
        recs.append(rec)
    return {"format": "cpt3-fits/1", "version": __version__, "digest": spec.digest, "fits": recs}


def summary_csv(records: Sequence[dict]) -> str:
    """m_thz, center, fwhm, contrast and δf columns (δf blank when unknown)."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["m_thz", "center_Hz", "center_sigma_Hz", "fwhm_Hz", "contrast", "delta_f_Hz", "flags"])
    for r in records:
        if "center" not in r:
            continue
        wr.writerow([r.get("m_thz") or "", repr(r["center"]), repr(r["center_sigma"]), repr(r["fwhm"]),
                     repr(r["contrast"]), repr(r["delta_f"]) if r.get("delta_f") is not None else "",
                     ";".join(r.get("flags", []))])
    return buf.getvalue()


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, Fraction):
        return str(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))
