"""Synthetic fluorescence spectra: detuning scans with Doppler and field-noise
averaging and photon shot noise.

Doppler averaging in the default ``"effective"`` mode only displaces the
three-photon resonance by ``k_eff·v``, i.e. the one-photon Doppler shifts of
the bright background are neglected; ``"full"`` mode shifts every laser.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.polynomial.legendre import leggauss

from . import __version__
from . import atomic
from . import constants as const
from .lindblad import (
    LABELS,
    AtomModel,
    DetuningPencil,
    LaserField,
    ReducedScheme,
    ZeemanManifold,
    dwell_average,
    population_observable,
    thermal_state,
)

# sign with which the swept detuning absorbs the three-photon Doppler shift
_RESONANCE_SIGN = {"R": 1.0, "B": -1.0, "C": 1.0}


@dataclass
class ScanConfig:
    lasers: tuple[LaserField, ...]
    start: float  # Hz
    stop: float
    step: float
    swept: str = "R"
    model: str = "4-level"  # or "zeeman-14"
    B_mean: float = 0.0  # T
    B_noise_long: float = 0.0  # pk-pk, T
    B_noise_short: float = 0.0  # pk-pk, T
    field_noise_model: str = "uniform"
    temperature: float = 0.0  # K
    doppler_mode: str = "effective"
    doppler_order: int = 8
    doppler_max_order: int = 256
    field_order: int = 4
    field_max_order: int = 32
    adaptive: bool = True
    tolerance: float = 1e-4
    integration_time: float = 0.15  # s per point and repeat
    repeats: int = 1
    ion_count: float = 1.0
    detection_efficiency: float = 1.0
    background: float = 0.0  # counts/s
    gamma_p: float = const.GAMMA_P
    beta: float = const.BETA
    metastable_decay: bool = True
    shot_noise: bool = False
    transient: bool = False
    seed: int = 0

    def __post_init__(self):
        self.lasers = tuple(self.lasers)
        if self.step <= 0:
            raise ValueError("step must be > 0")
        if self.swept not in LABELS:
            raise ValueError(f"swept laser must be one of {LABELS}")
        if len(self.grid()) < 2:
            raise ValueError("grid must cover at least 2 points")
        if self.integration_time <= 0:
            raise ValueError("integration_time must be > 0")
        if self.model not in ("4-level", "zeeman-14"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.doppler_mode not in ("effective", "full"):
            raise ValueError(f"unknown doppler_mode {self.doppler_mode!r}")
        if self.field_noise_model not in ("uniform", "gaussian"):
            raise ValueError(f"unknown field_noise_model {self.field_noise_model!r}")
        if not 3 <= self.doppler_order <= self.doppler_max_order <= MAX_HERMITE_ORDER:
            raise ValueError(f"need 3 <= doppler_order <= doppler_max_order <= {MAX_HERMITE_ORDER}")

    def grid(self) -> np.ndarray:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return self.start + self.step * np.arange(n)

    def scheme(self):
        return ReducedScheme() if self.model == "4-level" else ZeemanManifold()

    def atom_model(self) -> AtomModel:
        return AtomModel(self.scheme(), self.lasers, self.B_mean, self.gamma_p,
                         self.beta, self.metastable_decay)

    def k_eff(self) -> float:
        """Projection of the effective wave-vector on the common (z) axis, rad/m."""
        d = {l.label: l.direction for l in self.lasers}
        return float(atomic.effective_wavevector(d["B"], d["R"], d["C"])[2])

    def signal_scale(self) -> float:
        return self.ion_count * (1 - self.beta) * self.gamma_p * self.detection_efficiency

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lasers"] = [_laser_to_dict(l) for l in self.lasers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScanConfig":
        d = dict(d)
        d["lasers"] = tuple(_laser_from_dict(x) for x in d["lasers"])
        return cls(**d)


def _laser_to_dict(l: LaserField) -> dict:
    d = asdict(l)
    d["direction"] = list(l.direction)
    if l.polarization is not None:
        d["polarization"] = {str(k): float(np.real(v)) for k, v in l.polarization.items()}
    return d


def _laser_from_dict(d: dict) -> LaserField:
    d = dict(d)
    d["direction"] = tuple(d["direction"])
    if d.get("polarization") is not None:
        d["polarization"] = {int(k): v for k, v in d["polarization"].items()}
    return LaserField(**d)


def config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class Spectrum:
    detuning: np.ndarray  # Hz, strictly increasing
    rate: np.ndarray  # counts/s
    sigma: np.ndarray  # counts/s
    config: dict
    diagnostics: dict = field(default_factory=dict)
    flagged: list = field(default_factory=list)

    def __post_init__(self):
        self.detuning = np.asarray(self.detuning, dtype=float)
        self.rate = np.asarray(self.rate, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if np.any(np.diff(self.detuning) <= 0):
            raise ValueError("detunings must be strictly increasing")

    def __len__(self):
        return self.detuning.size

    @property
    def digest(self) -> str:
        return config_digest(self.config)

    @property
    def integration_time(self) -> float:
        return float(self.config["integration_time"]) * int(self.config.get("repeats", 1))

    def window(self, lo: int, hi: int) -> "Spectrum":
        return Spectrum(self.detuning[lo:hi], self.rate[lo:hi], self.sigma[lo:hi],
                        self.config, dict(self.diagnostics))

    # --- serialisation -----------------------------------------------------

    def save(self, path: str | Path) -> tuple[Path, Path]:
        """Write ``path`` (.csv) and its ``.json`` sidecar; floats use repr."""
        path = Path(path)
        meta = {
            "format": "cpt3-spectrum/1",
            "version": __version__,
            "digest": self.digest,
            "config": self.config,
            "diagnostics": self.diagnostics,
            "flagged": [int(i) for i in self.flagged],
        }
        lines = [
            "# cpt3 spectrum",
            f"# version: {__version__}",
            f"# digest: {self.digest}",
            "# config: " + json.dumps(self.config, sort_keys=True),
            "detuning_Hz,rate_counts_per_s,sigma_counts_per_s",
        ]
        lines += [f"{float(x)!r},{float(y)!r},{float(s)!r}"
                  for x, y, s in zip(self.detuning, self.rate, self.sigma)]
        path.write_text("\n".join(lines) + "\n")
        side = path.with_suffix(".json")
        side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return path, side

    @classmethod
    def load(cls, path: str | Path) -> "Spectrum":
        path = Path(path)
        text = path.read_text().splitlines()
        config = None
        rows = []
        header_seen = False
        for ln in text:
            if ln.startswith("#"):
                if ln.startswith("# config: "):
                    config = json.loads(ln[len("# config: "):])
                continue
            if not header_seen:
                if not ln.startswith("detuning_Hz"):
                    raise ValueError(f"{path}: missing column header")
                header_seen = True
                continue
            if ln.strip():
                parts = ln.split(",")
                if len(parts) != 3:
                    raise ValueError(f"{path}: malformed row {ln!r}")
                rows.append([float(p) for p in parts])
        if not rows:
            raise ValueError(f"{path}: no data rows")
        side = path.with_suffix(".json")
        diagnostics, flagged = {}, []
        if side.exists():
            meta = json.loads(side.read_text())
            config = meta.get("config", config)
            diagnostics = meta.get("diagnostics", {})
            flagged = meta.get("flagged", [])
        a = np.array(rows)
        return cls(a[:, 0], a[:, 1], a[:, 2], config or {}, diagnostics, flagged)


# --- averaging ---------------------------------------------------------------

@dataclass
class AverageResult:
    value: np.ndarray | float
    order: int
    converged: bool
    change: float


# numpy's Golub-Welsch weights overflow somewhere above 300 nodes
MAX_HERMITE_ORDER = 256


def gauss_hermite_normal(order: int, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights (summing to 1) for the average over N(0, sigma²)."""
    if order > MAX_HERMITE_ORDER:
        raise ValueError(f"Gauss-Hermite order above {MAX_HERMITE_ORDER} is not supported")
    x, w = hermgauss(order)
    return math.sqrt(2.0) * sigma * x, w / math.sqrt(math.pi)


def uniform_nodes(order: int, center: float, width: float) -> tuple[np.ndarray, np.ndarray]:
    x, w = leggauss(order)
    return center + 0.5 * width * x, 0.5 * w


def _converged(new, old, tol) -> tuple[bool, float]:
    new, old = np.asarray(new, float), np.asarray(old, float)
    scale = np.maximum(np.abs(new), tol * np.max(np.abs(new)) if new.size else 0.0)
    scale = np.where(scale > 0, scale, 1.0)
    change = float(np.max(np.abs(new - old) / scale)) if new.size else 0.0
    return change < tol, change


def _adaptive(nodes_fn, evaluator, order, max_order, tol) -> AverageResult:
    if order < 1:
        raise ValueError("order must be >= 1")
    x, w = nodes_fn(order)
    prev = np.tensordot(w, np.asarray(evaluator(x)), axes=1)
    change = math.inf
    while order * 2 <= max_order:
        order *= 2
        x, w = nodes_fn(order)
        cur = np.tensordot(w, np.asarray(evaluator(x)), axes=1)
        ok, change = _converged(cur, prev, tol)
        prev = cur
        if ok:
            return AverageResult(prev, order, True, change)
    return AverageResult(prev, order, False, change)


def doppler_average(point_evaluator: Callable, T: float, k_eff: float, order: int = 8,
                    max_order: int = 256, tol: float = 1e-4,
                    mass: float = const.MASS_CA40) -> AverageResult:
    """Average ``point_evaluator(shift_Hz)`` over a 1-D Maxwell-Boltzmann velocity
    distribution, the shift being ``k_eff·v/2π``. The evaluator takes an array
    of shifts and returns one value per shift (or per shift and point)."""
    if order < 3:
        raise ValueError("Gauss-Hermite order must be >= 3")
    sig_shift = atomic.velocity_sigma(T, mass) * abs(k_eff) / (2 * math.pi)
    if sig_shift == 0:
        return AverageResult(np.asarray(point_evaluator(np.zeros(1)))[0], 1, True, 0.0)
    return _adaptive(lambda n: gauss_hermite_normal(n, sig_shift), point_evaluator,
                     order, max_order, tol)


def field_noise_average(point_evaluator: Callable, B_mean: float, pkpk: float,
                        order: int = 4, max_order: int = 32, tol: float = 1e-4,
                        model: str = "uniform") -> AverageResult:
    """Average ``point_evaluator(B)`` over field noise of peak-to-peak ``pkpk``.

    ``uniform``: flat over [B - pkpk/2, B + pkpk/2] (Gauss-Legendre);
    ``gaussian``: normal with the same variance, pkpk/√12.
    """
    if pkpk < 0:
        raise ValueError("pkpk must be >= 0")
    if pkpk == 0:
        return AverageResult(np.asarray(point_evaluator(np.array([B_mean])))[0], 1, True, 0.0)
    if model == "uniform":
        nodes = lambda n: uniform_nodes(n, B_mean, pkpk)
    elif model == "gaussian":
        def nodes(n):
            x, w = gauss_hermite_normal(n, pkpk / math.sqrt(12))
            return B_mean + x, w
    else:
        raise ValueError(f"unknown field noise model {model!r}")
    return _adaptive(nodes, point_evaluator, order, max_order, tol)


# --- scan engine -------------------------------------------------------------

class _Engine:
    def __init__(self, cfg: ScanConfig, threads: int = 1):
        self.cfg = cfg
        self.threads = max(1, int(threads))
        self.model = cfg.atom_model().with_detuning(cfg.swept, 0.0)
        self.scheme = self.model.scheme
        self.obs = population_observable(self.scheme, "P12")
        self.L_ref = self.model.liouvillian(B=0.0).matrix
        self.dL_dp = self.model.detuning_derivative(cfg.swept)
        self.dL_dB = self.model.field_derivative()
        self.grid = cfg.grid()
        self.flags = np.zeros(self.grid.size, dtype=bool)
        self.notes: list[str] = []
        self.diag = {"doppler_orders": [], "field_orders": [], "unconverged_doppler": 0,
                     "unconverged_field": 0}

    def _pencil(self, B: float, velocity: float = 0.0) -> DetuningPencil:
        L0 = self.L_ref + B * self.dL_dB
        if velocity:
            for l in self.model.lasers:
                d = np.asarray(l.direction, float)
                proj = float(d[2] / np.linalg.norm(d))
                L0 = L0 - (proj * velocity / l.wavelength) * self.model.detuning_derivative(l.label)
        return DetuningPencil(L0, self.dL_dp, self.obs)

    def _p_eval(self, pencil: DetuningPencil, p: np.ndarray, idx: np.ndarray) -> np.ndarray:
        vals, sing = pencil.evaluate(p.ravel())
        vals = vals[0].reshape(p.shape)
        sing = sing.reshape(p.shape)
        bad = sing.any(axis=0) if sing.ndim == 2 else sing
        if np.any(bad):
            self.flags[idx[bad]] = True
        return vals

    def _transient(self, B: float, shift: float = 0.0) -> np.ndarray:
        out = np.empty(self.grid.size)
        rho = thermal_state(self.scheme)
        n = self.scheme.dim
        from .lindblad import Liouvillian
        L0 = self.L_ref + B * self.dL_dB
        for i, p in enumerate(self.grid):
            L = Liouvillian(L0 + (p + shift) * self.dL_dp, n)
            avg, rho = dwell_average(rho, L, self.cfg.integration_time)
            out[i] = float(np.real(self.obs @ avg.reshape(-1, order="F")))
        return out

    def _doppler_rates(self, B: float) -> np.ndarray:
        """P population on the grid at field B, Doppler averaged."""
        cfg = self.cfg
        grid = self.grid
        sig_v = atomic.velocity_sigma(cfg.temperature)
        if cfg.doppler_mode == "effective":
            sign = _RESONANCE_SIGN[cfg.swept]
            k = cfg.k_eff()
            if cfg.transient:
                if sig_v * k != 0:
                    self.notes.append("transient mode ignores Doppler averaging")
                return self._transient(B)
            pencil = self._pencil(B)
            idx_all = np.arange(grid.size)
            if sig_v * abs(k) == 0:
                return self._p_eval(pencil, grid[None, :], idx_all)[0]
            sig_shift = sig_v * abs(k) / (2 * math.pi)
            out = np.empty(grid.size)
            active = idx_all
            order = cfg.doppler_order
            x, w = gauss_hermite_normal(order, sig_shift)
            prev = w @ self._p_eval(pencil, grid[active][None, :] + sign * x[:, None], active)
            done_order = np.full(grid.size, order)
            while cfg.adaptive and active.size and order * 2 <= cfg.doppler_max_order:
                order *= 2
                x, w = gauss_hermite_normal(order, sig_shift)
                cur = w @ self._p_eval(pencil, grid[active][None, :] + sign * x[:, None], active)
                scale = np.maximum(np.abs(cur), cfg.tolerance * np.abs(cur).max())
                ok = np.abs(cur - prev) < cfg.tolerance * np.where(scale > 0, scale, 1)
                out[active[ok]] = cur[ok]
                done_order[active[ok]] = order
                active, prev = active[~ok], cur[~ok]
            out[active] = prev
            done_order[active] = order
            if cfg.adaptive:
                self.diag["unconverged_doppler"] += int(active.size)
            self.diag["doppler_orders"].append(int(done_order.max()))
            return out
        # full mode: one pencil per velocity node
        if sig_v == 0:
            return self._p_eval(self._pencil(B), grid[None, :], np.arange(grid.size))[0]

        def ev(vs):
            return np.array([self._p_eval(self._pencil(B, v), grid[None, :], np.arange(grid.size))[0]
                             for v in vs])

        res = _adaptive(lambda n: gauss_hermite_normal(n, sig_v), ev, cfg.doppler_order,
                        cfg.doppler_max_order if cfg.adaptive else cfg.doppler_order, cfg.tolerance)
        self.diag["doppler_orders"].append(res.order)
        if cfg.adaptive and not res.converged:
            self.diag["unconverged_doppler"] += grid.size
        return np.asarray(res.value)

    def population(self, B_center: float) -> np.ndarray:
        cfg = self.cfg
        pk = cfg.B_noise_short

        def ev(Bs):
            Bs = list(np.atleast_1d(Bs))
            if self.threads > 1 and len(Bs) > 1:
                with ThreadPoolExecutor(self.threads) as ex:
                    return np.array(list(ex.map(self._doppler_rates, Bs)))
            return np.array([self._doppler_rates(b) for b in Bs])

        res = field_noise_average(ev, B_center, pk, cfg.field_order,
                                  cfg.field_max_order if cfg.adaptive else cfg.field_order,
                                  cfg.tolerance, cfg.field_noise_model)
        if pk > 0:
            self.diag["field_orders"].append(res.order)
            if cfg.adaptive and not res.converged:
                self.diag["unconverged_field"] += 1
        return np.asarray(res.value, dtype=float)


def long_term_offsets(cfg: ScanConfig) -> np.ndarray:
    """Per-repeat static field offsets (T), uniform within the long-term pk-pk."""
    if cfg.B_noise_long <= 0:
        return np.zeros(cfg.repeats)
    rng = np.random.default_rng([cfg.seed, 0])
    return rng.uniform(-0.5, 0.5, cfg.repeats) * cfg.B_noise_long


def scan(cfg: ScanConfig, threads: int = 1) -> Spectrum:
    """Noise-averaged steady-state fluorescence over the detuning grid."""
    eng = _Engine(cfg, threads)
    offsets = long_term_offsets(cfg)
    cache = {}
    for off in offsets:
        if off not in cache:
            cache[off] = eng.population(cfg.B_mean + off)
    pops = np.mean([cache[off] for off in offsets], axis=0)
    bad = eng.flags | ~np.isfinite(pops)
    rate = cfg.signal_scale() * pops + cfg.background
    rate = np.where(bad, np.nan, np.maximum(rate, 0.0))
    t = cfg.integration_time * cfg.repeats
    sigma = np.sqrt(np.where(bad, 0.0, rate) * t) / t
    diag = dict(eng.diag)
    diag["long_term_offsets_T"] = [float(o) for o in offsets]
    diag["doppler_sigma_Hz"] = atomic.velocity_sigma(cfg.temperature) * abs(cfg.k_eff()) / (2 * math.pi)
    diag["notes"] = sorted(set(eng.notes))
    flagged = [int(i) for i in np.flatnonzero(bad)]
    if flagged:
        diag["errors"] = f"{len(flagged)} point(s) with singular steady-state system"
    spec = Spectrum(eng.grid, rate, sigma, cfg.to_dict(), diag, flagged)
    if cfg.shot_noise:
        spec = add_shot_noise(spec, cfg.seed)
    return spec


def add_shot_noise(spec: Spectrum, seed: int) -> Spectrum:
    """Poisson-sample the counts of every point; σ = √(mean counts)/t."""
    t = spec.integration_time
    if not t > 0:
        raise ValueError("integration time must be > 0")
    rng = np.random.default_rng([int(seed), 1])
    mean_counts = np.where(np.isfinite(spec.rate), spec.rate, 0.0) * t
    counts = rng.poisson(mean_counts)
    rate = np.where(np.isfinite(spec.rate), counts / t, np.nan)
    diag = dict(spec.diagnostics, shot_noise_seed=int(seed))
    return Spectrum(spec.detuning.copy(), rate, np.sqrt(mean_counts) / t, spec.config,
                    diag, list(spec.flagged))


def predicted_line_positions(cfg: ScanConfig, lines: Sequence[atomic.ZeemanLine] | None = None) -> dict:
    """Δ_R of every Zeeman dark line: Δ_B - Δ_C - δ_C + m_thz μ_B B / h."""
    from .dressed import quadrupole_light_shift
    lm = {l.label: l for l in cfg.lasers}
    dC = lm["C"].detuning
    shift = quadrupole_light_shift(lm["C"].rabi, dC) if lm["C"].rabi and dC else 0.0
    base = lm["B"].detuning - dC - shift
    # every closed loop, including the ±17/5 pair that needs an R π component
    lines = atomic.enumerate_loops() if lines is None else lines
    return {ln.m_thz: base + float(ln.m_thz) * const.MU_B_HZ_PER_T * cfg.B_mean for ln in lines}
