"""Rotating-frame Hamiltonian, Lindblad superoperator and steady states.

Conventions
-----------
* User-facing detunings, Rabi frequencies and laser linewidths are cyclic
  frequencies in Hz. Matrices are built in angular units (rad/s); decay rates
  are in 1/s.
* Detunings follow ``Δ_B = ω_B - ω(P1/2-S1/2)``, ``Δ_R = ω_R - ω(P1/2-D3/2)``,
  ``Δ_C = ω_C - ω(D5/2-S1/2)``. In the frame rotating with the lasers the bare
  energies are S: 0, P: -Δ_B, D3/2: -Δ_B + Δ_R, D5/2: -Δ_C, i.e.
  ``E = -(n_B Δ_B + n_R Δ_R + n_C Δ_C)`` with per-level photon numbers
  ``n`` given by :data:`PHOTON_NUMBERS`.
* Density matrices are vectorised column-major (``rho.reshape(-1, order="F")``)
  so ``vec(A ρ B) = (B^T ⊗ A) vec(ρ)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Mapping, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from . import atomic
from . import constants as const

TWO_PI = 2 * math.pi
LABELS = ("B", "R", "C")

PHOTON_NUMBERS = {
    "S12": (0, 0, 0),
    "P12": (1, 0, 0),
    "D32": (1, -1, 0),
    "D52": (0, 0, 1),
}

DEFAULT_POLARIZATION = {
    "B": {1: -1.0, -1: 1.0},
    "R": {1: -1.0, -1: 1.0},
    "C": {2: 1.0, -2: -1.0},
}


class SteadyStateError(RuntimeError):
    """Steady state is not unique or could not be solved to tolerance."""


class IntegrationError(RuntimeError):
    pass


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray, n: int | None = None) -> np.ndarray:
    n = n or int(round(math.sqrt(v.size)))
    return np.asarray(v).reshape((n, n), order="F")


@dataclass(frozen=True)
class LaserField:
    """One optical field. ``rabi`` is the Rabi frequency (Hz) of the strongest
    sublevel component; ``polarization`` maps Δm to a relative amplitude."""

    label: str
    detuning: float = 0.0
    rabi: float = 0.0
    linewidth: float = 0.0
    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    polarization: Mapping[int, complex] | None = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown laser label {self.label!r}")
        if self.rabi < 0 or self.linewidth < 0:
            raise ValueError(f"laser {self.label}: rabi and linewidth must be >= 0")

    @property
    def pol(self) -> Mapping[int, complex]:
        return DEFAULT_POLARIZATION[self.label] if self.polarization is None else self.polarization

    @property
    def wavelength(self) -> float:
        return const.WAVELENGTH[self.label]

    def replace(self, **kw) -> "LaserField":
        from dataclasses import replace
        return replace(self, **kw)


@dataclass(frozen=True)
class State:
    level: str
    m: Fraction | None = None

    def __str__(self):
        return self.level if self.m is None else f"{self.level}({self.m})"


@dataclass(frozen=True)
class DecayChannel:
    """Spontaneous decay ``from_state -> to_state``.

    Channels sharing a ``group`` key are summed coherently into one collapse
    operator, with ``amplitude`` carrying the relative sign.
    """

    from_state: int
    to_state: int
    rate: float
    group: Hashable | None = None
    amplitude: float = 1.0

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("decay rate must be >= 0")


@dataclass(frozen=True)
class Dephasing:
    """Pure dephasing by the diagonal operator ``sum_k w_k |k><k|`` at ``rate``.

    The coherence ρ_ij then decays at ``rate * (w_i - w_j)**2 / 2``.
    """

    weights: tuple[float, ...]
    rate: float

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("dephasing rate must be >= 0")


# --- level schemes -----------------------------------------------------------

class Scheme:
    states: tuple[State, ...]

    @property
    def dim(self) -> int:
        return len(self.states)

    def indices(self, level: str) -> list[int]:
        return [i for i, s in enumerate(self.states) if s.level == level]

    def photon_numbers(self) -> np.ndarray:
        """(dim, 3) array of B, R, C photon numbers per basis state."""
        return np.array([PHOTON_NUMBERS[s.level] for s in self.states], dtype=float)

    def zeeman_hz_per_tesla(self) -> np.ndarray:
        out = np.zeros(self.dim)
        for i, s in enumerate(self.states):
            if s.m is not None:
                out[i] = atomic.LEVELS[s.level].lande_g * float(s.m) * const.MU_B_HZ_PER_T
        return out

    def couplings(self, laser: LaserField) -> list[tuple[int, int, complex]]:
        raise NotImplementedError

    def decay_channels(self, gamma_p=const.GAMMA_P, beta=const.BETA,
                       gamma_d32=const.GAMMA_D32, gamma_d52=const.GAMMA_D52) -> list[DecayChannel]:
        raise NotImplementedError


_TRANSITION_LEVELS = {"B": ("S12", "P12"), "R": ("D32", "P12"), "C": ("S12", "D52")}


class ReducedScheme(Scheme):
    """Four states S, P, D3/2, D5/2.

    With ``line`` given, the states stand for the sublevels of that Zeeman
    component: their Zeeman shifts enter the energies and each coupling is
    scaled by its Clebsch-Gordan amplitude times the polarisation weight.
    """

    def __init__(self, line: atomic.ZeemanLine | None = None):
        self.line = line
        if line is None:
            ms = dict.fromkeys(atomic.LEVEL_NAMES)
        else:
            ms = {"S12": line.mj_s12, "P12": line.mj_p12, "D32": line.mj_d32, "D52": line.mj_d52}
        self.states = tuple(State(lv, ms[lv]) for lv in atomic.LEVEL_NAMES)

    def couplings(self, laser):
        lo, up = _TRANSITION_LEVELS[laser.label]
        i, j = self.indices(lo)[0], self.indices(up)[0]
        if self.line is None:
            return [(i, j, 1.0)]
        m1, m2 = self.states[i].m, self.states[j].m
        q = int(m2 - m1)
        amp = laser.pol.get(q, 0.0) * atomic.relative_amplitude(laser.label, m1, m2)
        return [(i, j, amp)]

    def decay_channels(self, gamma_p=const.GAMMA_P, beta=const.BETA,
                       gamma_d32=const.GAMMA_D32, gamma_d52=const.GAMMA_D52):
        S, P, D3, D5 = range(4)
        return [
            DecayChannel(P, S, gamma_p * (1 - beta)),
            DecayChannel(P, D3, gamma_p * beta),
            DecayChannel(D3, S, gamma_d32),
            DecayChannel(D5, S, gamma_d52),
        ]


class ZeemanManifold(Scheme):
    """All 14 magnetic sublevels of S1/2, P1/2, D3/2 and D5/2."""

    def __init__(self):
        self.states = tuple(
            State(lv, m) for lv in atomic.LEVEL_NAMES for m in atomic.LEVELS[lv].sublevels
        )
        self._index = {s: i for i, s in enumerate(self.states)}

    def index(self, level: str, m) -> int:
        return self._index[State(level, atomic.as_half_integer(m))]

    def couplings(self, laser):
        lo, up = _TRANSITION_LEVELS[laser.label]
        out = []
        for i in self.indices(lo):
            for j in self.indices(up):
                m1, m2 = self.states[i].m, self.states[j].m
                q = int(m2 - m1) if (m2 - m1).denominator == 1 else None
                w = laser.pol.get(q, 0.0) if q is not None else 0.0
                if w == 0:
                    continue
                amp = w * atomic.relative_amplitude(laser.label, m1, m2)
                if amp != 0:
                    out.append((i, j, amp))
        return out

    def _decays(self, upper, lower, rank, rate, tag):
        Ju, Jl = atomic.LEVELS[upper].J, atomic.LEVELS[lower].J
        out = []
        for i in self.indices(upper):
            for j in self.indices(lower):
                mu, ml = self.states[i].m, self.states[j].m
                q = mu - ml
                if q.denominator != 1 or abs(q) > rank:
                    continue
                cg = atomic.clebsch(Jl, ml, rank, int(q), Ju, mu)
                if cg != 0:
                    out.append(DecayChannel(i, j, rate * cg**2, (tag, int(q)), math.copysign(1.0, cg)))
        return out

    def decay_channels(self, gamma_p=const.GAMMA_P, beta=const.BETA,
                       gamma_d32=const.GAMMA_D32, gamma_d52=const.GAMMA_D52):
        return (
            self._decays("P12", "S12", 1, gamma_p * (1 - beta), "PS")
            + self._decays("P12", "D32", 1, gamma_p * beta, "PD")
            + self._decays("D32", "S12", 2, gamma_d32, "D3S")
            + self._decays("D52", "S12", 2, gamma_d52, "D5S")
        )


# --- Hamiltonian -------------------------------------------------------------

@dataclass
class Hamiltonian:
    matrix: np.ndarray  # rad/s
    scheme: Scheme

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def _laser_map(lasers: Sequence[LaserField]) -> dict[str, LaserField]:
    out = {}
    for l in lasers:
        if l.label in out:
            raise ValueError(f"duplicate laser {l.label}")
        out[l.label] = l
    missing = set(LABELS) - set(out)
    if missing:
        raise ValueError(f"missing laser(s): {sorted(missing)}")
    return out


def doppler_shifted(lasers: Sequence[LaserField], velocity) -> list[LaserField]:
    """Replace each Δ_i by Δ_i - k_i·v/2π (first-order Doppler, Hz)."""
    v = np.asarray(velocity, dtype=float)
    if v.ndim == 0:
        v = np.array([0.0, 0.0, float(v)])
    out = []
    for l in lasers:
        d = np.asarray(l.direction, float)
        d = d / np.linalg.norm(d)
        out.append(l.replace(detuning=l.detuning - float(d @ v) / l.wavelength))
    return out


def diagonal_energies(scheme: Scheme, lasers: Mapping[str, LaserField], B: float = 0.0) -> np.ndarray:
    """Bare rotating-frame energies in Hz."""
    det = np.array([lasers[k].detuning for k in LABELS])
    return -scheme.photon_numbers() @ det + scheme.zeeman_hz_per_tesla() * B


def build_hamiltonian(scheme: Scheme, lasers: Sequence[LaserField], B: float = 0.0,
                      velocity=None) -> Hamiltonian:
    """Rotating-wave Hamiltonian (rad/s) for the given scheme and three lasers."""
    if B < 0:
        raise ValueError("B must be >= 0")
    if velocity is not None:
        lasers = doppler_shifted(lasers, velocity)
    lm = _laser_map(lasers)
    H = np.diag(diagonal_energies(scheme, lm, B)).astype(complex)
    for lbl in LABELS:
        l = lm[lbl]
        for i, j, amp in scheme.couplings(l):
            H[j, i] += 0.5 * l.rabi * amp
            H[i, j] += 0.5 * l.rabi * np.conj(amp)
    return Hamiltonian(TWO_PI * H, scheme)


def laser_dephasings(scheme: Scheme, lasers: Sequence[LaserField]) -> list[Dephasing]:
    """Phase diffusion of each laser as dephasing weighted by photon number."""
    n = scheme.photon_numbers()
    out = []
    for l in lasers:
        if l.linewidth > 0:
            k = LABELS.index(l.label)
            out.append(Dephasing(tuple(n[:, k]), TWO_PI * l.linewidth))
    return out


# --- Liouvillian -------------------------------------------------------------

@dataclass
class Liouvillian:
    matrix: np.ndarray
    dim: int

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.matrix @ vec(rho), self.dim)


def commutator_superop(H: np.ndarray) -> np.ndarray:
    """Superoperator of ``ρ -> -i[H, ρ]``."""
    n = H.shape[0]
    I = np.eye(n)
    return -1j * (np.kron(I, H) - np.kron(H.T, I))


def dissipator_superop(C: np.ndarray) -> np.ndarray:
    n = C.shape[0]
    I = np.eye(n)
    CdC = C.conj().T @ C
    return np.kron(C.conj(), C) - 0.5 * np.kron(I, CdC) - 0.5 * np.kron(CdC.T, I)


def collapse_operators(n: int, decays: Sequence[DecayChannel],
                       dephasings: Sequence[Dephasing] = ()) -> list[np.ndarray]:
    groups: dict = {}
    ops = []
    for d in decays:
        if d.rate == 0:
            continue
        C = np.zeros((n, n), dtype=complex)
        C[d.to_state, d.from_state] = d.amplitude * math.sqrt(d.rate)
        if d.group is None:
            ops.append(C)
        else:
            groups[d.group] = groups.get(d.group, 0) + C
    ops.extend(groups.values())
    for dp in dephasings:
        if dp.rate > 0:
            ops.append(math.sqrt(dp.rate) * np.diag(np.asarray(dp.weights, dtype=complex)))
    return ops


def build_liouvillian(H: Hamiltonian | np.ndarray, decays: Sequence[DecayChannel] = (),
                      dephasings: Sequence[Dephasing] = ()) -> Liouvillian:
    """L[ρ] = -i[H,ρ] + Σ_k (C_k ρ C_k† - ½{C_k†C_k, ρ})."""
    Hm = H.matrix if isinstance(H, Hamiltonian) else np.asarray(H)
    if not np.allclose(Hm, Hm.conj().T, atol=1e-9 * max(1.0, np.abs(Hm).max())):
        raise ValueError("Hamiltonian is not Hermitian")
    n = Hm.shape[0]
    L = commutator_superop(Hm)
    for C in collapse_operators(n, decays, dephasings):
        L = L + dissipator_superop(C)
    return Liouvillian(L, n)


@dataclass
class AtomModel:
    """Everything needed to assemble a Liouvillian for one operating point."""

    scheme: Scheme
    lasers: tuple[LaserField, ...]
    B: float = 0.0
    gamma_p: float = const.GAMMA_P
    beta: float = const.BETA
    metastable_decay: bool = True

    def decays(self) -> list[DecayChannel]:
        gd3, gd5 = (const.GAMMA_D32, const.GAMMA_D52) if self.metastable_decay else (0.0, 0.0)
        return self.scheme.decay_channels(self.gamma_p, self.beta, gd3, gd5)

    def liouvillian(self, velocity=None, B: float | None = None) -> Liouvillian:
        lasers = self.lasers if velocity is None else doppler_shifted(self.lasers, velocity)
        H = build_hamiltonian(self.scheme, lasers, self.B if B is None else B)
        return build_liouvillian(H, self.decays(), laser_dephasings(self.scheme, lasers))

    def with_detuning(self, label: str, value: float) -> "AtomModel":
        from dataclasses import replace
        lasers = tuple(l.replace(detuning=value) if l.label == label else l for l in self.lasers)
        return replace(self, lasers=lasers)

    def laser(self, label: str) -> LaserField:
        return _laser_map(self.lasers)[label]

    def detuning_derivative(self, label: str) -> np.ndarray:
        """dL/dΔ_label (per Hz); L is affine in every detuning."""
        k = LABELS.index(label)
        return commutator_superop(np.diag(-TWO_PI * self.scheme.photon_numbers()[:, k]).astype(complex))

    def field_derivative(self) -> np.ndarray:
        """dL/dB (per tesla)."""
        return commutator_superop(np.diag(TWO_PI * self.scheme.zeeman_hz_per_tesla()).astype(complex))


# --- steady state ------------------------------------------------------------

def _trace_row(n: int) -> np.ndarray:
    row = np.zeros(n * n, dtype=complex)
    row[:: n + 1] = 1.0
    return row


def _augmented(Lm: np.ndarray, n: int) -> tuple[np.ndarray, float]:
    scale = np.abs(Lm).max() or 1.0
    A = Lm / scale
    A = A.copy()
    A[0, :] = _trace_row(n)
    return A, scale


KERNEL_TOL = 1e-14


def kernel_dimension(L: Liouvillian, tol: float = KERNEL_TOL) -> int:
    s = np.linalg.svd(L.matrix / (np.abs(L.matrix).max() or 1.0), compute_uv=False)
    return int(np.sum(s < tol * s[0]))


def steady_state(L: Liouvillian, check_kernel: bool = True, residual_tol: float = 1e-10) -> np.ndarray:
    """Unique trace-one ρ with L[ρ] = 0.

    Solved as the linear system with the (redundant) ρ_00 equation replaced
    by the trace condition. The residual is measured on L normalised to unit
    max-norm. Raises :class:`SteadyStateError` on a degenerate kernel.
    """
    n = L.dim
    if check_kernel:
        k = kernel_dimension(L)
        if k > 1:
            raise SteadyStateError(f"steady state not unique: kernel dimension {k}")
    A, scale = _augmented(L.matrix, n)
    b = np.zeros(n * n, dtype=complex)
    b[0] = 1.0
    try:
        x = sla.solve(A, b)
    except (sla.LinAlgError, np.linalg.LinAlgError) as exc:
        raise SteadyStateError(str(exc)) from exc
    resid = np.linalg.norm(L.matrix @ x) / scale
    if not np.isfinite(resid) or resid > residual_tol:
        raise SteadyStateError(f"steady-state residual {resid:.3g} exceeds {residual_tol:g}")
    rho = unvec(x, n)
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


class DetuningPencil:
    """Steady-state observables of ``L0 + p·L1`` for many scalar ``p``.

    One complex QZ decomposition of the trace-augmented pencil turns every
    solve into a triangular back-substitution, done for all ``p`` at once.
    ``L1`` must be affine-free (pure derivative), e.g. dL/dΔ.
    """

    SINGULAR_TOL = 1e-15

    def __init__(self, L0: np.ndarray, L1: np.ndarray, observables: np.ndarray):
        n2 = L0.shape[0]
        n = int(round(math.sqrt(n2)))
        A, scale = _augmented(L0, n)
        Bm = L1 / scale
        Bm = Bm.copy()
        Bm[0, :] = 0.0
        S, T, Q, Z = sla.qz(A, Bm, output="complex")
        self.S, self.T = S, T
        self.c = Q.conj().T[:, 0]  # Q^H e_0
        obs = np.atleast_2d(observables)
        self.U = obs @ Z  # observables mapped into the Schur basis
        self.n2 = n2

    CHUNK = 1024  # columns per batch, keeps the work array cache resident
    BLOCK = 32  # rows per block update

    def evaluate(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (observables with shape (n_obs, n_p), singular-flag per p)."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        dS, dT = np.diag(self.S), np.diag(self.T)
        out = np.empty((self.U.shape[0], p.size))
        singular = np.empty(p.size, dtype=bool)
        for a in range(0, p.size, self.CHUNK):
            pc = p[a:a + self.CHUNK]
            diag = dS[:, None] + dT[:, None] * pc[None, :]
            mag = np.abs(diag)
            singular[a:a + pc.size] = mag.min(axis=0) < self.SINGULAR_TOL * mag.max(axis=0)
            out[:, a:a + pc.size] = (self.U @ self._solve(pc, diag)).real
        return out, singular

    def _solve(self, p: np.ndarray, diag: np.ndarray) -> np.ndarray:
        S, T, c = self.S, self.T, self.c
        n = self.n2
        Y = np.zeros((n, p.size), dtype=complex)
        R = np.repeat(c[:, None], p.size, axis=1)  # right-hand side, updated blockwise
        for hi in range(n, 0, -self.BLOCK):
            lo = max(0, hi - self.BLOCK)
            for i in range(hi - 1, lo - 1, -1):
                acc = R[i] - S[i, i + 1:hi] @ Y[i + 1:hi] - p * (T[i, i + 1:hi] @ Y[i + 1:hi])
                Y[i] = acc / diag[i]
            if lo:
                Yb = Y[lo:hi]
                R[:lo] -= S[:lo, lo:hi] @ Yb + (T[:lo, lo:hi] @ Yb) * p[None, :]
        return Y

def population_observable(scheme: Scheme, level: str) -> np.ndarray:
    n = scheme.dim
    w = np.zeros(n * n)
    for i in scheme.indices(level):
        w[i * (n + 1)] = 1.0
    return w


# --- dynamics ----------------------------------------------------------------

def evolve(rho0: np.ndarray, L: Liouvillian, t: float, method: str = "DOP853",
           rtol: float = 1e-10, atol: float = 1e-12) -> np.ndarray:
    """ρ(t) = exp(L t)[ρ0] by adaptive integration."""
    if t < 0:
        raise ValueError("t must be >= 0")
    rho0 = np.asarray(rho0, dtype=complex)
    if t == 0:
        return rho0.copy()
    M = L.matrix
    kw = {"jac": M} if method in ("Radau", "BDF") else {}
    sol = solve_ivp(lambda _t, y: M @ y, (0.0, t), vec(rho0), method=method,
                    rtol=rtol, atol=atol, **kw)
    if sol.status != 0:
        raise IntegrationError(sol.message)
    return unvec(sol.y[:, -1], L.dim)


def dwell_average(rho0: np.ndarray, L: Liouvillian, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Time-averaged ρ over [0, t] and ρ(t), via one augmented matrix exponential."""
    n2 = L.matrix.shape[0]
    M = np.zeros((n2 + 1, n2 + 1), dtype=complex)
    M[:n2, :n2] = L.matrix * t
    M[:n2, n2] = vec(rho0)
    E = sla.expm(M)
    avg = E[:n2, n2]  # ∫_0^1 exp(L t s) ds ρ0
    final = E[:n2, :n2] @ vec(rho0)
    return unvec(avg, L.dim), unvec(final, L.dim)


# --- observable --------------------------------------------------------------

def fluorescence(rho: np.ndarray, scheme: Scheme, detection_efficiency: float = 1.0,
                 background: float = 0.0, gamma_p: float = const.GAMMA_P,
                 beta: float = const.BETA) -> float:
    """Detected 397 nm photon rate (counts/s)."""
    pop = float(sum(rho[i, i].real for i in scheme.indices("P12")))
    return (1 - beta) * gamma_p * pop * detection_efficiency + background


def thermal_state(scheme: Scheme) -> np.ndarray:
    """Population spread evenly over the ground S1/2 sublevels."""
    rho = np.zeros((scheme.dim, scheme.dim), dtype=complex)
    idx = scheme.indices("S12")
    for i in idx:
        rho[i, i] = 1.0 / len(idx)
    return rho
