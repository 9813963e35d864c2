"""Dressed-state reduction of the N-scheme to an effective Λ-scheme.

The quadrupole-coupled pair {S1/2, D5/2} is diagonalised first; its D5/2-like
eigenstate |Q> carries a small admixture ``α_C = Ω_C / (2 Δ_C)`` of S1/2 and is
light-shifted by ``δ_C``. Together with |D> (D3/2) and |P> it forms a Λ whose
couplings are ``Ω_R`` and ``α_C Ω_B``. All frequencies in Hz.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

PERTURBATIVE_WARN = 0.3


class PerturbativeError(ValueError):
    pass


def mixing_coefficient(omega_c_rabi: float, delta_c: float) -> float:
    """S1/2 admixture of the dressed D5/2 state, Ω_C/(2Δ_C)."""
    if delta_c == 0:
        raise PerturbativeError("resonant quadrupole drive: perturbative reduction invalid")
    return omega_c_rabi / (2.0 * delta_c)


def quadrupole_light_shift(omega_c_rabi: float, delta_c: float) -> float:
    """Second-order light shift Ω_C²/(4Δ_C) entering the dark-line condition."""
    if delta_c == 0 or abs(omega_c_rabi / delta_c) >= 1:
        raise PerturbativeError("|Ω_C/Δ_C| must be < 1")
    return omega_c_rabi**2 / (4.0 * delta_c)


def exact_light_shift(omega_c_rabi: float, delta_c: float) -> float:
    """Same shift from exact diagonalisation of the 2×2 {S, D5/2} block."""
    if delta_c == 0:
        raise PerturbativeError("resonant quadrupole drive")
    return 0.5 * math.copysign(math.hypot(delta_c, omega_c_rabi) - abs(delta_c), delta_c)


def dark_resonance_detuning(delta_b: float, delta_c: float, delta_shift_c: float = 0.0) -> float:
    """R-laser detuning of the three-photon dark line: Δ_B - Δ_C - δ_C."""
    return delta_b - delta_c - delta_shift_c


def three_photon_reference(omega_r: float, omega_c: float, omega_b: float,
                           delta_shift_c: float = 0.0) -> float:
    """ω_R + ω_C - ω_B + δ_C, equal to the D3/2-D5/2 frequency on the dark line."""
    return omega_r + omega_c - omega_b + delta_shift_c


@dataclass(frozen=True)
class EffectiveLambda:
    coupling_1: float  # D3/2 - P coupling, Ω_R
    coupling_2: float  # Q - P coupling, α_C Ω_B
    alpha_C: float
    delta_C: float
    dark_detuning: float


def effective_lambda(omega_b: float, omega_r: float, omega_c: float,
                     delta_b: float, delta_c: float, exact: bool = False) -> EffectiveLambda:
    """Build the effective Λ-scheme for given Rabi frequencies and detunings.

    With ``exact=True`` the S1/2 amplitude of |Q> and its shift come from the
    exact 2×2 eigenvector instead of first/second-order expansions.
    """
    alpha = mixing_coefficient(omega_c, delta_c)
    if abs(alpha) > PERTURBATIVE_WARN:
        warnings.warn(f"|alpha_C| = {abs(alpha):.3g} outside the perturbative regime", stacklevel=2)
    if exact:
        shift = exact_light_shift(omega_c, delta_c)
        alpha = dressed_q_state(omega_c, delta_c)[0]
    else:
        shift = quadrupole_light_shift(omega_c, delta_c)
    return EffectiveLambda(omega_r, alpha * omega_b, alpha, shift,
                           dark_resonance_detuning(delta_b, delta_c, shift))


def dressed_q_state(omega_c_rabi: float, delta_c: float) -> np.ndarray:
    """Exact |Q> as (S amplitude, D5/2 amplitude), phase fixed so the S
    amplitude has the sign of α_C (≈ α_C for weak drive)."""
    H = np.array([[0.0, omega_c_rabi / 2], [omega_c_rabi / 2, -delta_c]])
    w, v = np.linalg.eigh(H)
    k = int(np.argmax(np.abs(v[1])))  # D5/2-like eigenvector
    q = v[:, k]
    alpha = omega_c_rabi / (2 * delta_c)
    if q[0] * alpha < 0 or (q[0] == 0 and q[1] < 0):
        q = -q
    return q


def dark_state_vector(lam: EffectiveLambda) -> np.ndarray:
    """Normalised (|D>, |Q>) amplitudes of the state uncoupled from |P>."""
    a, b = lam.coupling_2, -lam.coupling_1
    n = math.hypot(a, b)
    if n == 0:
        raise ValueError("both Λ couplings vanish: dark state undefined")
    return np.array([a / n, b / n])


def embed_dark_state(lam: EffectiveLambda, omega_c_rabi: float, delta_c: float) -> np.ndarray:
    """Dark state in the reduced (S, P, D3/2, D5/2) basis via the dressed rotation."""
    d, q = dark_state_vector(lam)
    s_amp, d5_amp = dressed_q_state(omega_c_rabi, delta_c)
    return np.array([q * s_amp, 0.0, d, q * d5_amp])
