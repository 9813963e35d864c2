"""Offset-free frequency-comb bookkeeping: mode indices, absolute laser
frequencies and the repetition-rate uncertainty budget.

Mode indices are derived with exact rational arithmetic; frequencies are
only converted to float at the very end.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from . import constants as const


class AmbiguityError(ValueError):
    pass


@dataclass(frozen=True)
class CombConfig:
    f_rep: float = const.F_REP
    sigma_rep: float = const.SIGMA_REP
    offset: float = 0.0
    wavemeter_accuracy: float = const.WAVEMETER_ACCURACY

    def __post_init__(self):
        if self.f_rep <= 0:
            raise ValueError("f_rep must be > 0")
        if self.sigma_rep < 0:
            raise ValueError("sigma_rep must be >= 0")
        if self.offset != 0:
            raise ValueError("only offset-free combs are supported")


@dataclass(frozen=True)
class LockedLaser:
    label: str
    N: int
    beat: float  # Hz, sign is an explicit input
    shg_factor: int = 1

    def __post_init__(self):
        if self.shg_factor not in (1, 2):
            raise ValueError("shg_factor must be 1 or 2")
        if int(self.N) != self.N or self.N <= 0:
            raise ValueError("mode index must be a positive integer")

    def check(self, comb: CombConfig) -> None:
        if abs(self.beat) > comb.f_rep / 2:
            raise ValueError(f"{self.label}: |beat| exceeds f_rep/2")

    @property
    def effective_index(self) -> int:
        """Index of the comb tooth seen at the final (doubled) frequency."""
        return self.shg_factor * self.N


@dataclass(frozen=True)
class ModeResolution:
    N: int
    margin: float  # Hz, distance of the reading from the nearest half-integer index


def resolve_mode(wavemeter_freq: float, comb: CombConfig) -> ModeResolution:
    """Nearest comb tooth to a wavemeter reading (of the light beating with the comb)."""
    if comb.wavemeter_accuracy >= comb.f_rep / 2:
        raise AmbiguityError(
            f"wavemeter accuracy {comb.wavemeter_accuracy:g} Hz >= f_rep/2: mode index ambiguous")
    r = Fraction(wavemeter_freq) / Fraction(comb.f_rep)
    N = round(r)  # exact; ties go to even
    dist = abs(r - N)
    margin = float((Fraction(1, 2) - dist) * Fraction(comb.f_rep))
    if margin <= comb.wavemeter_accuracy:
        raise AmbiguityError(
            f"reading lies {margin:g} Hz from a tooth boundary, within the wavemeter accuracy")
    return ModeResolution(int(N), margin)


def mode_index(wavemeter_freq: float, comb: CombConfig) -> int:
    return resolve_mode(wavemeter_freq, comb).N


def laser_frequency_exact(l: LockedLaser, comb: CombConfig) -> Fraction:
    l.check(comb)
    return l.shg_factor * (l.N * Fraction(comb.f_rep) + Fraction(l.beat))


def laser_frequency(l: LockedLaser, comb: CombConfig) -> float:
    """shg · (N·f_rep + beat), in Hz."""
    return float(laser_frequency_exact(l, comb))


def frequency_uncertainty(l: LockedLaser, comb: CombConfig) -> float:
    """shg · N · σ_rep."""
    return float(l.shg_factor * l.N * Fraction(comb.sigma_rep))


def lock_from_frequency(label: str, freq: float, comb: CombConfig, shg_factor: int = 1) -> LockedLaser:
    """Lock a laser of final frequency ``freq`` to its nearest tooth (at the fundamental)."""
    fund = Fraction(freq) / shg_factor
    N = round(fund / Fraction(comb.f_rep))
    beat = fund - N * Fraction(comb.f_rep)
    return LockedLaser(label, int(N), float(beat), shg_factor)


def thz_index(lasers: Mapping[str, LockedLaser]) -> int:
    """N_B,eff - N_R - N_C (B carries its doubled index)."""
    return lasers["B"].effective_index - lasers["R"].effective_index - lasers["C"].effective_index


def combined_thz_uncertainty(lasers: Mapping[str, LockedLaser], comb: CombConfig) -> float:
    """|N_B,eff - N_R - N_C| · σ_rep: the comb contribution to ω_R + ω_C - ω_B."""
    return float(abs(thz_index(lasers)) * Fraction(comb.sigma_rep))


def thz_frequency(lasers: Mapping[str, LockedLaser], comb: CombConfig) -> float:
    """ω_R + ω_C - ω_B from the comb locks (exact until the final rounding)."""
    f = {k: laser_frequency_exact(v, comb) for k, v in lasers.items()}
    return float(f["R"] + f["C"] - f["B"])


def nominal_locks(comb: CombConfig | None = None, f_dd: float = const.FREQ_DD,
                delta: Mapping[str, float] | None = None) -> dict[str, LockedLaser]:
    """Locks for lasers on (or detuned from) the atomic lines; B from 794 nm doubled."""
    comb = comb or CombConfig()
    delta = delta or {}
    nu = const.atomic_frequencies(f_dd)
    return {
        "B": lock_from_frequency("B", nu["B"] + delta.get("B", 0.0), comb, 2),
        "R": lock_from_frequency("R", nu["R"] + delta.get("R", 0.0), comb, 1),
        "C": lock_from_frequency("C", nu["C"] + delta.get("C", 0.0), comb, 1),
    }


def budget(lasers: Mapping[str, LockedLaser], comb: CombConfig) -> dict:
    """JSON-ready uncertainty budget."""
    per = {
        k: {
            "N": l.N,
            "shg_factor": l.shg_factor,
            "beat_Hz": l.beat,
            "frequency_Hz": laser_frequency(l, comb),
            "sigma_Hz": frequency_uncertainty(l, comb),
        }
        for k, l in sorted(lasers.items())
    }
    return {
        "f_rep_Hz": comb.f_rep,
        "sigma_rep_Hz": comb.sigma_rep,
        "lasers": per,
        "thz_index": thz_index(lasers),
        "thz_frequency_Hz": thz_frequency(lasers, comb),
        "thz_sigma_Hz": combined_thz_uncertainty(lasers, comb),
    }
