"""Scenario files: YAML with a unit suffix on every physical quantity.

Parsing walks the composed YAML node tree so that every validation error
carries the line it refers to. Values are normalised to SI (Hz, T, K, s).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from . import constants as const
from .comb import CombConfig, LockedLaser, nominal_locks
from .lindblad import LABELS, LaserField
from .spectroscopy import ScanConfig


class ScenarioError(ValueError):
    def __init__(self, msg: str, line: int | None = None, source: str = "<scenario>"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + msg)


UNITS = {
    "frequency": {"mHz": 1e-3, "Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9, "THz": 1e12},
    "field": {"T": 1.0, "mT": 1e-3, "uT": 1e-6, "G": const.GAUSS, "mG": 1e-3 * const.GAUSS},
    "temperature": {"K": 1.0, "mK": 1e-3, "uK": 1e-6},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6},
    "rate": {"counts/s": 1.0, "counts/ms": 1e3, "1/s": 1.0},
    "power": {"W": 1e3, "mW": 1.0, "uW": 1e-3},  # normalised to mW
    "calibration": {"Hz/sqrt(mW)": 1.0, "kHz/sqrt(mW)": 1e3, "MHz/sqrt(mW)": 1e6},
}

_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*((?:1/)?[A-Za-z][A-Za-z/()0-9]*)\s*$")


def parse_quantity(text: str, kind: str, line: int | None = None, source: str = "<scenario>") -> float:
    """'-24.94 MHz' -> -2.494e7 (SI). A bare number is rejected."""
    m = _QTY.match(str(text))
    if not m:
        raise ScenarioError(f"expected a {kind} with unit, got {text!r}", line, source)
    value, unit = float(m.group(1)), m.group(2)
    table = UNITS[kind]
    if unit not in table:
        raise ScenarioError(f"unit {unit!r} is not a {kind} unit (allowed: {', '.join(table)})",
                            line, source)
    return value * table[unit]


# field schema: name -> (kind, default); kind is a unit family or one of
# int/float/bool/str/vector/polarization; default REQUIRED marks mandatory keys
REQUIRED = object()

LASER_SCHEMA = {
    "detuning": ("frequency", 0.0),
    "rabi": ("frequency", None),
    "power": ("power", None),
    "calibration": ("calibration", None),
    "linewidth": ("frequency", 0.0),
    "direction": ("vector", (0.0, 0.0, 1.0)),
    "polarization": ("polarization", None),
}
SCAN_SCHEMA = {
    "swept": ("str", "R"),
    "start": ("frequency", REQUIRED),
    "stop": ("frequency", REQUIRED),
    "step": ("frequency", REQUIRED),
    "integration_time": ("time", 0.15),
    "repeats": ("int", 1),
    "transient": ("bool", False),
}
NOISE_SCHEMA = {
    "B_mean": ("field", 0.0),
    "B_long_pkpk": ("field", 0.0),
    "B_short_pkpk": ("field", 0.0),
    "field_model": ("str", "uniform"),
    "temperature": ("temperature", 0.0),
    "doppler_mode": ("str", "effective"),
    "doppler_order": ("int", 8),
    "field_order": ("int", 4),
    "shot_noise": ("bool", False),
}
DETECTION_SCHEMA = {
    "ion_count": ("float", 1.0),
    "efficiency": ("float", 1.0),
    "background": ("rate", 0.0),
}
ATOM_SCHEMA = {
    "gamma_p": ("rate", const.GAMMA_P),
    "beta": ("float", const.BETA),
    "metastable_decay": ("bool", True),
}
COMB_LASER_SCHEMA = {
    "N": ("int", REQUIRED),
    "beat": ("frequency", REQUIRED),
    "shg": ("int", 1),
}
COMB_SCHEMA = {
    "f_rep": ("frequency", const.F_REP),
    "sigma_rep": ("frequency", const.SIGMA_REP),
    "wavemeter_accuracy": ("frequency", const.WAVEMETER_ACCURACY),
    "f_dd": ("frequency", const.FREQ_DD),
    "lasers": ("comb_lasers", None),
}
ANALYSIS_SCHEMA = {
    "min_depth_sigma": ("float", 5.0),
    "reference_line": ("str", "-13/5"),
}
OUTPUT_SCHEMA = {
    "stem": ("str", "spectrum"),
}
TOP_SCHEMA = {
    "model": ("str", "4-level"),
    "seed": ("int", 0),
    "lasers": ("lasers", REQUIRED),
    "scan": (SCAN_SCHEMA, REQUIRED),
    "noise": (NOISE_SCHEMA, {}),
    "detection": (DETECTION_SCHEMA, {}),
    "atom": (ATOM_SCHEMA, {}),
    "comb": (COMB_SCHEMA, None),
    "analysis": (ANALYSIS_SCHEMA, {}),
    "output": (OUTPUT_SCHEMA, {}),
}


@dataclass
class Scenario:
    scan: ScanConfig
    comb: CombConfig | None = None
    comb_lasers: dict[str, LockedLaser] | None = None
    f_dd: float = const.FREQ_DD
    min_depth_sigma: float = 5.0
    reference_line: str = "-13/5"
    stem: str = "spectrum"
    raw: dict = field(default_factory=dict)
    source: str = "<scenario>"

    @property
    def seed(self) -> int:
        return self.scan.seed

    def locks(self) -> dict[str, LockedLaser] | None:
        """Explicit comb locks, or ones derived from the laser detunings
        (swept laser at zero detuning)."""
        if self.comb is None:
            return None
        if self.comb_lasers:
            return self.comb_lasers
        det = {l.label: (0.0 if l.label == self.scan.swept else l.detuning) for l in self.scan.lasers}
        return nominal_locks(self.comb, self.f_dd, det)


class _Reader:
    def __init__(self, source: str):
        self.source = source

    def err(self, msg, node):
        return ScenarioError(msg, node.start_mark.line + 1 if node is not None else None, self.source)

    def scalar(self, node, kind, key):
        if kind == "vector":
            if not isinstance(node, yaml.SequenceNode) or len(node.value) != 3:
                raise self.err(f"{key}: expected a 3-vector", node)
            try:
                v = tuple(float(n.value) for n in node.value)
            except ValueError:
                raise self.err(f"{key}: vector entries must be numbers", node) from None
            if not any(v):
                raise self.err(f"{key}: zero vector", node)
            return v
        if kind == "polarization":
            if not isinstance(node, yaml.MappingNode):
                raise self.err(f"{key}: expected a mapping q -> amplitude", node)
            out = {}
            for k, v in node.value:
                try:
                    out[int(k.value)] = float(v.value)
                except ValueError:
                    raise self.err(f"{key}: entries must be integer q: number", k) from None
            return out
        if not isinstance(node, yaml.ScalarNode):
            raise self.err(f"{key}: expected a scalar", node)
        text = node.value
        if kind == "str":
            return text
        if kind == "bool":
            low = text.lower()
            if low in ("true", "yes", "on"):
                return True
            if low in ("false", "no", "off"):
                return False
            raise self.err(f"{key}: expected a boolean", node)
        if kind in ("int", "float"):
            try:
                return int(text) if kind == "int" else float(text)
            except ValueError:
                raise self.err(f"{key}: expected {'an integer' if kind == 'int' else 'a number'}, "
                               f"got {text!r}", node) from None
        return parse_quantity(text, kind, node.start_mark.line + 1, self.source)

    def mapping(self, node, schema, where):
        if not isinstance(node, yaml.MappingNode):
            raise self.err(f"{where}: expected a mapping", node)
        seen = {}
        out = {"_lines": {}}
        for k, v in node.value:
            name = k.value
            if name not in schema:
                raise self.err(f"{where}: unknown key {name!r}", k)
            if name in seen:
                raise self.err(f"{where}: duplicate key {name!r}", k)
            seen[name] = v
        for name, (kind, default) in schema.items():
            if name not in seen:
                if default is REQUIRED:
                    raise self.err(f"{where}: missing required key {name!r}", node)
                if isinstance(kind, dict) and default is not None:
                    default = {k: d for k, (_, d) in kind.items()}
                out[name] = default
                continue
            v = seen[name]
            key = f"{where}.{name}" if where else name
            if isinstance(kind, dict):
                out[name] = self.mapping(v, kind, key)
            elif kind == "lasers":
                out[name] = self.lasers(v, key)
            elif kind == "comb_lasers":
                out[name] = self.labelled(v, COMB_LASER_SCHEMA, key)
            else:
                out[name] = self.scalar(v, kind, key)
            out["_lines"][name] = v.start_mark.line + 1
        return out

    def labelled(self, node, schema, where):
        if not isinstance(node, yaml.MappingNode):
            raise self.err(f"{where}: expected a mapping keyed by laser label", node)
        out = {}
        for k, v in node.value:
            if k.value not in LABELS:
                raise self.err(f"{where}: unknown laser {k.value!r} (expected B, R, C)", k)
            out[k.value] = self.mapping(v, schema, f"{where}.{k.value}")
            out[k.value]["_line"] = k.start_mark.line + 1
        return out

    def lasers(self, node, where):
        d = self.labelled(node, LASER_SCHEMA, where)
        missing = [l for l in LABELS if l not in d]
        if missing:
            raise self.err(f"{where}: missing laser(s) {', '.join(missing)}", node)
        out = []
        for lbl in LABELS:
            e = d[lbl]
            line = e["_line"]
            if e["rabi"] is not None and e["power"] is not None:
                raise ScenarioError(f"{where}.{lbl}: give either rabi or power, not both", line, self.source)
            if e["rabi"] is None:
                if e["power"] is None or e["calibration"] is None:
                    raise ScenarioError(f"{where}.{lbl}: needs rabi, or power with calibration",
                                        line, self.source)
                if e["power"] < 0:
                    raise ScenarioError(f"{where}.{lbl}: negative power", line, self.source)
                rabi = e["calibration"] * math.sqrt(e["power"])
            else:
                rabi = e["rabi"]
            try:
                out.append(LaserField(lbl, e["detuning"], rabi, e["linewidth"], e["direction"],
                                      e["polarization"]))
            except ValueError as exc:
                raise ScenarioError(f"{where}.{lbl}: {exc}", line, self.source) from None
        return tuple(out)


def load_scenario_text(text: str, source: str = "<scenario>") -> Scenario:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                            mark.line + 1 if mark else None, source) from None
    if node is None:
        raise ScenarioError("empty scenario", 1, source)
    rd = _Reader(source)
    d = rd.mapping(node, TOP_SCHEMA, "")
    sc, nz, det, at = d["scan"], d["noise"], d["detection"], d["atom"]
    if d["model"] not in ("4-level", "zeeman-14"):
        raise ScenarioError(f"model must be '4-level' or 'zeeman-14', got {d['model']!r}",
                            d["_lines"].get("model"), source)
    try:
        cfg = ScanConfig(
            lasers=d["lasers"], start=sc["start"], stop=sc["stop"], step=sc["step"],
            swept=sc["swept"], model=d["model"],
            B_mean=nz["B_mean"], B_noise_long=nz["B_long_pkpk"], B_noise_short=nz["B_short_pkpk"],
            field_noise_model=nz["field_model"], temperature=nz["temperature"],
            doppler_mode=nz["doppler_mode"], doppler_order=nz["doppler_order"],
            field_order=nz["field_order"], integration_time=sc["integration_time"],
            repeats=sc["repeats"], ion_count=det["ion_count"], detection_efficiency=det["efficiency"],
            background=det["background"], gamma_p=at["gamma_p"], beta=at["beta"],
            metastable_decay=at["metastable_decay"], shot_noise=nz["shot_noise"],
            transient=sc["transient"], seed=d["seed"],
        )
    except ValueError as exc:
        raise ScenarioError(str(exc), d["_lines"].get("scan"), source) from None
    if cfg.B_mean < 0:
        raise ScenarioError("noise.B_mean must be >= 0", d["_lines"].get("noise"), source)
    comb = locks = None
    f_dd = const.FREQ_DD
    if d["comb"] is not None:
        cb = d["comb"]
        try:
            comb = CombConfig(cb["f_rep"], cb["sigma_rep"], 0.0, cb["wavemeter_accuracy"])
            if cb["lasers"]:
                locks = {k: LockedLaser(k, v["N"], v["beat"], v["shg"]) for k, v in cb["lasers"].items()}
                for l in locks.values():
                    l.check(comb)
        except ValueError as exc:
            raise ScenarioError(f"comb: {exc}", d["_lines"].get("comb"), source) from None
        f_dd = cb["f_dd"]
    return Scenario(cfg, comb, locks, f_dd, d["analysis"]["min_depth_sigma"],
                    d["analysis"]["reference_line"], d["output"]["stem"], _strip(d), source)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", None, str(path)) from None
    return load_scenario_text(text, str(path))


def _strip(d: Any) -> Any:
    if isinstance(d, dict):
        return {k: _strip(v) for k, v in d.items() if not str(k).startswith("_")}
    if isinstance(d, (list, tuple)):
        return [_strip(v) for v in d]
    if isinstance(d, LaserField):
        return {"label": d.label, "detuning": d.detuning, "rabi": d.rabi}
    return d
