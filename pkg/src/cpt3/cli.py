"""``cpt3`` command line: scan, fit, reference, comb-budget, dark-predict, table1.

Exit codes: 0 success, 2 configuration/input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis, atomic, comb, dressed
from . import constants as const
from .lindblad import SteadyStateError
from .scenario import ScenarioError, load_scenario, parse_quantity
from .spectroscopy import ScanConfig, Spectrum, config_digest, predicted_line_positions, scan

log = logging.getLogger("cpt3")
log.propagate = False

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class CliError(Exception):
    def __init__(self, msg, code=EXIT_CONFIG):
        super().__init__(msg)
        self.code = code


def _out_dir(args) -> Path:
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=analysis._json_default) + "\n")


def _file_logger(path: Path) -> logging.Handler:
    h = logging.FileHandler(path, mode="w")
    h.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(h)
    return h


# --- scan --------------------------------------------------------------------

def cmd_scan(args) -> int:
    sc = load_scenario(args.scenario)
    cfg = sc.scan if args.seed is None else replace(sc.scan, seed=args.seed)
    out = _out_dir(args)
    stem = out / sc.stem
    h = _file_logger(stem.with_suffix(".log"))
    try:
        log.info("cpt3 %s scan of %s", __version__, args.scenario)
        log.info("config digest %s", config_digest(cfg.to_dict()))
        spec = scan(cfg, threads=args.threads)
        for k, v in sorted(spec.diagnostics.items()):
            log.info("diagnostic %s = %s", k, v)
        if args.format == "json":
            _write_json(stem.with_suffix(".json"), {
                "format": "cpt3-spectrum/1", "version": __version__, "digest": spec.digest,
                "config": spec.config, "diagnostics": spec.diagnostics, "flagged": spec.flagged,
                "detuning_Hz": spec.detuning.tolist(), "rate_counts_per_s": spec.rate.tolist(),
                "sigma_counts_per_s": spec.sigma.tolist(),
            })
        else:
            spec.save(stem.with_suffix(".csv"))
        if spec.flagged:
            for i in spec.flagged:
                log.error("steady state failed at point %d (detuning %r Hz)", i, float(spec.detuning[i]))
            raise CliError(f"{len(spec.flagged)} scan point(s) failed; see {stem.with_suffix('.log')}",
                           EXIT_NUMERIC)
        print(stem.with_suffix(".csv" if args.format == "csv" else ".json"))
    finally:
        log.removeHandler(h)
        h.close()
    return EXIT_OK


# --- fit ---------------------------------------------------------------------

def _load_spectrum(path: str) -> Spectrum:
    p = Path(path)
    try:
        if p.suffix == ".json":
            d = json.loads(p.read_text())
            return Spectrum(d["detuning_Hz"], d["rate_counts_per_s"], d["sigma_counts_per_s"],
                            d.get("config", {}), d.get("diagnostics", {}), d.get("flagged", []))
        return Spectrum.load(p)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"{path}: unreadable spectrum ({exc})") from None


def _predicted(spec: Spectrum) -> dict | None:
    try:
        cfg = ScanConfig.from_dict(spec.config)
    except (TypeError, KeyError, ValueError):
        return None
    if cfg.swept != "R" or cfg.model != "zeeman-14" or cfg.B_mean <= 0:
        return None
    return predicted_line_positions(cfg)


def cmd_fit(args) -> int:
    spec = _load_spectrum(args.spectrum)
    if len(spec) < 20:
        raise CliError(f"{args.spectrum}: spectrum too short to analyse")
    pred = _predicted(spec)
    results = analysis.fit_spectrum(spec, args.min_depth_sigma, pred)
    report = analysis.fit_report(results, spec)
    out = _out_dir(args)
    stem = Path(args.spectrum).stem
    _write_json(out / f"{stem}.fits.json", report)
    (out / f"{stem}.fits.csv").write_text(analysis.summary_csv(report["fits"]))
    print(out / f"{stem}.fits.json")
    return EXIT_OK


# --- reference ---------------------------------------------------------------

def _overrides(items) -> dict[int, Fraction]:
    out = {}
    for it in items or []:
        try:
            i, m = it.split("=")
            out[int(i)] = Fraction(m)
        except ValueError:
            raise CliError(f"bad --m-thz override {it!r}, expected INDEX=M (e.g. 3=-13/5)") from None
    return out


def reference_report(fits: list[dict], sc, overrides=None) -> dict:
    """Δ_RCB, δ_Z and δf per identified line, with the comb budget if available."""
    overrides = overrides or {}
    lines = []
    for i, f in enumerate(fits):
        if "center" not in f:
            continue
        m = overrides.get(i, Fraction(f["m_thz"]) if f.get("m_thz") else None)
        if m is not None:
            lines.append((i, m, f))
    if not lines:
        raise CliError("fit report contains no identified m_thz line")
    las = {l.label: l for l in sc.scan.lasers}
    nu = const.atomic_frequencies(sc.f_dd)
    locks = sc.locks()
    cb = None
    if locks is None:
        warnings.warn("scenario has no comb block: comb budget omitted", stacklevel=2)
        omega_b, omega_c = nu["B"] + las["B"].detuning, nu["C"] + las["C"].detuning
    else:
        omega_b = comb.laser_frequency(locks["B"], sc.comb)
        omega_c = comb.laser_frequency(locks["C"], sc.comb)
        cb = comb.budget(locks, sc.comb)
    distinct = {m for _, m, _ in lines}
    if len(distinct) >= 2:
        zf = analysis.zeeman_linear_fit([(m, f["center"], f["center_sigma"]) for _, m, f in lines])
        slope, slope_sigma, B_est, B_sig = zf.slope, zf.slope_sigma, zf.B_estimate, zf.B_sigma
    else:
        warnings.warn("single identified line: δ_Z taken from the configured field", stacklevel=2)
        slope, slope_sigma = const.MU_B_HZ_PER_T * sc.scan.B_mean, 0.0
        B_est, B_sig = sc.scan.B_mean, None
    rows = []
    for i, m, f in lines:
        omega_r = nu["R"] + f["center"]
        dz = float(m) * slope
        dz_sig = abs(float(m)) * slope_sigma
        row = {
            "index": i,
            "m_thz": str(m),
            "center_Hz": f["center"],
            "delta_RCB_Hz": float(Fraction(omega_r) + Fraction(omega_c) - Fraction(omega_b)),
            "delta_Z_Hz": dz,
            "delta_Z_sigma_Hz": dz_sig,
            "delta_f_Hz": analysis.thz_shift(omega_r, omega_c, omega_b, dz, sc.f_dd),
        }
        terms = [f["center_sigma"] ** 2, dz_sig**2]
        if cb is not None:
            terms.append(cb["thz_sigma_Hz"] ** 2)
        row["delta_f_sigma_Hz"] = float(np.sqrt(sum(terms)))
        rows.append(row)
    return {
        "format": "cpt3-reference/1",
        "version": __version__,
        "f_dd_Hz": sc.f_dd,
        "B_estimate_T": B_est,
        "B_sigma_T": B_sig,
        "lines": rows,
        "comb_budget": cb,
    }


def cmd_reference(args) -> int:
    sc = load_scenario(args.scenario)
    try:
        rep = json.loads(Path(args.fits).read_text())
        fits = rep["fits"]
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"{args.fits}: unreadable fit report ({exc})") from None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out_rep = reference_report(fits, sc, _overrides(args.m_thz))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out_rep["warnings"] = [str(w.message) for w in caught]
    out_rep["digest"] = rep.get("digest")
    out = _out_dir(args)
    name = Path(args.fits).name.removesuffix(".json").removesuffix(".fits")
    _write_json(out / f"{name}.reference.json", out_rep)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    keys = ["m_thz", "center_Hz", "delta_RCB_Hz", "delta_Z_Hz", "delta_f_Hz", "delta_f_sigma_Hz"]
    wr.writerow(keys)
    for r in out_rep["lines"]:
        wr.writerow([r[k] if k == "m_thz" else repr(r[k]) for k in keys])
    (out / f"{name}.reference.csv").write_text(buf.getvalue())
    print(out / f"{name}.reference.json")
    return EXIT_OK


# --- small calculators -------------------------------------------------------

def _emit(obj, args) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=analysis._json_default) + "\n"
    if args.out:
        out = _out_dir(args)
        (out / f"{args.command}.json").write_text(text)
    sys.stdout.write(text)


def cmd_comb_budget(args) -> int:
    if args.scenario:
        sc = load_scenario(args.scenario)
        if sc.comb is None:
            raise CliError(f"{args.scenario}: no comb block")
        cfg, locks = sc.comb, sc.locks()
    else:
        cfg = comb.CombConfig()
        locks = comb.nominal_locks(cfg)
    _emit(comb.budget(locks, cfg), args)
    return EXIT_OK


def cmd_dark_predict(args) -> int:
    try:
        dB = parse_quantity(args.delta_b, "frequency", source="--delta-b")
        dC = parse_quantity(args.delta_c, "frequency", source="--delta-c")
        oC = parse_quantity(args.omega_c, "frequency", source="--omega-c")
    except ScenarioError as exc:
        raise CliError(str(exc)) from None
    try:
        shift = dressed.quadrupole_light_shift(oC, dC)
        exact = dressed.exact_light_shift(oC, dC)
        alpha = dressed.mixing_coefficient(oC, dC)
    except dressed.PerturbativeError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from None
    _emit({
        "delta_B_Hz": dB, "delta_C_Hz": dC, "omega_C_Hz": oC,
        "alpha_C": alpha, "delta_shift_C_Hz": shift, "delta_shift_C_exact_Hz": exact,
        "dark_delta_R_Hz": dressed.dark_resonance_detuning(dB, dC, shift),
    }, args)
    return EXIT_OK


def cmd_table1(args) -> int:
    lines = atomic.relative_couplings()
    if args.format == "json":
        _emit([{"m_thz": str(l.m_thz), "mj_d32": str(l.mj_d32), "mj_d52": str(l.mj_d52),
                "rel_rabi_C": l.rel_rabi_C, "rel_rabi_R": l.rel_rabi_R, "q_R": l.q_R}
               for l in lines], args)
        return EXIT_OK
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["m_thz", "mj_D32", "mj_D52", "rel_rabi_C", "rel_rabi_R"])
    for l in lines:
        wr.writerow([str(l.m_thz), str(l.mj_d32), str(l.mj_d52), f"{l.rel_rabi_C:.6f}", f"{l.rel_rabi_R:.6f}"])
    sys.stdout.write(buf.getvalue())
    if args.out:
        (_out_dir(args) / "table1.csv").write_text(buf.getvalue())
    return EXIT_OK


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpt3", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cpt3 {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=False):
        sp.add_argument("--scenario", required=scenario_required, help="scenario YAML file")
        sp.add_argument("--out", default=None if not scenario_required else "out", help="output directory")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    s = sub.add_parser("scan", help="simulate a fluorescence spectrum")
    common(s, True)
    s.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_scan)

    f = sub.add_parser("fit", help="detect and fit dark lines in a spectrum")
    f.add_argument("spectrum")
    f.add_argument("--out", default="out")
    f.add_argument("--min-depth-sigma", type=float, default=5.0)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("reference", help="THz-referenced shifts from a fit report")
    r.add_argument("fits")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", default="out")
    r.add_argument("--m-thz", action="append", metavar="INDEX=M", help="override a line label")
    r.set_defaults(func=cmd_reference)

    c = sub.add_parser("comb-budget", help="comb uncertainty budget")
    common(c)
    c.set_defaults(func=cmd_comb_budget)

    d = sub.add_parser("dark-predict", help="three-photon dark-line detuning")
    d.add_argument("--delta-b", required=True)
    d.add_argument("--delta-c", required=True)
    d.add_argument("--omega-c", required=True)
    d.add_argument("--out", default=None)
    d.set_defaults(func=cmd_dark_predict)

    t = sub.add_parser("table1", help="Zeeman components of the THz line")
    t.add_argument("--format", choices=("csv", "json"), default="csv")
    t.add_argument("--out", default=None)
    t.set_defaults(func=cmd_table1)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    log.setLevel(logging.INFO)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (SteadyStateError, analysis.FitError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
