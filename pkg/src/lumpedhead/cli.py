"""Command-line front end: one analysis per invocation, artifacts written atomically."""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import traceback
from pathlib import Path

import numpy as np

from . import plotting
from .calibration import FittedModel, build_model, eval_params
from .circuit import build_netlist
from .config import RunConfig, load_run_config, resolve_tissues, with_overrides
from .errors import ConfigError, LumpedHeadError
from .geometry import MM, DipoleSource, HeadGeometry
from .ssh import homogeneous_diagnostic, scalp_potential_detailed
from .spice import export_spice_netlist
from .validation import CASES, STANDARD_T_SKULL, ModelConfig, SweepResult, ablation_study, frequency_sweep, mrfe_grid

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_IO = 8
EXIT_INTERNAL = 9

EXIT_CODES = """exit status:
  0  success
  1  unclassified package error
  2  command-line usage error (unknown command or flag)
  3  configuration error (bad config file, missing --model, bad override)
  4  invalid input data (tissue tables, geometry, parameters, grids)
  5  numerical failure (series truncation, singular network, failed sweep)
  6  calibration, fit or extrapolation error
  7  export error (e.g. dispersive tissues without --freeze-at)
  8  file system error while reading or writing
  9  internal error (bug)
errors are reported as one JSON object on stderr."""


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.17e}"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in r])
    return buf.getvalue()


def atomic_write(path: Path, data: str | bytes) -> None:
    """Write to a sibling temp file, then rename over the target."""
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Artifacts:
    def __init__(self, out: Path, stream=None):
        self.out = out
        self.stream = stream or sys.stdout
        self.written: list[Path] = []

    def write(self, name: str, data, note: str) -> Path:
        path = self.out / name
        atomic_write(path, data)
        self.written.append(path)
        print(f"wrote {path}: {note}", file=self.stream)
        return path


# --------------------------------------------------------------------------
# shared plumbing


def _setup(cfg: RunConfig) -> tuple[HeadGeometry, DipoleSource]:
    return cfg.geometry, cfg.dipole


def _apply_point(cfg: RunConfig, args) -> tuple[HeadGeometry, DipoleSource]:
    geom, dip = _setup(cfg)
    if args.t_skull_mm is not None:
        geom = geom.with_skull_thickness(args.t_skull_mm * MM)
    if args.eta is not None:
        dip = dip.at_eta(args.eta, geom)
    return geom, dip


def _load_model(cfg: RunConfig) -> FittedModel:
    if cfg.model is None:
        raise ConfigError("this command needs a calibrated model (--model PATH)")
    try:
        text = Path(cfg.model).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read model {cfg.model}: {exc.strerror}") from exc
    try:
        return FittedModel.from_json(text)
    except (ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, LumpedHeadError):
            raise
        raise ConfigError(f"model {cfg.model} is malformed: {exc!r}") from exc


def _params(cfg: RunConfig, geom, dip):
    if cfg.model is not None:
        return eval_params(_load_model(cfg), geom, dip)
    if cfg.circuit_params is not None:
        return cfg.circuit_params
    raise ConfigError("circuit parameters unavailable: pass --model or set circuit.params in the config")


# --------------------------------------------------------------------------
# commands


def cmd_ssh_sweep(cfg: RunConfig, args, art: Artifacts) -> None:
    geom, dip = _apply_point(cfg, args)
    tissues = cfg.tissue_set("baseline")
    rows, values = [], []
    for f in cfg.freqs:
        r = scalp_potential_detailed(geom, dip, tissues, float(f), cfg.ssh)
        v = complex(r.value)
        values.append(v)
        rows.append((float(f), v.real, v.imag, abs(v), r.terms_used))
    art.write("ssh_sweep.csv", csv_text(("frequency_hz", "v_real", "v_imag", "v_abs", "terms_used"), rows),
              f"{len(rows)} frequencies, |V| at {rows[0][0]:g} Hz = {rows[0][3]:.6e} V")
    sweep = SweepResult(tuple(cfg.freqs.tolist()), np.array(values), "reference series", "ssh")
    art.write("ssh_sweep.svg", plotting.svg_bytes(plotting.plot_sweeps([sweep])), "magnitude/phase plot")


def cmd_circuit_sweep(cfg: RunConfig, args, art: Artifacts) -> None:
    geom, dip = _apply_point(cfg, args)
    tissues = cfg.tissue_set("baseline")
    mc = ModelConfig(geom, dip, tissues, _params(cfg, geom, dip), cfg.ssh, cfg.include_air)
    sweep = frequency_sweep("circuit", mc, cfg.freqs, cfg.threads, label="circuit")
    rows = list(sweep.rows())
    art.write("circuit_sweep.csv", csv_text(("frequency_hz", "v_real", "v_imag", "v_abs"), rows),
              f"{len(rows)} frequencies, |V| at {rows[0][0]:g} Hz = {rows[0][3]:.6e} V")
    art.write("circuit_sweep.svg", plotting.svg_bytes(plotting.plot_sweeps([sweep])), "magnitude/phase plot")


def cmd_calibrate(cfg: RunConfig, args, art: Artifacts) -> None:
    tissues = resolve_tissues(cfg.calibration_tissues, cfg.base_dir)
    geom = cfg.geometry
    if args.t_skull_mm is not None:
        geom = geom.with_skull_thickness(args.t_skull_mm * MM)
    try:
        ccfg = cfg.calibration_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid calibration options: {exc}") from exc
    model = build_model(geom, tissues, ccfg)
    ref = model.reference
    art.write("model.json", model.to_json(),
              f"reference objective {ref.objective:.3e}, alpha fit rmse {model.alpha_fit.rmse:.3e}")
    sweeps = (model.alpha_sweep, model.psi13_sweep, model.psi23_sweep)
    art.write("calibration_fits.svg", plotting.svg_bytes(plotting.plot_fits(sweeps)), "fit plots")


def cmd_fit_report(cfg: RunConfig, args, art: Artifacts) -> None:
    model = _load_model(cfg)
    sweeps = (model.alpha_sweep, model.psi13_sweep, model.psi23_sweep)
    for s in sweeps:
        rows = []
        for key in sorted(s.fits):
            fit = s.fits[key]
            for x, y in zip(s.xs(), s.ys(key)):
                yf = float(fit(x))
                rows.append((key, float(x), float(y), yf, float(y) - yf))
        rmse = ", ".join(f"{k} rmse {s.fits[k].rmse:.3e}" for k in sorted(s.fits))
        art.write(f"fit_{s.name}.csv",
                  csv_text(("parameter", s.abscissa, "optimized", "fit", "residual"), rows), rmse)
    art.write("fits.svg", plotting.svg_bytes(plotting.plot_fits(sweeps)), "fit plots")


def cmd_validate_mrfe(cfg: RunConfig, args, art: Artifacts) -> None:
    model = _load_model(cfg)
    tissues = cfg.tissue_set("dispersive_synthetic")
    etas = (args.eta,) if args.eta is not None else cfg.etas
    t_skulls = (args.t_skull_mm * MM,) if args.t_skull_mm is not None else cfg.t_skulls
    dip = DipoleSource(p_r=cfg.dipole.p_r, d=cfg.dipole.d)
    grid = mrfe_grid(model, tissues, etas, t_skulls, cfg.freqs, dip, cfg.ssh, cfg.include_air, cfg.threads,
                     geom=cfg.geometry)
    grid = type(grid)(grid.etas, grid.t_skulls, grid.values, STANDARD_T_SKULL)
    rows = list(grid.rows())
    art.write("mrfe_grid.csv", csv_text(("eta", "t_skull_mm", "mrfe"), rows),
              f"{len(rows)} cells, MRFE range [{grid.values.min():.3e}, {grid.values.max():.3e}]")
    art.write("mrfe_grid.svg", plotting.svg_bytes(plotting.plot_mrfe_grid(grid)), "MRFE vs skull thickness")


def cmd_ablation(cfg: RunConfig, args, art: Artifacts) -> None:
    geom = cfg.geometry
    if args.t_skull_mm is not None:
        geom = geom.with_skull_thickness(args.t_skull_mm * MM)
    dip = DipoleSource(r_dip=cfg.ablation_r_dip, p_r=cfg.dipole.p_r, d=cfg.dipole.d)
    if args.eta is not None:
        dip = dip.at_eta(args.eta, geom)
    tissues = cfg.tissue_set("dispersive_synthetic")
    res = ablation_study(geom, dip, tissues, _params(cfg, geom, dip), cfg.freqs, cfg.ablation_anchor_hz,
                         cfg.include_air, cfg.threads)
    header = ["frequency_hz"] + [f"v_abs_{c}" for c in CASES] + [f"rel_error_{c}" for c in CASES]
    rows = list(res.rows())
    peak = float(np.max(res.rel_error[CASES[0]]))
    art.write("ablation.csv", csv_text(header, rows), f"{len(rows)} frequencies, peak ohmic error {peak:.3e}")
    art.write("ablation.svg", plotting.svg_bytes(plotting.plot_ablation(res, CASES)), "relative error plot")


def cmd_export_netlist(cfg: RunConfig, args, art: Artifacts) -> None:
    geom, dip = _apply_point(cfg, args)
    tissues = cfg.tissue_set("baseline")
    net = build_netlist(geom, dip, tissues, _params(cfg, geom, dip), cfg.include_air)
    text = export_spice_netlist(net, cfg.freeze_at)
    n_el = sum(1 for ln in text.splitlines() if ln[:2] in ("R_", "C_", "I_"))
    art.write("netlist.cir", text, f"{n_el} elements")


def cmd_homogeneous_diagnostic(cfg: RunConfig, args, art: Artifacts) -> None:
    geom = cfg.geometry
    if args.t_skull_mm is not None:
        geom = geom.with_skull_thickness(args.t_skull_mm * MM)
    etas = (args.eta,) if args.eta is not None else (0.0,) + tuple(cfg.etas)
    dip = DipoleSource(p_r=cfg.dipole.p_r, d=cfg.dipole.d)
    rows = homogeneous_diagnostic(geom, dip, cfg.homogeneous_sigma, etas, cfg.ssh)
    table = [(r["eta"], r["v_series"], r["v_infinite_medium"], r["ratio"]) for r in rows]
    worst = max(abs(r["ratio"] - 1.0) for r in rows)
    art.write("homogeneous_diagnostic.csv",
              csv_text(("eta", "v_series", "v_infinite_medium", "ratio"), table),
              f"{len(rows)} eccentricities, max |ratio - 1| = {worst:.3e}")
    art.write("homogeneous_diagnostic.svg", plotting.svg_bytes(plotting.plot_homogeneous(rows)), "ratio plot")


COMMANDS = {
    "ssh-sweep": (cmd_ssh_sweep, "reference series potential over the frequency grid"),
    "circuit-sweep": (cmd_circuit_sweep, "lumped circuit potential over the frequency grid"),
    "calibrate": (cmd_calibrate, "fit circuit coefficients and their geometric laws; writes model.json"),
    "fit-report": (cmd_fit_report, "per-sweep optimised values, fitted values and residuals"),
    "validate-mrfe": (cmd_validate_mrfe, "MRFE of circuit vs series over eccentricity and skull thickness"),
    "ablation": (cmd_ablation, "effect of dropping capacitances and/or dispersion"),
    "export-netlist": (cmd_export_netlist, "SPICE netlist of the circuit"),
    "homogeneous-diagnostic": (cmd_homogeneous_diagnostic,
                               "series vs unbounded-medium potential with all media equal"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--out", metavar="DIR", help="output directory (default: config 'out' or .)")
    common.add_argument("--freq-min", type=float, metavar="HZ")
    common.add_argument("--freq-max", type=float, metavar="HZ")
    common.add_argument("--freq-points", type=int, metavar="N")
    common.add_argument("--eta", type=float, help="dipole eccentricity r_dip / r_brain")
    common.add_argument("--t-skull-mm", type=float, metavar="MM", help="skull thickness, brain and scalp radii fixed")
    common.add_argument("--freeze-at", type=float, metavar="HZ", help="frequency for SPICE element values")
    common.add_argument("--threads", type=int, metavar="N", help="cap on parallel sweep evaluation")
    common.add_argument("--model", metavar="PATH", help="model.json written by 'calibrate'")

    p = argparse.ArgumentParser(
        prog="lumpedhead",
        description="Lumped equivalent circuit of a three-shell head versus a harmonic-series reference.",
        epilog=EXIT_CODES, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for name, (_, help_) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_, description=help_, epilog=EXIT_CODES,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return p


def _report(exc_dict: dict, code: int) -> int:
    exc_dict["exit_code"] = code
    print(json.dumps(exc_dict, sort_keys=True, default=repr), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else EXIT_USAGE
        if code != 0:
            return _report({"error": "UsageError", "message": "invalid command line"}, EXIT_USAGE)
        return code
    try:
        cfg = load_run_config(args.config)
        cfg = with_overrides(cfg, out=args.out, freq_min=args.freq_min, freq_max=args.freq_max,
                             freq_points=args.freq_points, freeze_at=args.freeze_at, threads=args.threads,
                             model=args.model)
        fn = COMMANDS[args.command][0]
        fn(cfg, args, Artifacts(Path(cfg.out)))
    except LumpedHeadError as exc:
        return _report(exc.to_dict(), exc.exit_code)
    except OSError as exc:
        return _report({"error": type(exc).__name__, "message": str(exc)}, EXIT_IO)
    except Exception as exc:  # anything else is a bug; keep the traceback for the report
        return _report({"error": type(exc).__name__, "message": str(exc),
                        "traceback": traceback.format_exc()}, EXIT_INTERNAL)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
