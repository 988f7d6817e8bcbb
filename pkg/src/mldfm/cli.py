"""Command-line front end.

Subcommands: ``simulate``, ``estimate``, ``mse``, ``montecarlo`` and
``report``.  Exit status is 0 on success, 2 for bad input or configuration
and 3 for numerical or estimation failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .errors import DegeneracyError, ExperimentError, MldfmError, ParameterError
from .ident import check_identification
from .io import (
    InputError,
    experiment_from_config,
    load_config,
    matrix_to_csv,
    read_matrix_csv,
    sha256_file,
    structure_from_config,
    subsample_from_config,
    write_text,
)
from .montecarlo import replication_seed, result_to_json, run_experiment
from .mse import (
    AvarEstimate,
    SubsampleConfig,
    ThresholdConfig,
    avar_to_csv,
    avar_to_json,
    base_avar_path,
    loading_fitter,
    subsample_dispersion,
)
from .panel import PanelData
from .pc import pc_extract
from .sls import sls_estimate, split_loadings

log = logging.getLogger("mldfm")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config_path: str
    output_dir: str
    seed: int | None
    started: str = field(default_factory=_now)
    finished: str = ""
    checksums: dict[str, str] = field(default_factory=dict)

    def record(self, path: Path) -> None:
        self.checksums[path.name] = sha256_file(path)

    def write(self) -> Path:
        self.finished = _now()
        path = Path(self.output_dir) / "manifest.json"
        write_text(path, json.dumps(self.__dict__, indent=1) + "\n")
        return path


def _outdir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _emit(out: Path, name: str, text: str, manifest: RunManifest | None = None) -> Path:
    path = out / name
    write_text(path, text)
    if manifest is not None:
        manifest.record(path)
    return path


def _series_names(N: int) -> list[str]:
    return [f"series_{i + 1}" for i in range(N)]


def _periods(T: int) -> list[int]:
    return list(range(1, T + 1))


def _read_panel(path: str, structure) -> PanelData:
    header, Y = read_matrix_csv(path)
    try:
        return PanelData(Y, structure)
    except ParameterError as exc:
        raise InputError(f"{path}: {exc}") from exc


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    exp = experiment_from_config(cfg, args.seed)
    out = _outdir(args.out)
    manifest = RunManifest("simulate", args.config, str(out), exp.seed)
    design = exp.design()
    st = exp.structure
    panel = design.draw_panel(replication_seed(exp.seed, 0).spawn(2)[0])
    labels = st.factor_labels()
    series = _series_names(st.N)
    T = design.T
    _emit(out, "panel.csv", matrix_to_csv(panel.Y, ["t", *series], _periods(T)), manifest)
    _emit(out, "true_factors.csv", matrix_to_csv(design.factors.F, ["t", *labels], _periods(T)), manifest)
    _emit(
        out,
        "true_loadings.csv",
        matrix_to_csv(design.loadings.Lambda, ["series", *labels], series),
        manifest,
    )
    _emit(out, "sigma_eps.csv", matrix_to_csv(design.sigma_eps, ["series", *series], series), manifest)
    manifest.write()
    return EXIT_OK


def _estimate(panel: PanelData, method: str, cfg: dict):
    st = panel.structure
    if method == "pc":
        est = pc_extract(panel, st.r)
        Lg, Ll = split_loadings(st, est.Lambda_hat)
        F = est.F_hat
        G = F[:, st.global_cols()]
        L = [F[:, st.group_cols(s)] for s in range(st.S)]
        return est, check_identification(G, L, Lg, Ll)
    ml = sls_estimate(panel, tol=cfg.get("tol", 1e-8), max_iter=cfg.get("max_iter", 500))
    report = check_identification(ml.G_hat, ml.L_hat, ml.Lambda_g_hat, ml.Lambda_l_hat)
    return ml.as_factor_estimate(), report


def cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    st = structure_from_config(cfg)
    method = (args.method or cfg.get("estimator") or ("pc" if st.is_dfm else "sls")).lower()
    if method not in ("pc", "sls"):
        raise InputError(f"--method must be pc or sls, got {method!r}")
    panel = _read_panel(args.panel, st)
    out = _outdir(args.out)
    manifest = RunManifest("estimate", args.config, str(out), None)
    est, report = _estimate(panel, method, cfg)
    labels = st.factor_labels()
    _emit(out, "factors.csv", matrix_to_csv(est.F_hat, ["t", *labels], _periods(panel.T)), manifest)
    _emit(
        out,
        "loadings.csv",
        matrix_to_csv(est.Lambda_hat, ["series", *labels], _series_names(st.N)),
        manifest,
    )
    diagnostics = {
        "method": method,
        "iterations": est.iterations,
        "converged": est.converged,
        "rss_trace": list(est.rss_trace),
        "warnings": list(est.warnings),
        "identification": report.to_dict(),
    }
    _emit(out, "diagnostics.json", json.dumps(diagnostics, indent=1) + "\n", manifest)
    manifest.write()
    return EXIT_OK


def cmd_mse(args) -> int:
    cfg = load_config(args.config)
    st = structure_from_config(cfg)
    variant = args.variant.upper()
    panel = _read_panel(args.panel, st)
    _, F = read_matrix_csv(args.factors)
    _, Lam = read_matrix_csv(args.loadings)
    if F.shape != (panel.T, st.r):
        raise InputError(f"{args.factors}: expected {panel.T} x {st.r} factors, got {F.shape}")
    if Lam.shape != (st.N, st.r):
        raise InputError(f"{args.loadings}: expected {st.N} x {st.r} loadings, got {Lam.shape}")
    out = _outdir(args.out)
    manifest = RunManifest("mse", args.config, str(out), args.seed)

    eps = panel.Y - F @ Lam.T
    threshold = ThresholdConfig(cfg.get("delta", 2.0))
    base = base_avar_path(Lam, eps, variant.rstrip("S"), threshold)
    if variant.endswith("S"):
        sub = subsample_from_config(cfg) or SubsampleConfig()
        if args.seed is not None:
            sub = SubsampleConfig(sub.B, sub.block_fraction, args.seed)
        method = (args.method or cfg.get("estimator") or ("pc" if st.is_dfm else "sls")).upper()
        fitter = loading_fitter(method, st.r, tol=cfg.get("tol", 1e-8), max_iter=cfg.get("max_iter", 500))
        base = base + subsample_dispersion(panel, Lam, method, sub, fitter)
    estimates = [AvarEstimate(base[t], variant, st.N, t + 1) for t in range(panel.T)]

    alpha = cfg.get("alpha", 0.05)
    z = float(ndtri(1 - alpha / 2))
    diag = np.diagonal(base, axis1=1, axis2=2)
    if np.any(diag < 0):
        raise DegeneracyError("negative Avar diagonal; cannot form confidence intervals")
    half = z * np.sqrt(diag)
    _emit(out, "avar.csv", avar_to_csv(estimates), manifest)
    _emit(out, "avar.json", avar_to_json(estimates) + "\n", manifest)
    _emit(out, "regions.csv", matrix_to_csv(half, ["t", *st.factor_labels()], _periods(panel.T)), manifest)
    manifest.write()
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    cfg = load_config(args.config)
    exp = experiment_from_config(cfg, args.seed)
    out = _outdir(args.out)
    manifest = RunManifest("montecarlo", args.config, str(out), exp.seed)
    result = run_experiment(exp, workers=args.workers)
    _emit(out, "table.csv", result.table_csv(), manifest)
    _emit(out, "histograms.json", json.dumps(result.histograms()) + "\n", manifest)
    _emit(out, "result.json", result_to_json(result, exp) + "\n", manifest)
    manifest.write()
    log.info("montecarlo finished: %d replications in %.1fs", result.M, result.runtime)
    return EXIT_OK


def render_table(rows: list[list[str]]) -> str:
    """Right-aligned plain-text rendering; numeric cells shown to three decimals."""
    cells = [rows[0]]
    for row in rows[1:]:
        shown = [row[0]]
        for v in row[1:]:
            x = float(v)
            shown.append("" if np.isnan(x) else f"{x:.3f}")
        cells.append(shown)
    widths = [max(len(r[k]) for r in cells) for k in range(len(cells[0]))]
    lines = []
    for k, row in enumerate(cells):
        parts = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(parts).rstrip())
        if k == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    path = Path(args.table)
    if path.is_dir():
        path = path / "table.csv"
    try:
        rows = list(csv.reader(path.read_text(encoding="utf-8").splitlines()))
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc})") from exc
    if not rows or rows[0][:1] != ["factor"]:
        raise InputError(f"{path}, line 1: expected a table.csv header starting with 'factor'")
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(rows[0]):
            raise InputError(f"{path}, line {lineno}: expected {len(rows[0])} fields, got {len(row)}")
        try:
            [float(v) for v in row[1:]]
        except ValueError as exc:
            raise InputError(f"{path}, line {lineno}: {exc}") from exc
    text = render_table(rows)
    if args.out:
        write_text(_outdir(args.out) / "table.txt", text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mldfm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a design and one panel")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="estimate factors and loadings from a panel")
    e.add_argument("--panel", required=True)
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--method", choices=("pc", "sls"))
    e.set_defaults(func=cmd_estimate)

    m = sub.add_parser("mse", help="per-period MSE estimates and confidence half-widths")
    m.add_argument("--panel", required=True)
    m.add_argument("--factors", required=True)
    m.add_argument("--loadings", required=True)
    m.add_argument("--variant", required=True, choices=("hr", "hrs", "fpr", "fprs"))
    m.add_argument("--config", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--method", choices=("pc", "sls"))
    m.add_argument("--seed", type=int, help="subsample seed override")
    m.set_defaults(func=cmd_mse)

    mc = sub.add_parser("montecarlo", help="run a Monte Carlo experiment")
    mc.add_argument("--config", required=True)
    mc.add_argument("--out", required=True)
    mc.add_argument("--seed", type=int)
    mc.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    mc.set_defaults(func=cmd_montecarlo)

    r = sub.add_parser("report", help="render table.csv as aligned text")
    r.add_argument("table", help="table.csv or a directory containing it")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def _configure_logging() -> None:
    name = os.environ.get("MLDFM_LOG", "warn").lower()
    level = LOG_LEVELS.get(name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ExperimentError, DegeneracyError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MldfmError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
