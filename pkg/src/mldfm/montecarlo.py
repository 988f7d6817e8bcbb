"""Monte Carlo harness: fixed design, repeated idiosyncratic draws.

Factors, loadings and the idiosyncratic covariance are drawn once per
design and held fixed; every replication draws fresh idiosyncratic noise,
re-estimates the factors and records the finite-sample MSE estimators.
Replication ``m`` is seeded from ``(seed, m)`` so results do not depend on
how the work is split between processes.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from .errors import ExperimentError, MldfmError, ParameterError
from .mse import (
    SubsampleConfig,
    ThresholdConfig,
    avar,
    base_avar_path,
    chi_square_quantile,
    gamma_true,
    loading_fitter,
    quadratic_form,
    subsample_dispersion,
)
from .panel import Design, GroupStructure, simulate_design
from .pc import pc_extract, procrustes_align, residuals, sign_align
from .sls import sls_estimate

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("MSE", "Cov", "Bias2", "AsymMSE", "HR", "HRS", "FPR", "FPRS")
ESTIMATED = ("HR", "HRS", "FPR", "FPRS")
IDENTITY_TOL = 1e-10
MAX_FAILURE_RATE = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    structure: GroupStructure
    T: int
    M: int = 1000
    phi: float = 0.5
    c: float = 0.25
    tau: float = 0.0
    heteroscedastic: bool = False
    estimator: str = "PC"
    delta: float = 2.0
    subsample: SubsampleConfig | None = field(default_factory=SubsampleConfig)
    seed: int = 0
    tol: float = 1e-8
    max_iter: int = 500
    alpha: float = 0.05
    histogram_periods: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.M < 1:
            raise ParameterError(f"M must be at least 1, got {self.M}")
        if self.estimator.upper() not in ("PC", "SLS"):
            raise ParameterError(f"estimator must be PC or SLS, got {self.estimator!r}")
        object.__setattr__(self, "estimator", self.estimator.upper())
        if not -1 < self.tau < 1:
            raise ParameterError(f"tau must lie in (-1, 1), got {self.tau}")
        if not abs(self.phi) < 1:
            raise ParameterError(f"phi must satisfy |phi| < 1, got {self.phi}")
        if self.c < 0:
            raise ParameterError(f"c must be non-negative, got {self.c}")
        ThresholdConfig(self.delta)

    @property
    def periods(self) -> tuple[int, ...]:
        if self.histogram_periods is not None:
            return tuple(self.histogram_periods)
        return tuple(sorted({1, math.ceil(self.T / 2), self.T}))

    def design(self) -> Design:
        return simulate_design(
            self.structure, self.T, self.phi, self.c, self.tau, self.heteroscedastic, self.seed
        )


@dataclass
class ExperimentResult:
    labels: list[str]
    pair_order: list[tuple[int, int]]
    empirical_mse: np.ndarray
    empirical_cov: np.ndarray
    empirical_bias2: np.ndarray
    asymptotic: dict[str, np.ndarray]
    coverage: dict[str, float]
    per_period_histograms: dict[int, list[list[float]]]
    truth_at_periods: dict[int, list[float]]
    true_sd: list[float]
    identity_error: float
    failures: int
    M: int
    runtime: float
    mean_iterations: float = 0.0

    def table_rows(self, scale: float = 10.0) -> list[tuple[str, list[float]]]:
        mats = [self.empirical_mse, self.empirical_cov, self.empirical_bias2]
        mats += [self.asymptotic[k] for k in ("TRUE", *ESTIMATED)]
        rows = []
        r = len(self.labels)
        cells = [(k, k) for k in range(r)] + list(self.pair_order)
        for i, j in cells:
            name = self.labels[i] if i == j else f"{self.labels[i]},{self.labels[j]}"
            rows.append((name, [scale * float(m[i, j]) for m in mats]))
        return rows

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["factor", *TABLE_COLUMNS])
        for name, vals in self.table_rows():
            w.writerow([name, *(repr(v) for v in vals)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "labels": self.labels,
            "empirical_mse": self.empirical_mse.tolist(),
            "empirical_cov": self.empirical_cov.tolist(),
            "empirical_bias2": self.empirical_bias2.tolist(),
            "asymptotic": {k: v.tolist() for k, v in self.asymptotic.items()},
            "coverage": self.coverage,
            "identity_error": self.identity_error,
            "failures": self.failures,
            "M": self.M,
            "runtime": self.runtime,
            "mean_iterations": self.mean_iterations,
        }

    def histograms(self, bins: int = 30) -> dict:
        out = {}
        for t, per_factor in self.per_period_histograms.items():
            out[str(t)] = {
                lab: histogram_data(vals, bins, self.true_sd[k], self.truth_at_periods[t][k])
                for k, (lab, vals) in enumerate(zip(self.labels, per_factor))
            }
        return out


def pair_order(structure: GroupStructure) -> list[tuple[int, int]]:
    """Off-diagonal cells in table order.

    DFM tables list adjacent pairs first, ``(1,2), (2,3), (1,3)``; ML-DFM
    tables are lexicographic, ``(G,L1), (G,L2), (L1,L2)``.
    """
    r = structure.r
    pairs = [(i, j) for i in range(r) for j in range(i + 1, r)]
    if structure.is_dfm:
        pairs.sort(key=lambda p: (p[1] - p[0], p[0]))
    return pairs


def empirical_mse(estimates: np.ndarray, truth: np.ndarray, t: int) -> np.ndarray:
    """``(1/M) sum_m (F_t^m - F_t)(F_t^m - F_t)'`` at 0-based period ``t``."""
    e = np.asarray(estimates, dtype=float)[:, t, :] - np.asarray(truth, dtype=float)[t]
    return e.T @ e / e.shape[0]


def decompose_mse(estimates: np.ndarray, truth: np.ndarray, t: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(estimates, dtype=float)[:, t, :]
    mean = x.mean(axis=0)
    dev = x - mean
    bias = np.asarray(truth, dtype=float)[t] - mean
    return dev.T @ dev / x.shape[0], np.outer(bias, bias)


def average_over_time(series: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    return np.mean(np.asarray(series, dtype=float), axis=0)


def histogram_data(estimates: Sequence[float], bins: int, asymptotic_sd: float, truth: float) -> dict:
    """Histogram of estimates plus the Gaussian density centred at the truth."""
    x = np.asarray(estimates, dtype=float)
    if asymptotic_sd <= 0:
        raise ParameterError("asymptotic_sd must be positive")
    counts, edges = np.histogram(x, bins=bins)
    lo = min(x.min(), truth - 6 * asymptotic_sd)
    hi = max(x.max(), truth + 6 * asymptotic_sd)
    grid = np.linspace(lo, hi, 801)
    dens = np.exp(-0.5 * ((grid - truth) / asymptotic_sd) ** 2) / (asymptotic_sd * np.sqrt(2 * np.pi))
    return {
        "edges": edges.tolist(),
        "counts": counts.tolist(),
        "density_x": grid.tolist(),
        "density_y": dens.tolist(),
        "truth": float(truth),
    }


def replication_seed(seed: int, m: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(m)])


def estimate_aligned(panel, config: ExperimentConfig, truth: np.ndarray):
    if config.estimator == "PC":
        est = pc_extract(panel, config.structure.r)
        return procrustes_align(est, truth)
    est = sls_estimate(panel, tol=config.tol, max_iter=config.max_iter).as_factor_estimate()
    return sign_align(est, truth)


def run_replication(design: Design, config: ExperimentConfig, true_avar: np.ndarray, m: int) -> dict:
    noise_seq, sub_seq = replication_seed(config.seed, m).spawn(2)
    F = design.factors.F
    try:
        panel = design.draw_panel(noise_seq)
        est = estimate_aligned(panel, config, F)
        eps = residuals(panel, est)
        Lam = est.Lambda_hat
        paths = {
            "HR": base_avar_path(Lam, eps, "HR"),
            "FPR": base_avar_path(Lam, eps, "FPR", ThresholdConfig(config.delta)),
        }
        if config.subsample is not None:
            sub = SubsampleConfig(
                config.subsample.B,
                config.subsample.block_fraction,
                int(sub_seq.generate_state(1)[0]),
            )
            fitter = loading_fitter(
                config.estimator, config.structure.r, tol=config.tol, max_iter=config.max_iter
            )
            disp = subsample_dispersion(panel, Lam, config.estimator, sub, fitter)
            paths["HRS"] = paths["HR"] + disp
            paths["FPRS"] = paths["FPR"] + disp
    except (MldfmError, np.linalg.LinAlgError) as exc:
        return {"m": m, "ok": False, "error": f"{type(exc).__name__}: {exc}"}

    inside = {}
    if config.c > 0:
        q = chi_square_quantile(config.structure.r, 1 - config.alpha)
        try:
            inside["TRUE"] = int(np.sum(quadratic_form(est.F_hat, true_avar, F) <= q))
            for name, path in paths.items():
                inside[name] = int(np.sum(quadratic_form(est.F_hat, path, F) <= q))
        except MldfmError as exc:
            return {"m": m, "ok": False, "error": f"{type(exc).__name__}: {exc}"}
    return {
        "m": m,
        "ok": True,
        "F_hat": est.F_hat,
        "avar": {k: v.mean(axis=0) for k, v in paths.items()},
        "inside": inside,
        "iterations": est.iterations,
    }


def _run_all(design, config, true_avar, workers: int) -> list[dict]:
    task = partial(run_replication, design, config, true_avar)
    ms = range(config.M)
    if workers <= 1:
        return [task(m) for m in ms]
    chunk = max(1, config.M // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        out = list(pool.map(task, ms, chunksize=chunk))
    return sorted(out, key=lambda d: d["m"])


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    start = time.perf_counter()
    workers = workers or os.cpu_count() or 1
    design = config.design()
    st = config.structure
    F = design.factors.F
    Lam = design.loadings.Lambda
    true_avar = avar(Lam, gamma_true(Lam, design.sigma_eps)).value if config.c > 0 else np.zeros((st.r, st.r))

    reps = _run_all(design, config, true_avar, workers)
    good = [d for d in reps if d["ok"]]
    failures = len(reps) - len(good)
    if failures:
        log.warning("%d of %d replications failed; first error: %s", failures, config.M,
                    next(d["error"] for d in reps if not d["ok"]))
    if failures > MAX_FAILURE_RATE * config.M or not good:
        errors = sorted({d["error"] for d in reps if not d["ok"]})
        raise ExperimentError(f"{failures} of {config.M} replications failed: {errors[:3]}")

    est = np.stack([d["F_hat"] for d in good])
    M, T, r = est.shape
    mean = est.mean(axis=0)
    dev = est - mean
    err = est - F
    cov_t = np.einsum("mta,mtb->tab", dev, dev) / M
    mse_t = np.einsum("mta,mtb->tab", err, err) / M
    bias = F - mean
    bias_t = np.einsum("ta,tb->tab", bias, bias)
    identity_error = float(np.abs(mse_t - cov_t - bias_t).max())
    if identity_error > IDENTITY_TOL:
        raise ExperimentError(f"MSE decomposition identity violated by {identity_error:.3e}")

    asym = {"TRUE": true_avar}
    for name in ESTIMATED:
        if name in good[0]["avar"]:
            asym[name] = np.mean([d["avar"][name] for d in good], axis=0)
        else:
            asym[name] = np.full((r, r), np.nan)
    coverage = {
        name: sum(d["inside"][name] for d in good) / (M * T) for name in good[0]["inside"]
    }
    periods = [t for t in config.periods if 1 <= t <= T]
    sd = np.sqrt(np.clip(np.diag(true_avar), np.finfo(float).tiny, None))
    return ExperimentResult(
        labels=st.factor_labels(),
        pair_order=pair_order(st),
        empirical_mse=_sym(average_over_time(mse_t)),
        empirical_cov=_sym(average_over_time(cov_t)),
        empirical_bias2=_sym(average_over_time(bias_t)),
        asymptotic={k: _sym(v) for k, v in asym.items()},
        coverage=coverage,
        per_period_histograms={t: est[:, t - 1, :].T.tolist() for t in periods},
        truth_at_periods={t: F[t - 1].tolist() for t in periods},
        true_sd=sd.tolist(),
        identity_error=identity_error,
        failures=failures,
        M=M,
        runtime=time.perf_counter() - start,
        mean_iterations=float(np.mean([d["iterations"] for d in good])),
    )


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def config_to_dict(config: ExperimentConfig) -> dict:
    d = asdict(config)
    d["structure"] = config.structure.to_dict()
    return d


def result_to_json(result: ExperimentResult, config: ExperimentConfig | None = None) -> str:
    d = result.to_dict()
    if config is not None:
        d["config"] = config_to_dict(config)
    return json.dumps(d, indent=1)
