"""Finite-sample approximations to the asymptotic MSE of estimated factors.

All estimators share the sandwich

    Avar(F_t) = (1/N) (L'L/N)^{-1} Gamma_t (L'L/N)^{-1}

and differ only in how ``Gamma_t`` is obtained: from the true parameters
(TRUE), from squared residuals (HR), or from a thresholded residual
covariance (FPR).  The ``S`` variants add a subsampling estimate of the
extra dispersion caused by estimating the loadings.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import gammaincinv

from .errors import DegeneracyError, ParameterError
from .panel import PanelData, as_rng
from .pc import pc_extract, procrustes_rotation, residuals, sign_flips

VARIANTS = ("TRUE", "HR", "HRS", "FPR", "FPRS")


@dataclass(frozen=True)
class GammaEstimate:
    value: np.ndarray
    variant: str
    t: int | None = None


@dataclass(frozen=True)
class AvarEstimate:
    value: np.ndarray
    variant: str
    N: int
    t: int | None = None


@dataclass(frozen=True)
class ThresholdConfig:
    delta: float = 2.0

    def __post_init__(self):
        if not np.isfinite(self.delta) or self.delta < 0:
            raise ParameterError(f"delta must be finite and non-negative, got {self.delta}")


@dataclass(frozen=True)
class SubsampleConfig:
    B: int = 50
    block_fraction: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.B < 1:
            raise ParameterError(f"B must be at least 1, got {self.B}")
        if not 0 < self.block_fraction <= 1:
            raise ParameterError(f"block_fraction must lie in (0, 1], got {self.block_fraction}")

    def block_length(self, T: int) -> int:
        return int(np.floor(self.block_fraction * T))


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _value(g) -> np.ndarray:
    return g.value if isinstance(g, (GammaEstimate, AvarEstimate)) else np.asarray(g, dtype=float)


def gamma_true(Lambda: np.ndarray, Sigma_eps: np.ndarray) -> GammaEstimate:
    Lambda = np.asarray(Lambda, dtype=float)
    N = Lambda.shape[0]
    if np.shape(Sigma_eps) != (N, N):
        raise ParameterError(f"Sigma_eps must be {N} x {N}, got {np.shape(Sigma_eps)}")
    return GammaEstimate(_sym(Lambda.T @ Sigma_eps @ Lambda) / N, "TRUE")


def _inverse_gram(Lambda: np.ndarray) -> np.ndarray:
    N = Lambda.shape[0]
    A = Lambda.T @ Lambda / N
    w = np.linalg.eigvalsh(A)
    if w[0] <= 1e-12 * max(w[-1], np.finfo(float).tiny):
        raise DegeneracyError("loading Gram matrix is singular")
    return np.linalg.inv(A)


def avar(Lambda_hat: np.ndarray, Gamma, variant: str | None = None) -> AvarEstimate:
    """Sandwich ``(1/N) A^{-1} Gamma A^{-1}`` with ``A = L'L/N``.

    ``Gamma`` may be a single ``r x r`` matrix or a ``(T, r, r)`` stack.
    """
    Lambda_hat = np.asarray(Lambda_hat, dtype=float)
    N = Lambda_hat.shape[0]
    Ainv = _inverse_gram(Lambda_hat)
    G = _value(Gamma)
    out = _sym(Ainv @ G @ Ainv) / N
    if variant is None:
        variant = Gamma.variant if isinstance(Gamma, GammaEstimate) else "TRUE"
    t = Gamma.t if isinstance(Gamma, GammaEstimate) else None
    return AvarEstimate(out, variant, N, t)


def gamma_hr(Lambda_hat: np.ndarray, eps_hat_t: np.ndarray, t: int | None = None) -> GammaEstimate:
    """``(1/N) sum_i l_i l_i' e_it^2`` for one period."""
    Lambda_hat = np.asarray(Lambda_hat, dtype=float)
    e2 = np.asarray(eps_hat_t, dtype=float) ** 2
    if e2.shape != (Lambda_hat.shape[0],):
        raise ParameterError("residual vector length must equal the number of series")
    return GammaEstimate((Lambda_hat.T * e2) @ Lambda_hat / Lambda_hat.shape[0], "HR", t)


def gamma_hr_path(Lambda_hat: np.ndarray, eps_hat: np.ndarray) -> np.ndarray:
    """HR Gamma for every period at once, shape ``(T, r, r)``."""
    N = Lambda_hat.shape[0]
    return np.einsum("ti,ia,ib->tab", eps_hat**2, Lambda_hat, Lambda_hat, optimize=True) / N


def sample_idio_cov(eps_hat: np.ndarray, i: int, j: int) -> float:
    eps_hat = np.asarray(eps_hat, dtype=float)
    return float(eps_hat[:, i] @ eps_hat[:, j] / eps_hat.shape[0])


def omega_nt(N: int, T: int) -> float:
    return 1.0 / np.sqrt(N) + np.sqrt(np.log(N) / T)


def threshold_idio_cov(eps_hat: np.ndarray, config: ThresholdConfig = ThresholdConfig()) -> np.ndarray:
    """Universal thresholding of the residual covariance.

    An off-diagonal entry survives when ``|s_ij| >= delta * omega_NT *
    sqrt(theta_ij)`` with ``theta_ij`` the sample variance of
    ``e_it e_jt`` around ``s_ij``.  Diagonal entries always survive.
    """
    eps_hat = np.asarray(eps_hat, dtype=float)
    T, N = eps_hat.shape
    if T < 2:
        raise ParameterError("thresholding needs at least two periods")
    S = eps_hat.T @ eps_hat / T
    if config.delta == 0:
        return _sym(S)
    # theta_ij = mean_t (e_it e_jt)^2 - s_ij^2
    sq = eps_hat**2
    theta = np.clip(sq.T @ sq / T - S**2, 0.0, None)
    c = config.delta * omega_nt(N, T) * np.sqrt(theta)
    keep = np.abs(S) >= c
    np.fill_diagonal(keep, True)
    return _sym(np.where(keep, S, 0.0))


def select_delta_cv(
    eps_hat: np.ndarray, grid: Sequence[float] = tuple(np.arange(0.0, 4.01, 0.5))
) -> float:
    """Pick ``delta`` by two-fold cross-validation over time halves.

    Each half is thresholded and compared in Frobenius norm with the raw
    sample covariance of the other half; the grid value with the smallest
    summed loss wins (ties go to the smaller ``delta``).
    """
    eps_hat = np.asarray(eps_hat, dtype=float)
    h = eps_hat.shape[0] // 2
    halves = (eps_hat[:h], eps_hat[h:])
    loss = []
    for d in grid:
        total = 0.0
        for a, b in ((0, 1), (1, 0)):
            fit = threshold_idio_cov(halves[a], ThresholdConfig(d))
            ref = halves[b].T @ halves[b] / halves[b].shape[0]
            total += float(np.sum((fit - ref) ** 2))
        loss.append(total)
    return float(grid[int(np.argmin(loss))])


def gamma_fpr(Lambda_hat: np.ndarray, Sigma_tilde: np.ndarray) -> GammaEstimate:
    g = gamma_true(Lambda_hat, Sigma_tilde)
    return GammaEstimate(g.value, "FPR")


LoadingFitter = Callable[[PanelData], np.ndarray]


def loading_fitter(estimator: str, r: int | None = None, **sls_options) -> LoadingFitter:
    """Return ``panel -> Lambda_hat`` for the named estimator."""
    estimator = estimator.upper()
    if estimator == "PC":

        def fit(panel: PanelData) -> np.ndarray:
            k = panel.structure.r if r is None else r
            return pc_extract(panel, k).Lambda_hat

    elif estimator == "SLS":
        from .sls import sls_estimate

        def fit(panel: PanelData) -> np.ndarray:
            return sls_estimate(panel, **sls_options).Lambda_dagger

    else:
        raise ParameterError(f"unknown estimator {estimator!r}")
    return fit


def _align_loadings(Lam_b: np.ndarray, Lam_ref: np.ndarray, estimator: str) -> np.ndarray:
    if estimator.upper() == "PC":
        return Lam_b @ procrustes_rotation(Lam_b, Lam_ref)
    return Lam_b * sign_flips(Lam_b, Lam_ref)


def block_starts(T: int, config: SubsampleConfig) -> np.ndarray:
    ell = config.block_length(T)
    return as_rng(config.seed).integers(0, T - ell + 1, size=config.B)


def subsample_dispersion(
    panel: PanelData,
    Lambda_hat: np.ndarray,
    estimator: str,
    config: SubsampleConfig,
    fitter: LoadingFitter | None = None,
) -> np.ndarray:
    """Between-subsample covariance of the period-``t`` factor estimates, ``(T, r, r)``.

    Loadings are re-estimated on ``B`` contiguous time blocks, aligned with
    the full-sample loadings, and used to recompute every period's factors
    from the full panel.
    """
    T = panel.T
    r = Lambda_hat.shape[1]
    ell = config.block_length(T)
    if ell < r + 1:
        raise ParameterError(f"subsample block length {ell} is below r + 1 = {r + 1}")
    fitter = fitter or loading_fitter(estimator, r)
    paths = np.empty((config.B, T, r))
    for b, start in enumerate(block_starts(T, config)):
        Lam_b = _align_loadings(fitter(panel.window(start, start + ell)), Lambda_hat, estimator)
        gram = Lam_b.T @ Lam_b
        try:
            paths[b] = np.linalg.solve(gram, Lam_b.T @ panel.Y.T).T
        except np.linalg.LinAlgError as exc:
            raise DegeneracyError(f"subsample {b}: loading Gram matrix is singular") from exc
    dev = paths - paths.mean(axis=0)
    return np.einsum("kta,ktc->tac", dev, dev) / config.B


def subsample_correction(
    panel: PanelData,
    estimator: str,
    base_variant: str,
    config: SubsampleConfig,
    Lambda_hat: np.ndarray | None = None,
    eps_hat: np.ndarray | None = None,
    threshold: ThresholdConfig = ThresholdConfig(),
    fitter: LoadingFitter | None = None,
) -> list[AvarEstimate]:
    """Per-period HRS or FPRS estimates: base Avar plus the subsampling dispersion."""
    base_variant = base_variant.upper()
    if base_variant not in ("HR", "FPR"):
        raise ParameterError(f"base_variant must be HR or FPR, got {base_variant!r}")
    if Lambda_hat is None or eps_hat is None:
        est = _full_estimate(panel, estimator)
        Lambda_hat, eps_hat = est.Lambda_hat, residuals(panel, est)
    base = base_avar_path(Lambda_hat, eps_hat, base_variant, threshold)
    disp = subsample_dispersion(panel, Lambda_hat, estimator, config, fitter)
    N = Lambda_hat.shape[0]
    return [
        AvarEstimate(base[t] + disp[t], base_variant + "S", N, t + 1) for t in range(panel.T)
    ]


def _full_estimate(panel: PanelData, estimator: str):
    if estimator.upper() == "PC":
        return pc_extract(panel, panel.structure.r)
    from .sls import sls_estimate

    return sls_estimate(panel).as_factor_estimate()


def base_avar_path(
    Lambda_hat: np.ndarray,
    eps_hat: np.ndarray,
    variant: str,
    threshold: ThresholdConfig = ThresholdConfig(),
) -> np.ndarray:
    """HR (per period) or FPR (constant) Avar as a ``(T, r, r)`` stack."""
    T = eps_hat.shape[0]
    if variant == "HR":
        return avar(Lambda_hat, gamma_hr_path(Lambda_hat, eps_hat)).value
    if variant == "FPR":
        single = avar(Lambda_hat, gamma_fpr(Lambda_hat, threshold_idio_cov(eps_hat, threshold))).value
        return np.broadcast_to(single, (T, *single.shape)).copy()
    raise ParameterError(f"unknown base variant {variant!r}")


def chi_square_quantile(r: int, p: float) -> float:
    if r < 1:
        raise ParameterError(f"degrees of freedom must be >= 1, got {r}")
    if not 0 < p < 1:
        raise ParameterError(f"probability must lie in (0, 1), got {p}")
    return float(2.0 * gammaincinv(r / 2.0, p))


def quadratic_form(F_hat_t: np.ndarray, avar_value: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``(F - F_hat)' Avar^{-1} (F - F_hat)``; broadcasts over leading axes."""
    d = np.asarray(F, dtype=float) - np.asarray(F_hat_t, dtype=float)
    try:
        sol = np.linalg.solve(avar_value, d[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError("Avar matrix is singular") from exc
    return np.sum(d * sol, axis=-1)


def confidence_region_contains(F_hat_t, avar_t, F, alpha: float = 0.05) -> bool:
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    A = _value(avar_t)
    r = A.shape[0]
    return bool(quadratic_form(F_hat_t, A, F) <= chi_square_quantile(r, 1 - alpha))


def avar_records(estimates: Iterable[AvarEstimate]) -> list[dict]:
    return [
        {"variant": a.variant, "t": a.t, "matrix": np.asarray(a.value).ravel().tolist()}
        for a in estimates
    ]


def avar_to_json(estimates: Iterable[AvarEstimate]) -> str:
    return json.dumps(avar_records(estimates), indent=1)


def avar_to_csv(estimates: Iterable[AvarEstimate]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "t", "i", "j", "value"])
    for a in estimates:
        r = a.value.shape[0]
        for i in range(r):
            for j in range(r):
                w.writerow([a.variant, a.t, i + 1, j + 1, repr(float(a.value[i, j]))])
    return buf.getvalue()
