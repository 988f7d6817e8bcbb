"""Principal-components factor extraction and alignment helpers."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParameterError, RankError
from .panel import PanelData

RANK_RTOL = 1e-12
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class FactorEstimate:
    F_hat: np.ndarray
    Lambda_hat: np.ndarray
    estimator: str = "PC"
    iterations: int = 0
    rss_trace: tuple[float, ...] = ()
    converged: bool = True
    warnings: tuple[str, ...] = field(default=())

    @property
    def r(self) -> int:
        return self.F_hat.shape[1]

    def common_component(self) -> np.ndarray:
        return self.F_hat @ self.Lambda_hat.T


def _top_eigen(Y: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Decreasing spectrum of ``YY'`` and its leading ``r`` unit eigenvectors."""
    T, N = Y.shape
    if T <= N:
        w, U = np.linalg.eigh(Y @ Y.T)
        order = np.argsort(w)[::-1]
        w, U = w[order], U[:, order]
        return w, U[:, :r]
    w, V = np.linalg.eigh(Y.T @ Y)
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    lead = np.clip(w[:r], np.finfo(float).tiny, None)
    U = (Y @ V[:, :r]) / np.sqrt(lead)
    return w, U


def _fix_signs(F: np.ndarray, Lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Sign so that the series with the largest absolute loading loads positively;
    # equivalent to F_k' y_{i*} >= 0 because lambda_{i*k} = F_k' y_{i*} / T.
    idx = np.argmax(np.abs(Lam), axis=0)
    signs = np.sign(Lam[idx, np.arange(Lam.shape[1])])
    signs[signs == 0] = 1.0
    return F * signs, Lam * signs


def pc_factors(Y: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Raw-array PC: ``F = sqrt(T) * top eigenvectors of YY'`` and ``Lambda = Y'F/T``."""
    Y = np.asarray(Y, dtype=float)
    T, N = Y.shape
    if not 0 < r < min(N, T):
        raise ParameterError(f"r={r} must satisfy 0 < r < min(N, T) = {min(N, T)}")
    spectrum, U = _top_eigen(Y, r)
    top = spectrum[0]
    if top <= 0 or spectrum[r - 1] <= RANK_RTOL * top:
        raise RankError(f"panel has effective rank below r={r}")
    notes = []
    if r < len(spectrum) and spectrum[r - 1] - spectrum[r] <= TIE_RTOL * top:
        notes.append(f"eigenvalue tie at position {r}: factor space is not unique")
    F = np.sqrt(T) * U
    Lam = Y.T @ F / T
    F, Lam = _fix_signs(F, Lam)
    return F, Lam, notes


def pc_extract(panel: PanelData | np.ndarray, r: int) -> FactorEstimate:
    Y = panel.Y if isinstance(panel, PanelData) else panel
    F, Lam, notes = pc_factors(Y, r)
    return FactorEstimate(F, Lam, estimator="PC", warnings=tuple(notes))


def residuals(panel: PanelData | np.ndarray, est: FactorEstimate) -> np.ndarray:
    Y = panel.Y if isinstance(panel, PanelData) else np.asarray(panel, dtype=float)
    if Y.shape != (est.F_hat.shape[0], est.Lambda_hat.shape[0]):
        raise ParameterError("panel and estimate dimensions disagree")
    return Y - est.F_hat @ est.Lambda_hat.T


def procrustes_rotation(A: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Orthogonal ``R`` minimizing ``||A R - target||_F``."""
    U, _, Vt = np.linalg.svd(A.T @ target)
    return U @ Vt


def procrustes_align(est: FactorEstimate, target: np.ndarray) -> FactorEstimate:
    target = np.asarray(target, dtype=float)
    if target.shape != est.F_hat.shape:
        raise ParameterError(f"target shape {target.shape} != factor shape {est.F_hat.shape}")
    R = procrustes_rotation(est.F_hat, target)
    return replace(est, F_hat=est.F_hat @ R, Lambda_hat=est.Lambda_hat @ R)


def sign_flips(A: np.ndarray, target: np.ndarray) -> np.ndarray:
    s = np.where(np.sum(A * target, axis=0) < 0, -1.0, 1.0)
    return s


def sign_align(est: FactorEstimate, target: np.ndarray) -> FactorEstimate:
    target = np.asarray(target, dtype=float)
    if target.shape != est.F_hat.shape:
        raise ParameterError(f"target shape {target.shape} != factor shape {est.F_hat.shape}")
    s = sign_flips(est.F_hat, target)
    return replace(est, F_hat=est.F_hat * s, Lambda_hat=est.Lambda_hat * s)
