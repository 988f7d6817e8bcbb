"""Sequential least squares (SLS) for multi-level dynamic factor models.

The estimator alternates two least-squares problems under the block-zero
loading pattern: loadings given factors (one regression per group) and
factors given loadings (one cross-sectional regression per period).  It is
initialized with canonical correlations between group-wise PC factors and
finishes with a rotation that imposes the identifying restrictions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegeneracyError, UpdateError
from .panel import GroupStructure, PanelData, stack_factors
from .pc import FactorEstimate, pc_factors

log = logging.getLogger(__name__)

CCA_DEGENERATE = 1e-8


@dataclass(frozen=True)
class MlFactorEstimate:
    G_hat: np.ndarray
    L_hat: list[np.ndarray]
    Lambda_g_hat: np.ndarray
    Lambda_l_hat: list[np.ndarray]
    structure: GroupStructure
    iterations: int = 0
    rss_trace: tuple[float, ...] = ()
    converged: bool = False
    warnings: tuple[str, ...] = field(default=())

    @property
    def F_hat(self) -> np.ndarray:
        return stack_factors(self.G_hat, self.L_hat)

    @property
    def Lambda_dagger(self) -> np.ndarray:
        return assemble_loadings(self.structure, self.Lambda_g_hat, self.Lambda_l_hat)

    def common_component(self) -> np.ndarray:
        return self.F_hat @ self.Lambda_dagger.T

    def as_factor_estimate(self) -> FactorEstimate:
        return FactorEstimate(
            self.F_hat,
            self.Lambda_dagger,
            estimator="SLS",
            iterations=self.iterations,
            rss_trace=self.rss_trace,
            converged=self.converged,
            warnings=self.warnings,
        )


def assemble_loadings(
    structure: GroupStructure, Lambda_g: np.ndarray, Lambda_l: Sequence[np.ndarray]
) -> np.ndarray:
    """Stack global and group loadings into the ``N x r`` block-zero matrix."""
    Lam = np.zeros((structure.N, structure.r))
    Lam[:, structure.global_cols()] = Lambda_g
    for s in range(structure.S):
        Lam[structure.rows(s), structure.group_cols(s)] = Lambda_l[s]
    return Lam


def split_loadings(
    structure: GroupStructure, Lam: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    Lambda_g = Lam[:, structure.global_cols()].copy()
    Lambda_l = [Lam[structure.rows(s), structure.group_cols(s)].copy() for s in range(structure.S)]
    return Lambda_g, Lambda_l


class Initialization(NamedTuple):
    G0: np.ndarray
    L0: list[np.ndarray]
    correlations: np.ndarray
    warnings: tuple[str, ...]


def canonical_global_factors(
    group_factors: Sequence[np.ndarray], r_g: int
) -> tuple[np.ndarray, np.ndarray]:
    """MAXVAR generalized CCA across sets of orthonormal group factors.

    With each set normalized to ``F_s'F_s/T = I``, the leading left singular
    vectors of the concatenated sets maximize the summed squared correlation
    with every set.  For two sets this is classical CCA and the returned
    correlations are the canonical correlations; for ``S`` sets they are the
    average pairwise correlations implied by the MAXVAR eigenvalues.
    """
    T = group_factors[0].shape[0]
    S = len(group_factors)
    Z = np.hstack(group_factors) / np.sqrt(T)
    U, sv, _ = np.linalg.svd(Z, full_matrices=False)
    corr = (sv**2 - 1.0) / max(S - 1, 1)
    G0 = np.sqrt(T) * U[:, :r_g]
    return G0, np.clip(corr[:r_g], -1.0, 1.0)


def _residualize(Y: np.ndarray, G: np.ndarray) -> np.ndarray:
    if G.shape[1] == 0:
        return Y
    return Y - G @ np.linalg.lstsq(G, Y, rcond=None)[0]


def cca_init(panel: PanelData, method: str = "cca") -> Initialization:
    """Starting values for SLS.

    ``method="cca"`` extracts ``r_g + r_s`` PC factors per group and takes
    the leading canonical combinations as global factors; ``"pc"`` uses
    pooled PC on the whole panel instead.  Degenerate canonical correlations
    fall back to pooled PC with a warning.
    """
    st = panel.structure
    T = panel.T
    notes: list[str] = []
    corr = np.zeros(0)
    if st.r_g == 0:
        G0 = np.zeros((T, 0))
    elif method == "pc" or st.S == 1:
        G0 = pc_factors(panel.Y, st.r_g)[0]
    elif method == "cca":
        sets = [pc_factors(panel.group(s), st.r_g + st.r_s[s])[0] for s in range(st.S)]
        G0, corr = canonical_global_factors(sets, st.r_g)
        if np.all(corr < CCA_DEGENERATE):
            msg = "canonical correlations degenerate; initialized global factors by pooled PC"
            log.warning(msg)
            notes.append(msg)
            G0 = pc_factors(panel.Y, st.r_g)[0]
    else:
        raise ValueError(f"unknown initialization method {method!r}")

    U = _residualize(panel.Y, G0)
    L0 = []
    for s in range(st.S):
        k = st.r_s[s]
        L0.append(pc_factors(U[:, st.rows(s)], k)[0] if k else np.zeros((T, 0)))
    return Initialization(G0, L0, corr, tuple(notes))


def update_loadings(
    panel: PanelData, G: np.ndarray, L: Sequence[np.ndarray]
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Group-by-group time-series regressions of ``Y_s`` on ``[G, L_s]``."""
    st = panel.structure
    Lambda_g = np.zeros((st.N, st.r_g))
    Lambda_l = []
    for s in range(st.S):
        X = np.hstack([G, L[s]])
        coef, _, rank, _ = np.linalg.lstsq(X, panel.group(s), rcond=None)
        if rank < X.shape[1]:
            raise UpdateError(f"group {s + 1}: regressors [G, L_{s + 1}] are collinear")
        Lambda_g[st.rows(s)] = coef[: st.r_g].T
        Lambda_l.append(coef[st.r_g :].T)
    return Lambda_g, Lambda_l


def update_factors(
    panel: PanelData, Lambda_g: np.ndarray, Lambda_l: Sequence[np.ndarray]
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Per-period cross-sectional LS ``F_t = (Lam'Lam)^{-1} Lam' Y_t``."""
    st = panel.structure
    Lam = assemble_loadings(st, Lambda_g, Lambda_l)
    A = Lam.T @ Lam
    w = np.linalg.eigvalsh(A)
    if w[0] <= 1e-12 * max(w[-1], np.finfo(float).tiny):
        raise UpdateError("stacked loading matrix is rank deficient")
    F = np.linalg.solve(A, Lam.T @ panel.Y.T).T
    G = F[:, st.global_cols()]
    return G, [F[:, st.group_cols(s)] for s in range(st.S)]


def rss(panel: PanelData, G, L, Lambda_g, Lambda_l) -> float:
    st = panel.structure
    fit = stack_factors(G, L) @ assemble_loadings(st, Lambda_g, Lambda_l).T
    return float(np.sum((panel.Y - fit) ** 2))


def _normalize_block(F: np.ndarray, Lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotate a (factor, loading) pair so ``F'F/T = I`` and ``Lam'Lam`` is diagonal decreasing.

    The product ``F Lam'`` is preserved exactly.
    """
    T, k = F.shape
    if k == 0:
        return F.copy(), Lam.copy()
    Q, R = np.linalg.qr(F)
    d = np.abs(np.diag(R))
    if d.min() <= 1e-12 * d.max():
        raise DegeneracyError("factor block is rank deficient")
    W, sv, Vt = np.linalg.svd(R @ Lam.T, full_matrices=False)
    F_new = np.sqrt(T) * (Q @ W)
    Lam_new = Vt.T * sv / np.sqrt(T)
    idx = np.argmax(np.abs(Lam_new), axis=0)
    signs = np.sign(Lam_new[idx, np.arange(k)])
    signs[signs == 0] = 1.0
    return F_new * signs, Lam_new * signs


def finalize_identification(est: MlFactorEstimate) -> MlFactorEstimate:
    """Impose the identifying restrictions without changing the fitted values.

    Group factors are first purged of their projection on the global
    factors, the projection being absorbed in the global loadings of that
    group's series.  Each block is then rotated to orthonormal factors with
    diagonal, decreasing loading cross-products.
    """
    st = est.structure
    G = est.G_hat
    Lambda_g = est.Lambda_g_hat.copy()
    L = []
    for s in range(st.S):
        Ls = est.L_hat[s]
        if st.r_g and st.r_s[s]:
            B = np.linalg.lstsq(G, Ls, rcond=None)[0]
            Ls = Ls - G @ B
            Lambda_g[st.rows(s)] += est.Lambda_l_hat[s] @ B.T
        L.append(Ls)
    G_new, Lambda_g_new = _normalize_block(G, Lambda_g)
    L_new, Lambda_l_new = [], []
    for s in range(st.S):
        Fs, Ls = _normalize_block(L[s], est.Lambda_l_hat[s])
        L_new.append(Fs)
        Lambda_l_new.append(Ls)
    return replace(est, G_hat=G_new, L_hat=L_new, Lambda_g_hat=Lambda_g_new, Lambda_l_hat=Lambda_l_new)


def sls_estimate(
    panel: PanelData,
    tol: float = 1e-8,
    max_iter: int = 500,
    init: str = "cca",
) -> MlFactorEstimate:
    if tol <= 0:
        raise ValueError("tol must be positive")
    st = panel.structure
    G, L, _, notes = cca_init(panel, init)
    total = float(np.sum(panel.Y**2))
    trace: list[float] = []
    converged = False
    Lambda_g, Lambda_l = None, None
    for it in range(1, max_iter + 1):
        Lambda_g, Lambda_l = update_loadings(panel, G, L)
        G, L = update_factors(panel, Lambda_g, Lambda_l)
        value = rss(panel, G, L, Lambda_g, Lambda_l)
        trace.append(value)
        if value <= 1e-24 * total:
            converged = True
            break
        if it > 1:
            prev = trace[-2]
            if abs(value - prev) / max(prev, 1e-12) < tol:
                converged = True
                break
    if not converged:
        log.info("SLS stopped at max_iter=%d without RSS convergence", max_iter)
    est = MlFactorEstimate(
        G_hat=G,
        L_hat=list(L),
        Lambda_g_hat=Lambda_g,
        Lambda_l_hat=list(Lambda_l),
        structure=st,
        iterations=len(trace),
        rss_trace=tuple(trace),
        converged=converged,
        warnings=notes,
    )
    return finalize_identification(est)
