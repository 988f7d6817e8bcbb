"""Panel containers, group layouts and the simulation design.

The simulated designs follow the usual multi-level factor set-up: a few
global factors load on every series, and each group of series has its own
group-specific factors that load only inside the group.  Columns of the
factor matrix are always ordered ``[G, L_1, ..., L_S]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegeneracyError, ParameterError, SpecError

SeedLike = int | np.random.SeedSequence | None


def as_rng(seed: SeedLike | np.random.Generator) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class GroupStructure:
    """Block layout of an ML-DFM.

    A plain DFM with ``r`` factors is the one-group structure
    ``GroupStructure((N,), r, (0,))``.
    """

    group_sizes: tuple[int, ...]
    r_g: int
    r_s: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "group_sizes", tuple(int(n) for n in self.group_sizes))
        object.__setattr__(self, "r_s", tuple(int(k) for k in self.r_s))
        object.__setattr__(self, "r_g", int(self.r_g))
        if len(self.group_sizes) < 1:
            raise ParameterError("group_sizes: at least one group is required")
        if len(self.r_s) != len(self.group_sizes):
            raise ParameterError("r_s: need one group-factor count per group")
        if any(n < 1 for n in self.group_sizes):
            raise ParameterError("group_sizes: every group needs at least one series")
        if self.r_g < 0 or any(k < 0 for k in self.r_s):
            raise ParameterError("r_g/r_s: factor counts must be non-negative")
        if self.r < 1:
            raise ParameterError("r_g/r_s: the model needs at least one factor")
        if self.r >= self.N:
            raise ParameterError(f"r_g/r_s: total factors {self.r} must be below N={self.N}")
        for s, (n, k) in enumerate(zip(self.group_sizes, self.r_s)):
            if self.r_g + k >= n:
                raise ParameterError(
                    f"group_sizes: group {s + 1} has {n} series but needs more than {self.r_g + k}"
                )

    @classmethod
    def dfm(cls, N: int, r: int) -> "GroupStructure":
        return cls((N,), r, (0,))

    @property
    def S(self) -> int:
        return len(self.group_sizes)

    @property
    def N(self) -> int:
        return sum(self.group_sizes)

    @property
    def r(self) -> int:
        return self.r_g + sum(self.r_s)

    @property
    def is_dfm(self) -> bool:
        return self.S == 1 and self.r_s[0] == 0

    def rows(self, s: int) -> slice:
        start = sum(self.group_sizes[:s])
        return slice(start, start + self.group_sizes[s])

    def global_cols(self) -> slice:
        return slice(0, self.r_g)

    def group_cols(self, s: int) -> slice:
        start = self.r_g + sum(self.r_s[:s])
        return slice(start, start + self.r_s[s])

    def zero_mask(self) -> np.ndarray:
        """Boolean ``N x r`` array, true where the loading must be zero."""
        mask = np.zeros((self.N, self.r), dtype=bool)
        for s in range(self.S):
            for s2 in range(self.S):
                if s2 != s:
                    mask[self.rows(s), self.group_cols(s2)] = True
        return mask

    def factor_labels(self) -> list[str]:
        if self.is_dfm:
            return [f"F{k + 1}" for k in range(self.r)]
        labels = ["G" if self.r_g == 1 else f"G{k + 1}" for k in range(self.r_g)]
        for s, k_s in enumerate(self.r_s):
            labels += [f"L{s + 1}" if k_s == 1 else f"L{s + 1}_{k + 1}" for k in range(k_s)]
        return labels

    def to_dict(self) -> dict:
        return {"group_sizes": list(self.group_sizes), "r_g": self.r_g, "r_s": list(self.r_s)}


@dataclass(frozen=True)
class PanelData:
    Y: np.ndarray
    structure: GroupStructure

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim != 2:
            raise ParameterError("Y must be a T x N matrix")
        if Y.shape[1] != self.structure.N:
            raise ParameterError(
                f"Y has {Y.shape[1]} columns but the group structure has N={self.structure.N}"
            )
        if not np.all(np.isfinite(Y)):
            raise ParameterError("Y contains non-finite entries")
        object.__setattr__(self, "Y", Y)

    @property
    def T(self) -> int:
        return self.Y.shape[0]

    def group(self, s: int) -> np.ndarray:
        return self.Y[:, self.structure.rows(s)]

    def window(self, start: int, stop: int) -> "PanelData":
        return PanelData(self.Y[start:stop], self.structure)


@dataclass(frozen=True)
class FactorSet:
    F: np.ndarray
    kind: str = "pooled"
    orthonormal: bool = False


@dataclass(frozen=True)
class LoadingSet:
    Lambda: np.ndarray
    structure: GroupStructure
    raw: np.ndarray | None = field(default=None, repr=False)

    @property
    def zero_mask(self) -> np.ndarray:
        return self.structure.zero_mask()


@dataclass(frozen=True)
class IdioSpec:
    """Idiosyncratic covariance recipe: ``sigma_i**2 = c * u_i`` plus Toeplitz decay."""

    u: np.ndarray
    tau: float
    permutation: np.ndarray
    c: float = 0.25

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        perm = np.asarray(self.permutation, dtype=int)
        if not -1 < self.tau < 1:
            raise ParameterError(f"tau must lie in (-1, 1), got {self.tau}")
        if self.c <= 0:
            raise ParameterError(f"c must be positive, got {self.c}")
        if np.any(u <= 0):
            raise ParameterError("u: idiosyncratic scale factors must be positive")
        if sorted(perm.tolist()) != list(range(len(u))):
            raise ParameterError("permutation must be a permutation of range(N)")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "permutation", perm)

    @property
    def variances(self) -> np.ndarray:
        return self.c * self.u


def simulate_ar1(T: int, r: int, phi: float, seed: SeedLike | np.random.Generator) -> np.ndarray:
    """Stationary zero-mean AR(1) paths with unit marginal variance, shape ``(T, r)``."""
    if not abs(phi) < 1:
        raise ParameterError(f"phi must satisfy |phi| < 1, got {phi}")
    z = as_rng(seed).standard_normal((T, r))
    x = np.empty((T, r))
    x[0] = z[0]
    scale = np.sqrt(1.0 - phi**2)
    for t in range(1, T):
        x[t] = phi * x[t - 1] + scale * z[t]
    return x


def orthonormalize(M: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Return ``Q`` spanning the columns of ``M`` with ``Q'Q/T = I``.

    Columns are signed so that their first non-negligible entry is positive.
    """
    M = np.asarray(M, dtype=float)
    T, k = M.shape
    if k == 0:
        return M.copy()
    Q, R = np.linalg.qr(M)
    d = np.abs(np.diag(R))
    if d.min() <= rtol * max(d.max(), np.finfo(float).tiny):
        raise DegeneracyError("matrix to orthonormalize is rank deficient")
    Q = Q * np.sqrt(T)
    return Q * _leading_signs(Q)


def _leading_signs(Q: np.ndarray) -> np.ndarray:
    signs = np.ones(Q.shape[1])
    for j in range(Q.shape[1]):
        col = Q[:, j]
        big = np.flatnonzero(np.abs(col) > 1e-8 * np.abs(col).max())
        if big.size and col[big[0]] < 0:
            signs[j] = -1.0
    return signs


def simulate_factors(T: int, r: int, phi: float, seed: SeedLike, kind: str = "pooled") -> FactorSet:
    if T <= r:
        raise ParameterError(f"T={T} must exceed the number of factors r={r}")
    raw = simulate_ar1(T, r, phi, seed)
    return FactorSet(orthonormalize(raw), kind=kind, orthonormal=True)


def draw_raw_loadings(structure: GroupStructure, seed: SeedLike | np.random.Generator) -> np.ndarray:
    raw = as_rng(seed).uniform(0.5, 1.0, size=(structure.N, structure.r))
    raw[structure.zero_mask()] = 0.0
    return raw


def _principal_axes(B: np.ndarray) -> np.ndarray:
    """Rotate ``B`` so that ``B'B`` is diagonal with decreasing entries."""
    if B.shape[1] <= 1:
        out = B.copy()
    else:
        w, V = np.linalg.eigh(B.T @ B)
        out = B @ V[:, np.argsort(w)[::-1]]
    flip = out.sum(axis=0) < 0
    out[:, flip] *= -1.0
    return out


def orthogonalize_loadings(raw: np.ndarray, structure: GroupStructure) -> np.ndarray:
    """Orthogonalize loadings without breaking the block-zero pattern.

    The global block is rotated to principal axes.  Each group block is
    first purged of its projection on the global columns (restricted to the
    group's rows) and then rotated to principal axes, so the whole matrix
    ends up with a diagonal cross-product.
    """
    Lam = np.zeros_like(raw, dtype=float)
    gc = structure.global_cols()
    Lam[:, gc] = _principal_axes(raw[:, gc])
    for s in range(structure.S):
        rows, cols = structure.rows(s), structure.group_cols(s)
        if structure.r_s[s] == 0:
            continue
        block = raw[rows, cols]
        if structure.r_g:
            Gs = Lam[rows, gc]
            block = block - Gs @ np.linalg.lstsq(Gs, block, rcond=None)[0]
        Lam[rows, cols] = _principal_axes(block)
    return Lam


def simulate_loadings(structure: GroupStructure, seed: SeedLike) -> LoadingSet:
    raw = draw_raw_loadings(structure, seed)
    return LoadingSet(orthogonalize_loadings(raw, structure), structure, raw=raw)


def make_idio_spec(
    N: int, c: float, tau: float, heteroscedastic: bool, seed: SeedLike
) -> IdioSpec:
    rng = as_rng(seed)
    u = rng.uniform(0.5, 2.0, size=N) if heteroscedastic else np.ones(N)
    return IdioSpec(u=u, tau=tau, permutation=rng.permutation(N), c=c)


def toeplitz_cov(sd: np.ndarray, tau: float) -> np.ndarray:
    idx = np.arange(len(sd))
    lag = np.abs(idx[:, None] - idx[None, :])
    return np.outer(sd, sd) * np.power(float(tau), lag)


def build_idio_cov(N: int, spec: IdioSpec) -> np.ndarray:
    if len(spec.u) != N:
        raise ParameterError(f"spec describes {len(spec.u)} series, expected N={N}")
    base = toeplitz_cov(np.sqrt(spec.variances), spec.tau)
    p = spec.permutation
    sigma = base[np.ix_(p, p)]
    sigma = 0.5 * (sigma + sigma.T)
    smallest = np.linalg.eigvalsh(sigma)[0]
    if smallest <= 0:
        raise SpecError(f"idiosyncratic covariance is not PD (smallest eigenvalue {smallest:.3e})")
    return sigma


def simulate_idio(sigma_eps: np.ndarray, T: int, seed: SeedLike | np.random.Generator) -> np.ndarray:
    """``T`` i.i.d. draws from ``N(0, sigma_eps)`` as rows."""
    sigma_eps = np.asarray(sigma_eps, dtype=float)
    N = sigma_eps.shape[0]
    z = as_rng(seed).standard_normal((T, N))
    if not np.any(sigma_eps):
        return np.zeros((T, N))
    try:
        chol = np.linalg.cholesky(sigma_eps)
    except np.linalg.LinAlgError as exc:
        raise SpecError("idiosyncratic covariance is not positive definite") from exc
    return z @ chol.T


def simulate_panel(
    factors: FactorSet | np.ndarray,
    loadings: LoadingSet,
    sigma_eps: np.ndarray,
    seed: SeedLike | np.random.Generator,
) -> PanelData:
    F = factors.F if isinstance(factors, FactorSet) else np.asarray(factors, dtype=float)
    Lam = loadings.Lambda
    if F.shape[1] != Lam.shape[1]:
        raise ParameterError(f"factor count {F.shape[1]} != loading columns {Lam.shape[1]}")
    if np.shape(sigma_eps) != (Lam.shape[0], Lam.shape[0]):
        raise ParameterError(f"sigma_eps must be {Lam.shape[0]} x {Lam.shape[0]}")
    Y = F @ Lam.T + simulate_idio(sigma_eps, F.shape[0], seed)
    return PanelData(Y, loadings.structure)


def factor_strength(loadings: LoadingSet | np.ndarray, sigma_eps: np.ndarray) -> np.ndarray:
    """``Lambda' Sigma^{-1} Lambda``."""
    Lam = loadings.Lambda if isinstance(loadings, LoadingSet) else np.asarray(loadings, dtype=float)
    try:
        return Lam.T @ np.linalg.solve(sigma_eps, Lam)
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError("sigma_eps is singular") from exc


@dataclass(frozen=True)
class Design:
    """Fixed part of a Monte Carlo design: true factors, loadings and ``Sigma_eps``."""

    structure: GroupStructure
    factors: FactorSet
    loadings: LoadingSet
    sigma_eps: np.ndarray
    idio: IdioSpec | None

    @property
    def T(self) -> int:
        return self.factors.F.shape[0]

    def draw_panel(self, seed: SeedLike | np.random.Generator) -> PanelData:
        return simulate_panel(self.factors, self.loadings, self.sigma_eps, seed)


def simulate_design(
    structure: GroupStructure,
    T: int,
    phi: float = 0.5,
    c: float = 0.25,
    tau: float = 0.0,
    heteroscedastic: bool = False,
    seed: SeedLike = 0,
) -> Design:
    """Draw factors, loadings and the idiosyncratic covariance once.

    ``c = 0`` gives a noiseless design (zero idiosyncratic covariance).
    """
    s_fac, s_load, s_idio = np.random.SeedSequence(seed).spawn(3)
    factors = simulate_factors(T, structure.r, phi, s_fac)
    loadings = simulate_loadings(structure, s_load)
    if c == 0:
        return Design(structure, factors, loadings, np.zeros((structure.N, structure.N)), None)
    spec = make_idio_spec(structure.N, c, tau, heteroscedastic, s_idio)
    return Design(structure, factors, loadings, build_idio_cov(structure.N, spec), spec)


def split_factors(F: np.ndarray, structure: GroupStructure) -> tuple[np.ndarray, list[np.ndarray]]:
    G = F[:, structure.global_cols()]
    return G, [F[:, structure.group_cols(s)] for s in range(structure.S)]


def stack_factors(G: np.ndarray, L: Sequence[np.ndarray]) -> np.ndarray:
    return np.hstack([G, *L])
