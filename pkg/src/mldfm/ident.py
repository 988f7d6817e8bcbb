"""Identification bookkeeping for multi-level factor models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .panel import GroupStructure


def count_restrictions(structure: GroupStructure) -> int:
    """Free parameters of an admissible rotation (equals the restrictions needed)."""
    k = sum(structure.r_s)
    return structure.r_g**2 + sum(n**2 for n in structure.r_s) + structure.r_g * k


@dataclass(frozen=True)
class RotationMask:
    mask: np.ndarray
    structure: GroupStructure

    @property
    def allowed(self) -> int:
        return int(self.mask.sum())


def rotation_mask(structure: GroupStructure) -> RotationMask:
    """Entries of ``H`` (``Lambda* = Lambda H``) that may be nonzero.

    Global columns of ``H`` are free; a group column may only mix loadings of
    its own group's factors.
    """
    r = structure.r
    mask = np.zeros((r, r), dtype=bool)
    mask[:, structure.global_cols()] = True
    for s in range(structure.S):
        cols = structure.group_cols(s)
        mask[cols, cols] = True
    return RotationMask(mask, structure)


@dataclass
class CheckResult:
    name: str
    passed: bool
    violation: float


@dataclass
class IdentificationReport:
    checks: list[CheckResult]
    tol: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "checks": [
                {"name": c.name, "passed": c.passed, "violation": c.violation} for c in self.checks
            ],
        }


def _offdiag_ratio(A: np.ndarray) -> float:
    if A.shape[0] <= 1:
        return 0.0
    d = np.abs(np.diag(A))
    scale = np.sqrt(np.outer(d, d))
    off = np.abs(A - np.diag(np.diag(A)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(scale > 0, off / scale, np.where(off > 0, np.inf, 0.0))
    return float(ratio.max())


def _max_abs(A: np.ndarray) -> float:
    return float(np.abs(A).max()) if A.size else 0.0


def check_identification(
    G: np.ndarray,
    L: Sequence[np.ndarray],
    Lambda_g: np.ndarray,
    Lambda_l: Sequence[np.ndarray],
    tol: float = 1e-6,
) -> IdentificationReport:
    """Report, never raise, on the five identifying restrictions.

    Diagonality is measured as the largest off-diagonal entry relative to the
    geometric mean of the matching diagonal entries.
    """
    T = G.shape[0] if G.ndim == 2 and G.shape[0] else L[0].shape[0]
    checks = []

    def add(name, v):
        checks.append(CheckResult(name, bool(v <= tol), float(v)))

    add("G'G/T = I", _max_abs(G.T @ G / T - np.eye(G.shape[1])))
    for s, Ls in enumerate(L, start=1):
        add(f"L{s}'L{s}/T = I", _max_abs(Ls.T @ Ls / T - np.eye(Ls.shape[1])))
    for s, Ls in enumerate(L, start=1):
        add(f"L{s}'G/T = 0", _max_abs(Ls.T @ G / T))
    add("Lambda_g'Lambda_g diagonal", _offdiag_ratio(Lambda_g.T @ Lambda_g))
    for s, Ls in enumerate(Lambda_l, start=1):
        add(f"Lambda_l{s}'Lambda_l{s} diagonal", _offdiag_ratio(Ls.T @ Ls))
    return IdentificationReport(checks, tol)
