"""CSV and JSON-config serialization.

Numeric CSV files always carry a header row and a leading index column;
floats are written with ``repr`` so they parse back bit-for-bit.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ParameterError
from .montecarlo import ExperimentConfig
from .mse import SubsampleConfig
from .panel import GroupStructure

SCHEMA_VERSION = 1


class InputError(ParameterError):
    """Unreadable or malformed input file or configuration."""


def format_float(x: float) -> str:
    return repr(float(x))


def matrix_to_csv(A: np.ndarray, header: Sequence[str], index: Sequence[Any]) -> str:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if len(header) != A.shape[1] + 1 or len(index) != A.shape[0]:
        raise ParameterError("header/index do not match the matrix shape")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for label, row in zip(index, A):
        w.writerow([label, *(format_float(v) for v in row)])
    return buf.getvalue()


def write_text(path: Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="")


def read_matrix_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Parse a headed CSV into ``(header, values)``, dropping the index column."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: cannot read ({exc})") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise InputError(f"{path}: empty file, header row required")
    header = rows[0]
    if len(header) < 2:
        raise InputError(f"{path}, line 1: header needs an index column and at least one value column")
    try:
        float(header[1])
    except ValueError:
        pass
    else:
        raise InputError(f"{path}, line 1: header row is missing (found numbers)")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise InputError(f"{path}, line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            nums = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise InputError(f"{path}, line {lineno}: non-numeric value ({exc})") from exc
        if not all(math.isfinite(v) for v in nums):
            raise InputError(f"{path}, line {lineno}: non-finite value")
        values.append(nums)
    if not values:
        raise InputError(f"{path}: no data rows")
    return header, np.array(values)


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# Keys accepted in a JSON configuration file.
CONFIG_KEYS = {
    "schema_version",
    "N",
    "r",
    "T",
    "group_sizes",
    "r_g",
    "r_s",
    "phi",
    "c",
    "tau",
    "heteroscedastic",
    "seed",
    "M",
    "estimator",
    "delta",
    "subsample",
    "B",
    "block_fraction",
    "subsample_seed",
    "tol",
    "max_iter",
    "alpha",
    "histogram_periods",
}


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"{path}: cannot read config ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}, line {exc.lineno}: invalid JSON ({exc.msg})") from exc
    return validate_config(raw)


def validate_config(raw: Any) -> dict:
    if not isinstance(raw, dict):
        raise InputError("config must be a JSON object")
    unknown = sorted(set(raw) - CONFIG_KEYS)
    if unknown:
        raise InputError(f"unknown config key {unknown[0]!r}")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"schema_version must be {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    has_dfm = "N" in raw or "r" in raw
    has_ml = any(k in raw for k in ("group_sizes", "r_g", "r_s"))
    if has_dfm and has_ml:
        raise InputError("config key 'N': give either N/r or group_sizes/r_g/r_s, not both")
    if "T" not in raw:
        raise InputError("config key 'T' is required")
    if not (has_dfm or has_ml):
        raise InputError("config key 'group_sizes' (or 'N') is required")
    for key in ("T", "N", "r", "r_g", "seed", "M", "B", "subsample_seed", "max_iter"):
        if key in raw and (isinstance(raw[key], bool) or not isinstance(raw[key], int)):
            raise InputError(f"config key {key!r} must be an integer")
    for key in ("phi", "c", "tau", "delta", "block_fraction", "tol", "alpha"):
        if key in raw and (isinstance(raw[key], bool) or not isinstance(raw[key], (int, float))):
            raise InputError(f"config key {key!r} must be a number")
    for key in ("heteroscedastic", "subsample"):
        if key in raw and not isinstance(raw[key], bool):
            raise InputError(f"config key {key!r} must be true or false")
    tau = raw.get("tau", 0.0)
    if not -1 < tau < 1:
        raise InputError(f"config key 'tau' must lie in (-1, 1), got {tau}")
    return dict(raw)


def structure_from_config(cfg: dict) -> GroupStructure:
    try:
        if "N" in cfg or "r" in cfg:
            return GroupStructure.dfm(cfg["N"], cfg["r"])
        return GroupStructure(tuple(cfg["group_sizes"]), cfg.get("r_g", 0), tuple(cfg["r_s"]))
    except KeyError as exc:
        raise InputError(f"config key {exc.args[0]!r} is required") from exc
    except (TypeError, ParameterError) as exc:
        raise InputError(f"config structure: {exc}") from exc


def subsample_from_config(cfg: dict) -> SubsampleConfig | None:
    if not cfg.get("subsample", True):
        return None
    try:
        return SubsampleConfig(
            cfg.get("B", 50), cfg.get("block_fraction", 0.75), cfg.get("subsample_seed", 0)
        )
    except ParameterError as exc:
        raise InputError(f"config: {exc}") from exc


def experiment_from_config(cfg: dict, seed: int | None = None) -> ExperimentConfig:
    structure = structure_from_config(cfg)
    periods = cfg.get("histogram_periods")
    try:
        return ExperimentConfig(
            structure=structure,
            T=cfg["T"],
            M=cfg.get("M", 1000),
            phi=cfg.get("phi", 0.5),
            c=cfg.get("c", 0.25),
            tau=cfg.get("tau", 0.0),
            heteroscedastic=cfg.get("heteroscedastic", False),
            estimator=cfg.get("estimator", "PC" if structure.is_dfm else "SLS"),
            delta=cfg.get("delta", 2.0),
            subsample=subsample_from_config(cfg),
            seed=cfg.get("seed", 0) if seed is None else seed,
            tol=cfg.get("tol", 1e-8),
            max_iter=cfg.get("max_iter", 500),
            alpha=cfg.get("alpha", 0.05),
            histogram_periods=tuple(periods) if periods is not None else None,
        )
    except ParameterError as exc:
        raise InputError(f"config: {exc}") from exc
