"""CSV datasets with JSON sidecars, and real-data preprocessing."""
from __future__ import annotations

import csv
import fnmatch
import json
import math
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .scm_sim import EnvironmentDataset

MISSING = {"", "na", "nan", "null", "none"}


class DataError(ValueError):
    pass


def _select(header: list[str], patterns: Sequence[str] | None) -> list[int]:
    if not patterns:
        return list(range(len(header)))
    keep = [i for i, name in enumerate(header) if any(fnmatch.fnmatchcase(name, p) for p in patterns)]
    if not keep:
        raise DataError(f"no columns match {list(patterns)}")
    return keep


def _parse(cell: str) -> float:
    cell = cell.strip()
    if cell.lower() in MISSING:
        return math.nan
    return float(cell)


def read_csv(
    path: str | Path,
    *,
    columns: Sequence[str] | None = None,
    delimiter: str = ",",
    where: tuple[str, str] | None = None,
) -> tuple[np.ndarray, list[str], int]:
    """Load numeric columns; rows with any missing selected value are dropped.

    ``columns`` are shell-style patterns over the header. ``where`` keeps only
    rows whose ``column`` equals ``value`` (string comparison). Returns the
    matrix, selected column names and the number of dropped rows.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        idx = _select(header, columns)
        where_idx = None
        if where is not None:
            if where[0] not in header:
                raise DataError(f"{path}: no column named {where[0]!r}")
            where_idx = header.index(where[0])
        rows, dropped = [], 0
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if where_idx is not None and rec[where_idx].strip() != where[1]:
                continue
            try:
                vals = [_parse(rec[i]) if i < len(rec) else math.nan for i in idx]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value in a selected column") from None
            if any(math.isnan(v) for v in vals):
                dropped += 1
                continue
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no complete rows")
    return np.asarray(rows, dtype=float), [header[i] for i in idx], dropped


def minmax_normalize(X: np.ndarray) -> np.ndarray:
    """Scale every column to [0, 1]; constant columns map to 0."""
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (X - lo) / span


def load_environment(
    path: str | Path,
    *,
    env_id: Any = None,
    columns: Sequence[str] | None = None,
    delimiter: str = ",",
    normalize: str | None = None,
    where: tuple[str, str] | None = None,
) -> EnvironmentDataset:
    X, names, dropped = read_csv(path, columns=columns, delimiter=delimiter, where=where)
    if normalize == "minmax":
        X = minmax_normalize(X)
    elif normalize not in (None, "none"):
        raise ValueError(f"unknown normalization {normalize!r}")
    meta: dict[str, Any] = {"source": str(path), "columns": names, "dropped_rows": dropped}
    sidecar = Path(path).with_suffix(".json")
    if sidecar.exists():
        try:
            meta["sidecar"] = json.loads(sidecar.read_text())
        except json.JSONDecodeError:
            pass
    if where is not None:
        meta["where"] = f"{where[0]}={where[1]}"
    label = env_id if env_id is not None else Path(path).stem
    return EnvironmentDataset(X, env_id=label, metadata=meta)


def write_environment(ds: EnvironmentDataset, out_dir: str | Path, name: str | None = None) -> Path:
    """Write ``<name>.csv`` (header ``x1..xp``) and the ``<name>.json`` sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = name or f"env_{ds.env_id}"
    csv_path = out / f"{name}.csv"
    header = ",".join(f"x{i + 1}" for i in range(ds.p))
    np.savetxt(csv_path, ds.samples, delimiter=",", header=header, comments="", fmt="%.17g")
    sidecar = {
        "env_id": ds.env_id,
        "seed": ds.seed,
        "d": ds.metadata.get("d"),
        "p": ds.p,
        "n": ds.n,
        "shifted_nodes": ds.metadata.get("shifted_nodes"),
        "graph_family": ds.metadata.get("graph_family"),
        "m": ds.metadata.get("m"),
        "shapes": ds.metadata.get("shapes"),
    }
    (out / f"{name}.json").write_text(json.dumps(sidecar, indent=2))
    return csv_path
