"""Label latent components by nulling one source and remixing.

The intervened reconstruction is compared with the un-intervened
reconstruction (not the raw data), so misfit of the linear model does not
leak into a component's footprint.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .alignment import AlignedUnmixing

__all__ = [
    "LabelingRun",
    "reconstruct",
    "null_component_probe",
    "probe_all",
    "component_histograms",
    "write_labeling",
]


@dataclass
class LabelingRun:
    component_index: int
    per_column_shift: np.ndarray
    top_columns: np.ndarray
    noise_floor: np.ndarray
    significant_columns: list[int]
    variance_drop: np.ndarray
    reference_env: Any = None
    column_names: list[str] | None = None
    floor_factor: float = 10.0
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        names = self.column_names
        label = (lambda c: names[c]) if names else (lambda c: int(c))
        return {
            "reference_env": None if self.reference_env is None else str(self.reference_env),
            "component": self.component_index,
            "per_column_shift": [float(x) for x in self.per_column_shift],
            "noise_floor": [float(x) for x in self.noise_floor],
            "floor_factor": self.floor_factor,
            "top_columns": [label(c) for c in self.top_columns],
            "significant_columns": [label(c) for c in self.significant_columns],
            "variance_drop": [float(x) for x in self.variance_drop],
        }


def reconstruct(aligned: AlignedUnmixing, sources_override: np.ndarray | None = None) -> np.ndarray:
    """``pinv(M) @ sources + center`` for every sample (``n x p``)."""
    S = aligned.sources if sources_override is None else np.asarray(sources_override, dtype=float)
    if S.shape != aligned.sources.shape:
        raise ValueError(f"sources must have shape {aligned.sources.shape}, got {S.shape}")
    return S @ np.linalg.pinv(aligned.unmixing).T + aligned.center


def _column_w1(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.mean(np.abs(np.sort(a, axis=0) - np.sort(b, axis=0)), axis=0)


def null_component_probe(
    aligned: AlignedUnmixing,
    j: int | None,
    distance: str = "wasserstein1",
    *,
    floor_factor: float = 10.0,
    column_names: list[str] | None = None,
) -> LabelingRun:
    """Zero source ``j`` (0-based), remix, and measure each observed column's shift.

    ``j=None`` nulls nothing (the no-op probe). The per-column noise floor is
    the W1 distance between the even and odd rows of the baseline
    reconstruction; a column is significant when its shift exceeds
    ``floor_factor`` times its floor.
    """
    if distance != "wasserstein1":
        raise ValueError(f"unsupported distance {distance!r}")
    d = aligned.d
    if j is not None and not 0 <= j < d:
        raise IndexError(f"component index {j} out of range for d={d}")
    base = reconstruct(aligned)
    S = aligned.sources.copy()
    if j is not None:
        S[:, j] = 0.0
    after = reconstruct(aligned, S)

    shift = _column_w1(base, after)
    n_half = base.shape[0] // 2
    if n_half >= 1:
        floor = _column_w1(base[0 : 2 * n_half : 2], base[1 : 2 * n_half : 2])
    else:
        floor = np.zeros(base.shape[1])
    top = np.argsort(-shift, kind="stable")
    significant = [int(c) for c in top if shift[c] > floor_factor * floor[c] and shift[c] > 0]
    return LabelingRun(
        component_index=-1 if j is None else int(j),
        per_column_shift=shift,
        top_columns=top,
        noise_floor=floor,
        significant_columns=significant,
        variance_drop=base.var(axis=0) - after.var(axis=0),
        reference_env=aligned.reference_env,
        column_names=column_names,
        floor_factor=floor_factor,
    )


def probe_all(aligned: AlignedUnmixing, **kwargs) -> list[LabelingRun]:
    return [null_component_probe(aligned, j, **kwargs) for j in range(aligned.d)]


def component_histograms(aligned: AlignedUnmixing, j: int, bins: int = 50) -> list[dict[str, Any]]:
    """Before/after histogram counts per observed column, on a shared range."""
    base = reconstruct(aligned)
    S = aligned.sources.copy()
    S[:, j] = 0.0
    after = reconstruct(aligned, S)
    rows = []
    for c in range(base.shape[1]):
        lo = float(min(base[:, c].min(), after[:, c].min()))
        hi = float(max(base[:, c].max(), after[:, c].max()))
        if hi <= lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, bins + 1)
        before_counts, _ = np.histogram(base[:, c], edges)
        after_counts, _ = np.histogram(after[:, c], edges)
        for b in range(bins):
            rows.append(
                {
                    "column": c,
                    "bin_left": edges[b],
                    "bin_right": edges[b + 1],
                    "before": int(before_counts[b]),
                    "after": int(after_counts[b]),
                }
            )
    return rows


def write_labeling(
    aligned: AlignedUnmixing,
    runs: list[LabelingRun],
    out_dir: str | Path,
    *,
    histograms: bool = False,
    bins: int = 50,
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "labeling.json"
    path.write_text(json.dumps({"components": [r.to_dict() for r in runs]}, indent=2))
    if histograms:
        for r in runs:
            rows = component_histograms(aligned, r.component_index, bins)
            with open(out / f"hist_component_{r.component_index}.csv", "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
                writer.writeheader()
                writer.writerows(rows)
    return path
