"""Resolve the ICA permutation so rows line up across environments.

Two modes:

* ``psi``: sort components by a sign-invariant test statistic of their
  source samples (default ``P(|y| <= 1)``).
* ``match``: match each target component to a reference environment's
  components by 1-Wasserstein distance over signed permutations, solved as a
  linear assignment problem.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import stats
from scipy.optimize import linear_sum_assignment

from .ica_core import IcaResult

__all__ = [
    "TestFunction",
    "AlignedUnmixing",
    "AlignmentWarning",
    "estimate_psi",
    "sort_by_psi",
    "align_by_matching",
    "wasserstein1",
]


class AlignmentWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TestFunction:
    """Sign-invariant functional of a 1-D distribution.

    ``abs_prob_threshold``: ``P(|y| <= threshold)``.
    ``abs_moment``: ``E|y|^order``.
    """

    __test__ = False  # not a pytest class

    kind: str = "abs_prob_threshold"
    threshold: float = 1.0
    order: float = 4.0

    def __post_init__(self) -> None:
        if self.kind not in ("abs_prob_threshold", "abs_moment"):
            raise ValueError(f"unknown test function kind {self.kind!r}")

    def __call__(self, sources: np.ndarray) -> np.ndarray:
        a = np.abs(np.asarray(sources, dtype=float))
        if self.kind == "abs_prob_threshold":
            return np.mean(a <= self.threshold, axis=0)
        return np.mean(a**self.order, axis=0)


@dataclass
class AlignedUnmixing:
    """Unmixing rows and source columns in a common component order.

    ``order[r]`` is the input row placed at slot ``r``; ``signs[r]`` is the
    sign applied to it (always +1 in ``psi`` mode).
    """

    unmixing: np.ndarray
    sources: np.ndarray
    center: np.ndarray
    sort_keys: np.ndarray
    mode: str
    order: np.ndarray
    signs: np.ndarray
    reference_env: Any = None
    low_confidence: set[int] = field(default_factory=set)
    warnings: list[str] = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.unmixing.shape[0]


def estimate_psi(sources: np.ndarray, psi: TestFunction | None = None) -> np.ndarray:
    """Empirical test-function value of every source column."""
    sources = np.asarray(sources, dtype=float)
    if sources.ndim == 1:
        sources = sources[:, None]
    return (psi or TestFunction())(sources)


def sort_by_psi(result: IcaResult, psi: TestFunction | None = None) -> AlignedUnmixing:
    """Reorder components by ascending empirical psi (stable on ties).

    Neighbouring keys closer than two binomial standard errors are reported
    as ties and both components marked low-confidence.
    """
    psi = psi or TestFunction()
    keys = estimate_psi(result.sources, psi)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    n = result.sources.shape[0]

    notes: list[str] = []
    low: set[int] = set()
    if psi.kind == "abs_prob_threshold":
        for r in range(len(order) - 1):
            mid = 0.5 * (sorted_keys[r] + sorted_keys[r + 1])
            margin = 2.0 * np.sqrt(max(mid * (1.0 - mid), 0.0) / n)
            if sorted_keys[r + 1] - sorted_keys[r] < margin:
                low.update((r, r + 1))
                notes.append(
                    f"psi tie between sorted components {r} and {r + 1}: "
                    f"{sorted_keys[r]:.5f} vs {sorted_keys[r + 1]:.5f} (margin {margin:.5f})"
                )
    for msg in notes:
        warnings.warn(msg, AlignmentWarning, stacklevel=2)

    return AlignedUnmixing(
        unmixing=result.unmixing[order].copy(),
        sources=result.sources[:, order].copy(),
        center=result.center,
        sort_keys=sorted_keys,
        mode="psi",
        order=order,
        signs=np.ones(len(order)),
        low_confidence=low,
        warnings=notes,
    )


def wasserstein1(a: np.ndarray, b: np.ndarray) -> float:
    """Empirical 1-Wasserstein distance between two 1-D samples."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if len(a) == len(b):
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    return float(stats.wasserstein_distance(a, b))


def _sorted_w1(a_sorted: np.ndarray, b_sorted: np.ndarray) -> float:
    if len(a_sorted) == len(b_sorted):
        return float(np.mean(np.abs(a_sorted - b_sorted)))
    return float(stats.wasserstein_distance(a_sorted, b_sorted))


def matching_costs(ref_sources: np.ndarray, tgt_sources: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cost ``C[i, j] = min_s W1(ref_i, s * tgt_j)`` and the minimising sign."""
    ref = np.sort(ref_sources, axis=0)
    tgt = np.sort(tgt_sources, axis=0)
    d = ref.shape[1]
    if tgt.shape[1] != d:
        raise ValueError(f"reference has {d} components, target has {tgt.shape[1]}")
    cost = np.empty((d, d))
    sign = np.ones((d, d))
    for i in range(d):
        for j in range(d):
            plus = _sorted_w1(ref[:, i], tgt[:, j])
            minus = _sorted_w1(ref[:, i], -tgt[::-1, j])
            cost[i, j] = min(plus, minus)
            sign[i, j] = 1.0 if plus <= minus else -1.0
    return cost, sign


def align_by_matching(
    reference: AlignedUnmixing | IcaResult,
    target: IcaResult,
    distance: str = "wasserstein1",
    *,
    reference_env: Any = None,
) -> AlignedUnmixing:
    """Order (and sign) ``target`` components to match ``reference``.

    The reference keeps whatever order it already has.
    """
    if distance != "wasserstein1":
        raise ValueError(f"unsupported distance {distance!r}")
    cost, sign = matching_costs(reference.sources, target.sources)
    rows, cols = linear_sum_assignment(cost)

    ambiguous: set[int] = set()
    if cost.shape[1] > 1:
        scale = max(float(np.max(cost)), 1e-300)
        srt = np.sort(cost, axis=1)
        ambiguous = {int(i) for i in np.flatnonzero(srt[:, 1] - srt[:, 0] <= 1e-9 * scale)}
    notes = [
        f"ambiguous assignment for reference component {i}; tie broken by index"
        for i in sorted(ambiguous)
    ]
    for msg in notes:
        warnings.warn(msg, AlignmentWarning, stacklevel=2)

    order = cols[np.argsort(rows)]
    signs = sign[np.arange(len(order)), order]
    return AlignedUnmixing(
        unmixing=target.unmixing[order] * signs[:, None],
        sources=target.sources[:, order] * signs,
        center=target.center,
        sort_keys=cost[np.arange(len(order)), order],
        mode="match",
        order=order,
        signs=signs,
        reference_env=reference_env,
        low_confidence=ambiguous,
        warnings=notes,
    )
