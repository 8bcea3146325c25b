"""Pairwise shift statistics on aligned unmixing rows, and the shifted-node sets."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .alignment import AlignedUnmixing
from .scm_sim import LatentScm

__all__ = [
    "ShiftStatisticConfig",
    "ShiftReport",
    "stat_sign_min",
    "stat_abs_row",
    "stat_norm_diff",
    "STATISTICS",
    "default_alpha",
    "shifted_from_statistics",
    "detect_shifts",
    "exact_shift_oracle",
]


def _rows(u, v) -> tuple[np.ndarray, np.ndarray, float]:
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.shape != v.shape:
        raise ValueError(f"row lengths differ: {u.shape} vs {v.shape}")
    denom = np.abs(u).sum() + np.abs(v).sum()
    if denom == 0:
        raise ValueError("shift statistic undefined for two zero rows")
    return u, v, denom


def stat_sign_min(u, v) -> float:
    """``min(|u - v|_1, |u + v|_1) / (|u|_1 + |v|_1)``; zero iff ``v = +-u``."""
    u, v, denom = _rows(u, v)
    return float(min(np.abs(u - v).sum(), np.abs(u + v).sum()) / denom)


def stat_abs_row(u, v) -> float:
    """``| |u| - |v| |_1 / (|u|_1 + |v|_1)`` with element-wise absolute values."""
    u, v, denom = _rows(u, v)
    return float(np.abs(np.abs(u) - np.abs(v)).sum() / denom)


def stat_norm_diff(u, v) -> float:
    """``| |u|_1 - |v|_1 | / (|u|_1 + |v|_1)``. Blind to permuted supports."""
    u, v, denom = _rows(u, v)
    return float(abs(np.abs(u).sum() - np.abs(v).sum()) / denom)


STATISTICS: dict[str, Callable[[Any, Any], float]] = {
    "sign_min": stat_sign_min,
    "abs_row": stat_abs_row,
    "norm_diff": stat_norm_diff,
}


def _variant_name(name: str) -> str:
    key = name.replace("-", "_").lower()
    if key not in STATISTICS:
        raise ValueError(f"unknown statistic {name!r}; choose from {sorted(STATISTICS)}")
    return key


def shifted_from_statistics(L, alpha: float) -> set[int]:
    """Indices whose statistic strictly exceeds ``alpha``."""
    return {int(i) for i in np.flatnonzero(np.asarray(L, dtype=float) > alpha)}


def default_alpha(d: int) -> float:
    return 0.2 if d <= 10 else 0.5


@dataclass(frozen=True)
class ShiftStatisticConfig:
    variant: str = "abs_row"
    alpha: float | None = None  # None: 0.2 for d <= 10, else 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", _variant_name(self.variant))
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    def resolve_alpha(self, d: int) -> float:
        return default_alpha(d) if self.alpha is None else float(self.alpha)


@dataclass
class ShiftReport:
    """Per-pair statistics and shifted sets plus their union.

    Node indices are 0-based positions in the aligned component order.
    """

    d: int
    K: int
    env_ids: list[Any]
    variant: str
    alpha: float
    pairwise: dict[tuple[Any, Any], dict[str, Any]]
    union: set[int]
    low_confidence: set[int] = field(default_factory=set)
    warnings: list[str] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)

    def L(self, k, kp) -> np.ndarray:
        if (k, kp) in self.pairwise:
            return np.asarray(self.pairwise[(k, kp)]["L"])
        return np.asarray(self.pairwise[(kp, k)]["L"])

    def shifted(self, k, kp) -> set[int]:
        key = (k, kp) if (k, kp) in self.pairwise else (kp, k)
        return set(self.pairwise[key]["shifted"])

    def to_dict(self) -> dict[str, Any]:
        return {
            "d": self.d,
            "K": self.K,
            "env_ids": [str(e) for e in self.env_ids],
            "config": {"stat": self.variant, "alpha": self.alpha},
            "pairs": [
                {
                    "k": str(k),
                    "k_prime": str(kp),
                    "L": [float(x) for x in v["L"]],
                    "shifted": sorted(int(i) for i in v["shifted"]),
                }
                for (k, kp), v in self.pairwise.items()
            ],
            "shifted_union": sorted(int(i) for i in self.union),
            "low_confidence": sorted(int(i) for i in self.low_confidence),
            "warnings": list(self.warnings),
            **self.extra,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), indent=kwargs.pop("indent", 2), **kwargs)


def detect_shifts(
    aligned: Sequence[AlignedUnmixing],
    config: ShiftStatisticConfig | None = None,
    env_ids: Sequence[Any] | None = None,
) -> ShiftReport:
    """Flag node ``i`` between ``k`` and ``k'`` when ``L_i^{k,k'} > alpha``."""
    config = config or ShiftStatisticConfig()
    K = len(aligned)
    if K < 2:
        raise ValueError(f"need at least 2 environments, got {K}")
    env_ids = list(range(K)) if env_ids is None else list(env_ids)
    if len(env_ids) != K:
        raise ValueError("env_ids length must match the number of environments")
    dims = [a.unmixing.shape for a in aligned]
    if len({s[0] for s in dims}) != 1 or len({s[1] for s in dims}) != 1:
        listing = ", ".join(f"{e}: d={s[0]}, p={s[1]}" for e, s in zip(env_ids, dims))
        raise ValueError(f"aligned unmixings disagree in shape ({listing})")
    d = dims[0][0]
    alpha = config.resolve_alpha(d)
    stat = STATISTICS[config.variant]

    pairwise: dict[tuple[Any, Any], dict[str, Any]] = {}
    union: set[int] = set()
    for a, b in itertools.combinations(range(K), 2):
        Ma, Mb = aligned[a].unmixing, aligned[b].unmixing
        L = np.array([stat(Ma[i], Mb[i]) for i in range(d)])
        shifted = shifted_from_statistics(L, alpha)
        pairwise[(env_ids[a], env_ids[b])] = {"L": L, "shifted": shifted}
        union |= shifted

    low = set().union(*(a.low_confidence for a in aligned))
    notes = [f"env {e}: {w}" for e, a in zip(env_ids, aligned) for w in a.warnings]
    return ShiftReport(d, K, env_ids, config.variant, alpha, pairwise, union, low, notes)


def exact_shift_oracle(env_k: LatentScm, env_kp: LatentScm) -> set[int]:
    """Ground-truth shifted nodes: rows where ``B = Omega^{-1/2}(I - A)`` differ.

    Compared through ``A`` and ``Omega`` directly, which is equivalent and
    free of rounding.
    """
    if env_k.d != env_kp.d:
        raise ValueError(f"SCMs differ in size: {env_k.d} vs {env_kp.d}")
    changed = np.any(env_k.adjacency != env_kp.adjacency, axis=1) | (env_k.omega != env_kp.omega)
    return {int(i) for i in np.flatnonzero(changed)}
