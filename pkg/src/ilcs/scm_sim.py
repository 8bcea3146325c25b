"""Multi-environment linear SCM simulator.

Latents follow ``Z = A Z + Omega^{1/2} eps`` with ``A[i, j] != 0`` iff
``j -> i``; observations are ``X = G Z`` with a mixing ``G`` shared by all
environments. Environments differ from a base SCM by general interventions
(re-weighted parents, new noise scale, added/removed/reversed edges).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import networkx as nx
import numpy as np
from scipy import special, stats

from ._rng import derive_seed, make_rng

__all__ = [
    "DagSkeleton",
    "LatentScm",
    "NoiseSpec",
    "MixingMap",
    "EnvironmentSpec",
    "EnvironmentDataset",
    "SimulatedRun",
    "topological_order",
    "generate_dag",
    "sample_scm_params",
    "apply_general_intervention",
    "default_shapes",
    "sample_noise",
    "generate_mixing",
    "simulate_environment",
    "simulate_environments",
]

WEIGHT_RANGE = (0.25, 1.0)
OMEGA_RANGE = (2.0, 4.0)
SHIFT_RANGE = (6.0, 8.0)
MIXING_BOUND = 0.25
NOISE_CONVENTIONS = ("std", "variance")


def _to_variance(draw: np.ndarray | float, convention: str):
    # "std": the sampled Omega entry is the noise scale, stored variance is its square
    if convention == "std":
        return np.square(draw)
    if convention == "variance":
        return draw
    raise ValueError(f"noise_convention must be one of {NOISE_CONVENTIONS}, got {convention!r}")


class CycleError(ValueError):
    """Raised when a structural edit would make the latent graph cyclic."""


def topological_order(adjacency: np.ndarray) -> np.ndarray:
    """Kahn ordering of the DAG encoded by ``adjacency[child, parent]``.

    Raises ``CycleError`` naming the nodes left on a cycle.
    """
    mask = np.asarray(adjacency) != 0
    d = mask.shape[0]
    indeg = mask.sum(axis=1)
    ready = sorted(int(i) for i in np.flatnonzero(indeg == 0))
    order: list[int] = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        for child in np.flatnonzero(mask[:, v]):
            indeg[child] -= 1
            if indeg[child] == 0:
                ready.append(int(child))
        ready.sort()
    if len(order) != d:
        stuck = sorted(set(range(d)) - set(order))
        raise CycleError(f"latent graph is cyclic; nodes on or behind a cycle: {stuck}")
    return np.asarray(order, dtype=int)


@dataclass(frozen=True)
class DagSkeleton:
    mask: np.ndarray  # bool, mask[child, parent]
    order: np.ndarray
    family: str = "custom"
    m: float = 0.0

    @property
    def d(self) -> int:
        return self.mask.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class LatentScm:
    """One environment's latent linear SCM.

    ``adjacency[i, j]`` is the weight of edge ``j -> i``; ``omega`` holds the
    noise variances.
    """

    adjacency: np.ndarray
    omega: np.ndarray
    topological_order: np.ndarray | None = None

    def __post_init__(self) -> None:
        A = np.asarray(self.adjacency, dtype=float)
        omega = np.asarray(self.omega, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {A.shape}")
        if omega.shape != (A.shape[0],):
            raise ValueError("omega length must match adjacency size")
        if np.any(np.diag(A) != 0):
            raise ValueError("adjacency must have a zero diagonal")
        if not np.all(omega > 0):
            raise ValueError("noise variances must be strictly positive")
        if self.topological_order is None:
            order = topological_order(A)
        else:
            order = np.asarray(self.topological_order, dtype=int)
            if sorted(order.tolist()) != list(range(A.shape[0])):
                raise ValueError("topological_order must be a permutation of the nodes")
            pos = np.empty(len(order), dtype=int)
            pos[order] = np.arange(len(order))
            rows, cols = np.nonzero(A)
            if np.any(pos[cols] >= pos[rows]):
                raise ValueError("topological_order is inconsistent with the adjacency")
        object.__setattr__(self, "adjacency", A)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "topological_order", order)

    @property
    def d(self) -> int:
        return self.adjacency.shape[0]

    @property
    def B(self) -> np.ndarray:
        """``Omega^{-1/2} (I - A)``."""
        return (np.eye(self.d) - self.adjacency) / np.sqrt(self.omega)[:, None]

    def parents(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def to_dict(self) -> dict[str, Any]:
        return {
            "adjacency": self.adjacency.tolist(),
            "omega": self.omega.tolist(),
            "topological_order": self.topological_order.tolist(),
        }


def default_shapes(d: int) -> np.ndarray:
    # Descending shapes give ascending P(|eps| <= 1), so component i sorts to slot i.
    return np.linspace(1.8, 0.6, d) if d > 1 else np.array([1.8])


@dataclass(frozen=True)
class NoiseSpec:
    """Per-component generalized-normal shapes, standardized to unit variance."""

    shapes: np.ndarray
    standardized: bool = True

    def __post_init__(self) -> None:
        shapes = np.asarray(self.shapes, dtype=float).ravel()
        if np.any(~np.isfinite(shapes)) or np.any(shapes <= 0):
            raise ValueError(f"generalized-normal shapes must be positive, got {shapes}")
        if len(np.unique(shapes)) != len(shapes):
            raise ValueError("noise shapes must be pairwise distinct")
        if np.sum(shapes == 2.0) > 1:
            raise ValueError("at most one noise component may be Gaussian (shape 2)")
        if not self.standardized:
            raise ValueError("noise must be standardized")
        object.__setattr__(self, "shapes", shapes)

    @classmethod
    def default(cls, d: int) -> "NoiseSpec":
        return cls(default_shapes(d))

    @property
    def d(self) -> int:
        return len(self.shapes)

    def unit_scales(self) -> np.ndarray:
        b = self.shapes
        return np.sqrt(special.gamma(1.0 / b) / special.gamma(3.0 / b))


@dataclass(frozen=True)
class MixingMap:
    G: np.ndarray

    def __post_init__(self) -> None:
        G = np.asarray(self.G, dtype=float)
        if G.ndim != 2 or G.shape[0] < G.shape[1]:
            raise ValueError(f"mixing must be p x d with p >= d, got {G.shape}")
        if np.linalg.matrix_rank(G) != G.shape[1]:
            raise ValueError("mixing must have full column rank")
        object.__setattr__(self, "G", G)

    @property
    def p(self) -> int:
        return self.G.shape[0]

    @property
    def d(self) -> int:
        return self.G.shape[1]


@dataclass(frozen=True)
class EnvironmentSpec:
    base: LatentScm
    intervened: LatentScm
    shifted_nodes: frozenset[int]


@dataclass
class EnvironmentDataset:
    samples: np.ndarray
    env_id: Any = 0
    seed: int | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise ValueError("samples must be a non-empty n x p matrix")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def p(self) -> int:
        return self.samples.shape[1]


def _er_skeleton(d: int, m: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(d)
    mask = np.zeros((d, d), dtype=bool)
    if d < 2:
        return mask, order
    prob = 2.0 * m / (d - 1)
    if prob > 1.0 + 1e-12:
        raise ValueError(
            f"density infeasible: ER with d={d}, m={m} needs edge probability {prob:.3f} > 1"
        )
    iu, ju = np.triu_indices(d, k=1)
    keep = rng.random(len(iu)) < min(prob, 1.0)
    # earlier position -> later position
    mask[order[ju[keep]], order[iu[keep]]] = True
    return mask, order


def _sf_skeleton(d: int, m: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if float(m) != int(m):
        raise ValueError(f"scale-free graphs need an integer attachment count, got m={m}")
    m = int(m)
    mask = np.zeros((d, d), dtype=bool)
    relabel = rng.permutation(d)
    if d < 2 or m == 0:
        return mask, relabel
    if m >= d:
        edges = [(u, v) for u in range(d) for v in range(u + 1, d)]
    else:
        graph = nx.barabasi_albert_graph(d, m, seed=int(rng.integers(0, 2**31 - 1)))
        edges = [(min(u, v), max(u, v)) for u, v in graph.edges()]
    for u, v in edges:
        mask[relabel[v], relabel[u]] = True
    return mask, relabel


def generate_dag(d: int, family: str = "ER", m: float = 2, rng_seed: int = 0) -> DagSkeleton:
    """Random DAG with about ``m * d`` edges.

    ER includes every order-respecting pair with probability ``2m/(d-1)``;
    SF grows a Barabasi-Albert graph and orients each edge from the earlier
    attached node to the later one.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if m < 0:
        raise ValueError("m must be >= 0")
    rng = make_rng(rng_seed, "dag", family.upper())
    family = family.upper()
    if family == "ER":
        mask, order = _er_skeleton(d, m, rng)
    elif family == "SF":
        mask, order = _sf_skeleton(d, m, rng)
    else:
        raise ValueError(f"unknown graph family {family!r}; expected 'ER' or 'SF'")
    return DagSkeleton(mask=mask, order=np.asarray(order, dtype=int), family=family, m=m)


def _signed_uniform(rng: np.random.Generator, size: int, lo: float, hi: float) -> np.ndarray:
    return rng.uniform(lo, hi, size) * rng.choice([-1.0, 1.0], size)


def sample_scm_params(
    skeleton: DagSkeleton,
    rng_seed: int = 0,
    *,
    weight_range: tuple[float, float] = WEIGHT_RANGE,
    omega_range: tuple[float, float] = OMEGA_RANGE,
    noise_convention: str = "std",
) -> LatentScm:
    """Edge weights from Unif +-[0.25, 1], Omega entries from Unif[2, 4].

    With ``noise_convention="std"`` the Omega draw is the noise standard
    deviation (``omega`` stores its square); with ``"variance"`` it is the
    variance itself.
    """
    rng = make_rng(rng_seed, "scm-params")
    d = skeleton.d
    A = np.zeros((d, d))
    rows, cols = np.nonzero(skeleton.mask)
    A[rows, cols] = _signed_uniform(rng, len(rows), *weight_range)
    omega = _to_variance(rng.uniform(*omega_range, d), noise_convention)
    return LatentScm(A, omega, skeleton.order)


def _normalize_edit(edit: Any) -> tuple[str, int, int, float | None]:
    if isinstance(edit, dict):
        return (
            str(edit["op"]).lower(),
            int(edit["src"]),
            int(edit["dst"]),
            None if edit.get("weight") is None else float(edit["weight"]),
        )
    op, src, dst, *rest = edit
    weight = float(rest[0]) if rest and rest[0] is not None else None
    return str(op).lower(), int(src), int(dst), weight


def apply_general_intervention(
    base: LatentScm,
    shift_fraction: float,
    rng_seed: int = 0,
    *,
    full_row: bool = False,
    edits: Iterable[Any] | None = None,
    shift_range: tuple[float, float] = SHIFT_RANGE,
    noise_convention: str = "std",
) -> EnvironmentSpec:
    """Shift ``ceil(shift_fraction * d)`` random nodes of ``base``.

    Each selected node gets new parent weights and a new noise variance from
    ``Unif[6, 8]``. By default only the existing parents are re-weighted;
    ``full_row`` re-weights every topological predecessor. ``edits`` is a list
    of ``(op, src, dst[, weight])`` with ``op`` one of ``remove``, ``add``,
    ``reverse``, ``reweight`` acting on edge ``src -> dst``.
    ``noise_convention`` is read as in :func:`sample_scm_params`.

    The recorded shifted set is every node whose row of ``A`` or noise
    variance differs from ``base``.
    """
    if not 0.0 <= shift_fraction <= 1.0:
        raise ValueError(f"shift_fraction must lie in [0, 1], got {shift_fraction}")
    rng = make_rng(rng_seed, "intervention")
    d = base.d
    A = base.adjacency.copy()
    omega = base.omega.copy()

    # round() guards against 0.15 * 20 == 3.0000000000000004
    n_shift = math.ceil(round(shift_fraction * d, 9))
    if shift_fraction > 0:
        n_shift = min(max(n_shift, 1), d)
    targets = np.sort(rng.choice(d, size=n_shift, replace=False))
    pos = np.empty(d, dtype=int)
    pos[base.topological_order] = np.arange(d)
    for i in targets:
        if full_row:
            cols = base.topological_order[: pos[i]]
        else:
            cols = np.flatnonzero(A[i])
        A[i, cols] = rng.uniform(*shift_range, len(cols))
        omega[i] = _to_variance(rng.uniform(*shift_range), noise_convention)

    for edit in edits or ():
        op, src, dst, weight = _normalize_edit(edit)
        if not (0 <= src < d and 0 <= dst < d) or src == dst:
            raise ValueError(f"invalid edge {src}->{dst} for d={d}")
        if op == "remove":
            A[dst, src] = 0.0
        elif op in ("add", "reweight"):
            if op == "reweight" and A[dst, src] == 0:
                raise ValueError(f"cannot reweight missing edge {src}->{dst}")
            A[dst, src] = weight if weight is not None else rng.uniform(*shift_range)
        elif op == "reverse":
            if A[dst, src] == 0:
                raise ValueError(f"cannot reverse missing edge {src}->{dst}")
            old = A[dst, src]
            A[dst, src] = 0.0
            A[src, dst] = weight if weight is not None else old
        else:
            raise ValueError(f"unknown edit op {op!r}")

    try:
        order = topological_order(A)
    except CycleError as exc:
        raise CycleError(f"intervention produced a cycle: {exc}") from None
    intervened = LatentScm(A, omega, order)
    changed = np.any(A != base.adjacency, axis=1) | (omega != base.omega)
    return EnvironmentSpec(base, intervened, frozenset(int(i) for i in np.flatnonzero(changed)))


def sample_noise(spec: NoiseSpec, n: int, rng_seed: int = 0) -> np.ndarray:
    """``n x d`` matrix of independent, zero-mean, unit-variance generalized-normal noise."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(rng_seed, "noise")
    out = np.empty((n, spec.d))
    for i, (beta, scale) in enumerate(zip(spec.shapes, spec.unit_scales())):
        out[:, i] = stats.gennorm.rvs(beta, scale=scale, size=n, random_state=rng)
    return out


def generate_mixing(
    p: int, d: int, rng_seed: int = 0, *, identity: bool = False, max_tries: int = 100
) -> MixingMap:
    """Shared mixing with entries from Unif[-0.25, 0.25], or ``I`` when ``identity``."""
    if p < d:
        raise ValueError(f"need p >= d, got p={p}, d={d}")
    if identity:
        if p != d:
            raise ValueError("identity mixing requires p == d")
        return MixingMap(np.eye(d))
    rng = make_rng(rng_seed, "mixing")
    for _ in range(max_tries):
        G = rng.uniform(-MIXING_BOUND, MIXING_BOUND, (p, d))
        sv = np.linalg.svd(G, compute_uv=False)
        if sv[-1] > 1e-10 * sv[0]:
            return MixingMap(G)
    raise RuntimeError(f"could not draw a rank-{d} mixing in {max_tries} tries")


def latent_from_noise(scm: LatentScm, eps: np.ndarray) -> np.ndarray:
    """Solve ``B Z = eps`` row-wise by substitution along the topological order."""
    B = scm.B
    Z = np.zeros_like(eps, dtype=float)
    for i in scm.topological_order:
        if B[i, i] <= 0:
            raise RuntimeError(f"internal invariant violated: B[{i},{i}] = {B[i, i]}")
        parents = scm.parents(i)
        rhs = eps[:, i] - Z[:, parents] @ B[i, parents] if len(parents) else eps[:, i]
        Z[:, i] = rhs / B[i, i]
    return Z


def simulate_environment(
    spec: EnvironmentSpec,
    mixing: MixingMap,
    noise: NoiseSpec,
    n: int,
    rng_seed: int = 0,
    *,
    env_id: Any = 0,
) -> EnvironmentDataset:
    """Draw ``n`` observations ``X = G B^{-1} eps`` for one environment."""
    scm = spec.intervened
    if not (scm.d == mixing.d == noise.d):
        raise ValueError(f"dimension mismatch: scm d={scm.d}, mixing d={mixing.d}, noise d={noise.d}")
    eps = sample_noise(noise, n, rng_seed)
    X = latent_from_noise(scm, eps) @ mixing.G.T
    meta = {
        "env_id": env_id,
        "seed": rng_seed,
        "d": scm.d,
        "p": mixing.p,
        "n": n,
        "shifted_nodes": sorted(spec.shifted_nodes),
        "shapes": noise.shapes.tolist(),
    }
    return EnvironmentDataset(X, env_id=env_id, seed=rng_seed, metadata=meta)


@dataclass
class SimulatedRun:
    """``K`` environments sharing one mixing and one noise spec; env 0 is the base SCM."""

    base: LatentScm
    envs: list[EnvironmentSpec]
    mixing: MixingMap
    noise: NoiseSpec
    datasets: list[EnvironmentDataset]
    params: dict[str, Any]

    @property
    def scms(self) -> list[LatentScm]:
        return [e.intervened for e in self.envs]


def simulate_environments(
    d: int,
    K: int,
    n: int,
    *,
    family: str = "ER",
    m: float = 2,
    p: int | None = None,
    shift_fraction: float = 0.15,
    shapes: Sequence[float] | None = None,
    identity_mixing: bool = False,
    full_row: bool = False,
    noise_convention: str = "std",
    seed: int = 0,
) -> SimulatedRun:
    """Draw a base SCM, ``K - 1`` intervened copies, a shared mixing, and data for all ``K``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    p = d if identity_mixing and p is None else (2 * d if p is None else p)
    skeleton = generate_dag(d, family, m, rng_seed=seed)
    base = sample_scm_params(skeleton, rng_seed=seed, noise_convention=noise_convention)
    noise = NoiseSpec(np.asarray(shapes, dtype=float)) if shapes is not None else NoiseSpec.default(d)
    if noise.d != d:
        raise ValueError(f"{noise.d} noise shapes given for d={d}")
    mixing = generate_mixing(p, d, rng_seed=seed, identity=identity_mixing)
    envs = [EnvironmentSpec(base, base, frozenset())]
    for k in range(1, K):
        envs.append(
            apply_general_intervention(
                base,
                shift_fraction,
                rng_seed=derive_seed(seed, "env", k),
                full_row=full_row,
                noise_convention=noise_convention,
            )
        )
    params = {
        "d": d,
        "p": p,
        "K": K,
        "n": n,
        "graph_family": skeleton.family,
        "m": m,
        "shift_fraction": shift_fraction,
        "identity_mixing": identity_mixing,
        "full_row": full_row,
        "noise_convention": noise_convention,
        "shapes": noise.shapes.tolist(),
        "seed": seed,
    }
    datasets = []
    for k, spec in enumerate(envs):
        ds = simulate_environment(spec, mixing, noise, n, derive_seed(seed, "data", k), env_id=k)
        ds.metadata.update(graph_family=skeleton.family, m=m)
        datasets.append(ds)
    return SimulatedRun(base, envs, mixing, noise, datasets, params)
