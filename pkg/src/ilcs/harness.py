"""End-to-end shift detection and seeded synthetic benchmarks."""
from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ._rng import derive_seed
from .alignment import (
    AlignedUnmixing,
    AlignmentWarning,
    TestFunction,
    align_by_matching,
    sort_by_psi,
)
from .ica_core import IcaResult, estimate_latent_dim, run_fastica
from .scm_sim import EnvironmentDataset, simulate_environments
from .shift_detect import ShiftReport, ShiftStatisticConfig, detect_shifts, exact_shift_oracle

log = logging.getLogger(__name__)

EMPTY_PREDICTION_PRECISION = 1.0


@dataclass
class IcaOptions:
    tol: float = 1e-6
    max_iter: int = 500
    restarts: int = 3


@dataclass
class DetectConfig:
    stat: str = "abs_row"
    alpha: float | None = None
    align: str = "psi"  # "psi" or "match"
    psi_threshold: float = 1.0
    reference: int = 0  # environment index used as the matching reference
    rank_threshold: float = 1e-6
    d_override: int | None = None
    seed: int = 0
    ica: IcaOptions = field(default_factory=IcaOptions)

    def __post_init__(self) -> None:
        if isinstance(self.ica, dict):
            self.ica = IcaOptions(**self.ica)
        if self.align not in ("psi", "match"):
            raise ValueError(f"align must be 'psi' or 'match', got {self.align!r}")
        ShiftStatisticConfig(self.stat, self.alpha)  # validates


@dataclass
class SimulateConfig:
    graph_family: list[str] = field(default_factory=lambda: ["ER"])
    m: list[float] = field(default_factory=lambda: [2])
    d: list[int] = field(default_factory=lambda: [5])
    p: list[int] | None = None  # None: p = 2d
    K: int = 2
    n: list[int] = field(default_factory=lambda: [100_000])
    shift_fraction: float = 0.15
    shapes: list[float] | None = None
    identity_mixing: bool = False
    full_row: bool = False
    noise_convention: str = "std"
    seeds: list[int] = field(default_factory=lambda: list(range(10)))

    def __post_init__(self) -> None:
        for name in ("graph_family", "m", "d", "p", "n", "seeds"):
            value = getattr(self, name)
            if value is not None and not isinstance(value, (list, tuple)):
                setattr(self, name, [value])
        if self.K < 2:
            raise ValueError("need at least 2 environments")
        if not self.seeds:
            raise ValueError("need at least one seed")


@dataclass
class BenchConfig:
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    workers: int = 1

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "BenchConfig":
        sim = dict(raw.get("simulate", {}))
        if "repetitions" in sim:
            reps = int(sim.pop("repetitions"))
            if reps < 1:
                raise ValueError("repetitions must be >= 1")
            start = int(sim.pop("base_seed", 0))
            sim.setdefault("seeds", list(range(start, start + reps)))
        det = dict(raw.get("detect", {}))
        if "ica" in raw:
            det["ica"] = raw["ica"]
        if isinstance(det.get("stat"), str):
            det["stat"] = det["stat"].replace("-", "_")
        workers = int(raw.get("bench", {}).get("workers", raw.get("workers", 1)))
        return cls(SimulateConfig(**sim), DetectConfig(**det), workers)

    def to_dict(self) -> dict[str, Any]:
        return {
            "simulate": dataclasses.asdict(self.simulate),
            "detect": dataclasses.asdict(self.detect),
            "bench": {"workers": self.workers},
        }


def load_config(path: str | Path) -> BenchConfig:
    """Read a TOML or JSON run config; missing fields take the defaults."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        raw = tomllib.loads(text)
    else:
        raw = json.loads(text)
    return BenchConfig.from_dict(raw)


# --- pipeline ---------------------------------------------------------------


def _as_dataset(x, k: int) -> EnvironmentDataset:
    if isinstance(x, EnvironmentDataset):
        return x
    return EnvironmentDataset(np.asarray(x, dtype=float), env_id=k)


def _identity_alignment(res: IcaResult, env_id: Any) -> AlignedUnmixing:
    d = res.d
    return AlignedUnmixing(
        unmixing=res.unmixing,
        sources=res.sources,
        center=res.center,
        sort_keys=np.zeros(d),
        mode="match",
        order=np.arange(d),
        signs=np.ones(d),
        reference_env=env_id,
    )


def fit_environments(
    datasets: Sequence[EnvironmentDataset | np.ndarray], config: DetectConfig | None = None
) -> tuple[list[AlignedUnmixing], list[IcaResult], dict[str, Any]]:
    """Rank estimation, ICA and alignment for every environment."""
    config = config or DetectConfig()
    envs = [_as_dataset(x, k) for k, x in enumerate(datasets)]
    if len(envs) < 2:
        raise ValueError(f"need at least 2 environments, got {len(envs)}")
    widths = {e.p for e in envs}
    if len(widths) != 1:
        listing = ", ".join(f"{e.env_id}: p={e.p}" for e in envs)
        raise ValueError(f"environments disagree in column count ({listing})")

    notes: list[str] = []
    ranks = [estimate_latent_dim(e, config.rank_threshold).d_hat for e in envs]
    d_est = max(ranks)
    d = d_est
    if config.d_override is not None:
        d = int(config.d_override)
        if d != d_est:
            notes.append(f"d_override={d} differs from the estimated covariance rank {d_est}")
    if d < 1:
        raise ValueError("estimated latent dimension is 0")

    results = []
    for k, env in enumerate(envs):
        res = run_fastica(
            env,
            d,
            tol=config.ica.tol,
            max_iter=config.ica.max_iter,
            restarts=config.ica.restarts,
            rng_seed=derive_seed(config.seed, "ica", k),
        )
        if not res.converged:
            notes.append(f"env {env.env_id}: FastICA did not converge in {config.ica.max_iter} iterations")
        results.append(res)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AlignmentWarning)
        if config.align == "psi":
            psi = TestFunction(threshold=config.psi_threshold)
            aligned = [sort_by_psi(r, psi) for r in results]
        else:
            ref_idx = config.reference
            if not 0 <= ref_idx < len(envs):
                raise ValueError(f"reference index {ref_idx} out of range")
            ref = _identity_alignment(results[ref_idx], envs[ref_idx].env_id)
            aligned = [
                ref if k == ref_idx
                else align_by_matching(ref, r, reference_env=envs[ref_idx].env_id)
                for k, r in enumerate(results)
            ]
    meta = {
        "d": d,
        "d_estimated": d_est,
        "ranks": ranks,
        "env_ids": [e.env_id for e in envs],
        "warnings": notes,
    }
    return aligned, results, meta


def run_pipeline(
    datasets: Sequence[EnvironmentDataset | np.ndarray],
    config: DetectConfig | None = None,
    *,
    dump_ica: str | Path | None = None,
) -> ShiftReport:
    """Covariance rank, per-environment ICA, alignment, then pairwise shift tests."""
    config = config or DetectConfig()
    aligned, results, meta = fit_environments(datasets, config)
    report = detect_shifts(
        aligned, ShiftStatisticConfig(config.stat, config.alpha), env_ids=meta["env_ids"]
    )
    report.warnings = meta["warnings"] + report.warnings
    report.extra.update(
        d_estimated=meta["d_estimated"],
        ranks=meta["ranks"],
        align=config.align,
        ica=[
            {"env": str(e), "converged": r.converged, "iterations": r.iterations}
            for e, r in zip(meta["env_ids"], results)
        ],
    )
    if dump_ica is not None:
        _dump_ica(dump_ica, meta["env_ids"], results)
    return report


def _dump_ica(out_dir: str | Path, env_ids, results: Sequence[IcaResult]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for env, r in zip(env_ids, results):
        np.savetxt(out / f"unmixing_{env}.csv", r.unmixing, delimiter=",", fmt="%.17g")
        np.savetxt(out / f"sources_{env}.csv", r.sources, delimiter=",", fmt="%.17g")


# --- scoring ----------------------------------------------------------------


def score_sets(predicted, truth) -> dict[str, float]:
    """Set precision, recall and F1.

    Empty prediction has precision 1 (no false positives); empty truth has
    recall 1. F1 is 0 when both precision and recall are 0.
    """
    predicted, truth = set(predicted), set(truth)
    tp = len(predicted & truth)
    precision = tp / len(predicted) if predicted else EMPTY_PREDICTION_PRECISION
    recall = tp / len(truth) if truth else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


# --- benchmark --------------------------------------------------------------


@dataclass
class BenchResult:
    runs: list[dict[str, Any]]
    aggregates: list[dict[str, Any]]
    curve: list[dict[str, Any]]
    failed: int = 0
    config: dict[str, Any] = field(default_factory=dict)

    def metric_rows(self) -> list[dict[str, Any]]:
        """Per-run rows without timing fields (comparable across reruns)."""
        return [{k: v for k, v in r.items() if k != "wall_time_s"} for r in self.runs]


def _grid(sim: SimulateConfig) -> list[dict[str, Any]]:
    cells = []
    for family, m, d, n in itertools.product(sim.graph_family, sim.m, sim.d, sim.n):
        for p in sim.p or [d if sim.identity_mixing else 2 * d]:
            for seed in sim.seeds:
                cells.append({"graph_family": family, "m": m, "d": d, "p": p, "n": n, "seed": seed})
    return cells


def run_single(cell: dict[str, Any], sim: SimulateConfig, det: DetectConfig) -> dict[str, Any]:
    """Simulate one grid cell, detect, and score the union against the oracle union."""
    row = dict(cell)
    try:
        run = simulate_environments(
            cell["d"],
            sim.K,
            cell["n"],
            family=cell["graph_family"],
            m=cell["m"],
            p=cell["p"],
            shift_fraction=sim.shift_fraction,
            shapes=sim.shapes,
            identity_mixing=sim.identity_mixing,
            full_row=sim.full_row,
            noise_convention=sim.noise_convention,
            seed=cell["seed"],
        )
        det_run = dataclasses.replace(det, seed=derive_seed(cell["seed"], "detect"))
        t0 = time.perf_counter()
        report = run_pipeline(run.datasets, det_run)
        wall = time.perf_counter() - t0
    except Exception as exc:  # recorded, excluded from averages
        log.warning("run %s failed: %s", cell, exc)
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        return row

    scms = run.scms
    truth: set[int] = set()
    pair_scores = []
    for (a, b) in itertools.combinations(range(sim.K), 2):
        t = exact_shift_oracle(scms[a], scms[b])
        truth |= t
        s = score_sets(report.shifted(a, b), t)
        pair_scores.append({"k": a, "k_prime": b, "truth": sorted(t), **s})
    row.update(
        status="ok",
        K=sim.K,
        alpha=report.alpha,
        stat=report.variant,
        truth=sorted(truth),
        predicted=sorted(report.union),
        **score_sets(report.union, truth),
        pairs=pair_scores,
        wall_time_s=wall,
    )
    return row


def _sort_key(row: dict[str, Any]):
    return (row["graph_family"], row["m"], row["d"], row["p"], row["n"], row["seed"])


def _aggregate(runs: list[dict[str, Any]]) -> tuple[list[dict], list[dict]]:
    groups: dict[tuple, list[dict]] = {}
    for r in runs:
        key = (r["graph_family"], r["m"], r["d"], r["p"], r["n"])
        groups.setdefault(key, []).append(r)
    aggregates, curve = [], []
    for key in sorted(groups):
        rows = groups[key]
        ok = [r for r in rows if r["status"] == "ok"]
        family, m, d, p, n = key
        agg = {"graph_family": family, "m": m, "d": d, "p": p, "n": n, "runs": len(ok), "failed": len(rows) - len(ok)}
        for metric in ("precision", "recall", "f1", "wall_time_s"):
            vals = np.array([r[metric] for r in ok], dtype=float)
            agg[f"mean_{metric}"] = float(vals.mean()) if len(vals) else float("nan")
            agg[f"std_{metric}"] = float(vals.std()) if len(vals) else float("nan")
        aggregates.append(agg)
        curve.append(
            {"n": n, "p": p, "d": d, "family": family, "m": m, "mean_f1": agg["mean_f1"], "std_f1": agg["std_f1"]}
        )
    return aggregates, curve


def run_benchmark(config: BenchConfig) -> BenchResult:
    """Run every (family, m, d, p, n, seed) cell and average the metrics over seeds."""
    cells = _grid(config.simulate)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            runs = list(pool.map(run_single, cells, itertools.repeat(config.simulate), itertools.repeat(config.detect)))
    else:
        runs = [run_single(c, config.simulate, config.detect) for c in cells]
    runs.sort(key=_sort_key)
    aggregates, curve = _aggregate(runs)
    failed = sum(r["status"] != "ok" for r in runs)
    return BenchResult(runs, aggregates, curve, failed, config.to_dict())


def write_benchmark(result: BenchResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": result.config,
        "scoring": "union of pairwise shifted sets vs union of oracle sets",
        "empty_prediction_precision": EMPTY_PREDICTION_PRECISION,
        "failed_runs": result.failed,
    }
    (out / "bench.json").write_text(
        json.dumps({**meta, "aggregates": result.aggregates, "runs": result.runs}, indent=2, default=_jsonable)
    )
    flat = ["graph_family", "m", "d", "p", "n", "seed", "status", "precision", "recall", "f1", "wall_time_s"]
    _write_csv(out / "runs.csv", flat, result.runs)
    if result.aggregates:
        _write_csv(out / "aggregates.csv", list(result.aggregates[0]), result.aggregates)
    _write_csv(out / "curve.csv", ["n", "p", "d", "family", "m", "mean_f1", "std_f1"], result.curve)
    return out


def _write_csv(path: Path, fields: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
