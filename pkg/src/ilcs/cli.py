"""``ilcs`` command line: simulate, detect, bench, label."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from . import __version__
from .alignment import AlignmentWarning, TestFunction, sort_by_psi
from .harness import (
    BenchConfig,
    DetectConfig,
    IcaOptions,
    load_config,
    run_benchmark,
    run_pipeline,
    write_benchmark,
)
from .ica_core import estimate_latent_dim, run_fastica
from .io import DataError, load_environment, write_environment
from .latent_label import null_component_probe, write_labeling
from .scm_sim import simulate_environments
from .shift_detect import exact_shift_oracle

log = logging.getLogger("ilcs")


def _add_data_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--columns", nargs="+", metavar="PATTERN", help="shell-style column patterns to keep")
    p.add_argument("--delimiter", default=",", help="field separator (use '\\t' for tab)")
    p.add_argument("--normalize", choices=["none", "minmax"], default="none")


def _add_model_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d-override", type=int, default=None, help="latent dimension instead of the covariance rank")
    p.add_argument("--rank-threshold", type=float, default=1e-6)
    p.add_argument("--psi-threshold", type=float, default=1.0, help="t in psi(y) = P(|y| <= t)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ica-tol", type=float, default=1e-6)
    p.add_argument("--ica-max-iter", type=int, default=500)
    p.add_argument("--ica-restarts", type=int, default=3)


def _delimiter(raw: str) -> str:
    return "\t" if raw in ("\\t", "tab") else raw


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ilcs", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write synthetic environments as CSV + JSON sidecars")
    p.add_argument("--config", type=Path, help="TOML/JSON config ([simulate] block)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("detect", help="detect shifted latent nodes across CSV environments")
    p.add_argument("--inputs", nargs="+", required=True, type=Path)
    p.add_argument("--alpha", type=float, default=None, help="default: 0.2 if d <= 10 else 0.5")
    p.add_argument("--stat", choices=["sign-min", "abs-row", "norm-diff"], default="abs-row")
    p.add_argument("--align", choices=["psi", "match"], default="psi")
    p.add_argument("--reference", type=int, default=0, help="reference environment index for --align match")
    p.add_argument("--split-by", help="split a single input into environments by this column")
    p.add_argument("--split-values", nargs="+", help="values of --split-by to use, one environment each")
    p.add_argument("--dump-ica", type=Path, help="write unmixing/sources CSVs here")
    p.add_argument("--out", type=Path, required=True, help="report JSON path")
    _add_data_opts(p)
    _add_model_opts(p)

    p = sub.add_parser("bench", help="seeded synthetic benchmark")
    p.add_argument("--config", type=Path, help="TOML/JSON config")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("label", help="null each source component and report observed-column footprints")
    p.add_argument("--reference", required=True, type=Path, help="reference environment CSV")
    p.add_argument("--component", default="all", help="0-based component index or 'all'")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--histograms", action="store_true", help="also write 50-bin before/after histogram CSVs")
    p.add_argument("--floor-factor", type=float, default=10.0)
    p.add_argument("--where", help="COLUMN=VALUE row filter")
    _add_data_opts(p)
    _add_model_opts(p)
    return parser


def _detect_config(args, **extra) -> DetectConfig:
    return DetectConfig(
        rank_threshold=args.rank_threshold,
        d_override=args.d_override,
        psi_threshold=args.psi_threshold,
        seed=args.seed,
        ica=IcaOptions(args.ica_tol, args.ica_max_iter, args.ica_restarts),
        **extra,
    )


def cmd_simulate(args) -> int:
    cfg = load_config(args.config) if args.config else BenchConfig()
    sim = cfg.simulate
    for family in sim.graph_family:
        for m in sim.m:
            for d in sim.d:
                for p in sim.p or [d if sim.identity_mixing else 2 * d]:
                    for n in sim.n:
                        for seed in sim.seeds:
                            run = simulate_environments(
                                d, sim.K, n, family=family, m=m, p=p,
                                shift_fraction=sim.shift_fraction, shapes=sim.shapes,
                                identity_mixing=sim.identity_mixing, full_row=sim.full_row,
                                noise_convention=sim.noise_convention, seed=seed,
                            )
                            out = args.out / f"{family}{m}_d{d}_p{p}_n{n}_seed{seed}"
                            for ds in run.datasets:
                                write_environment(ds, out)
                            truth = {
                                f"{a},{b}": sorted(exact_shift_oracle(run.scms[a], run.scms[b]))
                                for a in range(sim.K) for b in range(a + 1, sim.K)
                            }
                            (out / "truth.json").write_text(json.dumps({
                                "params": run.params,
                                "pairwise_shifted": truth,
                                "scms": [s.to_dict() for s in run.scms],
                                "mixing": run.mixing.G.tolist(),
                            }, indent=2))
                            print(out)
    return 0


def cmd_detect(args) -> int:
    delim = _delimiter(args.delimiter)
    normalize = None if args.normalize == "none" else args.normalize
    if args.split_by:
        if len(args.inputs) != 1 or not args.split_values or len(args.split_values) < 2:
            raise DataError("--split-by needs exactly one input and at least two --split-values")
        envs = [
            load_environment(args.inputs[0], env_id=f"{args.split_by}={v}", columns=args.columns,
                             delimiter=delim, normalize=normalize, where=(args.split_by, v))
            for v in args.split_values
        ]
    else:
        if len(args.inputs) < 2:
            raise DataError("need at least two --inputs (or --split-by on one input)")
        envs = [
            load_environment(path, env_id=f"{k}:{path.stem}", columns=args.columns,
                             delimiter=delim, normalize=normalize)
            for k, path in enumerate(args.inputs)
        ]
    config = _detect_config(
        args, stat=args.stat.replace("-", "_"), alpha=args.alpha, align=args.align, reference=args.reference
    )
    report = run_pipeline(envs, config, dump_ica=args.dump_ica)
    report.extra["inputs"] = [e.metadata for e in envs]
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(report.to_json(default=str))
    for w in report.warnings:
        log.warning(w)
    print(f"d={report.d} alpha={report.alpha} shifted={sorted(report.union)}")
    for (k, kp), v in report.pairwise.items():
        print(f"  {k} vs {kp}: L={[round(float(x), 4) for x in v['L']]} shifted={sorted(v['shifted'])}")
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config) if args.config else BenchConfig()
    if args.workers is not None:
        cfg.workers = args.workers
    result = run_benchmark(cfg)
    write_benchmark(result, args.out)
    for agg in result.aggregates:
        print(
            f"{agg['graph_family']}{agg['m']} d={agg['d']} p={agg['p']} n={agg['n']}: "
            f"P={agg['mean_precision']:.3f} R={agg['mean_recall']:.3f} F1={agg['mean_f1']:.3f} "
            f"({agg['runs']} runs, {agg['failed']} failed)"
        )
    return 0


def cmd_label(args) -> int:
    where = None
    if args.where:
        col, _, val = args.where.partition("=")
        where = (col, val)
    env = load_environment(
        args.reference, columns=args.columns, delimiter=_delimiter(args.delimiter),
        normalize=None if args.normalize == "none" else args.normalize, where=where,
    )
    d = args.d_override or estimate_latent_dim(env, args.rank_threshold).d_hat
    res = run_fastica(env, d, tol=args.ica_tol, max_iter=args.ica_max_iter,
                      restarts=args.ica_restarts, rng_seed=args.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AlignmentWarning)
        aligned = sort_by_psi(res, TestFunction(threshold=args.psi_threshold))
    aligned.reference_env = env.env_id
    comps = range(d) if args.component == "all" else [int(args.component)]
    names = env.metadata.get("columns")
    runs = [null_component_probe(aligned, j, floor_factor=args.floor_factor, column_names=names) for j in comps]
    path = write_labeling(aligned, runs, args.out, histograms=args.histograms)
    for r in runs:
        top = [names[c] if names else int(c) for c in r.top_columns[:10]]
        print(f"component {r.component_index}: top columns {top}")
    print(path)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"simulate": cmd_simulate, "detect": cmd_detect, "bench": cmd_bench, "label": cmd_label}
    try:
        return handlers[args.command](args)
    except (DataError, ValueError, FileNotFoundError) as exc:
        print(f"ilcs {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
