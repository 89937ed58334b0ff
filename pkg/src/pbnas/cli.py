"""Command-line harness.

Subcommands:
  bench-gen  enumerate a space, evaluate the synthetic oracle, write the
             tabular benchmark file
  search     run all (variant x repeat) searches; write per-run trace
             CSVs, a convergence CSV and a summary JSON
  hist       histogram of candidate validation errors per variant
  gain       sample-efficiency gain curves (with the sampler/predictor
             decomposition) per variant

Exit codes: 0 success, 2 configuration error, 3 data error. Every CSV
starts with a comment line carrying the tool version and config hash.
Per-phase wall-times in trace CSVs are measurements and are the one
thing about the outputs that is not reproducible bit-for-bit.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .bench import Benchmark, BenchmarkError, save_tabular
from .config import ConfigError, ExperimentConfig, load_config
from .gain import default_grid
from .runner import (
    build_benchmark,
    convergence_stats,
    histogram,
    run_experiment,
    space_error_sample,
    variant_gain_curve,
)
from .search import TRACE_CSV_HEADER, search_space_for
from .space import SpaceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _comment(cfg: ExperimentConfig) -> str:
    return f"# pbnas {__version__} config {cfg.config_hash}"


def _write_lines(path: Path, lines) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def _load(args) -> ExperimentConfig:
    return load_config(
        args.config,
        overrides={"master_seed": args.seed, "output_dir": args.out},
    )


def cmd_bench_gen(args) -> int:
    cfg = _load(args)
    if cfg.benchmark_kind != "synthetic":
        raise ConfigError("bench-gen needs a synthetic benchmark config")
    bench = build_benchmark(cfg)
    space = search_space_for(bench)
    records = [bench.record(arch) for arch in space.archs]
    table = Benchmark(cfg.space, records=records)
    out = Path(cfg.output_dir) / "benchmark.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_tabular(table, out)
    print(f"wrote {len(records)} records to {out}")
    return EXIT_OK


def _run(args):
    cfg = _load(args)
    variants = [args.variant] if args.variant else None
    result = run_experiment(cfg, jobs=args.jobs, variants=variants)
    return cfg, result


def cmd_search(args) -> int:
    cfg, result = _run(args)
    out = Path(cfg.output_dir)
    for run in result.runs:
        _write_lines(
            out / "traces" / f"trace_{run.variant}_r{run.run_idx}.csv",
            [_comment(cfg), TRACE_CSV_HEADER] + run.csv_rows,
        )
    lines = [_comment(cfg),
             "variant,iteration,n_evaluated,mean_y_star_val,std_y_star_val,"
             "mean_y_star_test,std_y_star_test"]
    summary_variants = {}
    ran = [v.name for v in cfg.variants if any(r.variant == v.name for r in result.runs)]
    for v in ran:
        stats = convergence_stats(result, v)
        for i in range(len(stats["iteration"])):
            lines.append(
                f"{v},{int(stats['iteration'][i])},{int(stats['n_evaluated'][i])},"
                f"{float(stats['mean_val'][i])!r},{float(stats['std_val'][i])!r},"
                f"{float(stats['mean_test'][i])!r},{float(stats['std_test'][i])!r}"
            )
    for v in ran:
        fv = result.final_y_star_val(v)
        ft = result.final_y_star_test(v)
        summary_variants[v] = {
            "runs": len(fv),
            "final_y_star_val_mean": float(fv.mean()),
            "final_y_star_val_std": float(fv.std(ddof=1) if len(fv) > 1 else 0.0),
            "final_y_star_test_mean": float(ft.mean()),
            "final_y_star_test_std": float(ft.std(ddof=1) if len(ft) > 1 else 0.0),
        }
    _write_lines(out / "convergence.csv", lines)
    summary = {
        "tool_version": __version__,
        "config_hash": cfg.config_hash,
        "val_oracle": result.val_oracle,
        "test_oracle": result.test_oracle,
        "variants": summary_variants,
    }
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(result.runs)} traces, convergence.csv and summary.json to {out}")
    return EXIT_OK


def cmd_hist(args) -> int:
    cfg, result = _run(args)
    out = Path(cfg.output_dir)
    lines = [_comment(cfg), "variant,bin_lo,bin_hi,count,density"]
    for v in [v.name for v in cfg.variants if args.variant in (None, v.name)]:
        counts, edges, density = histogram(
            result.pooled_candidates(v), bins=cfg.hist_bins
        )
        for i, c in enumerate(counts):
            lines.append(
                f"{v},{float(edges[i])!r},{float(edges[i + 1])!r},"
                f"{int(c)},{float(density[i])!r}"
            )
    _write_lines(out / "hist.csv", lines)
    print(f"wrote hist.csv to {out}")
    return EXIT_OK


def cmd_gain(args) -> int:
    cfg, result = _run(args)
    out = Path(cfg.output_dir)
    bench = build_benchmark(cfg)
    sample_s = space_error_sample(
        bench, sample_size=cfg.gain_space_sample, seed=cfg.master_seed
    )
    grid = default_grid(sample_s, cfg.gain_grid_points)
    for v in [v.name for v in cfg.variants if args.variant in (None, v.name)]:
        curve = variant_gain_curve(result, v, sample_s, grid)
        _write_lines(out / f"gain_{v}.csv", [_comment(cfg)] + curve.csv_lines())
    print(f"wrote gain curves to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pbnas",
        description="Predictor-based architecture search experiments "
                    "on tabular benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("bench-gen", cmd_bench_gen),
        ("search", cmd_search),
        ("hist", cmd_hist),
        ("gain", cmd_gain),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config (YAML)")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--jobs", type=int, default=None, help="parallel workers")
        p.add_argument("--variant", default=None, help="only this variant")
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BenchmarkError, SpaceError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
