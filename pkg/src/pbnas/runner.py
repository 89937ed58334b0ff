"""Experiment execution: (variant x repeat) searches in a process pool,
plus the aggregations the CLI serializes (convergence statistics,
candidate-error histograms, gain curves).

Each run's seed is derived from (master_seed, variant name, run index),
so results are independent of scheduling and reproducible one run at a
time.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bench import Benchmark, load_tabular, synthetic_benchmark
from .config import ExperimentConfig, VariantSpec
from .gain import GainCurve, default_grid, gain_curve
from .predictor import PredictorConfig
from .search import (
    SearchConfig,
    SearchTrace,
    run_random_baseline,
    run_search,
    search_space_for,
)
from .space import EnumeratedSpace, random_architecture

__all__ = [
    "RunResult",
    "ExperimentResult",
    "run_seed",
    "build_benchmark",
    "run_experiment",
    "run_one",
    "convergence_stats",
    "histogram",
    "space_error_sample",
    "variant_gain_curve",
]


def run_seed(master_seed: int, variant: str, run_idx: int) -> int:
    """Stable per-run seed: hash of (master seed, variant name, run index)."""
    digest = hashlib.blake2b(
        int(master_seed).to_bytes(8, "little", signed=False)
        + variant.encode()
        + int(run_idx).to_bytes(4, "little"),
        digest_size=8,
    ).digest()
    return int.from_bytes(digest, "little")


@dataclass
class RunResult:
    """What one search run contributes to the aggregates (no arch objects,
    cheap to send across processes)."""

    variant: str
    run_idx: int
    iterations: np.ndarray
    n_evaluated: np.ndarray
    y_star_val: np.ndarray
    y_star_test: np.ndarray
    candidate_vals: np.ndarray          # pooled over iterations >= 1
    sprime_vals: np.ndarray | None      # pooled, None for random/full-space
    csv_rows: list[str]

    @classmethod
    def from_trace(cls, variant: str, run_idx: int, trace: SearchTrace):
        sp = [v for v in trace.sprime_vals if v is not None]
        return cls(
            variant=variant,
            run_idx=run_idx,
            iterations=np.array([r.iteration for r in trace.records]),
            n_evaluated=np.array([r.n_evaluated for r in trace.records]),
            y_star_val=np.array([r.y_star_val for r in trace.records]),
            y_star_test=np.array([r.y_star_test for r in trace.records]),
            candidate_vals=trace.candidate_val_errors(),
            sprime_vals=np.concatenate(sp) if sp else None,
            csv_rows=trace.csv_rows(f"{variant}/r{run_idx}"),
        )


def build_benchmark(cfg: ExperimentConfig) -> Benchmark:
    if cfg.benchmark_kind == "tabular":
        return load_tabular(cfg.benchmark_path)
    return synthetic_benchmark(cfg.space, cfg.benchmark_seed)


def _search_config(cfg: ExperimentConfig, variant: VariantSpec, seed: int,
                   input_width: int) -> SearchConfig:
    return SearchConfig(
        k=cfg.k,
        iterations=cfg.iterations,
        init_size=cfg.init_size,
        sampler=variant.sampler,
        predictor=PredictorConfig(
            input_width=input_width,
            num_gcn_layers=cfg.predictor_layers,
            hidden_width=cfg.predictor_width,
        ),
        train_hyper=cfg.train_hyper,
        seed=seed,
    )


def run_one(cfg: ExperimentConfig, bench: Benchmark, space: EnumeratedSpace,
            variant: VariantSpec, run_idx: int) -> RunResult:
    seed = run_seed(cfg.master_seed, variant.name, run_idx)
    scfg = _search_config(cfg, variant, seed, bench.spec.num_op_types)
    if variant.is_random:
        trace = run_random_baseline(scfg, bench, space)
    else:
        trace = run_search(scfg, bench, space, collect_sprime=True)
    return RunResult.from_trace(variant.name, run_idx, trace)


_WORKER: dict = {}


def _worker_init(cfg: ExperimentConfig):
    _WORKER["cfg"] = cfg
    _WORKER["bench"] = build_benchmark(cfg)
    _WORKER["space"] = search_space_for(_WORKER["bench"])


def _worker_run(task):
    variant_name, run_idx = task
    cfg = _WORKER["cfg"]
    variant = cfg.variant(variant_name)
    return run_one(cfg, _WORKER["bench"], _WORKER["space"], variant, run_idx)


@dataclass
class ExperimentResult:
    cfg: ExperimentConfig
    runs: list[RunResult]
    val_oracle: float
    test_oracle: float

    def by_variant(self, name: str) -> list[RunResult]:
        return [r for r in self.runs if r.variant == name]

    def pooled_candidates(self, name: str) -> np.ndarray:
        return np.concatenate([r.candidate_vals for r in self.by_variant(name)])

    def pooled_sprime(self, name: str) -> np.ndarray | None:
        parts = [r.sprime_vals for r in self.by_variant(name)]
        if any(p is None for p in parts):
            return None
        return np.concatenate(parts)

    def final_y_star_val(self, name: str) -> np.ndarray:
        return np.array([r.y_star_val[-1] for r in self.by_variant(name)])

    def final_y_star_test(self, name: str) -> np.ndarray:
        return np.array([r.y_star_test[-1] for r in self.by_variant(name)])


def run_experiment(cfg: ExperimentConfig, jobs: int | None = None,
                   variants: list[str] | None = None) -> ExperimentResult:
    """All (variant x repeat) runs; `variants` filters by name."""
    chosen = [v for v in cfg.variants if variants is None or v.name in variants]
    if variants is not None:
        missing = set(variants) - {v.name for v in chosen}
        if missing:
            raise KeyError(f"unknown variants: {sorted(missing)}")
    tasks = [(v.name, r) for v in chosen for r in range(cfg.repeats)]
    jobs = jobs if jobs is not None else (os.cpu_count() or 1)
    jobs = max(1, min(jobs, len(tasks)))
    if jobs == 1:
        bench = build_benchmark(cfg)
        space = search_space_for(bench)
        results = [
            run_one(cfg, bench, space, cfg.variant(name), r) for name, r in tasks
        ]
    else:
        with ProcessPoolExecutor(
            max_workers=jobs, initializer=_worker_init, initargs=(cfg,)
        ) as pool:
            results = list(pool.map(_worker_run, tasks, chunksize=1))
        bench = build_benchmark(cfg)
    order = {(v.name, r): i for i, (v, r) in
             enumerate((v, r) for v in chosen for r in range(cfg.repeats))}
    results.sort(key=lambda rr: order[(rr.variant, rr.run_idx)])
    val_oracle, test_oracle = bench.oracles()
    return ExperimentResult(cfg=cfg, runs=results, val_oracle=val_oracle,
                            test_oracle=test_oracle)


def convergence_stats(result: ExperimentResult, variant: str):
    """Per-iteration mean/std (ddof=1) of best-so-far val and test error."""
    runs = result.by_variant(variant)
    n_iter = min(len(r.y_star_val) for r in runs)
    yv = np.stack([r.y_star_val[:n_iter] for r in runs])
    yt = np.stack([r.y_star_test[:n_iter] for r in runs])
    ddof = 1 if len(runs) > 1 else 0
    return {
        "iteration": runs[0].iterations[:n_iter],
        "n_evaluated": runs[0].n_evaluated[:n_iter],
        "mean_val": yv.mean(axis=0),
        "std_val": yv.std(axis=0, ddof=ddof),
        "mean_test": yt.mean(axis=0),
        "std_test": yt.std(axis=0, ddof=ddof),
    }


def histogram(sample: np.ndarray, bins: int = 50):
    """Fixed-width bins over [0, 1]; densities integrate to one."""
    counts, edges = np.histogram(sample, bins=bins, range=(0.0, 1.0))
    width = edges[1] - edges[0]
    density = counts / max(counts.sum(), 1) / width
    return counts, edges, density


def space_error_sample(bench: Benchmark, max_enumeration: int = 10_000_000,
                       sample_size: int = 100_000, seed: int = 0) -> np.ndarray:
    """Validation errors of S: full enumeration when tractable, else a
    uniform sample of `sample_size` draws."""
    try:
        archs = bench.all_archs(guard=max_enumeration)
    except Exception:
        rng = np.random.default_rng(seed)
        archs = [random_architecture(bench.spec, rng) for _ in range(sample_size)]
    val, _ = bench.eval_means(archs)
    return val


def variant_gain_curve(result: ExperimentResult, variant: str,
                       sample_s: np.ndarray, grid=None) -> GainCurve:
    """Gain curve of one variant against the space sample.

    For the random and full-space variants S' is the space itself, so
    the sampler share of the gain is identically zero there.
    """
    if grid is None:
        grid = default_grid(sample_s, result.cfg.gain_grid_points)
    sample_c = result.pooled_candidates(variant)
    sample_sp = result.pooled_sprime(variant)
    if sample_sp is None:
        sample_sp = sample_s
    return gain_curve(sample_s, sample_c, grid, sample_sprime=sample_sp)
