"""The predictor-based search loop.

Each iteration retrains the ranking predictor from scratch on every
architecture evaluated so far, builds the candidate pool S' with the
configured sampler, scores it, picks the K highest-scoring unevaluated
architectures, queries their true validation errors and extends the
evaluated set. A uniform random baseline shares the trace format.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .bench import Benchmark
from .predictor import (
    NoRankingSignalError,
    PredictorConfig,
    TrainHyper,
    init_params,
    score_matrices,
    score_set,
    train,
)
from .samplers import (
    SamplerConfig,
    evolutionary_sample,
    ml_sample,
    uniform_sample,
    _uniform_draws,
)
from .space import Architecture, EnumeratedSpace, arch_key

__all__ = [
    "SearchConfig",
    "IterationRecord",
    "SearchTrace",
    "pick_best_K",
    "run_search",
    "run_random_baseline",
    "search_space_for",
    "TRACE_CSV_HEADER",
]

TRACE_CSV_HEADER = (
    "run_id,iteration,n_evaluated,y_star_val,y_star_test,"
    "phase_seconds_train,phase_seconds_sample,phase_seconds_score"
)


@dataclass(frozen=True)
class SearchConfig:
    k: int
    iterations: int
    init_size: int
    sampler: SamplerConfig
    predictor: PredictorConfig
    train_hyper: TrainHyper
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.iterations < 1 or self.init_size < 2:
            raise ValueError(
                f"need k >= 1, iterations >= 1, init_size >= 2, got {self}"
            )


@dataclass
class IterationRecord:
    iteration: int
    candidate_keys: list[bytes]
    candidate_vals: list[float]
    y_star_val: float
    y_star_test: float
    n_evaluated: int
    warning: bool = False
    seconds_train: float = 0.0
    seconds_sample: float = 0.0
    seconds_score: float = 0.0


@dataclass
class SearchTrace:
    """Per-iteration history of one run; iteration 0 is the seed set."""

    records: list[IterationRecord] = field(default_factory=list)
    evaluated: list[tuple[Architecture, float]] = field(default_factory=list)
    sprime_vals: list[np.ndarray | None] = field(default_factory=list)

    @property
    def final_y_star_val(self) -> float:
        return self.records[-1].y_star_val

    @property
    def final_y_star_test(self) -> float:
        return self.records[-1].y_star_test

    def candidate_val_errors(self, skip_seed: bool = True) -> np.ndarray:
        """All candidate validation errors, pooled over iterations."""
        recs = self.records[1:] if skip_seed else self.records
        vals = [v for rec in recs for v in rec.candidate_vals]
        return np.array(vals)

    def csv_rows(self, run_id: str) -> list[str]:
        rows = []
        for rec in self.records:
            rows.append(
                f"{run_id},{rec.iteration},{rec.n_evaluated},"
                f"{rec.y_star_val!r},{rec.y_star_test!r},"
                f"{rec.seconds_train:.6f},{rec.seconds_sample:.6f},"
                f"{rec.seconds_score:.6f}"
            )
        return rows


def pick_best_K(archs, scores, k, evaluated):
    """The K highest-scoring architectures not yet evaluated.

    Ties break by ascending architecture key; the result is in
    descending score order. Returns (candidates, warning): warning is
    set when fewer than K architectures were available.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(archs) != len(scores):
        raise ValueError("archs and scores length mismatch")
    pool = [
        (arch, float(s), arch_key(arch))
        for arch, s in zip(archs, scores)
        if arch_key(arch) not in evaluated
    ]
    pool.sort(key=lambda t: (-t[1], t[2]))
    chosen = [arch for arch, _, _ in pool[:k]]
    return chosen, len(chosen) < k


def _pick_best_masked(space: EnumeratedSpace, scores, k, evaluated_mask):
    """pick_best_K against a full-space score vector with a boolean mask."""
    avail = np.flatnonzero(~evaluated_mask)
    if len(avail) <= k:
        pool = avail
        warning = len(avail) < k
    else:
        s = scores[avail]
        thresh = np.partition(s, len(s) - k)[len(s) - k]
        pool = avail[s >= thresh]
        warning = False
    ranked = sorted(pool, key=lambda i: (-scores[i], space.keys[i]))
    return [space.archs[i] for i in ranked[:k]], warning


def search_space_for(bench: Benchmark, guard: int = 10_000_000) -> EnumeratedSpace:
    """The search space a benchmark defines: its records, or the
    enumeration of its spec for synthetic mode."""
    if bench.mode == "tabular":
        return EnumeratedSpace(bench.spec, bench.all_archs())
    return EnumeratedSpace.from_spec(bench.spec, guard=guard)


@dataclass
class _BestTracker:
    val: float = float("inf")
    test: float = float("nan")

    def update(self, bench, arch, val):
        if val < self.val:
            self.val = val
            self.test = bench.query_test(arch)


def _derive_seed(seed_seq: np.random.SeedSequence) -> int:
    return int(seed_seq.generate_state(2, dtype=np.uint32).view(np.uint64)[0])


def _evaluate(bench, candidates, evaluated, evaluated_keys, best, space=None,
              mask=None):
    vals = []
    for arch in candidates:
        val = bench.query_val(arch)
        vals.append(val)
        evaluated.append((arch, val))
        key = arch_key(arch)
        evaluated_keys.add(key)
        if mask is not None:
            mask[space.index_of(key)] = True
        best.update(bench, arch, val)
    return vals


def run_search(
    cfg: SearchConfig,
    bench: Benchmark,
    space: EnumeratedSpace | None = None,
    collect_sprime: bool = False,
    score_override=None,
) -> SearchTrace:
    """Run the predictor-based search; fully deterministic given cfg.seed.

    space defaults to the benchmark's own space. With the uniform
    sampler and n_prime=None the predictor scores the entire remaining
    space (the full-space baseline: the enumeration is cached once and
    evaluated architectures are masked out, never removed).
    collect_sprime additionally records the true val errors of every S'
    member (skipped in full-space mode, where S' is the space itself).
    score_override is a test hook: a callable mapping a list of
    architectures to scores, replacing the trained predictor.
    """
    if space is None:
        space = search_space_for(bench)
    full_space_mode = cfg.sampler.n_prime is None
    ss_init, ss_loop = np.random.SeedSequence(cfg.seed).spawn(2)
    init_rng = np.random.default_rng(ss_init)

    trace = SearchTrace()
    evaluated: list[tuple[Architecture, float]] = []
    evaluated_keys: set[bytes] = set()
    mask = np.zeros(len(space), dtype=bool) if full_space_mode else None
    best = _BestTracker()

    seed_archs = uniform_sample(space, cfg.init_size, set(), init_rng)
    vals = _evaluate(bench, seed_archs, evaluated, evaluated_keys, best,
                     space, mask)
    trace.records.append(
        IterationRecord(
            iteration=0,
            candidate_keys=[arch_key(a) for a in seed_archs],
            candidate_vals=vals,
            y_star_val=best.val,
            y_star_test=best.test,
            n_evaluated=len(evaluated),
        )
    )
    trace.sprime_vals.append(None)

    iter_seeds = ss_loop.spawn(cfg.iterations)
    for t in range(1, cfg.iterations + 1):
        ss_train, ss_sample = iter_seeds[t - 1].spawn(2)
        sample_rng = np.random.default_rng(ss_sample)
        errors = [v for _, v in evaluated]
        warning = False

        # -- train ----------------------------------------------------
        t0 = time.perf_counter()
        params = None
        if score_override is None:
            try:
                hyper = replace(cfg.train_hyper, seed=_derive_seed(ss_train))
                params = train(
                    init_params(cfg.predictor, np.random.default_rng(ss_train)),
                    cfg.predictor,
                    hyper,
                    evaluated,
                )
            except NoRankingSignalError:
                params = None  # degenerate seed set: uniform fallback below
        seconds_train = time.perf_counter() - t0

        # -- sample S' --------------------------------------------------
        t0 = time.perf_counter()
        sprime: list[Architecture] | None = None
        if params is None and score_override is None:
            candidates = _uniform_draws(
                space, min(cfg.k, len(space) - len(evaluated)),
                set(evaluated_keys), sample_rng,
            )
            warning = len(candidates) < cfg.k
            seconds_sample = time.perf_counter() - t0
            seconds_score = 0.0
        else:
            if full_space_mode:
                sprime = None  # score the cached space directly
            elif cfg.sampler.kind == "uniform":
                n_avail = len(space) - len(evaluated)
                n_eff = min(cfg.sampler.n_prime, n_avail)
                warning = n_eff < cfg.sampler.n_prime
                sprime = uniform_sample(space, n_eff, evaluated_keys, sample_rng)
            elif cfg.sampler.kind == "ml":
                sprime = ml_sample(
                    params, cfg.predictor, space, cfg.sampler,
                    evaluated_keys, sample_rng,
                )
            else:
                sprime = evolutionary_sample(
                    evaluated, cfg.sampler, space, evaluated_keys, sample_rng
                )
            seconds_sample = time.perf_counter() - t0

            # -- score and pick ----------------------------------------
            t0 = time.perf_counter()
            if full_space_mode:
                if score_override is not None:
                    scores = np.asarray(score_override(space.archs))
                else:
                    scores = score_matrices(params, space.ahat_stack, space.x_stack)
                candidates, warn2 = _pick_best_masked(space, scores, cfg.k, mask)
            else:
                if score_override is not None:
                    scores = np.asarray(score_override(sprime))
                else:
                    scores = score_set(params, cfg.predictor, sprime)
                candidates, warn2 = pick_best_K(sprime, scores, cfg.k, evaluated_keys)
            warning = warning or warn2
            seconds_score = time.perf_counter() - t0

        vals = _evaluate(bench, candidates, evaluated, evaluated_keys, best,
                         space, mask)
        if collect_sprime and sprime is not None:
            trace.sprime_vals.append(bench.eval_means(sprime)[0])
        else:
            trace.sprime_vals.append(None)
        trace.records.append(
            IterationRecord(
                iteration=t,
                candidate_keys=[arch_key(a) for a in candidates],
                candidate_vals=vals,
                y_star_val=best.val,
                y_star_test=best.test,
                n_evaluated=len(evaluated),
                warning=warning,
                seconds_train=seconds_train,
                seconds_sample=seconds_sample,
                seconds_score=seconds_score,
            )
        )
    trace.evaluated = evaluated
    return trace


def run_random_baseline(
    cfg: SearchConfig, bench: Benchmark, space: EnumeratedSpace | None = None
) -> SearchTrace:
    """Random search sharing the trace format: K uniform draws without
    replacement per iteration, no predictor."""
    if space is None:
        space = search_space_for(bench)
    ss_init, ss_loop = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(ss_init)

    trace = SearchTrace()
    evaluated: list[tuple[Architecture, float]] = []
    evaluated_keys: set[bytes] = set()
    best = _BestTracker()

    seed_archs = uniform_sample(space, cfg.init_size, set(), rng)
    vals = _evaluate(bench, seed_archs, evaluated, evaluated_keys, best)
    trace.records.append(
        IterationRecord(
            iteration=0,
            candidate_keys=[arch_key(a) for a in seed_archs],
            candidate_vals=vals,
            y_star_val=best.val,
            y_star_test=best.test,
            n_evaluated=len(evaluated),
        )
    )
    trace.sprime_vals.append(None)

    loop_rng = np.random.default_rng(ss_loop)
    for t in range(1, cfg.iterations + 1):
        remaining = len(space) - len(evaluated)
        if remaining == 0:
            break
        t0 = time.perf_counter()
        candidates = _uniform_draws(
            space, min(cfg.k, remaining), set(evaluated_keys), loop_rng
        )
        seconds_sample = time.perf_counter() - t0
        vals = _evaluate(bench, candidates, evaluated, evaluated_keys, best)
        trace.sprime_vals.append(None)
        trace.records.append(
            IterationRecord(
                iteration=t,
                candidate_keys=[arch_key(a) for a in candidates],
                candidate_vals=vals,
                y_star_val=best.val,
                y_star_test=best.test,
                n_evaluated=len(evaluated),
                warning=len(candidates) < cfg.k,
                seconds_sample=seconds_sample,
            )
        )
    trace.evaluated = evaluated
    return trace
