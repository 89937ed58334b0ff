"""Benchmark oracle: true validation/test errors without training networks.

Two modes. Tabular: a loaded table mapping every architecture of a space
to its per-run errors (the portable text format below). Synthetic: a
deterministic smooth error function over a space, used as a desk-scale
stand-in for a real tabular benchmark. Both expose mean-error queries
and exact oracle minima.

Tabular text format (one record per line)::

    spec L d max_edges ss|open
    L d | <uptri adjacency bits> | <op per layer> | v1 v2 ... | t1 t2 ...

Errors are stored as errors (1 - accuracy), all in [0, 1].
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .space import (
    Architecture,
    EnumeratedSpace,
    SpaceSpec,
    arch_key,
    decode_arch,
    encode_arch,
    random_architecture,
    validate,
)

__all__ = [
    "EvalRecord",
    "Benchmark",
    "BenchmarkError",
    "BenchmarkFormatError",
    "load_tabular",
    "save_tabular",
    "synthetic_benchmark",
]

_VAL_LO = 0.02
_VAL_SPAN = 0.9
_RUN_JITTER = 0.002
_TEST_SHIFT = 0.01
_CALIBRATION_DRAWS = 10_000
# Logistic scale in units of the raw-score spread. Keeps the squashing
# in its near-linear regime, so the error distribution inherits the raw
# scores' thin gaussian-like tails: only a handful of architectures sit
# near the oracle, as in real tabular benchmarks. Larger values widen
# the realized error span but pile mass onto the extremes.
_SIGMOID_SCALE_PER_STD = 0.5


class BenchmarkError(Exception):
    """Base class for benchmark errors."""


class BenchmarkFormatError(BenchmarkError):
    """Malformed tabular file; message carries the 1-based line number."""


@dataclass
class EvalRecord:
    """Per-architecture evaluation outcomes (one entry per training run)."""

    arch: Architecture
    val_errors: tuple[float, ...]
    test_errors: tuple[float, ...]

    def __post_init__(self):
        for name, runs in (("val", self.val_errors), ("test", self.test_errors)):
            if len(runs) < 1:
                raise ValueError(f"{name}_errors needs at least one run")
            if any(not (0.0 <= e <= 1.0) for e in runs):
                raise ValueError(f"{name}_errors outside [0, 1]: {runs}")

    @property
    def mean_val(self) -> float:
        return float(np.mean(self.val_errors))

    @property
    def mean_test(self) -> float:
        return float(np.mean(self.test_errors))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def _structure_counts(adjacency: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Relabeling-invariant count vector of a batch of architectures.

    Components: per-op node counts (d), the input node's op (d), the
    output node's op (d), directed op-pair edge counts (d*d), and the
    total edge count (1). Relabeled copies of the same graph map to the
    same vector, so the synthetic oracle treats them as the same network.
    """
    a = adjacency.astype(np.float64)
    x = features.astype(np.float64)
    op_counts = x.sum(axis=1)
    src_op = x[:, 0, :]
    snk_op = x[:, -1, :]
    edge_ops = np.einsum("nij,nio,njp->nop", a, x, x)
    n = a.shape[0]
    n_edges = a.sum(axis=(1, 2)).reshape(n, 1)
    return np.concatenate(
        [op_counts, src_op, snk_op, edge_ops.reshape(n, -1), n_edges], axis=1
    )


class Benchmark:
    """Immutable architecture -> error oracle (tabular or synthetic)."""

    def __init__(self, spec: SpaceSpec, *, records=None, seed=None):
        self.spec = spec
        if (records is None) == (seed is None):
            raise ValueError("pass exactly one of records= (tabular) or seed= (synthetic)")
        self.mode = "tabular" if records is not None else "synthetic"
        self.records: dict[bytes, EvalRecord] = {}
        self.seed = seed
        if self.mode == "tabular":
            for rec in records:
                key = arch_key(rec.arch)
                if key in self.records:
                    raise BenchmarkError(
                        f"duplicate architecture: {encode_arch(rec.arch)}"
                    )
                self.records[key] = rec
        else:
            self._init_synthetic(seed)

    # -- synthetic mode internals ------------------------------------

    def _init_synthetic(self, seed: int):
        d = self.spec.num_op_types
        nphi = 3 * d + d * d + 1
        ss_wq, ss_cal = np.random.SeedSequence(seed).spawn(2)
        rng = np.random.default_rng(ss_wq)
        self._w = rng.uniform(-1.0, 1.0, size=nphi)
        q = np.zeros((nphi, nphi))
        iu = np.triu_indices(nphi)
        q[iu] = rng.uniform(-1.0, 1.0, size=len(iu[0]))
        self._q = q + np.triu(q, k=1).T
        self._nphi = nphi
        cal_rng = np.random.default_rng(ss_cal)
        draws = [random_architecture(self.spec, cal_rng) for _ in range(_CALIBRATION_DRAWS)]
        raws = self._raw_scores(self._phi_batch(draws))
        self._scale = _SIGMOID_SCALE_PER_STD / max(float(raws.std()), 1e-12)

    def _phi_batch(self, archs) -> np.ndarray:
        return _structure_counts(
            np.stack([a.adjacency for a in archs]),
            np.stack([a.features for a in archs]),
        )

    def _phi(self, arch: Architecture) -> np.ndarray:
        return self._phi_batch([arch])[0]

    def _raw_scores(self, phi: np.ndarray) -> np.ndarray:
        quad = np.einsum("nb,nb->n", phi @ self._q, phi)
        return phi @ self._w + quad / self._nphi

    def _centers(self, phi: np.ndarray) -> np.ndarray:
        return _VAL_LO + _VAL_SPAN * _sigmoid(self._scale * self._raw_scores(phi))

    def _unit_draws(self, arch: Architecture) -> np.ndarray:
        """Seven seeded per-architecture pseudo-random values in [-1, 1]."""
        digest = hashlib.blake2b(
            arch_key(arch), digest_size=56, key=int(self.seed).to_bytes(8, "little")
        ).digest()
        u = np.frombuffer(digest, dtype="<u8").astype(np.float64) / 2.0**64
        return 2.0 * u - 1.0

    def _synthetic_record(self, arch: Architecture) -> EvalRecord:
        center = float(self._centers(self._phi(arch)[None, :])[0])
        u = self._unit_draws(arch)
        val_runs = np.clip(center + _RUN_JITTER * u[1:4], 0.0, 1.0)
        test_center = np.clip(center + _TEST_SHIFT * u[0], 0.0, 1.0)
        test_runs = np.clip(test_center + _RUN_JITTER * u[4:7], 0.0, 1.0)
        return EvalRecord(arch, tuple(val_runs), tuple(test_runs))

    # -- queries -------------------------------------------------------

    def record(self, arch: Architecture) -> EvalRecord:
        if self.mode == "tabular":
            key = arch_key(arch)
            if key not in self.records:
                raise KeyError(
                    f"architecture not in benchmark: {encode_arch(arch)}"
                )
            return self.records[key]
        report = validate(arch, self.spec)
        if not report.ok:
            raise BenchmarkError(
                f"invalid architecture for synthetic benchmark: {report.violations}"
            )
        return self._synthetic_record(arch)

    def query_val(self, arch: Architecture) -> float:
        """Mean validation error over runs."""
        return self.record(arch).mean_val

    def query_test(self, arch: Architecture) -> float:
        """Mean test error over runs."""
        return self.record(arch).mean_test

    def query_val_batch(self, archs) -> np.ndarray:
        return np.array([self.query_val(a) for a in archs])

    def eval_means(self, archs) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized (mean val, mean test) for a list of architectures."""
        if self.mode == "tabular":
            recs = [self.record(a) for a in archs]
            return (
                np.array([r.mean_val for r in recs]),
                np.array([r.mean_test for r in recs]),
            )
        centers = self._centers(self._phi_batch(archs))
        units = np.stack([self._unit_draws(a) for a in archs])
        val = np.clip(
            centers[:, None] + _RUN_JITTER * units[:, 1:4], 0.0, 1.0
        ).mean(axis=1)
        test_center = np.clip(centers + _TEST_SHIFT * units[:, 0], 0.0, 1.0)
        test = np.clip(
            test_center[:, None] + _RUN_JITTER * units[:, 4:7], 0.0, 1.0
        ).mean(axis=1)
        return val, test

    def all_archs(self, guard: int = 10_000_000) -> list[Architecture]:
        """Every architecture of the benchmark (records, or enumeration)."""
        if self.mode == "tabular":
            return [rec.arch for rec in self.records.values()]
        return EnumeratedSpace.from_spec(self.spec, guard=guard).archs

    def oracles(self, guard: int = 10_000_000) -> tuple[float, float]:
        """Exact (min mean val error, min mean test error) over the space."""
        archs = self.all_archs(guard=guard)
        val, test = self.eval_means(archs)
        return float(val.min()), float(test.min())


def synthetic_benchmark(spec: SpaceSpec, seed: int) -> Benchmark:
    """Deterministic smooth synthetic oracle over `spec`.

    The error of an architecture is a logistic squashing of a linear plus
    quadratic form of its flattened binary encoding, so one-bit
    neighbours get similar errors. Per-run jitter and the val/test gap
    are seeded per architecture; everything is reproducible from
    (spec, seed) alone.
    """
    return Benchmark(spec, seed=seed)


def _parse_flags(token: str) -> bool:
    if token == "ss":
        return True
    if token == "open":
        return False
    raise ValueError(f"flags must be 'ss' or 'open', got {token!r}")


def load_tabular(path) -> Benchmark:
    """Parse a tabular benchmark file; errors carry 1-based line numbers."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise BenchmarkFormatError("line 1: empty file, expected header")
    head = lines[0].split()
    if len(head) != 5 or head[0] != "spec":
        raise BenchmarkFormatError(
            f"line 1: header must be 'spec L d max_edges ss|open', got {lines[0]!r}"
        )
    try:
        spec = SpaceSpec(
            num_layers=int(head[1]),
            num_op_types=int(head[2]),
            max_edges=int(head[3]),
            single_source_sink=_parse_flags(head[4]),
        )
    except ValueError as exc:
        raise BenchmarkFormatError(f"line 1: {exc}") from exc

    records = []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 5:
            raise BenchmarkFormatError(
                f"line {lineno}: expected 5 '|'-separated fields, got {len(parts)}"
            )
        try:
            arch = decode_arch(" | ".join(parts[:3]))
        except ValueError as exc:
            raise BenchmarkFormatError(f"line {lineno}: {exc}") from exc
        report = validate(arch, spec)
        if not report.ok:
            raise BenchmarkFormatError(
                f"line {lineno}: invalid architecture: {'; '.join(report.violations)}"
            )
        try:
            val_errors = tuple(float(t) for t in parts[3].split())
            test_errors = tuple(float(t) for t in parts[4].split())
            rec = EvalRecord(arch, val_errors, test_errors)
        except ValueError as exc:
            raise BenchmarkFormatError(f"line {lineno}: {exc}") from exc
        key = arch_key(arch)
        if key in seen:
            raise BenchmarkFormatError(f"line {lineno}: duplicate architecture")
        seen.add(key)
        records.append(rec)
    return Benchmark(spec, records=records)


def _fmt(x: float) -> str:
    return repr(float(x))


def save_tabular(bench: Benchmark, path) -> None:
    """Write a tabular benchmark in the exact format load_tabular reads."""
    if bench.mode != "tabular":
        raise BenchmarkError("only tabular benchmarks can be saved; "
                             "materialize a synthetic one first (cmd: bench-gen)")
    spec = bench.spec
    flags = "ss" if spec.single_source_sink else "open"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"spec {spec.num_layers} {spec.num_op_types} {spec.max_edges} {flags}\n"
        )
        for rec in bench.records.values():
            vals = " ".join(_fmt(v) for v in rec.val_errors)
            tests = " ".join(_fmt(t) for t in rec.test_errors)
            fh.write(f"{encode_arch(rec.arch)} | {vals} | {tests}\n")
