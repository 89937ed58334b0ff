"""Architecture search space: encoding, validity, enumeration and the
mutation / crossover / permutation operators.

An architecture is a layered DAG stored as a strictly upper-triangular
binary adjacency matrix (acyclic by construction) plus a one-hot op
matrix with one row per layer. All operators are pure functions of their
inputs and an explicit numpy Generator, so a fixed seed reproduces every
draw exactly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SpaceSpec",
    "Architecture",
    "ValidityReport",
    "EnumeratedSpace",
    "SpaceError",
    "SpaceTooLargeError",
    "SpaceTooConstrainedError",
    "validate",
    "random_architecture",
    "enumerate_space",
    "space_size_bound",
    "mutate",
    "crossover",
    "permute",
    "arch_key",
    "encode_arch",
    "decode_arch",
    "upper_tri_positions",
]


class SpaceError(Exception):
    """Base class for search-space errors."""


class SpaceTooLargeError(SpaceError):
    """Enumeration refused: the encoding count exceeds the guard."""


class SpaceTooConstrainedError(SpaceError):
    """Rejection sampling hit its attempt cap without finding a valid draw."""


@dataclass(frozen=True)
class SpaceSpec:
    """Static description of a search space.

    num_layers: number of DAG nodes L (>= 2).
    num_op_types: number of layer operation types d (>= 1).
    max_edges: edge budget, 0 means unlimited.
    single_source_sink: if set, node 0 is the only source, node L-1 the
        only sink, and every node that has an edge must lie on some
        directed path from node 0 to node L-1. Fully isolated nodes are
        treated as unused and allowed.
    """

    num_layers: int
    num_op_types: int
    max_edges: int = 0
    single_source_sink: bool = True

    def __post_init__(self):
        if self.num_layers < 2:
            raise ValueError(f"num_layers must be >= 2, got {self.num_layers}")
        if self.num_op_types < 1:
            raise ValueError(f"num_op_types must be >= 1, got {self.num_op_types}")
        nbits = self.num_layers * (self.num_layers - 1) // 2
        if self.max_edges < 0 or (self.max_edges and self.max_edges > nbits):
            raise ValueError(
                f"max_edges must be in [0, {nbits}], got {self.max_edges}"
            )

    @property
    def num_bits(self) -> int:
        """Length of the strict upper-triangular bit vector."""
        return self.num_layers * (self.num_layers - 1) // 2


@dataclass
class Architecture:
    """A candidate network: binary adjacency (L x L) and one-hot ops (L x d).

    adjacency[i, j] = 1 means layer i feeds layer j. Stored architectures
    are strictly upper-triangular; `permute` may produce non-triangular
    matrices that are only ever fed to the predictor, never stored.
    """

    adjacency: np.ndarray
    features: np.ndarray
    _key: bytes | None = field(default=None, repr=False, compare=False)

    def __eq__(self, other):
        if not isinstance(other, Architecture):
            return NotImplemented
        return np.array_equal(self.adjacency, other.adjacency) and np.array_equal(
            self.features, other.features
        )

    def __hash__(self):
        return hash(arch_key(self))

    @property
    def num_layers(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_op_types(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return int(self.adjacency.sum())

    @property
    def op_indices(self) -> np.ndarray:
        return np.argmax(self.features, axis=1)


@dataclass(frozen=True)
class ValidityReport:
    ok: bool
    violations: tuple[str, ...] = ()


def upper_tri_positions(L: int) -> list[tuple[int, int]]:
    """Row-major (i, j) positions of the strict upper triangle."""
    return [(i, j) for i in range(L) for j in range(i + 1, L)]


_TRIU_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}
_POW2 = 1 << np.arange(62, dtype=np.int64)


def _triu(L: int):
    if L not in _TRIU_CACHE:
        _TRIU_CACHE[L] = np.triu_indices(L, k=1)
    return _TRIU_CACHE[L]


def _make_arch(L: int, d: int, bits: np.ndarray, ops: np.ndarray) -> Architecture:
    adjacency = np.zeros((L, L), dtype=np.uint8)
    adjacency[_triu(L)] = bits
    features = np.zeros((L, d), dtype=np.uint8)
    features[np.arange(L), ops] = 1
    return Architecture(adjacency=adjacency, features=features)


_FLAT_POS_CACHE: dict[int, np.ndarray] = {}


def _flat_positions(L: int) -> np.ndarray:
    """Row-major flat indices of the strict upper triangle in an LxL matrix."""
    if L not in _FLAT_POS_CACHE:
        iu = _triu(L)
        _FLAT_POS_CACHE[L] = (iu[0] * L + iu[1]).astype(np.intp)
    return _FLAT_POS_CACHE[L]


def _key_from_vec(L: int, d: int, bits: np.ndarray, ops: np.ndarray) -> bytes:
    """arch_key of the architecture _make_arch(L, d, bits, ops) would build,
    without building it."""
    full = np.zeros(L * L, dtype=np.uint8)
    full[_flat_positions(L)] = bits
    return bytes([L, d]) + np.packbits(full).tobytes() + bytes(int(o) for o in ops)


def _close_over(masks, start_mask: int) -> int:
    """Transitive closure from a node-bitmask along per-node successor masks."""
    reach = start_mask
    frontier = start_mask
    while frontier:
        nxt = 0
        f = frontier
        v = 0
        while f:
            if f & 1:
                nxt |= masks[v]
            f >>= 1
            v += 1
        frontier = nxt & ~reach
        reach |= frontier
    return reach


_GRAPH_CACHE: dict[SpaceSpec, dict[int, tuple[str, ...]]] = {}


def _graph_violations_uncached(mask: int, spec: SpaceSpec) -> tuple[str, ...]:
    L = spec.num_layers
    positions = upper_tri_positions(L)
    violations = []
    n_edges = mask.bit_count()
    if spec.max_edges and n_edges > spec.max_edges:
        violations.append(
            f"edge budget: {n_edges} edges > max_edges={spec.max_edges}"
        )
    if spec.single_source_sink:
        succ = [0] * L
        pred = [0] * L
        for k, (i, j) in enumerate(positions):
            if (mask >> k) & 1:
                succ[i] |= 1 << j
                pred[j] |= 1 << i
        from_src = _close_over(succ, 1)
        to_sink = _close_over(pred, 1 << (L - 1))
        if not (from_src >> (L - 1)) & 1:
            violations.append("no path from node 0 to the output node")
        else:
            on_path = from_src & to_sink
            for v in range(L):
                if (succ[v] or pred[v]) and not (on_path >> v) & 1:
                    violations.append(
                        f"node {v} has edges but lies on no source-to-sink path"
                    )
    return tuple(violations)


def _graph_violations(mask: int, spec: SpaceSpec) -> tuple[str, ...]:
    """Cached connectivity / budget violations for an edge bitmask."""
    per_spec = _GRAPH_CACHE.setdefault(spec, {})
    hit = per_spec.get(mask)
    if hit is None:
        hit = _graph_violations_uncached(mask, spec)
        per_spec[mask] = hit
    return hit


def _graph_ok(adjacency: np.ndarray, spec: SpaceSpec) -> tuple[str, ...]:
    """Connectivity / budget violations of an upper-triangular adjacency.

    Memoized per (spec, edge bitmask): a search touches the same graphs
    over and over.
    """
    L = spec.num_layers
    mask = int(adjacency[_triu(L)] @ _POW2[: spec.num_bits])
    return _graph_violations(mask, spec)


def validate(arch: Architecture, spec: SpaceSpec) -> ValidityReport:
    """Check every architecture invariant under `spec`.

    Dimension mismatches are a hard error (ValueError), distinct from an
    architecture that merely violates the space rules.
    """
    L, d = spec.num_layers, spec.num_op_types
    if arch.adjacency.shape != (L, L) or arch.features.shape != (L, d):
        raise ValueError(
            f"dimension mismatch: adjacency {arch.adjacency.shape} features "
            f"{arch.features.shape}, spec wants ({L},{L}) and ({L},{d})"
        )
    violations = []
    adj = arch.adjacency
    iu = _triu(L)
    if adj[iu].sum() != adj.sum():
        violations.append("adjacency not strictly upper-triangular")
    if adj.max(initial=0) > 1 or adj.min(initial=0) < 0:
        violations.append("adjacency not binary")
    feat = arch.features
    if not (
        np.all(feat.sum(axis=1) == 1)
        and feat.max(initial=0) <= 1
        and feat.min(initial=0) >= 0
    ):
        violations.append("row not one-hot")
    if not violations:
        violations.extend(_graph_ok(arch.adjacency, spec))
    return ValidityReport(ok=not violations, violations=tuple(violations))


def random_architecture(
    spec: SpaceSpec, rng: np.random.Generator, max_attempts: int = 1000
) -> Architecture:
    """Uniform valid architecture via rejection sampling on raw encodings.

    Each attempt draws every upper-triangular bit Bernoulli(1/2) and each
    op uniformly, so conditioning on validity leaves the uniform
    distribution over valid encodings.
    """
    L, d = spec.num_layers, spec.num_op_types
    for _ in range(max_attempts):
        bits = rng.integers(0, 2, size=spec.num_bits, dtype=np.uint8)
        ops = rng.integers(0, d, size=L)
        arch = _make_arch(L, d, bits, ops)
        if validate(arch, spec).ok:
            return arch
    raise SpaceTooConstrainedError(
        f"no valid architecture found in {max_attempts} attempts; "
        "space too constrained"
    )


def space_size_bound(spec: SpaceSpec) -> int:
    """Upper bound on |S|: count of raw encodings (valid or not)."""
    return (2**spec.num_bits) * (spec.num_op_types**spec.num_layers)


def enumerate_space(spec: SpaceSpec, guard: int = 10_000_000):
    """Yield every valid architecture exactly once, in deterministic order.

    Adjacency masks ascend as integers (bit p of the mask is row-major
    upper-triangular position p), op assignments in lexicographic order.
    Refuses with SpaceTooLargeError when the raw encoding count exceeds
    `guard`; use random_architecture for such spaces.
    """
    total = space_size_bound(spec)
    if total > guard:
        raise SpaceTooLargeError(
            f"{total} raw encodings exceed the enumeration guard {guard}; "
            "use random_architecture instead"
        )
    L, d = spec.num_layers, spec.num_op_types
    nbits = spec.num_bits
    iu = _triu(L)
    for mask in range(2**nbits):
        bits = np.array([(mask >> p) & 1 for p in range(nbits)], dtype=np.uint8)
        adjacency = np.zeros((L, L), dtype=np.uint8)
        adjacency[iu] = bits
        if spec.max_edges and bits.sum() > spec.max_edges:
            continue
        if _graph_ok(adjacency, spec):
            continue
        for ops in itertools.product(range(d), repeat=L):
            features = np.zeros((L, d), dtype=np.uint8)
            features[np.arange(L), ops] = 1
            yield Architecture(adjacency=adjacency.copy(), features=features)


def _mutate_vec(
    bits: np.ndarray, ops: np.ndarray, p_mutate: float, spec: SpaceSpec,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Raw mutation on (uptri bits, op indices); may encode an invalid graph.

    Consumes the rng exactly as the Architecture-level operator does, so
    both forms produce the same offspring from the same generator state.
    """
    out = bits.copy()
    flip = rng.random(spec.num_bits) < p_mutate
    out[flip] ^= 1
    resample = rng.random(spec.num_layers) < p_mutate
    new_ops = rng.integers(0, spec.num_op_types, size=spec.num_layers)
    return out, np.where(resample, new_ops, ops)


def _mutate_once(
    arch: Architecture, p_mutate: float, spec: SpaceSpec, rng: np.random.Generator
) -> Architecture:
    """One raw mutation pass; the result may be invalid."""
    L, d = spec.num_layers, spec.num_op_types
    bits, ops = _mutate_vec(
        arch.adjacency[_triu(L)], arch.op_indices, p_mutate, spec, rng
    )
    return _make_arch(L, d, bits, ops)


def mutate(
    arch: Architecture,
    p_mutate: float,
    spec: SpaceSpec,
    rng: np.random.Generator,
    max_attempts: int = 100,
) -> Architecture:
    """Flip each adjacency bit with probability p_mutate and resample each
    op row (uniformly over one-hot rows) with probability p_mutate.

    Invalid offspring are rejected and the mutation re-run from the
    original architecture; after `max_attempts` failures a fresh random
    architecture is returned instead.
    """
    for _ in range(max_attempts):
        cand = _mutate_once(arch, p_mutate, spec, rng)
        if validate(cand, spec).ok:
            return cand
    return random_architecture(spec, rng)


def _crossover_vec(
    bits1: np.ndarray, ops1: np.ndarray, bits2: np.ndarray, ops2: np.ndarray,
    spec: SpaceSpec, rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Raw crossover on encoding vectors; rng-compatible with `_crossover_once`."""
    from_first = rng.random(spec.num_bits) < 0.5
    bits = np.where(from_first, bits1, bits2)
    rows_first = rng.random(spec.num_layers) < 0.5
    return bits, np.where(rows_first, ops1, ops2)


def _crossover_once(
    a1: Architecture, a2: Architecture, spec: SpaceSpec, rng: np.random.Generator
) -> Architecture:
    """One raw crossover pass; the result may be invalid."""
    L, d = spec.num_layers, spec.num_op_types
    iu = _triu(L)
    bits, ops = _crossover_vec(
        a1.adjacency[iu], a1.op_indices, a2.adjacency[iu], a2.op_indices,
        spec, rng,
    )
    return _make_arch(L, d, bits, ops)


def crossover(
    a1: Architecture,
    a2: Architecture,
    spec: SpaceSpec,
    rng: np.random.Generator,
    max_attempts: int = 100,
) -> Architecture:
    """Mix two parents: each adjacency element and each op row is taken
    from either parent with probability 1/2. Repair as in `mutate`.
    """
    for _ in range(max_attempts):
        cand = _crossover_once(a1, a2, spec, rng)
        if validate(cand, spec).ok:
            return cand
    return random_architecture(spec, rng)


def permute(arch: Architecture, perm) -> Architecture:
    """Relabel nodes: node i becomes node perm[i].

    Equivalent to P A P^T and P X for the permutation matrix P with
    P[perm[i], i] = 1. The output can violate upper-triangularity; it is
    meant for predictor-invariance checks only.
    """
    perm = np.asarray(perm)
    L = arch.num_layers
    if sorted(perm.tolist()) != list(range(L)):
        raise ValueError(f"perm must be a permutation of 0..{L - 1}")
    adjacency = np.zeros_like(arch.adjacency)
    adjacency[np.ix_(perm, perm)] = arch.adjacency
    features = np.zeros_like(arch.features)
    features[perm] = arch.features
    return Architecture(adjacency=adjacency, features=features)


def arch_key(arch: Architecture) -> bytes:
    """Fixed-length canonical byte key, injective on (adjacency, features).

    Layout: L, d, packed row-major adjacency bits (all L*L of them, so
    even non-triangular matrices key distinctly), then one op index byte
    per layer.
    """
    if arch._key is not None:
        return arch._key
    L = arch.num_layers
    d = arch.num_op_types
    packed = np.packbits(arch.adjacency.astype(np.uint8).ravel()).tobytes()
    key = bytes([L, d]) + packed + bytes(int(o) for o in arch.op_indices)
    object.__setattr__(arch, "_key", key)
    return key


def encode_arch(arch: Architecture) -> str:
    """One-line text encoding: `L d | uptri-bits | op indices`."""
    L = arch.num_layers
    iu = np.triu_indices(L, k=1)
    bits = "".join(str(int(b)) for b in arch.adjacency[iu])
    ops = " ".join(str(int(o)) for o in arch.op_indices)
    return f"{L} {arch.num_op_types} | {bits} | {ops}"


class EnumeratedSpace:
    """A fully materialized search space with fast key lookup.

    Built either by enumerating a SpaceSpec or from an explicit
    architecture list (e.g. the records of a tabular benchmark, which
    then ARE the space). Also caches the predictor-ready float tensors:
    the normalized adjacency stack and the one-hot feature stack.
    """

    def __init__(self, spec: SpaceSpec, archs: list[Architecture]):
        self.spec = spec
        self.archs = archs
        self.keys = [arch_key(a) for a in archs]
        self._index = {k: i for i, k in enumerate(self.keys)}
        if len(self._index) != len(archs):
            raise ValueError("duplicate architectures in enumerated space")
        self._ahat = None
        self._x = None

    @classmethod
    def from_spec(cls, spec: SpaceSpec, guard: int = 10_000_000) -> "EnumeratedSpace":
        return cls(spec, list(enumerate_space(spec, guard=guard)))

    def __len__(self) -> int:
        return len(self.archs)

    def __iter__(self):
        return iter(self.archs)

    def __contains__(self, key: bytes) -> bool:
        return key in self._index

    def index_of(self, key: bytes) -> int:
        return self._index[key]

    def available_indices(self, exclude) -> np.ndarray:
        """Indices of architectures whose key is not in `exclude`."""
        if not exclude:
            return np.arange(len(self.archs))
        return np.array(
            [i for i, k in enumerate(self.keys) if k not in exclude], dtype=np.intp
        )

    @property
    def ahat_stack(self) -> np.ndarray:
        """(N, L, L) float64 stack of degree-normalized adjacencies."""
        if self._ahat is None:
            L = self.spec.num_layers
            a = np.stack([arch.adjacency for arch in self.archs]).astype(np.float64)
            a += np.eye(L)
            deg = a.sum(axis=2)
            self._ahat = np.ascontiguousarray(a / np.sqrt(deg)[:, :, None])
        return self._ahat

    @property
    def x_stack(self) -> np.ndarray:
        """(N, L, d) float64 stack of one-hot feature matrices."""
        if self._x is None:
            self._x = np.ascontiguousarray(
                np.stack([arch.features for arch in self.archs]).astype(np.float64)
            )
        return self._x


def decode_arch(line: str) -> Architecture:
    """Parse the `encode_arch` format; raises ValueError on malformed input."""
    parts = [p.strip() for p in line.split("|")]
    if len(parts) != 3:
        raise ValueError(f"expected 3 '|'-separated fields, got {len(parts)}")
    head = parts[0].split()
    if len(head) != 2:
        raise ValueError(f"header must be 'L d', got {parts[0]!r}")
    L, d = int(head[0]), int(head[1])
    nbits = L * (L - 1) // 2
    if len(parts[1]) != nbits or any(c not in "01" for c in parts[1]):
        raise ValueError(
            f"adjacency field must be {nbits} bits of 0/1, got {parts[1]!r}"
        )
    bits = np.frombuffer(parts[1].encode(), dtype=np.uint8) - ord("0")
    ops = np.array([int(tok) for tok in parts[2].split()])
    if ops.shape != (L,):
        raise ValueError(f"expected {L} op indices, got {len(ops)}")
    if np.any(ops < 0) or np.any(ops >= d):
        raise ValueError(f"op index out of range [0, {d})")
    return _make_arch(L, d, bits.astype(np.uint8), ops)
