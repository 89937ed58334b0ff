import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pbnas.space import (
    Architecture,
    EnumeratedSpace,
    SpaceSpec,
    SpaceTooLargeError,
    arch_key,
    crossover,
    decode_arch,
    encode_arch,
    enumerate_space,
    mutate,
    permute,
    random_architecture,
    upper_tri_positions,
    validate,
    _crossover_once,
    _mutate_once,
)


def make_arch(L, d, edges, ops):
    adjacency = np.zeros((L, L), dtype=np.uint8)
    for i, j in edges:
        adjacency[i, j] = 1
    features = np.zeros((L, d), dtype=np.uint8)
    features[np.arange(L), ops] = 1
    return Architecture(adjacency=adjacency, features=features)


def spec_strategy():
    return st.builds(
        SpaceSpec,
        num_layers=st.integers(2, 5),
        num_op_types=st.integers(1, 3),
        max_edges=st.just(0),
        single_source_sink=st.booleans(),
    )


class TestSpaceSpec:
    def test_invariants(self):
        with pytest.raises(ValueError):
            SpaceSpec(num_layers=1, num_op_types=1)
        with pytest.raises(ValueError):
            SpaceSpec(num_layers=3, num_op_types=0)
        with pytest.raises(ValueError):
            SpaceSpec(num_layers=3, num_op_types=1, max_edges=4)  # > 3

    def test_num_bits(self):
        assert SpaceSpec(7, 5).num_bits == 21


class TestValidate:
    def test_minimal_chain_ok(self):
        spec = SpaceSpec(2, 1)
        arch = make_arch(2, 1, [(0, 1)], [0, 0])
        assert validate(arch, spec).ok

    def test_row_not_one_hot(self):
        spec = SpaceSpec(3, 3)
        arch = make_arch(3, 3, [(0, 1), (1, 2)], [0, 1, 2])
        arch.features[0] = [1, 1, 0]
        report = validate(arch, spec)
        assert not report.ok
        assert any("one-hot" in v for v in report.violations)

    def test_edge_budget(self):
        # 10-edge DAG on 7 nodes against a 9-edge budget
        spec = SpaceSpec(7, 5, max_edges=9)
        chain = [(i, i + 1) for i in range(6)]
        extras = [(0, 2), (0, 3), (0, 4), (0, 5)]
        arch = make_arch(7, 5, chain + extras, [0] * 7)
        assert arch.num_edges == 10
        report = validate(arch, spec)
        assert not report.ok
        assert any("edge budget" in v for v in report.violations)
        # same graph passes without the budget
        assert validate(arch, SpaceSpec(7, 5)).ok

    def test_dimension_mismatch_is_hard_error(self):
        spec = SpaceSpec(3, 2)
        arch = make_arch(2, 2, [(0, 1)], [0, 1])
        with pytest.raises(ValueError):
            validate(arch, spec)

    def test_isolated_node_allowed_but_dangling_not(self):
        spec = SpaceSpec(3, 1)
        # 0->2 with node 1 fully isolated: allowed
        assert validate(make_arch(3, 1, [(0, 2)], [0, 0, 0]), spec).ok
        # node 1 has an in-edge but no path to the sink: rejected
        report = validate(make_arch(3, 1, [(0, 1), (0, 2)], [0, 0, 0]), spec)
        assert not report.ok
        # no source-to-sink path at all: rejected
        assert not validate(make_arch(3, 1, [], [0, 0, 0]), spec).ok


class TestRandomArchitecture:
    def test_deterministic_per_seed(self):
        spec = SpaceSpec(5, 3)
        a = random_architecture(spec, np.random.default_rng(7))
        b = random_architecture(spec, np.random.default_rng(7))
        assert a == b

    def test_all_draws_valid(self):
        spec = SpaceSpec(5, 3)
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            assert validate(random_architecture(spec, rng), spec).ok

    def test_edge_count_mean_matches_enumeration(self):
        # generator is uniform over valid encodings, so the empirical edge
        # mean must match the enumeration average (computed independently)
        spec = SpaceSpec(3, 1)
        graphs = {tuple(a.adjacency.ravel()) for a in enumerate_space(spec)}
        expected = np.mean([sum(g) for g in graphs])
        assert expected == pytest.approx(2.0)  # {0->2}, chain, chain+skip
        rng = np.random.default_rng(3)
        n = 10_000
        counts = [random_architecture(spec, rng).num_edges for _ in range(n)]
        sigma = np.std([1, 2, 3]) / np.sqrt(n)
        assert abs(np.mean(counts) - expected) < 3 * sigma + 1e-9


def _brute_force_valid(spec):
    """Independent validity filter: check connectivity via explicit
    path enumeration over all raw encodings."""
    L, d = spec.num_layers, spec.num_op_types
    positions = upper_tri_positions(L)
    count = 0
    for bits in itertools.product([0, 1], repeat=len(positions)):
        adj = np.zeros((L, L), dtype=int)
        for (i, j), b in zip(positions, bits):
            adj[i, j] = b
        # all simple paths from 0 to L-1 by DFS
        on_path = set()
        stack = [(0, (0,))]
        while stack:
            node, path = stack.pop()
            if node == L - 1:
                on_path.update(path)
                continue
            for nxt in range(L):
                if adj[node, nxt]:
                    stack.append((nxt, path + (nxt,)))
        ok = (L - 1) in on_path
        if ok:
            for v in range(L):
                if (adj[v].sum() + adj[:, v].sum()) > 0 and v not in on_path:
                    ok = False
                    break
        if ok:
            count += d**L
    return count


class TestEnumerate:
    def test_l2_single_chain(self):
        assert len(list(enumerate_space(SpaceSpec(2, 1)))) == 1

    def test_l3_three_architectures(self):
        archs = list(enumerate_space(SpaceSpec(3, 1)))
        assert len(archs) == 3
        keys = {arch_key(a) for a in archs}
        assert len(keys) == 3

    def test_l4_d2_matches_brute_force(self):
        spec = SpaceSpec(4, 2)
        assert len(list(enumerate_space(spec))) == _brute_force_valid(spec)

    def test_deterministic_order(self):
        spec = SpaceSpec(4, 2)
        first = [arch_key(a) for a in enumerate_space(spec)]
        second = [arch_key(a) for a in enumerate_space(spec)]
        assert first == second

    def test_guard(self):
        with pytest.raises(SpaceTooLargeError, match="random_architecture"):
            list(enumerate_space(SpaceSpec(8, 5)))

    def test_no_constraint_counts_all_dags(self):
        spec = SpaceSpec(3, 2, single_source_sink=False)
        assert len(list(enumerate_space(spec))) == 2**3 * 2**3


class TestMutate:
    def test_identity_at_zero(self, rng):
        spec = SpaceSpec(5, 3)
        arch = random_architecture(spec, rng)
        assert mutate(arch, 0.0, spec, rng) == arch

    def test_p_one_l2_flips_then_repairs(self, rng):
        spec = SpaceSpec(2, 2)
        arch = make_arch(2, 2, [(0, 1)], [0, 1])
        raw = _mutate_once(arch, 1.0, spec, rng)
        assert raw.num_edges == 0  # the single bit flipped
        out = mutate(arch, 1.0, spec, rng)
        assert validate(out, spec).ok
        assert out.num_edges == 1  # repair restored the only valid graph

    def test_per_bit_flip_rate(self):
        spec = SpaceSpec(3, 2)
        rng = np.random.default_rng(5)
        arch = make_arch(3, 2, [(0, 1), (1, 2)], [0, 1, 0])
        p = 0.3
        n = 100_000
        iu = np.triu_indices(3, k=1)
        base = arch.adjacency[iu]
        flips = np.zeros(3)
        for _ in range(n):
            raw = _mutate_once(arch, p, spec, rng)
            flips += raw.adjacency[iu] != base
        rate = flips / n
        sigma = np.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(rate - p) < 3 * sigma + 1e-9)

    def test_feature_rows_stay_one_hot(self, rng):
        spec = SpaceSpec(4, 3)
        arch = random_architecture(spec, rng)
        for _ in range(200):
            out = mutate(arch, 0.5, spec, rng)
            assert np.all(out.features.sum(axis=1) == 1)


class TestCrossover:
    def test_same_parents_identity(self, rng):
        spec = SpaceSpec(5, 3)
        arch = random_architecture(spec, rng)
        assert crossover(arch, arch, spec, rng) == arch

    def test_bits_come_from_parents(self, rng):
        spec = SpaceSpec(5, 3)
        a1 = random_architecture(spec, rng)
        a2 = random_architecture(spec, rng)
        for _ in range(100):
            raw = _crossover_once(a1, a2, spec, rng)
            mask = raw.adjacency
            assert np.all((mask == a1.adjacency) | (mask == a2.adjacency))
            for row in range(5):
                assert np.array_equal(raw.features[row], a1.features[row]) or \
                    np.array_equal(raw.features[row], a2.features[row])

    def test_parent_selection_rate(self):
        # parents differ in every upper-tri bit, so per-position parent
        # choice is directly observable
        spec = SpaceSpec(3, 1)
        ones = make_arch(3, 1, [(0, 1), (0, 2), (1, 2)], [0, 0, 0])
        zeros = make_arch(3, 1, [], [0, 0, 0])
        rng = np.random.default_rng(17)
        n = 100_000
        iu = np.triu_indices(3, k=1)
        taken = np.zeros(3)
        for _ in range(n):
            raw = _crossover_once(ones, zeros, spec, rng)
            taken += raw.adjacency[iu]
        rate = taken / n
        sigma = np.sqrt(0.25 / n)
        assert np.all(np.abs(rate - 0.5) < 3 * sigma + 1e-9)


class TestPermute:
    def test_identity(self, rng):
        spec = SpaceSpec(5, 3)
        arch = random_architecture(spec, rng)
        assert permute(arch, list(range(5))) == arch

    def test_inverse_roundtrip(self, rng):
        spec = SpaceSpec(5, 3)
        arch = random_architecture(spec, rng)
        perm = rng.permutation(5)
        inv = np.argsort(perm)
        assert permute(permute(arch, perm), inv) == arch

    def test_sums_preserved(self, rng):
        spec = SpaceSpec(5, 3)
        arch = random_architecture(spec, rng)
        perm = rng.permutation(5)
        out = permute(arch, perm)
        assert out.num_edges == arch.num_edges
        assert sorted(out.adjacency.sum(axis=1)) == sorted(arch.adjacency.sum(axis=1))
        assert sorted(out.adjacency.sum(axis=0)) == sorted(arch.adjacency.sum(axis=0))

    def test_rejects_non_permutation(self, rng):
        spec = SpaceSpec(3, 1)
        arch = random_architecture(spec, rng)
        with pytest.raises(ValueError):
            permute(arch, [0, 0, 1])


class TestArchKey:
    def test_equal_matrices_equal_keys(self, rng):
        spec = SpaceSpec(4, 2)
        a = random_architecture(spec, rng)
        b = Architecture(adjacency=a.adjacency.copy(), features=a.features.copy())
        assert arch_key(a) == arch_key(b)

    def test_single_bit_difference(self):
        a = make_arch(3, 2, [(0, 1), (1, 2)], [0, 1, 0])
        b = make_arch(3, 2, [(0, 1), (1, 2), (0, 2)], [0, 1, 0])
        c = make_arch(3, 2, [(0, 1), (1, 2)], [0, 1, 1])
        assert arch_key(a) != arch_key(b)
        assert arch_key(a) != arch_key(c)

    def test_collision_scan(self):
        spec = SpaceSpec(5, 3)
        rng = np.random.default_rng(11)
        seen_encodings = set()
        seen_keys = set()
        for _ in range(100_000):
            arch = random_architecture(spec, rng)
            enc = (arch.adjacency.tobytes(), arch.features.tobytes())
            seen_encodings.add(enc)
            seen_keys.add(arch_key(arch))
        assert len(seen_keys) == len(seen_encodings)


class TestTextEncoding:
    def test_roundtrip(self, rng):
        spec = SpaceSpec(5, 3)
        for _ in range(50):
            arch = random_architecture(spec, rng)
            assert decode_arch(encode_arch(arch)) == arch

    def test_format_example(self):
        arch = make_arch(3, 2, [(0, 1), (1, 2)], [0, 1, 0])
        assert encode_arch(arch) == "3 2 | 101 | 0 1 0"

    @pytest.mark.parametrize(
        "line",
        [
            "3 2 | 10 | 0 1 0",          # wrong bit count
            "3 2 | 1012 | 0 1 0",        # wrong bit alphabet and count
            "3 2 | 101 | 0 1",           # wrong op count
            "3 2 | 101 | 0 1 5",         # op out of range
            "3 2 | 101",                 # missing field
        ],
    )
    def test_malformed(self, line):
        with pytest.raises(ValueError):
            decode_arch(line)


class TestEnumeratedSpace:
    def test_lookup_and_tensors(self):
        spec = SpaceSpec(4, 2)
        space = EnumeratedSpace.from_spec(spec)
        assert len(space) == len(list(enumerate_space(spec)))
        key = space.keys[5]
        assert key in space
        assert space.index_of(key) == 5
        assert space.ahat_stack.shape == (len(space), 4, 4)
        assert space.x_stack.shape == (len(space), 4, 2)
        # normalized rows: row i of ahat sums to sqrt(degree_i)
        deg = space.ahat_stack.sum(axis=2) ** 2
        atilde_deg = np.stack([a.adjacency for a in space.archs]).sum(axis=2) + 1
        assert np.allclose(deg, atilde_deg)

    def test_available_indices(self):
        spec = SpaceSpec(3, 1)
        space = EnumeratedSpace.from_spec(spec)
        excl = {space.keys[0]}
        avail = space.available_indices(excl)
        assert 0 not in avail and len(avail) == len(space) - 1


@settings(max_examples=25, deadline=None)
@given(spec=spec_strategy(), seed=st.integers(0, 2**31))
def test_random_architecture_always_valid(spec, seed):
    arch = random_architecture(spec, np.random.default_rng(seed))
    assert validate(arch, spec).ok


@settings(max_examples=25, deadline=None)
@given(spec=spec_strategy(), seed=st.integers(0, 2**31),
       p=st.floats(0.01, 0.9), op_seed=st.integers(0, 2**31))
def test_operators_preserve_validity_and_determinism(spec, seed, p, op_seed):
    rng = np.random.default_rng(seed)
    a1 = random_architecture(spec, rng)
    a2 = random_architecture(spec, rng)
    m1 = mutate(a1, p, spec, np.random.default_rng(op_seed))
    m2 = mutate(a1, p, spec, np.random.default_rng(op_seed))
    assert m1 == m2 and validate(m1, spec).ok
    c1 = crossover(a1, a2, spec, np.random.default_rng(op_seed))
    c2 = crossover(a1, a2, spec, np.random.default_rng(op_seed))
    assert c1 == c2 and validate(c1, spec).ok
