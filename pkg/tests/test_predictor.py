import math

import numpy as np
import pytest

from pbnas import predictor as P
from pbnas.space import SpaceSpec, random_architecture, permute

SPEC = SpaceSpec(5, 3)
CFG = P.PredictorConfig(input_width=3, num_gcn_layers=3, hidden_width=8)


def rand_params(seed=0, cfg=CFG):
    return P.init_params(cfg, np.random.default_rng(seed))


def rel_err(a, b):
    denom = abs(a) + abs(b)
    return abs(a - b) if denom < 1e-10 else abs(a - b) / denom


class TestNormalizeAdjacency:
    def test_empty_graph_is_identity(self):
        assert np.allclose(P.normalize_adjacency(np.zeros((3, 3))), np.eye(3))

    def test_two_node_chain_hand_case(self):
        # Atilde = [[1,1],[0,1]], degrees (2,1)
        out = P.normalize_adjacency(np.array([[0, 1], [0, 0]]))
        expected = np.array([[1 / math.sqrt(2), 1 / math.sqrt(2)], [0.0, 1.0]])
        assert np.allclose(out, expected)

    def test_row_sums_are_sqrt_degree(self, rng):
        arch = random_architecture(SPEC, rng)
        out = P.normalize_adjacency(arch.adjacency)
        deg = arch.adjacency.sum(axis=1) + 1
        assert np.allclose(out.sum(axis=1), np.sqrt(deg))

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            P.normalize_adjacency(np.zeros((2, 3)))


class TestForward:
    def test_zero_weights_give_bias(self, rng):
        params = rand_params()
        for w in params.weights:
            w[:] = 0.0
        params.w_out[:] = 0.0
        params.b_out = 0.75
        for _ in range(5):
            arch = random_architecture(SPEC, rng)
            score, _ = P.forward(params, CFG, arch)
            assert score == pytest.approx(0.75)

    def test_permutation_invariance(self, rng):
        params = rand_params(3)
        for _ in range(100):
            arch = random_architecture(SPEC, rng)
            perm = rng.permutation(5)
            s1, _ = P.forward(params, CFG, arch)
            s2, _ = P.forward(params, CFG, permute(arch, perm))
            assert abs(s1 - s2) <= 1e-6 * (1 + abs(s1))

    def test_single_node_hand_computation(self):
        # one node, one op, one conv layer of width 1: the whole network is
        # score = w_out * relu(x * w1) + b_out with ahat = [[1]]
        cfg = P.PredictorConfig(input_width=1, num_gcn_layers=1, hidden_width=1)
        params = P.PredictorParams(
            weights=[np.array([[2.0]])], w_out=np.array([3.0]), b_out=0.25
        )
        score, _ = P.forward(params, cfg, (np.zeros((1, 1)), np.array([[1.5]])))
        assert score == pytest.approx(3.0 * (1.5 * 2.0) + 0.25)
        score_neg, _ = P.forward(params, cfg, (np.zeros((1, 1)), np.array([[-1.5]])))
        assert score_neg == pytest.approx(0.25)  # relu clips the negative path

    def test_shape_mismatch(self, rng):
        params = rand_params()
        bad = random_architecture(SpaceSpec(5, 2), rng)
        with pytest.raises(ValueError):
            P.forward(params, CFG, bad)


class TestBackwardParams:
    def test_zero_upstream(self, rng):
        params = rand_params(1)
        arch = random_architecture(SPEC, rng)
        _, cache = P.forward(params, CFG, arch)
        grads = P.backward_params(cache, params, CFG, 0.0)
        assert all(np.all(g == 0) for g in grads.weights)
        assert np.all(grads.w_out == 0) and grads.b_out == 0.0

    def test_bias_gradient_is_upstream(self, rng):
        params = rand_params(1)
        arch = random_architecture(SPEC, rng)
        _, cache = P.forward(params, CFG, arch)
        grads = P.backward_params(cache, params, CFG, 2.5)
        assert grads.b_out == pytest.approx(2.5)

    def test_finite_differences(self, rng):
        h = 1e-4
        for arch_seed in range(5):
            arch = random_architecture(SPEC, np.random.default_rng(arch_seed))
            params = rand_params(arch_seed + 10)
            _, cache = P.forward(params, CFG, arch)
            grads = P.backward_params(cache, params, CFG, 1.0)
            for _ in range(20):
                wi = int(rng.integers(0, len(params.weights) + 1))
                if wi < len(params.weights):
                    i = int(rng.integers(0, params.weights[wi].shape[0]))
                    j = int(rng.integers(0, params.weights[wi].shape[1]))
                    hi, lo = params.copy(), params.copy()
                    hi.weights[wi][i, j] += h
                    lo.weights[wi][i, j] -= h
                    analytic = grads.weights[wi][i, j]
                else:
                    i = int(rng.integers(0, CFG.hidden_width))
                    hi, lo = params.copy(), params.copy()
                    hi.w_out[i] += h
                    lo.w_out[i] -= h
                    analytic = grads.w_out[i]
                fd = (P.forward(hi, CFG, arch)[0] - P.forward(lo, CFG, arch)[0]) / (2 * h)
                assert rel_err(fd, analytic) <= 1e-4


class TestBackwardInputs:
    def relaxed_point(self, rng):
        a = rng.uniform(0.0, 1.0, (5, 5))
        x = rng.uniform(-0.5, 1.0, (5, 3))
        return a, x

    def test_zero_weights_zero_gradients(self, rng):
        params = rand_params()
        for w in params.weights:
            w[:] = 0.0
        a, x = self.relaxed_point(rng)
        _, cache = P.forward(params, CFG, (a, x))
        g_a, g_x = P.backward_inputs(cache, params, CFG, 1.0)
        assert np.all(g_a == 0) and np.all(g_x == 0)

    def test_finite_differences(self, rng):
        h = 1e-4
        params = rand_params(5)
        for _ in range(3):
            a, x = self.relaxed_point(rng)
            _, cache = P.forward(params, CFG, (a, x))
            g_a, g_x = P.backward_inputs(cache, params, CFG, 1.0)
            for _ in range(12):
                i, j = int(rng.integers(0, 5)), int(rng.integers(0, 5))
                ap, am = a.copy(), a.copy()
                ap[i, j] += h
                am[i, j] -= h
                fd = (P.forward(params, CFG, (ap, x))[0]
                      - P.forward(params, CFG, (am, x))[0]) / (2 * h)
                assert rel_err(fd, g_a[i, j]) <= 1e-4
            for _ in range(8):
                i, j = int(rng.integers(0, 5)), int(rng.integers(0, 3))
                xp, xm = x.copy(), x.copy()
                xp[i, j] += h
                xm[i, j] -= h
                fd = (P.forward(params, CFG, (a, xp))[0]
                      - P.forward(params, CFG, (a, xm))[0]) / (2 * h)
                assert rel_err(fd, g_x[i, j]) <= 1e-4

    def test_automorphism_symmetry(self):
        # relaxed input symmetric under swapping nodes 1 and 2: their
        # gradients must coincide
        params = rand_params(9)
        a = np.zeros((5, 5))
        a[0, 1] = a[0, 2] = 0.7
        a[1, 4] = a[2, 4] = 0.3
        x = np.ones((5, 3)) * 0.2
        x[1] = x[2] = [0.5, 0.1, 0.4]
        _, cache = P.forward(params, CFG, (a, x))
        g_a, g_x = P.backward_inputs(cache, params, CFG, 1.0)
        assert np.allclose(g_x[1], g_x[2])
        assert g_a[0, 1] == pytest.approx(g_a[0, 2])
        assert g_a[1, 4] == pytest.approx(g_a[2, 4])


class TestPairwiseLoss:
    def test_equal_scores_ln2(self):
        loss, _, _ = P.pairwise_loss(1.0, 1.0, 1)
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_limit_to_zero(self):
        loss, _, _ = P.pairwise_loss(60.0, 0.0, 1)
        assert 0 <= loss < 1e-20

    def test_hand_value(self):
        loss, _, _ = P.pairwise_loss(1.0, 0.0, 1)
        assert loss == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)

    def test_overflow_safe(self):
        loss, gi, gj = P.pairwise_loss(1000.0, 0.0, 0)
        assert np.isfinite(loss) and loss == pytest.approx(1000.0)
        assert gi == pytest.approx(1.0) and gj == pytest.approx(-1.0)
        loss2, _, _ = P.pairwise_loss(-500.0, 500.0, 1)
        assert np.isfinite(loss2) and loss2 == pytest.approx(1000.0)

    def test_gradients_match_finite_differences(self):
        h = 1e-6
        for si, sj, y in [(0.3, -0.2, 1), (1.5, 2.0, 0), (0.0, 0.0, 1)]:
            _, gi, gj = P.pairwise_loss(si, sj, y)
            fd_i = (P.pairwise_loss(si + h, sj, y)[0]
                    - P.pairwise_loss(si - h, sj, y)[0]) / (2 * h)
            fd_j = (P.pairwise_loss(si, sj + h, y)[0]
                    - P.pairwise_loss(si, sj - h, y)[0]) / (2 * h)
            assert gi == pytest.approx(fd_i, abs=1e-8)
            assert gj == pytest.approx(fd_j, abs=1e-8)

    def test_strictly_decreasing_in_gap_when_better(self):
        losses = [P.pairwise_loss(g, 0.0, 1)[0] for g in np.linspace(-3, 3, 25)]
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_rejects_bad_label(self):
        with pytest.raises(ValueError):
            P.pairwise_loss(0.0, 0.0, 2)


class TestCosineSchedule:
    def test_endpoints_and_monotonicity(self):
        total = 400
        lrs = [P.cosine_lr(t, total, 0.01) for t in range(total)]
        assert lrs[0] == pytest.approx(0.01)
        assert lrs[-1] <= 0.01 * 1e-3
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_single_step(self):
        assert P.cosine_lr(0, 1, 0.01) == pytest.approx(0.01)


class TestTrain:
    def two_arch_set(self):
        rng = np.random.default_rng(2)
        a1 = random_architecture(SPEC, rng)
        a2 = random_architecture(SPEC, rng)
        return [(a1, 0.2), (a2, 0.5)]

    def test_separable_pair_ordered(self):
        train_set = self.two_arch_set()
        params = P.train(rand_params(4), CFG,
                         P.TrainHyper(epochs=500, seed=1), train_set)
        scores = P.score_set(params, CFG, [a for a, _ in train_set])
        assert scores[0] > scores[1]  # lower error scores higher

    def test_deterministic(self):
        train_set = self.two_arch_set()
        hyper = P.TrainHyper(epochs=50, seed=3)
        p1 = P.train(rand_params(4), CFG, hyper, train_set)
        p2 = P.train(rand_params(4), CFG, hyper, train_set)
        assert all(np.array_equal(a, b) for a, b in zip(p1.weights, p2.weights))
        assert np.array_equal(p1.w_out, p2.w_out) and p1.b_out == p2.b_out

    def test_input_params_not_mutated(self):
        train_set = self.two_arch_set()
        params = rand_params(4)
        before = [w.copy() for w in params.weights]
        P.train(params, CFG, P.TrainHyper(epochs=5, seed=0), train_set)
        assert all(np.array_equal(a, b) for a, b in zip(params.weights, before))

    def test_no_ranking_signal(self):
        rng = np.random.default_rng(0)
        train_set = [(random_architecture(SPEC, rng), 0.3) for _ in range(4)]
        with pytest.raises(P.NoRankingSignalError):
            P.train(rand_params(), CFG, P.TrainHyper(epochs=1), train_set)

    def test_needs_two_items(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            P.train(rand_params(), CFG, P.TrainHyper(epochs=1),
                    [(random_architecture(SPEC, rng), 0.3)])

    def test_loss_trajectory_decreases(self, tmp_path, default_bench, default_space):
        rng = np.random.default_rng(8)
        idx = rng.choice(len(default_space), 32, replace=False)
        train_set = [
            (default_space.archs[i], default_bench.query_val(default_space.archs[i]))
            for i in idx
        ]
        log = tmp_path / "loss.csv"
        P.train(rand_params(6), CFG, P.TrainHyper(epochs=120, seed=5), train_set,
                loss_log_path=log)
        rows = log.read_text().strip().splitlines()[1:]
        losses = np.array([float(r.split(",")[1]) for r in rows])
        assert len(losses) == 120
        window = 50
        assert losses[-window:].mean() <= losses[:window].mean()

    def test_ranking_quality_on_synthetic(self, default_bench, default_space):
        # drawn-at-random train/held split; threshold from the recorded
        # pilot (docs/pilot.md)
        from scipy.stats import kendalltau

        rng = np.random.default_rng(42)
        idx = rng.choice(len(default_space), 64 + 256, replace=False)
        archs = [default_space.archs[i] for i in idx]
        train_set = [(a, default_bench.query_val(a)) for a in archs[:64]]
        held = archs[64:]
        held_vals = np.array([default_bench.query_val(a) for a in held])
        cfg = P.PredictorConfig(input_width=3, num_gcn_layers=3, hidden_width=32)
        params = P.train(
            P.init_params(cfg, np.random.default_rng(1)), cfg,
            P.TrainHyper(epochs=800, lr=0.05, pairs_per_epoch=512, seed=7),
            train_set,
        )
        scores = P.score_set(params, cfg, held)
        tau = kendalltau(scores, -held_vals).statistic
        assert tau >= 0.5


class TestScoreSet:
    def test_empty(self):
        assert P.score_set(rand_params(), CFG, []).shape == (0,)

    def test_permutation_of_list(self, rng):
        params = rand_params(2)
        archs = [random_architecture(SPEC, rng) for _ in range(10)]
        scores = P.score_set(params, CFG, archs)
        perm = rng.permutation(10)
        scores_p = P.score_set(params, CFG, [archs[i] for i in perm])
        assert np.allclose(scores_p, scores[perm])

    def test_duplicates_equal(self, rng):
        params = rand_params(2)
        arch = random_architecture(SPEC, rng)
        scores = P.score_set(params, CFG, [arch, arch, arch])
        assert scores[0] == scores[1] == scores[2]

    def test_matches_forward(self, rng):
        params = rand_params(2)
        archs = [random_architecture(SPEC, rng) for _ in range(6)]
        scores = P.score_set(params, CFG, archs)
        singles = [P.forward(params, CFG, a)[0] for a in archs]
        assert np.allclose(scores, singles, rtol=1e-12)


class TestCheckpoint:
    def test_roundtrip_exact(self, tmp_path):
        params = rand_params(13)
        params.b_out = 0.123456789012345
        path = tmp_path / "ckpt.npz"
        P.save_params(params, path)
        loaded = P.load_params(path)
        assert all(
            np.array_equal(a, b) for a, b in zip(loaded.weights, params.weights)
        )
        assert np.array_equal(loaded.w_out, params.w_out)
        assert loaded.b_out == params.b_out
