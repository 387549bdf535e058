import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from identlab.errors import PreconditionError, ShapeError, UndefinedCorrelationError
from identlab.metrics import linear_sum_assignment, mcc, pearson, r_squared, r_squared_detail


def brute_force_max(c):
    n = c.shape[0]
    return max(sum(c[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


class TestPearson:
    def test_perfect(self):
        x = np.arange(5.0)
        assert pearson(x, 2 * x) == pytest.approx(1.0)
        assert pearson(x, -x) == pytest.approx(-1.0)

    def test_hand_value(self):
        assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)

    def test_constant_undefined(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson([1, 1, 1], [1, 2, 3])


class TestAssignment:
    def test_identity_dominant(self):
        assert linear_sum_assignment(np.eye(5), maximize=True).tolist() == list(range(5))

    def test_brute_force_4x4(self):
        c = np.random.default_rng(0).standard_normal((4, 4))
        p = linear_sum_assignment(c, maximize=True)
        assert c[np.arange(4), p].sum() == pytest.approx(brute_force_max(c), abs=1e-12)

    def test_brute_force_500_trials(self):
        g = np.random.default_rng(1)
        for trial in range(500):
            d = 1 + trial % 6
            c = g.standard_normal((d, d)) if trial % 3 else g.integers(0, 4, (d, d)).astype(float)
            for maximize in (True, False):
                p = linear_sum_assignment(c, maximize=maximize)
                assert sorted(p.tolist()) == list(range(d))
                best = brute_force_max(c) if maximize else -brute_force_max(-c)
                assert c[np.arange(d), p].sum() == pytest.approx(best, abs=1e-9)

    def test_row_shift_invariance(self):
        g = np.random.default_rng(2)
        c = g.standard_normal((6, 6))
        shifted = c + g.standard_normal(6)[:, None]
        assert np.array_equal(linear_sum_assignment(c, True), linear_sum_assignment(shifted, True))

    def test_non_square(self):
        with pytest.raises(ShapeError):
            linear_sum_assignment(np.ones((2, 3)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 40), st.integers(0, 2**31))
    def test_matches_scipy_objective(self, n, seed):
        from scipy.optimize import linear_sum_assignment as ref

        c = np.random.default_rng(seed).standard_normal((n, n))
        r, col = ref(c)
        p = linear_sum_assignment(c)
        assert c[np.arange(n), p].sum() == pytest.approx(c[r, col].sum(), abs=1e-9)


class TestRSquared:
    def test_orthogonal_map_is_one(self):
        g = np.random.default_rng(3)
        z = g.standard_normal((500, 10))
        q = ortho_group.rvs(10, random_state=3)
        assert abs(r_squared(z, z @ q.T + g.standard_normal(10)) - 1.0) <= 1e-10

    def test_null(self):
        g = np.random.default_rng(4)
        assert abs(r_squared(g.standard_normal((10**4, 10)), g.standard_normal((10**4, 10)))) <= 0.02

    def test_affine_invariance_of_true(self):
        g = np.random.default_rng(5)
        z = g.standard_normal((300, 4))
        zh = np.tanh(z @ g.standard_normal((4, 4))) + 0.1 * g.standard_normal((300, 4))
        a = g.standard_normal((4, 4)) + 4 * np.eye(4)
        base = r_squared(z, zh)
        assert r_squared(z @ a + 3.0, zh) == pytest.approx(base, abs=1e-10)
        q = ortho_group.rvs(4, random_state=5)
        assert r_squared(z, zh @ q) == pytest.approx(base, abs=1e-10)

    def test_rank_deficient_flagged(self):
        g = np.random.default_rng(6)
        z = g.standard_normal((50, 2))
        res = r_squared_detail(np.hstack([z, z[:, :1]]), g.standard_normal((50, 3)))
        assert res.rank_deficient and res.value <= 1.0

    def test_too_few_rows(self):
        with pytest.raises(PreconditionError):
            r_squared(np.ones((3, 2)), np.ones((3, 2)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_at_most_one(self, seed):
        g = np.random.default_rng(seed)
        assert r_squared(g.standard_normal((30, 3)), g.standard_normal((30, 3))) <= 1.0


class TestMcc:
    def test_permuted_scaled_is_one(self):
        g = np.random.default_rng(7)
        z = g.standard_normal((400, 6))
        p = g.permutation(6)
        zh = z[:, p] * np.array([3, -3, 3, -3, 3, -3])
        value, assign, corr = mcc(z, zh)
        assert abs(value - 1.0) <= 1e-10
        assert np.array_equal(p[assign], np.arange(6))
        assert value == pytest.approx(np.mean(np.abs(corr[np.arange(6), assign])))

    def test_null(self):
        g = np.random.default_rng(8)
        assert mcc(g.standard_normal((10**4, 10)), g.standard_normal((10**4, 10)))[0] <= 0.15

    def test_invariance(self):
        g = np.random.default_rng(9)
        z = g.standard_normal((300, 5))
        zh = z @ g.standard_normal((5, 5)) + g.standard_normal((300, 5))
        base = mcc(z, zh)[0]
        p, s = g.permutation(5), g.uniform(0.5, 2, 5) * g.choice([-1, 1], 5)
        assert abs(mcc(z, zh[:, p] * s)[0] - base) <= 1e-10
        assert abs(mcc(z[:, p] * s, zh)[0] - base) <= 1e-10
        assert 0.0 <= base <= 1.0

    def test_constant_column_named(self):
        z = np.random.default_rng(10).standard_normal((20, 3))
        zh = z.copy()
        zh[:, 2] = 1.0
        with pytest.raises(UndefinedCorrelationError, match="column 2"):
            mcc(z, zh)


class TestEvaluateRun:
    def test_untrained_below_truth_and_report_fields(self, tmp_path):
        import json

        from identlab.contrastive import OutputSpace, SimilarityKernel, TrainConfig, init_pair
        from identlab.lab import ExperimentSpec, bundled_suite, load_suite, make_datasets
        from identlab.metrics import evaluate_run
        from identlab.rand import RngState

        spec = load_suite(bundled_suite("table1b"))[1][0]
        small = ExperimentSpec.from_dict({**spec.to_dict(), "n_samples": 300, "n_eval": 300})
        data = make_datasets(small, 0).test
        pair = init_pair(RngState(0), 15, 15, TrainConfig(), OutputSpace("box", 10), SimilarityKernel("neg_l1"))
        rep = evaluate_run(data, pair, final_loss=1.5, symmetric=True, meta={"run": "x"})
        assert rep.r2 < 0.95 and rep.mcc < 0.95
        assert sorted(rep.assignment.tolist()) == list(range(10))
        assert rep.mcc == pytest.approx(np.mean(np.abs(rep.signed_corr[np.arange(10), rep.assignment])))
        assert rep.r2_t is not None
        d = json.loads(rep.save_json(tmp_path / "r.json").read_text())
        assert len(d["signed_corr"]) == 10 and d["meta"] == {"run": "x"}
