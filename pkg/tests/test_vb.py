import time

import numpy as np
import pytest
from scipy import integrate, special

from bmacausal.exact import PriorConfig, bma_mie_quasi
from bmacausal.scm import CandidateSpace, Dataset, LinearScm, Dag, simulate
from bmacausal.vb import (
    MixingModel,
    VBConfig,
    VBDivergenceError,
    _iterate,
    vb_expectations,
    vb_fit_all,
    vb_fit_node,
    vb_mie,
    vb_step,
)


def one_parent_data(theta, n, seed):
    scm = LinearScm(Dag(("x", "y"), ((0, 1),)), {(0, 1): theta}, 1.0)
    return simulate(scm, n, rng_seed=seed)


def orthogonal_design(rng, n, k):
    """Columns with X'X diagonal and unequal scales."""
    q, _ = np.linalg.qr(rng.normal(size=(n, k)))
    return q * rng.uniform(1.0, 8.0, size=k)


class TestExpectations:
    def test_examples(self):
        assert vb_expectations(4.0, 1.0, 0.0, 1.0, 0.0)[0] == pytest.approx(0.75)
        assert vb_expectations(4.0, 1.0, 0.0, 1.0, 0.0)[1] == pytest.approx(2.0)
        assert vb_expectations(4.0, 1.0, 1.0, 1.0, 2.0)[2] == pytest.approx(1.0)

    @pytest.mark.parametrize("a, b", [(0.5, 2.0), (3.0, 0.1), (1.0, 1.0)])
    def test_gig_moments_by_quadrature(self, a, b):
        def density(t):
            return t**-0.5 * np.exp(-(a * t + b / t) / 2)

        z = integrate.quad(density, 0, np.inf)[0]
        mean = integrate.quad(lambda t: t * density(t), 0, np.inf)[0] / z
        inv_mean = integrate.quad(lambda t: density(t) / t, 0, np.inf)[0] / z
        got = vb_expectations(a, b, 0.0, 1.0, 0.0)
        assert got[0] == pytest.approx(mean, rel=1e-7)
        assert got[1] == pytest.approx(inv_mean, rel=1e-7)

    def test_gig_mean_matches_bessel_form(self):
        a, b = 2.0, 5.0
        w = np.sqrt(a * b)
        bessel = np.sqrt(b / a) * special.kv(1.5, w) / special.kv(0.5, w)
        assert vb_expectations(a, b, 0.0, 1.0, 0.0)[0] == pytest.approx(bessel, rel=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            vb_expectations(0.0, 1.0, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            vb_expectations(1.0, -1.0, 1.0, 1.0, 1.0)

    def test_vectorised(self):
        out = vb_expectations(np.array([4.0, 1.0]), np.array([1.0, 1.0]), 0.0, 1.0, 0.0)
        np.testing.assert_allclose(out[0], [0.75, 2.0])


class TestFitNode:
    def test_no_parents(self):
        data = Dataset(("a",), np.ones((4, 1)))
        st = vb_fit_node(data, "a", [], VBConfig())
        assert st.converged and st.iterations == 0 and st.theta_mean.shape == (0,)

    def test_strong_signal_shrinks_slightly(self):
        data = one_parent_data(5.0, 1000, 0)
        st = vb_fit_node(data, "y", ["x"], VBConfig())
        x, y = data.column("x"), data.column("y")
        ls = (x @ y) / (x @ x)
        assert 4.5 <= st.theta_mean[0] <= 5.5
        assert abs(st.theta_mean[0]) < abs(ls)

    def test_null_signal_pruned(self):
        values = [abs(vb_fit_node(one_parent_data(0.0, 1000, s), "y", ["x"], VBConfig())
                      .theta_mean[0]) for s in range(50)]
        assert np.quantile(values, 0.9) < 0.05

    def test_positivity(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            n, k = 40, 4
            x = rng.normal(size=(n, k))
            y = x @ rng.normal(size=k) * rng.integers(0, 2, size=k).sum() + rng.normal(size=n)
            data = Dataset(tuple("abcd") + ("y",), np.column_stack([x, y]))
            st = vb_fit_node(data, "y", list("abcd"), VBConfig())
            for arr in (st.tau_mean, st.inv_tau_mean, st.alpha_mean):
                assert np.all(arr > 0)
            assert np.all(np.linalg.eigvalsh(st.theta_cov) > 0)

    def test_non_finite_reported_with_iteration(self):
        data = Dataset(("x", "y"), np.array([[1.0, 1e200], [2.0, -1e200]]))
        with pytest.raises(VBDivergenceError, match="iteration"):
            vb_fit_node(data, "y", ["x"], VBConfig(noise_precision=1e200))

    def test_rejects_self_parent(self):
        data = Dataset(("x", "y"), np.ones((3, 2)))
        with pytest.raises(ValueError):
            vb_fit_node(data, "y", ["y"], VBConfig())


class TestFixedPointAndShrinkage:
    @pytest.mark.parametrize("seed", range(5))
    def test_extra_sweep_is_stable(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(80, 3))
        y = x @ np.array([1.5, 0.0, -0.7]) + rng.normal(size=80)
        data = Dataset(("a", "b", "c", "y"), np.column_stack([x, y]))
        cfg = VBConfig(max_iter=50_000)
        st = vb_fit_node(data, "y", ["a", "b", "c"], cfg)
        assert st.converged
        nxt = vb_step(data, st, cfg)
        for old, new in [(st.theta_mean, nxt.theta_mean), (st.theta_cov, nxt.theta_cov),
                         (st.tau_mean, nxt.tau_mean), (st.inv_tau_mean, nxt.inv_tau_mean),
                         (st.alpha_mean, nxt.alpha_mean)]:
            assert np.max(np.abs(new - old)) < cfg.tol

    @pytest.mark.parametrize("seed", range(5))
    def test_shrinkage_every_iteration(self, seed):
        rng = np.random.default_rng(seed)
        n, k = 60, 4
        x = orthogonal_design(rng, n, k)
        y = x @ rng.normal(size=k) + rng.normal(size=n)
        data = Dataset(("a", "b", "c", "d", "y"), np.column_stack([x, y]))
        ls = np.linalg.lstsq(x, y, rcond=None)[0]
        cfg = VBConfig()
        st = vb_fit_node(data, "y", list("abcd"), VBConfig(max_iter=1))
        for _ in range(200):
            assert np.all(np.abs(st.theta_mean) <= np.abs(ls))
            st = vb_step(data, st, cfg)

    def test_step_matches_longer_run(self):
        data = one_parent_data(1.0, 30, 3)
        a = vb_fit_node(data, "y", ["x"], VBConfig(max_iter=7))
        b = vb_step(data, vb_fit_node(data, "y", ["x"], VBConfig(max_iter=6)), VBConfig())
        np.testing.assert_array_equal(a.theta_mean, b.theta_mean)
        assert b.iterations == 7


class TestFitAll:
    def wz_space(self):
        nodes = ["w", "x", "z", "y", "v"]
        edges = [("w", "x"), ("w", "y"), ("x", "z"), ("z", "y"), ("x", "y"), ("w", "v"),
                 ("v", "y")]
        return CandidateSpace.from_edges(nodes, [(a, b, 0.5) for a, b in edges])

    def test_single_node(self):
        space = CandidateSpace(Dag(("a",)), ())
        assert vb_fit_all(Dataset(("a",), np.ones((3, 1))), space, VBConfig()) == {}

    def test_chain_equals_single_fit(self):
        space = CandidateSpace.from_edges(["x", "y"], [("x", "y", 0.5)])
        data = one_parent_data(0.8, 50, 0)
        states = vb_fit_all(data, space, VBConfig())
        single = vb_fit_node(data, "y", ["x"], VBConfig())
        assert list(states) == ["y"]
        np.testing.assert_array_equal(states["y"].theta_mean, single.theta_mean)

    def test_order_insensitive(self):
        space = self.wz_space()
        data = Dataset(space.nodes, np.random.default_rng(4).normal(size=(70, 5)))
        a = vb_fit_all(data, space, VBConfig())
        b = vb_fit_all(data, space, VBConfig(), order=[4, 3, 2, 1, 0])
        assert list(a) == list(b)
        for name in a:
            assert a[name].theta_mean.tobytes() == b[name].theta_mean.tobytes()
            assert a[name].alpha_mean.tobytes() == b[name].alpha_mean.tobytes()


class TestMie:
    def test_zero_means(self):
        space = CandidateSpace.from_edges(["x", "y"], [("x", "y", 0.5)])
        data = Dataset(("x", "y"), np.column_stack([np.ones(5), np.zeros(5)]))
        states = vb_fit_all(data, space, VBConfig())
        assert vb_mie(states, space, "x", "y", 3.0) == 0.0

    def _state(self, node, parents, means):
        from bmacausal.vb import VBNodeState

        k = len(means)
        one = np.ones(k)
        return VBNodeState(node, tuple(parents), np.array(means), np.eye(k), one, one, one, 1, True)

    def test_chain(self):
        space = CandidateSpace.from_edges(["x", "y"], [("x", "y", 0.5)])
        states = {"y": self._state(1, [0], [0.7])}
        assert vb_mie(states, space, "x", "y", 2.0) == pytest.approx(1.4)

    def test_two_paths(self):
        space = CandidateSpace.from_edges(
            ["x", "z", "y"], [("x", "y", 0.5), ("x", "z", 0.5), ("z", "y", 0.5)])
        states = {"z": self._state(1, [0], [2.0]), "y": self._state(2, [0, 1], [1.0, 3.0])}
        assert vb_mie(states, space, "x", "y", 1.5) == pytest.approx(7.0 * 1.5)

    def test_missing_state(self):
        space = CandidateSpace.from_edges(["x", "y"], [("x", "y", 0.5)])
        with pytest.raises(KeyError):
            vb_mie({}, space, "x", "y")


def test_consistent_with_exact_engine():
    space = CandidateSpace.from_edges(["x", "y"], [("x", "y", 0.5)])
    prior = PriorConfig()
    gaps = []
    rng = np.random.default_rng(0)
    for seed in range(100):
        theta = rng.choice([-1, 1]) * rng.uniform(3, 5)
        data = one_parent_data(theta, 500, seed)
        vb = vb_mie(vb_fit_all(data, space, VBConfig()), space, "x", "y")
        gaps.append(abs(vb - bma_mie_quasi(space, data, prior, "x", "y")))
    assert np.mean(gaps) <= 0.1


def test_iteration_cost_dominated_by_solve():
    rng = np.random.default_rng(0)
    timings = {}
    for k in (50, 100):
        x = rng.normal(size=(400, k))
        y = x[:, 0] + rng.normal(size=400)
        gram, xty = x.T @ x, x.T @ y
        cfg = VBConfig(max_iter=100, tol=1e-300)
        best = np.inf
        for _ in range(5):
            t0 = time.perf_counter()
            _iterate(0, tuple(range(1, k + 1)), gram, xty, cfg)
            best = min(best, time.perf_counter() - t0)
        timings[k] = best
    assert 2.0 <= timings[100] / timings[50] <= 10.0


def test_mixing_model_kind():
    assert MixingModel().kind == "exponential-gamma"
    with pytest.raises(ValueError):
        MixingModel("laplace")
