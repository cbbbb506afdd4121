"""Proximity-control bundle method on known non-smooth and smooth problems."""

import numpy as np
import pytest

from structune import BundleOptions, OracleSample
from structune.bundle_opt import BundleState, inner_loop, run, simplex_qp, tangent_step


def abs_oracle(x):
    """f = |x1| + 2 |x2| with the natural subgradient."""
    x = np.asarray(x, float)
    g = np.array([np.sign(x[0]), 2.0 * np.sign(x[1])])
    val = abs(x[0]) + 2.0 * abs(x[1])
    return OracleSample(x, val, [(g, val)])


def two_parabolas(x):
    x = np.asarray(x, float)
    f1 = x[0] ** 2
    f2 = (x[0] - 2.0) ** 2
    val = max(f1, f2)
    planes = []
    if f1 >= val - 1e-9:
        planes.append((np.array([2.0 * x[0]]), f1))
    if f2 >= val - 1e-9:
        planes.append((np.array([2.0 * (x[0] - 2.0)]), f2))
    return OracleSample(x, val, planes)


def banana(x):
    x = np.asarray(x, float)
    a, b = x
    val = (1.0 - a) ** 2 + 100.0 * (b - a * a) ** 2
    g = np.array(
        [-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]
    )
    return OracleSample(x, val, [(g, val)])


def quadratic(x):
    x = np.asarray(x, float)
    val = 0.5 * float(x @ x)
    return OracleSample(x, val, [(x.copy(), val)])


class TestSimplexQp:
    def test_single_plane(self):
        lam, _ = simplex_qp(np.array([[1.0, 2.0]]), np.array([3.0]), 2.0)
        assert np.allclose(lam, [1.0])

    def test_kkt_and_gap_on_random_instances(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            m, n = int(rng.integers(1, 8)), int(rng.integers(1, 5))
            G = rng.normal(size=(m, n))
            p = rng.normal(size=m)
            tau = float(rng.uniform(0.1, 10.0))
            lam, mu = simplex_qp(G, p, tau)
            assert np.all(lam >= -1e-12)
            assert abs(lam.sum() - 1.0) <= 1e-10
            # stationarity: active weights sit on the same dual level
            q = (G @ G.T) / tau
            grad = q @ lam - p
            act = lam > 1e-10
            if act.any():
                assert np.max(np.abs(grad[act] - mu)) <= 1e-8 * (1 + abs(mu))
            assert np.min(grad - mu) >= -1e-8 * (1 + abs(mu) + np.abs(p).max())

    def test_matches_brute_force_on_simplex_grid(self):
        rng = np.random.default_rng(18)
        for _ in range(10):
            G = rng.normal(size=(3, 2))
            p = rng.normal(size=3)
            tau = 1.7

            def obj(lam):
                v = G.T @ lam
                return float(v @ v) / (2 * tau) - float(p @ lam)

            lam, _ = simplex_qp(G, p, tau)
            best = obj(lam)
            grid = np.linspace(0.0, 1.0, 41)
            for a in grid:
                for b in grid:
                    if a + b > 1.0 + 1e-12:
                        continue
                    trial = np.array([a, b, 1.0 - a - b])
                    assert best <= obj(trial) + 1e-7


class TestTangentStep:
    def fresh_state(self, x, oracle, tau):
        sample = oracle(np.asarray(x, float))
        state = BundleState(sample.point, sample.value, tau, BundleOptions())
        for g, v in sample.planes:
            state.add_plane(sample.point, v, g)
        return state

    def test_single_plane_gradient_step(self):
        state = self.fresh_state([1.0, -2.0], quadratic, 4.0)
        y, _, info = tangent_step(state)
        assert np.allclose(y, np.array([1.0, -2.0]) - np.array([1.0, -2.0]) / 4.0)
        assert np.allclose(info["g_agg"], [1.0, -2.0])

    def test_trial_parallel_to_negative_gradient(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            x = rng.normal(size=3)
            state = self.fresh_state(x, quadratic, float(rng.uniform(0.5, 20.0)))
            y, _, _ = tangent_step(state)
            d = y - x
            g = x
            cosine = abs(d @ g) / (np.linalg.norm(d) * np.linalg.norm(g))
            assert cosine >= 1.0 - 1e-10

    def test_two_opposing_planes_straddle_kink(self):
        # f = |x| at serious point 0.5: planes +1 (at 0.5) and -1 (at -0.5)
        state = BundleState(np.array([0.5]), 0.5, 1.0, BundleOptions())
        state.add_plane(np.array([0.5]), 0.5, np.array([1.0]))
        state.add_plane(np.array([-0.5]), 0.5, np.array([-1.0]))
        y, model_value, _ = tangent_step(state)
        assert -0.5 <= y[0] <= 0.5
        assert model_value >= -0.1  # downshifted model stays near the kink value

    def test_huge_tau_freezes_iterate(self):
        state = self.fresh_state([3.0, 1.0], quadratic, 1e9)
        y, _, _ = tangent_step(state)
        assert np.linalg.norm(y - state.x) <= 1e-8

    def test_downshift_keeps_planes_below_serious_value(self):
        rng = np.random.default_rng(6)
        state = self.fresh_state(rng.normal(size=2), abs_oracle, 1.0)
        for _ in range(15):
            z = rng.normal(size=2)
            s = abs_oracle(z)
            for g, v in s.planes:
                state.add_plane(z, v, g)
        for cut in state.all_cuts():
            val_at_x = cut.value + cut.g @ (state.x - cut.z) - cut.shift
            assert val_at_x <= state.fx + 1e-12


class TestInnerLoop:
    def test_smooth_step_accepted_immediately(self):
        sample = quadratic(np.array([1.0]))
        state = BundleState(sample.point, sample.value, 1.0, BundleOptions())
        for g, v in sample.planes:
            state.add_plane(sample.point, v, g)
        res = inner_loop(state, quadratic)
        assert res["kind"] == "serious"
        rho = (state.fx - res["sample"].value) / (state.fx - res["model_value"])
        assert rho >= 0.5

    def test_terminates_at_kink_minimum(self):
        x0 = np.array([1e-9, 0.0])
        sample = abs_oracle(x0)
        state = BundleState(x0, sample.value, 1.0, BundleOptions())
        for g, v in sample.planes:
            state.add_plane(x0, v, g)
        # seed both sides of each kink so the model pins the minimum
        for z in ([1e-3, 0.0], [-1e-3, 0.0], [0.0, 1e-3], [0.0, -1e-3]):
            s = abs_oracle(np.array(z))
            for g, v in s.planes:
                state.add_plane(np.array(z), v, g)
        res = inner_loop(state, abs_oracle)
        assert res["kind"] == "optimal"

    def test_everywhere_infeasible_oracle_exhausts(self):
        def barrier(x):
            return OracleSample(np.asarray(x), np.inf, [(np.ones(1), 1.0)],
                                feasible_eval=False)

        state = BundleState(np.array([0.0]), 1.0, 1.0, BundleOptions(inner_budget=20))
        state.add_plane(np.array([0.0]), 1.0, np.array([0.5]))
        res = inner_loop(state, barrier)
        assert res["kind"] == "exhausted"
        assert state.tau > 1.0  # proximity tightened repeatedly


class TestRun:
    def test_separable_kinks(self):
        res = run(abs_oracle, np.array([3.0, -2.0]))
        assert res.f <= 1e-6
        assert np.max(np.abs(res.x)) <= 1e-6
        assert res.certificate <= 1e-5
        values = [row["f"] for row in res.history]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_max_of_two_parabolas(self):
        res = run(two_parabolas, np.array([5.0]))
        assert res.x[0] == pytest.approx(1.0, abs=2e-6)
        assert res.f == pytest.approx(1.0, abs=1e-6)
        assert res.certificate <= 1e-5

    def test_banana_valley(self):
        res = run(banana, np.array([-1.2, 1.0]), BundleOptions(max_serious=300))
        assert res.f <= 1e-6
        assert np.allclose(res.x, [1.0, 1.0], atol=2e-3)

    def test_box_bound_optimum(self):
        # minimize 0.5 x^2 over x >= 1: optimum at the bound
        opts = BundleOptions(lo=np.array([1.0]), hi=np.array([4.0]))
        res = run(quadratic, np.array([3.0]), opts)
        assert res.x[0] == pytest.approx(1.0, abs=1e-6)

    def test_target_value_short_circuit(self):
        opts = BundleOptions(target_value=0.5)
        res = run(quadratic, np.array([3.0]), opts)
        assert res.status == "target_reached"
        assert res.f < 0.5
