"""Norm evaluations against analytic values and independent oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st_

from structune import (
    PoleGoal,
    Spectrum,
    StateSpace,
    freq_response,
    gramians,
    h2_norm,
    hinf_norm,
    pole_region_violation,
)
from structune.errors import NonzeroFeedthrough, Unstable

from oracles import grid_hinf, quad_h2, random_stable_ss


def first_order(kappa):
    return StateSpace(-kappa, 1.0, 1.0, 0.0)


def resonant(zeta):
    # 1/(s^2 + 2 zeta s + 1)
    return StateSpace([[0.0, 1.0], [-1.0, -2.0 * zeta]], [[0.0], [1.0]], [[1.0, 0.0]], 0.0)


class TestH2:
    def test_first_order_analytic(self):
        assert h2_norm(first_order(1.0)) == pytest.approx(math.sqrt(0.5), abs=1e-9)

    def test_first_order_kappa_two(self):
        assert h2_norm(first_order(2.0)) == pytest.approx(0.5, abs=1e-12)

    def test_unstable_rejected(self):
        with pytest.raises(Unstable):
            h2_norm(StateSpace(1.0, 1.0, 1.0, 0.0))

    def test_feedthrough_rejected(self):
        with pytest.raises(NonzeroFeedthrough):
            h2_norm(StateSpace(-1.0, 1.0, 1.0, 0.5))

    def test_gramian_duality(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            sys_ = random_stable_ss(rng, int(rng.integers(2, 7)), ny=2, nu=2)
            x, y = gramians(sys_)
            lhs = np.trace(sys_.c @ x @ sys_.c.T)
            rhs = np.trace(sys_.b.T @ y @ sys_.b)
            assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))

    def test_scaling(self):
        rng = np.random.default_rng(22)
        sys_ = random_stable_ss(rng, 4)
        for alpha in (0.25, -3.0):
            scaled = sys_.scaled(alpha)
            assert h2_norm(scaled) == pytest.approx(abs(alpha) * h2_norm(sys_), rel=1e-8)

    def test_matches_quadrature(self):
        rng = np.random.default_rng(23)
        for _ in range(8):
            sys_ = random_stable_ss(rng, int(rng.integers(1, 8)))
            assert h2_norm(sys_) == pytest.approx(quad_h2(sys_), rel=1e-4)


class TestHinf:
    def test_pure_gain(self):
        res = hinf_norm(StateSpace.static(0.5))
        assert res.value == pytest.approx(0.5)
        assert res.peak_frequencies == (0.0,)
        assert res.converged

    def test_first_order(self):
        res = hinf_norm(first_order(1.0))
        assert res.value == pytest.approx(1.0, rel=1e-6)
        assert res.peak_frequencies[0] == pytest.approx(0.0, abs=1e-9)

    def test_resonant_peak(self):
        res = hinf_norm(resonant(0.05))
        assert res.value == pytest.approx(10.012523486, rel=1e-5)
        assert res.peak_frequencies[-1] == pytest.approx(0.99749687, rel=1e-3)

    def test_unstable_rejected(self):
        with pytest.raises(Unstable):
            hinf_norm(StateSpace(0.5, 1.0, 1.0, 0.0))

    def test_scaling(self):
        rng = np.random.default_rng(31)
        sys_ = random_stable_ss(rng, 5, with_d=True)
        base = hinf_norm(sys_).value
        for alpha in (0.1, -7.0):
            assert hinf_norm(sys_.scaled(alpha)).value == pytest.approx(
                abs(alpha) * base, rel=1e-8
            )

    def test_lower_bounds_every_sample(self):
        rng = np.random.default_rng(32)
        sys_ = random_stable_ss(rng, 6, ny=2, nu=2, with_d=True)
        value = hinf_norm(sys_).value
        for w in np.logspace(-2, 2, 200):
            s = np.linalg.svd(freq_response(sys_, w), compute_uv=False)[0]
            assert value >= s - 1e-8

    def test_matches_grid_oracle(self):
        rng = np.random.default_rng(33)
        shapes = [(1, 1), (2, 1), (1, 2), (2, 2)]
        for i in range(10):
            ny, nu = shapes[i % len(shapes)]
            sys_ = random_stable_ss(rng, int(rng.integers(2, 9)), ny=ny, nu=nu,
                                    with_d=bool(i % 2))
            want, _ = grid_hinf(sys_)
            got = hinf_norm(sys_).value
            assert got == pytest.approx(want, rel=1e-4)


class TestPoleRegion:
    def test_tied_decay_and_damping(self):
        spec = Spectrum.from_eigenvalues([-0.5 + 0.8660254j, -0.5 - 0.8660254j])
        v, active = pole_region_violation(spec, PoleGoal(0.9, 0.9, 4.0))
        assert v == pytest.approx(0.4, abs=1e-6)
        assert set(active) == {0, 1}

    def test_published_nominal_pole_satisfies_goal(self):
        # the damping term -|lam|(1 - zeta) dominates the decay slack here
        spec = Spectrum.from_eigenvalues([-1.0781])
        v, _ = pole_region_violation(spec, PoleGoal(0.9, 0.9, 4.0))
        assert v == pytest.approx(-1.0781 + 0.9 * 1.0781, abs=1e-9)
        assert v < 0.0

    def test_frequency_term(self):
        spec = Spectrum.from_eigenvalues([-3.0])
        v, active = pole_region_violation(spec, PoleGoal(0.7, 0.9, 2.0))
        assert v == pytest.approx(1.0)
        assert active == [0]

    @given(
        re=st_.floats(-5.0, -0.01),
        im=st_.floats(0.0, 5.0),
        decay=st_.floats(0.0, 2.0),
        damping=st_.floats(0.0, 0.99),
        wmax=st_.floats(0.5, 10.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_conjugation_invariance_and_monotonicity(self, re, im, decay, damping, wmax):
        goal = PoleGoal(decay, damping, wmax)
        pair = Spectrum.from_eigenvalues([complex(re, im), complex(re, -im)])
        single = Spectrum.from_eigenvalues([complex(re, im)])
        v_pair, _ = pole_region_violation(pair, goal)
        v_single, _ = pole_region_violation(single, goal)
        assert v_pair == pytest.approx(v_single, abs=1e-12)
        # enlarging the region never increases the violation
        larger = PoleGoal(decay * 0.5, damping * 0.5, wmax * 2.0)
        v_larger, _ = pole_region_violation(pair, larger)
        assert v_larger <= v_pair + 1e-12
