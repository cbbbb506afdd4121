"""State-space algebra: loop closures, responses, poles, composition."""

import numpy as np
import pytest

from structune import (
    PartitionedPlant,
    StateSpace,
    closed_pair,
    compose,
    freq_response,
    lft_lower,
    plant_from_json,
    plant_to_json,
    poles,
    ss_from_json,
    ss_to_json,
)
from structune.errors import DimensionMismatch, IllPosed, ResolventSingular

from oracles import plant_blocks_at, random_plant, star_lower


def scalar_plant():
    # xdot = w + u, z = x, y = x
    return PartitionedPlant(
        a=[[0.0]], b1=[[1.0]], b2=[[1.0]],
        c1=[[1.0]], c2=[[1.0]],
        d11=[[0.0]], d12=[[0.0]], d21=[[0.0]], d22=[[0.0]],
    )


def first_order(kappa):
    return StateSpace(-kappa, 1.0, 1.0, 0.0)


class TestLftLower:
    def test_zero_controller_disconnects_loop(self):
        rng = np.random.default_rng(1)
        p = random_plant(rng)
        cl = lft_lower(p, StateSpace.zero(p.nu, p.ny))
        assert np.allclose(cl.a[: p.nstates, : p.nstates], p.a)
        assert np.allclose(cl.b[: p.nstates], p.b1)
        assert np.allclose(cl.c[:, : p.nstates], p.c1)
        assert np.allclose(cl.d, p.d11)

    def test_scalar_static_gain_by_hand(self):
        kappa = 2.0
        cl = lft_lower(scalar_plant(), StateSpace.static(-kappa))
        assert cl.nx == 1
        assert cl.a[0, 0] == pytest.approx(-kappa)
        # transfer is 1/(s+kappa)
        assert abs(freq_response(cl, 0.0)[0, 0]) == pytest.approx(1.0 / kappa)

    def test_singular_feedthrough_loop_raises(self):
        p = PartitionedPlant(
            a=[[0.0]], b1=[[1.0]], b2=[[1.0]],
            c1=[[1.0]], c2=[[1.0]],
            d11=[[0.0]], d12=[[0.0]], d21=[[0.0]], d22=[[1.0]],
        )
        with pytest.raises(IllPosed):
            lft_lower(p, StateSpace.static(1.0))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            lft_lower(scalar_plant(), StateSpace.zero(2, 2))

    def test_matches_star_product_at_random_frequencies(self):
        rng = np.random.default_rng(7)
        p = random_plant(rng, n=4)
        k = StateSpace(
            rng.normal(size=(2, 2)) - 1.5 * np.eye(2),
            rng.normal(size=(2, 2)),
            rng.normal(size=(2, 2)),
            0.1 * rng.normal(size=(2, 2)),
        )
        cl = lft_lower(p, k)
        for w in rng.uniform(0.01, 50.0, size=30):
            p11, p12, p21, p22 = plant_blocks_at(p, w)
            kf = freq_response(k, w)
            want = star_lower(p11, p12, p21, p22, kf)
            got = freq_response(cl, w)
            assert np.max(np.abs(got - want)) <= 1e-10 * max(1.0, np.max(np.abs(want)))

    def test_matches_feedback_assembly_when_d22_zero(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            p = random_plant(rng, n=3, d22_zero=True)
            k = StateSpace(
                rng.normal(size=(2, 2)) - 2.0 * np.eye(2),
                rng.normal(size=(2, 2)),
                rng.normal(size=(2, 2)),
                0.1 * rng.normal(size=(2, 2)),
            )
            cl = lft_lower(p, k)
            # same loop through the negative-feedback pair:
            # z = P11 w + P12 * feedback(K, -P22) * P21 w
            neg_p22 = StateSpace(p.a, p.b2, -p.c2, -p.d22)
            inner, _ = closed_pair(k, neg_p22)  # K (I - P22 K)^{-1}
            p21_sys = StateSpace(p.a, p.b1, p.c2, p.d21)
            p12_sys = StateSpace(p.a, p.b2, p.c1, p.d12)
            p11_sys = StateSpace(p.a, p.b1, p.c1, p.d11)
            alt = compose("sum", [p11_sys, compose("series", [p21_sys, inner, p12_sys])])
            for w in rng.uniform(0.05, 20.0, size=4):
                got = freq_response(cl, w)
                want = freq_response(alt, w)
                assert np.max(np.abs(got - want)) <= 1e-9 * max(1.0, np.max(np.abs(want)))


class TestClosedPair:
    def test_feedback_with_zero_is_identity(self):
        rng = np.random.default_rng(3)
        m = StateSpace(
            rng.normal(size=(3, 3)) - 2 * np.eye(3),
            rng.normal(size=(3, 2)),
            rng.normal(size=(2, 3)),
            rng.normal(size=(2, 2)),
        )
        sys_, _ = closed_pair(m, StateSpace.zero(2, 2))
        for w in (0.0, 0.3, 2.0):
            assert np.allclose(freq_response(sys_, w), freq_response(m, w))

    def test_published_gain_loop_pole(self):
        from structune import build_gtilde

        kt = StateSpace.static([[-1.049, -1.049, -0.05402]])
        _, spec = closed_pair(build_gtilde(3.0), kt)
        assert len(spec) == 1
        assert spec.eigenvalues[0].real == pytest.approx(-1.0781, abs=1e-3)
        assert abs(spec.eigenvalues[0].imag) < 1e-12

    def test_scalar_gains(self):
        sys_, spec = closed_pair(StateSpace.static(1.0), StateSpace.static(1.0))
        assert sys_.d[0, 0] == pytest.approx(0.5)
        assert spec.abscissa == float("-inf")

    def test_singular_pair_raises(self):
        with pytest.raises(IllPosed):
            closed_pair(StateSpace.static(1.0), StateSpace.static(-1.0))


class TestFreqResponse:
    def test_first_order_dc(self):
        assert freq_response(first_order(1.0), 0.0)[0, 0] == pytest.approx(1.0)

    def test_first_order_at_corner(self):
        val = freq_response(first_order(1.0), 1.0)[0, 0]
        assert val == pytest.approx(1.0 / (1.0 + 1.0j))
        assert abs(val) == pytest.approx(0.70711, abs=1e-5)

    def test_static_gain_everywhere(self):
        d = np.array([[2.0, -1.0]])
        for w in (0.0, 1.0, 100.0):
            assert np.allclose(freq_response(StateSpace.static(d), w), d)

    def test_resolvent_singular(self):
        osc = StateSpace([[0.0, 1.0], [-1.0, 0.0]], [[0.0], [1.0]], [[1.0, 0.0]], 0.0)
        with pytest.raises(ResolventSingular):
            freq_response(osc, 1.0)


class TestPoles:
    def test_damped_oscillator(self):
        spec = poles(StateSpace([[0.0, 1.0], [-1.0, -1.0]], [[0.0], [1.0]], [[1.0, 0.0]], 0.0))
        got = sorted(spec.eigenvalues, key=lambda z: z.imag)
        assert got[0] == pytest.approx(-0.5 - 0.8660254j, abs=1e-6)
        assert got[1] == pytest.approx(-0.5 + 0.8660254j, abs=1e-6)
        assert spec.abscissa == pytest.approx(-0.5)

    def test_scalar(self):
        spec = poles(first_order(1.0))
        assert spec.eigenvalues[0] == pytest.approx(-1.0)
        assert spec.abscissa == pytest.approx(-1.0)

    def test_abscissa_picks_worst(self):
        spec = poles(StateSpace(np.diag([-1.0, 2.0]), np.zeros((2, 1)), np.zeros((1, 2)), 0.0))
        assert spec.abscissa == pytest.approx(2.0)

    def test_static_system_rejected(self):
        with pytest.raises(DimensionMismatch):
            poles(StateSpace.static(1.0))


class TestCompose:
    def test_block_diag_shapes(self):
        s = compose("block_diag", [first_order(1.0), first_order(2.0)])
        assert (s.nx, s.nu, s.ny) == (2, 2, 2)
        assert np.allclose(s.a, np.diag([-1.0, -2.0]))

    def test_block_diag_pole_union(self):
        rng = np.random.default_rng(5)
        s1 = StateSpace(rng.normal(size=(2, 2)), rng.normal(size=(2, 1)),
                        rng.normal(size=(1, 2)), 0.0)
        s2 = StateSpace(rng.normal(size=(3, 3)), rng.normal(size=(3, 1)),
                        rng.normal(size=(1, 3)), 0.0)
        got = np.sort_complex(poles(compose("block_diag", [s1, s2])).eigenvalues)
        want = np.sort_complex(
            np.concatenate([poles(s1).eigenvalues, poles(s2).eigenvalues])
        )
        assert np.max(np.abs(got - want)) <= 1e-8

    def test_series_dc_gain_is_product(self):
        s = compose("series", [first_order(1.0), first_order(2.0)])
        assert freq_response(s, 0.0)[0, 0] == pytest.approx(0.5)

    def test_sum_adds_feedthrough(self):
        k0 = StateSpace.static([[0.0, 0.0, 1.0]])
        k = StateSpace.static([[-1.0, 0.5, 0.25]])
        s = compose("sum", [k0, k])
        assert np.allclose(s.d, [[-1.0, 0.5, 1.25]])

    def test_parallel_stacks_outputs(self):
        s = compose("parallel", [first_order(1.0), first_order(2.0)])
        assert (s.nu, s.ny) == (1, 2)
        resp = freq_response(s, 0.0)
        assert resp[0, 0] == pytest.approx(1.0)
        assert resp[1, 0] == pytest.approx(0.5)


class TestJson:
    def test_state_space_round_trip(self):
        rng = np.random.default_rng(9)
        s = StateSpace(rng.normal(size=(2, 2)), rng.normal(size=(2, 1)),
                       rng.normal(size=(1, 2)), rng.normal(size=(1, 1)))
        s2 = ss_from_json(ss_to_json(s))
        for attr in "abcd":
            assert np.allclose(getattr(s, attr), getattr(s2, attr))

    def test_plant_round_trip(self):
        p = scalar_plant()
        p2 = plant_from_json(plant_to_json(p))
        assert np.allclose(p2.d22, p.d22)
        assert p2.nw == p.nw and p2.ny == p.ny

    def test_bad_dims_rejected(self):
        obj = plant_to_json(scalar_plant())
        obj["ny"] = 7
        with pytest.raises(ValueError):
            plant_from_json(obj)

    def test_missing_key_rejected(self):
        with pytest.raises(ValueError):
            ss_from_json({"A": [[0.0]]})
