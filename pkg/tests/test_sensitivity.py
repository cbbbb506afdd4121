"""Derivative formulas gated by finite-difference oracles."""

import numpy as np
import pytest

from structune import (
    PartitionedPlant,
    PoleGoal,
    RealizablePid,
    Spectrum,
    StateSpace,
    StaticGain,
    assemble,
    closed_loop_jacobian,
    finite_diff_gradient,
    h2_gradient,
    h2_norm,
    hinf_norm,
    hinf_subgradients,
    jacobian,
    lft_lower,
    pole_region_violation,
    pole_subgradients,
    poles,
)
from structune.sensitivity import slice_quads

from oracles import random_plant


def kappa_plant():
    """Static gain x closes to A_cl = -x, T = 1/(s+x)."""
    return PartitionedPlant(
        a=[[0.0]], b1=[[1.0]], b2=[[1.0]],
        c1=[[1.0]], c2=[[-1.0]],
        d11=[[0.0]], d12=[[0.0]], d21=[[0.0]], d22=[[0.0]],
    )


def closed_quads(plant, structure, x, q=None):
    k = assemble(structure, x, q)
    return lft_lower(plant, k), closed_loop_jacobian(plant, k, jacobian(structure, x, q))


def fd_matrices(plant, structure, x, h=1e-6):
    """Central finite differences of the closed-loop matrices."""
    x = np.asarray(x, float)
    out = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        hi = lft_lower(plant, assemble(structure, x + e))
        lo = lft_lower(plant, assemble(structure, x - e))
        out.append(tuple((a - b) / (2 * h) for a, b in
                         [(hi.a, lo.a), (hi.b, lo.b), (hi.c, lo.c), (hi.d, lo.d)]))
    return out


class TestClosedLoopJacobian:
    def test_scalar_static_gain_matches_fd(self):
        plant = kappa_plant()
        x = np.array([2.0])
        _, quads = closed_quads(plant, StaticGain(1, 1), x)
        fd = fd_matrices(plant, StaticGain(1, 1), x)
        for got, want in zip(quads[0], fd[0]):
            assert np.max(np.abs(got - want)) <= 1e-7

    def test_absent_parameter_gives_zero_quadruple(self):
        rng = np.random.default_rng(2)
        plant = random_plant(rng, n=3, nw=1, nu=2, nz=1, ny=2)
        structure = StaticGain(2, 2)
        x = 0.1 * rng.normal(size=4)
        k = assemble(structure, x)
        jac = jacobian(structure, x)
        # replace one parameter's derivative with a zero quadruple
        jac.quads[2] = (None, None, None, np.zeros((2, 2)))
        quads = closed_loop_jacobian(plant, k, jac)
        for block in quads[2]:
            assert np.max(np.abs(block)) == 0.0

    def test_pid_on_three_state_plant_matches_fd(self):
        rng = np.random.default_rng(3)
        plant = random_plant(rng, n=3, nw=1, nu=1, nz=1, ny=1)
        structure = RealizablePid()
        x = np.array([0.7, 1.3, -0.4, 0.6])
        _, quads = closed_quads(plant, structure, x)
        fd = fd_matrices(plant, structure, x)
        for got_q, want_q in zip(quads, fd):
            for got, want in zip(got_q, want_q):
                scale = max(1.0, np.max(np.abs(want)))
                assert np.max(np.abs(got - want)) <= 1e-6 * scale

    def test_d22_coupling_matches_fd(self):
        rng = np.random.default_rng(4)
        plant = random_plant(rng, n=3, nw=2, nu=2, nz=2, ny=2)  # nonzero d22
        structure = StaticGain(2, 2)
        x = 0.2 * rng.normal(size=4)
        _, quads = closed_quads(plant, structure, x)
        fd = fd_matrices(plant, structure, x)
        for got_q, want_q in zip(quads, fd):
            for got, want in zip(got_q, want_q):
                scale = max(1.0, np.max(np.abs(want)))
                assert np.max(np.abs(got - want)) <= 1e-6 * scale


class TestHinfSubgradients:
    def test_kappa_peak_at_dc(self):
        plant = kappa_plant()
        x = np.array([2.0])
        clp, quads = closed_quads(plant, StaticGain(1, 1), x)
        res = hinf_norm(clp, 1e-10)
        subs = hinf_subgradients(clp, quads, res.peak_frequencies)
        assert len(subs) == 1
        assert subs[0].vector[0] == pytest.approx(-0.25, rel=1e-6)

    def test_absent_parameter_entry_zero(self):
        rng = np.random.default_rng(6)
        plant = random_plant(rng, n=3, nw=1, nu=2, nz=1, ny=2)
        structure = StaticGain(2, 2)
        x = 0.05 * rng.normal(size=4)
        clp, quads = closed_quads(plant, structure, x)
        zero = [(None, None, None, np.zeros((2, 2)))] * 4
        quads_zeroed = closed_loop_jacobian(plant, assemble(structure, x),
                                            type(jacobian(structure, x))(4, 0, 2, 2, zero))
        res = hinf_norm(clp, 1e-10)
        subs = hinf_subgradients(clp, quads_zeroed, res.peak_frequencies[:1])
        assert np.allclose(subs[0].vector, 0.0)

    def test_damping_parameter_matches_fd(self):
        # plant with tunable damping: A_cl = [[0,1],[-1,-x]]
        plant = PartitionedPlant(
            a=[[0.0, 1.0], [-1.0, 0.0]], b1=[[0.0], [1.0]], b2=[[0.0], [1.0]],
            c1=[[1.0, 0.0]], c2=[[0.0, -1.0]],
            d11=[[0.0]], d12=[[0.0]], d21=[[0.0]], d22=[[0.0]],
        )
        structure = StaticGain(1, 1)
        x0 = np.array([0.1])

        def f(x):
            return hinf_norm(lft_lower(plant, assemble(structure, x)), 1e-12).value

        clp, quads = closed_quads(plant, structure, x0)
        res = hinf_norm(clp, 1e-10)
        subs = hinf_subgradients(clp, quads, res.peak_frequencies[-1:])
        want = finite_diff_gradient(f, x0, 1e-6)
        assert subs[0].vector[0] == pytest.approx(want[0], rel=1e-4)

    def test_twenty_smooth_points_match_fd(self):
        rng = np.random.default_rng(7)
        checked = 0
        attempts = 0
        while checked < 20 and attempts < 200:
            attempts += 1
            plant = random_plant(rng, n=4, nw=2, nu=1, nz=2, ny=1, d22_zero=True)
            structure = StaticGain(1, 1)
            x0 = 0.3 * rng.normal(size=1)
            clp = lft_lower(plant, assemble(structure, x0))
            from structune import spectral_abscissa
            if spectral_abscissa(clp) >= -0.2:
                continue
            res = hinf_norm(clp, 1e-10)
            if len(res.peak_frequencies) != 1:
                continue
            quads = closed_loop_jacobian(plant, assemble(structure, x0),
                                         jacobian(structure, x0))
            subs = hinf_subgradients(clp, quads, res.peak_frequencies)
            if "degenerate" in subs[0].source:
                continue
            if abs(subs[0].vector[0]) < 1e-2:
                continue

            def f(x, plant=plant, structure=structure):
                return hinf_norm(lft_lower(plant, assemble(structure, x)), 1e-12).value

            want = finite_diff_gradient(f, x0, 1e-6)
            assert subs[0].vector[0] == pytest.approx(want[0], rel=1e-4)
            checked += 1
        assert checked == 20


class TestH2Gradient:
    def test_kappa_analytic(self):
        plant = kappa_plant()
        x = np.array([0.5])
        clp, quads = closed_quads(plant, StaticGain(1, 1), x)
        sub = h2_gradient(clp, quads)
        assert sub.vector[0] == pytest.approx(-1.0, rel=1e-9)

    def test_zero_parameter_channel(self):
        plant = kappa_plant()
        x = np.array([1.0])
        clp, _ = closed_quads(plant, StaticGain(1, 1), x)
        sub = h2_gradient(clp, [(None, None, None, np.zeros((1, 1)))])
        assert np.allclose(sub.vector, 0.0)

    def test_random_five_state_matches_fd(self):
        rng = np.random.default_rng(8)
        plant = random_plant(rng, n=5, nw=2, nu=2, nz=2, ny=2, d22_zero=True)
        # kill feedthrough paths into z so D_cl stays zero
        plant = PartitionedPlant(plant.a, plant.b1, plant.b2, plant.c1, plant.c2,
                                 np.zeros((2, 2)), np.zeros((2, 2)),
                                 np.zeros((2, 2)), np.zeros((2, 2)))
        structure = StaticGain(2, 2)
        x0 = 0.1 * rng.normal(size=4)

        def f(x):
            return h2_norm(lft_lower(plant, assemble(structure, x)))

        clp, quads = closed_quads(plant, structure, x0)
        sub = h2_gradient(clp, quads)
        want = finite_diff_gradient(f, x0)
        assert np.max(np.abs(sub.vector - want)) <= 1e-5 * max(1.0, np.max(np.abs(want)))


class TestPoleSubgradients:
    def test_scalar_decay(self):
        plant = kappa_plant()
        x = np.array([2.0])
        clp, quads = closed_quads(plant, StaticGain(1, 1), x)
        goal = PoleGoal(0.9, 0.0, 100.0)
        _, active = pole_region_violation(poles(clp), goal)
        subs = pole_subgradients(clp, quads, goal, active)
        decay = [s for s in subs if s.source.endswith("decay")]
        assert decay and decay[0].vector[0] == pytest.approx(-1.0, abs=1e-9)

    def test_companion_matches_fd(self):
        # tunable stiffness: A_cl = [[0,1],[-x,-0.8]]
        plant = PartitionedPlant(
            a=[[0.0, 1.0], [0.0, -0.8]], b1=[[0.0], [1.0]], b2=[[0.0], [1.0]],
            c1=[[1.0, 0.0]], c2=[[-1.0, 0.0]],
            d11=[[0.0]], d12=[[0.0]], d21=[[0.0]], d22=[[0.0]],
        )
        structure = StaticGain(1, 1)
        goal = PoleGoal(0.5, 0.7, 3.0)
        for x_val in (0.9, 1.4, 2.2):
            x0 = np.array([x_val])

            def f(x):
                spec = poles(lft_lower(plant, assemble(structure, x)))
                return pole_region_violation(spec, goal)[0]

            clp, quads = closed_quads(plant, structure, x0)
            v, active = pole_region_violation(poles(clp), goal)
            subs = pole_subgradients(clp, quads, goal, active)
            want = finite_diff_gradient(f, x0, 1e-6)
            got = subs[0].vector[0]
            assert got == pytest.approx(want[0], rel=1e-4)

    def test_conjugate_pair_identical(self):
        plant = PartitionedPlant(
            a=[[0.0, 1.0], [-2.0, -0.4]], b1=[[0.0], [1.0]], b2=[[0.0], [1.0]],
            c1=[[1.0, 0.0]], c2=[[-1.0, 0.0]],
            d11=[[0.0]], d12=[[0.0]], d21=[[0.0]], d22=[[0.0]],
        )
        structure = StaticGain(1, 1)
        x0 = np.array([0.3])
        clp, quads = closed_quads(plant, structure, x0)
        goal = PoleGoal(1.0, 0.1, 10.0)
        v, active = pole_region_violation(poles(clp), goal)
        assert len(active) == 2  # conjugate pair ties
        subs = pole_subgradients(clp, quads, goal, active)
        assert len(subs) >= 2
        assert np.allclose(subs[0].vector, subs[1].vector, atol=1e-10)


class TestFiniteDiff:
    def test_square(self):
        g = finite_diff_gradient(lambda x: float(x[0] ** 2), np.array([3.0]), 1e-5)
        assert g[0] == pytest.approx(6.0, abs=1e-8)

    def test_constant(self):
        g = finite_diff_gradient(lambda x: 1.0, np.array([1.0, 2.0]))
        assert np.allclose(g, 0.0)

    def test_channel_slicing(self):
        quads = [(np.eye(2), np.ones((2, 3)), np.ones((4, 2)), np.ones((4, 3)))]
        sliced = slice_quads(quads, z_idx=[1, 2], w_idx=[0])
        da, db, dc, dd = sliced[0]
        assert db.shape == (2, 1) and dc.shape == (2, 2) and dd.shape == (2, 1)
