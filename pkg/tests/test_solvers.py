from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hnkdv_control import kernels
from hnkdv_control.reference import Const, Linear, Product, TrajectorySignal, build_w, build_xi
from hnkdv_control.solvers import (
    SolverError,
    TimeGrid,
    dispersion_multiplier,
    hnkdv_solve,
    linburgers_solve,
    remainder_trajectory,
    resolvent,
    write_norms_csv,
)
from hnkdv_control.spectral import Grid, SpectralField, from_trigpoly, sobolev_norm
from hnkdv_control.trig import ModeSet, TrigPoly, lj_apply

GRID = Grid(64, 192)
BACKENDS = ["numpy"] + (["numba"] if kernels.HAVE_NUMBA else [])


def field(p: TrigPoly, grid: Grid = GRID) -> SpectralField:
    return from_trigpoly(p, grid)


def test_time_grid_nodes_include_breakpoints():
    tg = TimeGrid(0.0, 1.0, 10)
    nodes = tg.nodes([0.25, 0.3, 0.3 + 1e-14, 1.0])
    assert 0.25 in nodes and np.any(np.isclose(nodes, 0.3))
    assert nodes[0] == 0.0 and nodes[-1] == 1.0
    assert np.all(np.diff(nodes) > 0)
    assert len(nodes) == 12


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1.0, 10)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 0)


@given(st.integers(1, 60), st.floats(1e-6, 1.0))
def test_reduced_phase_is_phase_mod_two_pi(k, dt):
    omega = k**3
    r = kernels.reduced_phase(omega, dt)
    assert -math.pi < r <= math.pi
    assert np.exp(1j * r) == pytest.approx(np.exp(1j * (omega * dt % (2 * math.pi))), abs=1e-9)


def test_dispersion_multiplier_small_mode():
    assert dispersion_multiplier(1, 2, 0.1) == pytest.approx(np.exp(0.8j), abs=1e-15)


CANONICAL_STATES = {
    "u0": TrigPoly.sin(1, 0.5),
    "u1": TrigPoly(0.0, {2: 0.2}, {1: 0.5}),
}


def l2_drift(u0: SpectralField, j: int, n: int, **kw) -> float:
    n_ = hnkdv_solve(u0, None, j, GRID, TimeGrid(0, 1, n), **kw).norms(0)
    return float(np.max(np.abs(n_ - n_[0])) / n_[0])


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("state", sorted(CANONICAL_STATES))
@pytest.mark.parametrize("j", [1, 2, 3])
def test_unforced_l2_conservation(j, state, backend):
    assert l2_drift(field(CANONICAL_STATES[state]), j, 2000, backend=backend) <= 1e-8


def test_conservation_error_is_time_discretization():
    # a broader datum at j=3 needs finer steps; the drift shrinks at high order
    u0 = field(TrigPoly(0.0, {1: 0.5, 3: 0.1}, {2: 0.2}))
    coarse, fine = l2_drift(u0, 3, 2000), l2_drift(u0, 3, 8000)
    assert fine <= 1e-8
    assert fine <= coarse / 10


def test_schemes_agree_and_etd_reduces_to_rk4():
    u0 = field(CANONICAL_STATES["u0"])
    a = hnkdv_solve(u0, None, 1, GRID, TimeGrid(0, 1, 2000), scheme="etdrk4").final
    b = hnkdv_solve(u0, None, 1, GRID, TimeGrid(0, 1, 2000), scheme="ifrk4").final
    assert sobolev_norm(a - b, 0) < 1e-10
    co = kernels.etd_coefficients(np.array([0, 1, 10**6]), 0.01)
    np.testing.assert_allclose(co[2:, 0], [0.005] + [0.01 / 6] * 3, rtol=1e-14)
    # contour branch (|z| < 1) against the direct formula at |z| slightly above 1
    near = kernels.etd_coefficients(np.array([99, 101]), 0.01)
    np.testing.assert_allclose(near[2:, 0], near[2:, 1], rtol=0.05)
    with pytest.raises(ValueError):
        kernels.step_table(np.arange(3), np.ones(2), "euler")


@pytest.mark.parametrize("backend", BACKENDS)
def test_linear_mode_translates(backend):
    # L_1 cos x = sin x, so u_t = -sin x and cos x -> cos(x + t)
    traj = hnkdv_solve(field(TrigPoly.cos(1)), None, 1, GRID, TimeGrid(0, 1, 2000), False, backend)
    exact = field(TrigPoly(0.0, {1: -math.sin(1.0)}, {1: math.cos(1.0)}))
    assert sobolev_norm(traj.final - exact, 0) <= 1e-10


def test_j3_linear_phase():
    traj = hnkdv_solve(field(TrigPoly.cos(1)), None, 3, GRID, TimeGrid(0, 2, 100), False)
    assert traj.final.half[1] == pytest.approx(0.5 * np.exp(2j), abs=1e-13)


def test_backends_agree():
    if len(BACKENDS) < 2:
        pytest.skip("numba not installed")
    u0 = field(TrigPoly(0.0, {1: 0.5}, {2: 0.3}))
    w = build_w(ModeSet((1,)), 1.0)
    eta = build_xi(w)
    a = hnkdv_solve(u0, eta, 1, GRID, TimeGrid(0, 1, 500), backend="numba")
    b = hnkdv_solve(u0, eta, 1, GRID, TimeGrid(0, 1, 500), backend="numpy")
    np.testing.assert_allclose(a.coeffs, b.coeffs, atol=1e-12)
    g = w.map_space(lambda p: p.scale(0.3))
    c = linburgers_solve(u0, w, g, GRID, TimeGrid(0, 1, 500), backend="numba")
    d = linburgers_solve(u0, w, g, GRID, TimeGrid(0, 1, 500), backend="numpy")
    np.testing.assert_allclose(c.coeffs, d.coeffs, atol=1e-12)


def manufactured(j: int) -> tuple[TrajectorySignal, TrajectorySignal]:
    """u = a(t) sin x + b(t) cos 2x and the forcing that makes it exact."""
    a = Linear(0.3, 0.5)
    b = Product(Linear(0.0, 1.0), Linear(0.4, -0.2))
    U = TrajectorySignal(1.0, [(a, TrigPoly.sin(1)), (b, TrigPoly.cos(2))])
    eta = build_xi(U) + U.map_space(lambda p: lj_apply(p, j))
    return U, eta


def test_manufactured_solution_and_rk4_order():
    U, eta = manufactured(1)
    u0 = field(U.value_at(0.0))
    exact = field(U.value_at(1.0))
    errs = []
    steps = [20, 40, 80, 160]
    for n in steps:
        traj = hnkdv_solve(u0, eta, 1, GRID, TimeGrid(0, 1, n))
        errs.append(sobolev_norm(traj.final - exact, 0))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert 3.5 <= orders[-1] <= 4.5, (errs, orders)
    assert errs[-1] < 1e-6


def test_linburgers_free_transport_of_constant_advection():
    # w = c sin x is not constant, so check linearity instead: v(u0 + u0') = v(u0) + v(u0')
    w = build_w(ModeSet((1,)), 1.0)
    tg = TimeGrid(0, 1, 400)
    a, b = field(TrigPoly.sin(1)), field(TrigPoly.cos(3))
    va = linburgers_solve(a, w, None, GRID, tg).final
    vb = linburgers_solve(b, w, None, GRID, tg).final
    vab = linburgers_solve(a + b, w, None, GRID, tg).final
    assert sobolev_norm(vab - va - vb, 0) < 1e-13


def test_linburgers_with_zero_w_integrates_forcing():
    g = TrajectorySignal(1.0, [(Const(2.0), TrigPoly.sin(1))])
    v = linburgers_solve(SpectralField.zeros(GRID), None, g, GRID, TimeGrid(0, 1, 7)).final
    assert sobolev_norm(v - field(TrigPoly.sin(1, 2.0)), 0) < 1e-14


def test_resolvent_composes():
    w = build_w(ModeSet((1,)), 1.0)
    tg = TimeGrid(0, 1, 1000)
    u0 = field(TrigPoly.sin(1))
    full = linburgers_solve(u0, w, None, GRID, tg)
    mid = full.coeffs[np.searchsorted(full.times, 0.5)]
    assert full.times[np.searchsorted(full.times, 0.5)] == pytest.approx(0.5)
    out = resolvent(0.5, SpectralField.from_half(mid), w, GRID, tg)
    assert sobolev_norm(out - full.final, 0) < 1e-10
    assert resolvent(1.0, u0, w, GRID, tg) is u0


def test_mean_and_degree_checks():
    with pytest.raises(ValueError):
        hnkdv_solve(SpectralField(np.ones(129), mean_zero=False), None, 1, GRID, TimeGrid(0, 1, 5))
    eta = TrajectorySignal(1.0, [(Const(1.0), TrigPoly.sin(80))])
    with pytest.raises(ValueError):
        hnkdv_solve(SpectralField.zeros(GRID), eta, 1, GRID, TimeGrid(0, 1, 5))


def test_blow_up_is_labelled():
    u0 = field(TrigPoly.sin(1, 1e4))
    with pytest.raises(SolverError) as info:
        hnkdv_solve(u0, None, 1, GRID, TimeGrid(0, 50, 200))
    assert info.value.stage == "hnkdv" and info.value.step is not None


def test_remainder_trajectory_endpoints():
    w = build_w(ModeSet((1,)), 1.0)
    u0 = field(TrigPoly.sin(1, 0.5))
    tau = 0.1
    v = linburgers_solve(u0, w, None, GRID, TimeGrid(0, 1, 500))
    xi = build_xi(w)
    eta = xi.rescaled(tau, tau**-2) + w.map_space(lambda p: lj_apply(p, 1)).rescaled(tau, 1 / tau)
    u = hnkdv_solve(u0, eta, 1, GRID, TimeGrid(0, tau, 500))
    r = remainder_trajectory(u, v, w, tau, 0)
    assert r[0][1] < 1e-14
    assert r[-1][1] == pytest.approx(sobolev_norm(u.final - v.final, 0), rel=1e-8)
    with pytest.raises(ValueError):
        remainder_trajectory(u, v, w, 0.2, 0)


def test_norms_csv(tmp_path):
    traj = hnkdv_solve(field(TrigPoly.sin(1)), None, 1, GRID, TimeGrid(0, 1, 10))
    write_norms_csv(tmp_path / "n.csv", traj, 1)
    rows = (tmp_path / "n.csv").read_text().splitlines()
    assert rows[0] == "t,mass,l2,h1" and len(rows) == 12
