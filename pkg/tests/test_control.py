from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hnkdv_control import control as C
from hnkdv_control.reference import TrajectorySignal, build_w, build_xi
from hnkdv_control.solvers import TimeGrid, linburgers_solve
from hnkdv_control.spectral import Grid, SpectralField, from_trigpoly, sobolev_norm
from hnkdv_control.trig import ModeSet, TrigPoly, hk_subspace, lj_apply, membership

SMALL_GRID = Grid(32, 96)
SMALL_TG = TimeGrid(0.0, 1.0, 400)
J1 = ModeSet((1,))


@pytest.fixture(scope="module")
def small():
    """A cheap operator: 8 time cells, canonical w."""
    basis = C.ControlBasis(hk_subspace(J1, 1), 8, 1.0)
    w = build_w(J1, 1.0)
    return basis, w, C.assemble_T(w, basis, SMALL_GRID, SMALL_TG, 8, 0)


def field(p: TrigPoly, grid: Grid = SMALL_GRID) -> SpectralField:
    return from_trigpoly(p, grid)


finite = st.floats(-3, 3, allow_nan=False)


# --- encoding --------------------------------------------------------------------


@pytest.mark.parametrize("s", [0, 1, 2])
@given(vec=arrays(float, 12, elements=finite))
def test_encode_decode_and_norm(s, vec):
    half = C.decode(vec, 6, s, 32)
    np.testing.assert_allclose(C.encode(half, 6, s), vec, atol=1e-12)
    f = SpectralField.from_half(half)
    assert np.linalg.norm(vec) == pytest.approx(sobolev_norm(f, s), rel=1e-12, abs=1e-12)


# --- operator assembly -------------------------------------------------------------


def test_assemble_columns_match_direct_solve(small):
    basis, w, Tm = small
    rng = np.random.default_rng(1)
    theta = rng.standard_normal(basis.n_dof)
    v = linburgers_solve(field(TrigPoly()), w, basis.signal(theta), SMALL_GRID, SMALL_TG)
    direct = C.encode(v.final.half, 8, 0)
    np.testing.assert_allclose(Tm.apply(theta), direct, atol=1e-9 * (1 + np.linalg.norm(direct)))


def test_assemble_without_transport_integrates_control():
    basis = C.ControlBasis(hk_subspace(J1, 1), 4, 1.0)
    Tm = C.assemble_T(None, basis, SMALL_GRID, TimeGrid(0, 1, 40), 8, 0)
    pats = C.encode(basis.patterns(32), 8, 0).T
    expected = np.tile(pats, (1, basis.n_time_cells)) * math.sqrt(basis.cell_width)
    np.testing.assert_allclose(Tm.matrix, expected, atol=1e-12)


def test_control_basis_is_l2_isometry(small):
    basis, _, _ = small
    theta = np.arange(basis.n_dof, dtype=float) / 10
    g = basis.signal(theta)
    mid = (np.arange(basis.n_time_cells) + 0.5) * basis.cell_width
    vals = g.spectral_at(mid, 32)
    l2sq = sum(sobolev_norm(SpectralField.from_half(v), 0) ** 2 for v in vals) * basis.cell_width
    assert math.sqrt(l2sq) == pytest.approx(np.linalg.norm(theta), rel=1e-12)


def test_operator_save_load(tmp_path, small):
    _, _, Tm = small
    Tm.save(tmp_path)
    back = C.SynthesisOperator.load(tmp_path)
    np.testing.assert_array_equal(back.matrix, Tm.matrix)
    assert back.w_ref == Tm.w_ref and back.basis.n_dof == Tm.basis.n_dof


# --- regularized right inverse ---------------------------------------------------------


def test_delta_h_identity_example():
    assert C.delta_h(np.eye(3), np.array([1.0, 0, 0]), 1.0) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        C.delta_h(np.eye(3), np.ones(3), 0.0)


@st.composite
def psd_and_vector(draw, n=5):
    A = draw(arrays(float, (n, n + 2), elements=finite))
    h = draw(arrays(float, n, elements=finite))
    return A @ A.T, h


@given(psd_and_vector(), st.floats(1e-6, 1e3), st.floats(1.01, 100))
def test_delta_h_monotone_in_gamma(Gh, gamma, factor):
    G, h = Gh
    lo, hi = C.delta_h(G, h, gamma), C.delta_h(G, h, gamma * factor)
    assert lo <= hi * (1 + 1e-12) + 1e-300
    assert hi <= float(h @ h) * (1 + 1e-12) + 1e-300


@given(arrays(float, 4, elements=finite))
def test_delta_h_in_range_vanishes(x):
    rng = np.random.default_rng(0)
    A = rng.standard_normal((4, 6))
    G = A @ A.T
    h = G @ x
    assert C.delta_h(G, h, 1e-12) <= 1e-8 * (1 + h @ h)


@given(arrays(float, 6, elements=finite), st.floats(1e-4, 1e4))
def test_orthonormal_rows_residual(h, gamma):
    Q, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((10, 6)))
    Tm = Q.T  # 6 x 10 with orthonormal rows
    res = C.right_inverse_residuals(Tm, gamma, None, h)
    assert res["tikhonov"] == pytest.approx(gamma / (1 + gamma) * np.linalg.norm(h), rel=1e-9, abs=1e-12)
    assert res["residual"] == pytest.approx(res["tikhonov"], rel=1e-9, abs=1e-12)


def test_large_gamma_gives_small_control():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((6, 12))
    h = rng.standard_normal(6)
    x = C.approx_right_inverse(M, 1e6, None, h)
    assert np.linalg.norm(x) <= np.linalg.norm(M, 2) / 1e6 * np.linalg.norm(h) * (1 + 1e-9)
    assert C.delta_h(M @ M.T, h, 1e6) == pytest.approx(h @ h, rel=1e-3)


@pytest.mark.parametrize("gamma", [1e-8, 1e-4, 1.0])
def test_right_inverse_operator_bounds(gamma):
    rng = np.random.default_rng(4)
    M = rng.standard_normal((6, 12)) @ np.diag(np.logspace(0, -4, 12))
    K = C.right_inverse_matrix(M, gamma)
    assert np.linalg.norm(K, 2) <= 1 / (2 * math.sqrt(gamma)) * (1 + 1e-9)
    assert np.linalg.norm(M @ K, 2) <= 1 + 1e-9
    h = rng.standard_normal(6)
    np.testing.assert_allclose(K @ h, C.approx_right_inverse(M, gamma, None, h), atol=1e-9 * np.linalg.norm(K @ h))
    assert np.linalg.norm(M @ K @ h - h) ** 2 == pytest.approx(C.delta_h(M @ M.T, h, gamma), rel=1e-6, abs=1e-20)


def test_rank_cutoff_truncates_control():
    rng = np.random.default_rng(5)
    M, h = rng.standard_normal((4, 10)), rng.standard_normal(4)
    x = C.approx_right_inverse(M, 1e-3, 6, h)
    assert np.all(x[6:] == 0)
    res = C.right_inverse_residuals(M, 1e-3, 6, h)
    assert res["residual"] <= res["tikhonov"] + res["truncation"] + 1e-12
    with pytest.raises(ValueError):
        C.approx_right_inverse(M, 1e-3, 0, h)


def test_select_gamma_stops_when_residual_stalls():
    G = np.diag([1.0, 1e-6])
    h = np.array([1.0, 1.0])
    # the weak direction stalls until gamma drops well below 1e-6
    assert C.select_gamma(np.sqrt(G), h, [1e-2, 1e-4]) == 1e-2
    assert C.select_gamma(np.eye(2), h, [1e-2, 1e-4, 1e-6]) == 1e-6


# --- synthesis --------------------------------------------------------------------------


def test_control_law_is_affine_in_states(small):
    basis, w, Tm = small
    u0 = field(TrigPoly(0.0, {1: 0.5, 3: 0.1}))
    u1 = field(TrigPoly(0.0, {2: 0.2}, {1: 0.5}))
    g = C.synthesize_g(u0, u1, w, Tm, 1e-6, None, SMALL_GRID, SMALL_TG)
    Cop = C.control_operator(Tm, w, 1e-6, None, SMALL_GRID, SMALL_TG)
    x = np.concatenate([C.encode(u0.half, 8, 0), C.encode(u1.half, 8, 0)])
    theta = Cop @ x
    np.testing.assert_allclose(theta, g.meta["theta_vec"], atol=1e-8 * (1 + np.linalg.norm(theta)))
    # linear in u1 once u0 is fixed to zero
    z = field(TrigPoly())
    a = C.synthesize_g(z, u1, w, Tm, 1e-6, None, SMALL_GRID, SMALL_TG).meta["theta_vec"]
    b = C.synthesize_g(z, u1 * 2.0, w, Tm, 1e-6, None, SMALL_GRID, SMALL_TG).meta["theta_vec"]
    np.testing.assert_allclose(b, 2 * a, atol=1e-10 * (1 + np.linalg.norm(b)))


def test_synthesize_rejects_out_of_band_target(small):
    basis, w, Tm = small
    with pytest.raises(ValueError):
        C.synthesize_g(field(TrigPoly()), field(TrigPoly.sin(9)), w, Tm, 1e-6, None, SMALL_GRID, SMALL_TG)


def test_rescale_control_formula(small):
    basis, w, _ = small
    xi = build_xi(w)
    g = basis.signal(np.linspace(-1, 1, basis.n_dof))
    lw = w.map_space(lambda p: lj_apply(p, 2))
    for tau in (1.0, 0.25):
        eta = C.rescale_control(g, xi, w, tau, 2)
        assert eta.horizon == pytest.approx(tau)
        s = np.array([0.13, 0.41, 0.77])
        expected = (g.spectral_at(s, 32) + lw.spectral_at(s, 32)) / tau + xi.spectral_at(s, 32) / tau**2
        np.testing.assert_allclose(eta.spectral_at(tau * s, 32), expected, rtol=1e-12, atol=1e-12)
    bare = C.rescale_control(None, TrajectorySignal.zero(1.0), w, 0.5, 1)
    lw1 = w.map_space(lambda p: lj_apply(p, 1))
    np.testing.assert_allclose(bare.spectral_at([0.2], 32), 2 * lw1.spectral_at([0.4], 32), atol=1e-12)
    with pytest.raises(ValueError):
        C.rescale_control(g, xi, w, 0.0, 1)


def test_data_only_enters_through_g(small):
    basis, w, Tm = small
    xi = build_xi(w)
    z = field(TrigPoly())
    u1 = field(TrigPoly(0.0, {2: 0.2}, {1: 0.5}))
    t = np.linspace(0.0, 0.25, 17)
    parts = []
    for a, b in ((z, z), (field(TrigPoly.sin(1, 0.5)), u1)):
        g = C.synthesize_g(a, b, w, Tm, 1e-6, None, SMALL_GRID, SMALL_TG)
        eta = C.rescale_control(g, xi, w, 0.25, 1)
        parts.append(eta.spectral_at(t, 32) - g.rescaled(0.25, 4.0).spectral_at(t, 32))
    np.testing.assert_allclose(parts[0], parts[1], atol=1e-12)


def test_control_takes_values_in_h(canonical):
    res = canonical.steer(0.1, 1e-8)
    H = hk_subspace(canonical.J, 1)
    for t in np.linspace(0, res.eta.horizon, 50):
        assert membership(res.eta.value_at(float(t)), H, 1e-9)


def test_steer_bookkeeping(canonical):
    res = canonical.steer(0.2, 1e-8)
    assert res.residual_s <= res.linear_residual_s + res.remainder_final + 1e-12
    assert res.remainder_final <= res.residual_s + res.linear_residual_s + 1e-12
    assert res.u_final.half[0] == 0
    js = res.to_json()
    assert js["tau"] == 0.2 and len(js["control"]["theta"]) == canonical.basis.n_dof


def test_linear_residual_is_tikhonov_without_transport():
    basis = C.ControlBasis(hk_subspace(J1, 1), 4, 1.0)
    w = TrajectorySignal.zero(1.0)
    tg = TimeGrid(0, 1, 40)
    u0, u1 = field(TrigPoly.sin(1, 0.5)), field(TrigPoly(0.0, {2: 0.2}, {1: 0.5}))
    res = C.steer(u0, u1, 0.5, 1e-3, None, 1, 0, SMALL_GRID, tg, basis, w, nonlinearity_on=False)
    h = C.encode(u1.half, 8, 0) - C.encode(u0.half, 8, 0)
    op = C.assemble_T(w, basis, SMALL_GRID, tg, 8, 0)
    assert res.linear_residual_s == pytest.approx(math.sqrt(C.delta_h(C.gramian(op), h, 1e-3)), rel=1e-9)


def test_zero_states_follow_reference_exactly(canonical):
    # u0 = u1 = 0 gives g = 0 and the exact solution u = w(t/tau)/tau, which vanishes at T
    z = field(TrigPoly(), canonical.grid)
    for tau in (0.4, 0.1):
        r = C.steer(z, z, tau, 1e-8, None, 1, 0, canonical.grid, canonical.tg, canonical.basis,
                    canonical.w, operator=canonical.operator)
        assert np.allclose(r.g.meta["theta_vec"], 0)
        assert r.remainder_final <= 1e-3 and r.residual_s <= 1e-3


# --- fixed time ---------------------------------------------------------------------------


def _fixed(canonical, t_total, max_segments=5):
    return C.fixed_time_steer(
        canonical.u0, canonical.u1, t_total, 0.05, 1e-8, None, 1, 0, canonical.grid, canonical.tg,
        canonical.basis, canonical.w, operator=canonical.operator, max_segments=max_segments,
    )


def test_fixed_time_short_horizon_is_single_steer(canonical):
    res = _fixed(canonical, 0.03)
    assert len(res.segments) == 1 and res.segments[0]["kind"] == "steer"
    assert res.segments[0]["tau"] == pytest.approx(0.03)
    assert res.segments[-1]["t_end"] == pytest.approx(0.03)


def test_fixed_time_schedule_ends_at_t_total(canonical):
    res = _fixed(canonical, 0.15)
    assert res.segments[-1]["t_end"] == pytest.approx(0.15, abs=1e-12)
    ends = [s["t_end"] for s in res.segments]
    assert all(b > a for a, b in zip(ends, ends[1:]))
    assert res.final_error <= res.budget


def test_fixed_time_segment_cap(canonical):
    with pytest.raises(C.FixedTimeError) as err:
        _fixed(canonical, 0.2, max_segments=3)
    assert len(err.value.history) == 4
