"""Finite-dimensional control synthesis for the linearized Burgers system.

The input-to-state map T: L^2((0, T); H) -> H^s_0 of ``v_t + (w v)_x = g``,
``v(0) = 0`` is realized as a dense matrix over piecewise-constant controls.
Its Gramian G = T T^* gives the regularized approximate right inverse
``P_M T^* (G + gamma I)^-1``, from which the controls g_theta and the
rescaled nonlinear control eta_tau are built.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .reference import (
    LEFT,
    RIGHT,
    StepFunction,
    TrajectorySignal,
    build_xi,
)
from .solvers import (
    TimeGrid,
    Trajectory,
    hnkdv_solve,
    linburgers_batch,
    linburgers_solve,
)
from .spectral import Grid, SpectralField, half_sobolev_norm, sobolev_norm
from .trig import SubspaceBasis, TrigPoly, lj_apply

log = logging.getLogger(__name__)

COND_WARNING = 1e12


# --- target encoding -------------------------------------------------------------


def target_weights(cutoff: int, s: int) -> np.ndarray:
    """Weights making the Euclidean norm of an encoded target its H^s norm."""
    k = np.arange(1, cutoff + 1, dtype=float)
    w = np.sqrt(4 * math.pi * (1 + k * k) ** s)
    return np.repeat(w, 2)


def encode(half: np.ndarray, cutoff: int, s: int) -> np.ndarray:
    """[Re c_1, Im c_1, ..., Re c_M, Im c_M] scaled by the H^s weights; batch axes lead."""
    half = np.asarray(half)
    c = half[..., 1 : cutoff + 1]
    v = np.stack([c.real, c.imag], axis=-1).reshape(c.shape[:-1] + (2 * cutoff,))
    return v * target_weights(cutoff, s)


def decode(vec: np.ndarray, cutoff: int, s: int, n_modes: int) -> np.ndarray:
    v = np.asarray(vec) / target_weights(cutoff, s)
    half = np.zeros(n_modes + 1, dtype=complex)
    half[1 : cutoff + 1] = v[0::2] + 1j * v[1::2]
    return half


# --- control space ---------------------------------------------------------------


@dataclass(eq=False)
class ControlBasis:
    """Piecewise-constant-in-time controls with values in span(h_basis).

    Control dof i <-> (time cell i // dim H, orthonormal H-element i % dim H),
    scaled so that the Euclidean norm of the coefficient vector equals the
    L^2((0, T); L^2) norm of the control.
    """

    h_basis: SubspaceBasis
    n_time_cells: int
    horizon: float
    orthonormal: list[TrigPoly] = field(init=False)

    def __post_init__(self):
        if self.n_time_cells < 1:
            raise ValueError("n_time_cells must be >= 1")
        if any(not e.is_mean_zero() for e in self.h_basis.elements):
            raise ValueError("control basis must be mean-zero")
        self.orthonormal = self.h_basis.orthonormal()

    @property
    def dim_h(self) -> int:
        return len(self.orthonormal)

    @property
    def n_dof(self) -> int:
        return self.dim_h * self.n_time_cells

    @property
    def cell_width(self) -> float:
        return self.horizon / self.n_time_cells

    @property
    def interior_edges(self) -> np.ndarray:
        return np.arange(1, self.n_time_cells) * self.cell_width

    def patterns(self, n_modes: int) -> np.ndarray:
        return TrajectorySignal(self.horizon, [(None, p) for p in self.orthonormal]).patterns(n_modes)

    def cell_of(self, t, side: str = RIGHT) -> np.ndarray:
        return np.searchsorted(self.interior_edges, np.asarray(t, dtype=float), side=side)

    def signal(self, theta: np.ndarray) -> TrajectorySignal:
        theta = np.asarray(theta, dtype=float).reshape(self.n_time_cells, self.dim_h)
        amp = theta / math.sqrt(self.cell_width)
        terms = [
            (StepFunction(self.interior_edges, amp[:, m], self.horizon), p)
            for m, p in enumerate(self.orthonormal)
            if np.any(amp[:, m])
        ]
        return TrajectorySignal(self.horizon, terms, {"kind": "g", "theta": theta.ravel().tolist()})

    def signal_coeffs(self, theta: np.ndarray) -> np.ndarray:
        return np.asarray(theta, dtype=float).reshape(self.n_time_cells, self.dim_h)


def signal_id(sig: TrajectorySignal) -> str:
    return hashlib.sha256(json.dumps(sig.to_json(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(eq=False)
class SynthesisOperator:
    matrix: np.ndarray
    target_cutoff: int
    basis: ControlBasis
    w_ref: str
    s: int = 0
    assembly_seconds: float = 0.0

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, theta: np.ndarray) -> np.ndarray:
        return self.matrix @ theta

    def save(self, directory: Path, stem: str = "operator") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "rows": self.matrix.shape[0],
            "cols": self.matrix.shape[1],
            "target_cutoff": self.target_cutoff,
            "s": self.s,
            "w_ref": self.w_ref,
            "n_time_cells": self.basis.n_time_cells,
            "horizon": self.basis.horizon,
            "h_basis": self.basis.h_basis.to_json(),
            "row_order": "mode-major: (Re c_k, Im c_k) * sqrt(4 pi (1+k^2)^s), k = 1..target_cutoff",
            "col_order": "time-cell-major, H-element-minor",
        }
        (directory / f"{stem}.json").write_text(json.dumps(meta, indent=2))
        np.savetxt(directory / f"{stem}.csv", self.matrix, delimiter=",", fmt="%.17g")

    @classmethod
    def load(cls, directory: Path, stem: str = "operator") -> SynthesisOperator:
        directory = Path(directory)
        meta = json.loads((directory / f"{stem}.json").read_text())
        mat = np.loadtxt(directory / f"{stem}.csv", delimiter=",", ndmin=2)
        h = SubspaceBasis([TrigPoly.from_json(e) for e in meta["h_basis"]])
        basis = ControlBasis(h, meta["n_time_cells"], meta["horizon"])
        return cls(mat, meta["target_cutoff"], basis, meta["w_ref"], meta["s"])


def assemble_T(
    w: TrajectorySignal | None,
    basis: ControlBasis,
    grid: Grid,
    tg: TimeGrid,
    target_cutoff: int = 8,
    s: int = 0,
    backend: str | None = None,
) -> SynthesisOperator:
    """Column i = encoded v(T) for v_t + (w v)_x = e_i, v(0) = 0 (all columns in one batch)."""
    if target_cutoff > grid.n_modes:
        raise ValueError("target_cutoff exceeds grid N")
    start = time.perf_counter()
    B = basis.n_dof
    pats = basis.patterns(grid.n_modes)
    cell = np.arange(B) // basis.dim_h
    fpat = pats[np.arange(B) % basis.dim_h][:, None, :]
    scale = 1.0 / math.sqrt(basis.cell_width)

    def fcoef(ta, tm, tb):
        out = np.zeros((len(ta), 3, B, 1))
        for si, (t, side) in enumerate(((ta, RIGHT), (tm, RIGHT), (tb, LEFT))):
            c = basis.cell_of(t, side)
            out[:, si, :, 0] = (c[:, None] == cell[None, :]) * scale
        return out

    v0 = np.zeros((B, grid.n_modes + 1), dtype=complex)
    final = linburgers_batch(v0, w, fcoef, fpat, grid, tg, basis.interior_edges, backend)
    mat = encode(final, target_cutoff, s).T
    if not np.all(np.isfinite(mat)):
        bad = int(np.where(~np.isfinite(mat))[1][0])
        raise RuntimeError(f"assemble_T: non-finite column {bad}")
    cond = gramian_condition(gramian(mat))
    if cond > COND_WARNING:
        log.warning(
            "Gramian condition number %.3g; high target modes are weakly reachable through w", cond
        )
    wid = signal_id(w) if w is not None else "zero"
    return SynthesisOperator(mat, target_cutoff, basis, wid, s, time.perf_counter() - start)


def gramian(Tm: SynthesisOperator | np.ndarray) -> np.ndarray:
    M = Tm.matrix if isinstance(Tm, SynthesisOperator) else np.asarray(Tm)
    G = M @ M.T
    return 0.5 * (G + G.T)


def _eig(G: np.ndarray):
    lam, V = np.linalg.eigh(0.5 * (G + G.T))
    return np.clip(lam, 0.0, None), V


def delta_h(G: np.ndarray, h: np.ndarray, gamma: float) -> float:
    """||G (G + gamma I)^-1 h - h||^2, evaluated in the eigenbasis of G."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    lam, V = _eig(G)
    c = V.T @ np.asarray(h, dtype=float)
    return float(np.sum((gamma / (lam + gamma)) ** 2 * c * c))


def regularized_solve(G: np.ndarray, h: np.ndarray, gamma: float) -> np.ndarray:
    """(G + gamma I)^-1 h; h may be a vector or a matrix of right-hand sides."""
    lam, V = _eig(G)
    c = V.T @ np.asarray(h, dtype=float)
    return V @ (c / (lam + gamma).reshape((-1,) + (1,) * (c.ndim - 1)))


def regularized_filter(G: np.ndarray, gamma: float) -> np.ndarray:
    """G (G + gamma I)^-1, formed in the eigenbasis so its norm stays <= 1 at any conditioning."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    lam, V = _eig(G)
    return (V * (lam / (lam + gamma))) @ V.T


def right_inverse_matrix(Tm: SynthesisOperator | np.ndarray, gamma: float, rank_cutoff: int | None = None) -> np.ndarray:
    """P_M T^T (G + gamma I)^-1 as a dense matrix."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    M = Tm.matrix if isinstance(Tm, SynthesisOperator) else np.asarray(Tm)
    lam, V = _eig(gramian(M))
    K = M.T @ (V / (lam + gamma)) @ V.T
    if rank_cutoff is not None and rank_cutoff < K.shape[0]:
        K[rank_cutoff:] = 0.0
    return K


def approx_right_inverse(
    Tm: SynthesisOperator | np.ndarray,
    gamma: float,
    rank_cutoff: int | None,
    h: np.ndarray,
) -> np.ndarray:
    """Control coefficients P_M T^T (G + gamma I)^-1 h."""
    M = Tm.matrix if isinstance(Tm, SynthesisOperator) else np.asarray(Tm)
    if rank_cutoff is not None and not 1 <= rank_cutoff <= M.shape[1]:
        raise ValueError("rank_cutoff must lie in [1, n_dof]")
    x = M.T @ regularized_solve(gramian(M), np.asarray(h, dtype=float), gamma)
    if rank_cutoff is not None:
        x[rank_cutoff:] = 0.0
    return x


def right_inverse_residuals(Tm, gamma: float, rank_cutoff: int | None, h: np.ndarray) -> dict:
    M = Tm.matrix if isinstance(Tm, SynthesisOperator) else np.asarray(Tm)
    full = approx_right_inverse(M, gamma, None, h)
    cut = approx_right_inverse(M, gamma, rank_cutoff, h)
    return {
        "residual": float(np.linalg.norm(M @ cut - h)),
        "tikhonov": math.sqrt(delta_h(gramian(M), h, gamma)),
        "truncation": float(np.linalg.norm(M @ (full - cut))),
        "control_norm": float(np.linalg.norm(cut)),
    }


def select_gamma(Tm, h: np.ndarray, ladder, stall_ratio: float = 0.5) -> float:
    """Walk the ladder from large to small gamma; stop once the residual stops halving."""
    ladder = sorted(ladder, reverse=True)
    M = Tm.matrix if isinstance(Tm, SynthesisOperator) else np.asarray(Tm)
    G = gramian(M)
    prev = math.sqrt(delta_h(G, h, ladder[0]))
    chosen = ladder[0]
    for g in ladder[1:]:
        cur = math.sqrt(delta_h(G, h, g))
        if cur > stall_ratio * prev:
            break
        chosen, prev = g, cur
    return chosen


def gramian_condition(G: np.ndarray) -> float:
    lam = np.linalg.eigvalsh(G)
    lo = max(lam.min(), 0.0)
    return float("inf") if lo == 0 else float(lam.max() / lo)


# --- control synthesis -------------------------------------------------------------


def free_terminal(u0: SpectralField, w, grid: Grid, tg: TimeGrid, backend=None) -> np.ndarray:
    """Half spectrum of R^{b,l}_T(u0, 0)."""
    return linburgers_solve(u0, w, None, grid, tg, backend).coeffs[-1]


def _check_band(f: SpectralField, cutoff: int, name: str):
    if np.any(np.abs(f.half[cutoff + 1 :]) > 1e-14):
        raise ValueError(f"{name} has modes above target cutoff {cutoff}")
    if f.half[0] != 0:
        raise ValueError(f"{name} must be mean-zero")


def synthesize_g(
    u0: SpectralField,
    u1: SpectralField,
    w: TrajectorySignal | None,
    Tm: SynthesisOperator,
    gamma: float,
    rank_cutoff: int | None,
    grid: Grid,
    tg: TimeGrid,
    backend: str | None = None,
) -> TrajectorySignal:
    """g_theta = T_gamma (u1 - R_T(u0, 0)) as a control signal; theta and h kept in meta."""
    mt = Tm.target_cutoff
    if u0.half[0] != 0:
        raise ValueError("u0 must be mean-zero")
    _check_band(u1, mt, "u1")
    free = free_terminal(u0, w, grid, tg, backend)
    h = encode(u1.half, mt, Tm.s) - encode(free, mt, Tm.s)
    theta = approx_right_inverse(Tm, gamma, rank_cutoff, h)
    g = Tm.basis.signal(theta)
    g.meta.update({"h": h, "theta_vec": theta})
    return g


def input_map(w, grid: Grid, tg: TimeGrid, cutoff: int, s: int, backend=None) -> np.ndarray:
    """Matrix Phi with encode(R_T(u0, 0)) = Phi encode(u0) for u0 on modes <= cutoff."""
    n = 2 * cutoff
    wts = target_weights(cutoff, s)
    v0 = np.zeros((n, grid.n_modes + 1), dtype=complex)
    for i in range(n):
        v0[i, 1 + i // 2] = (1.0 if i % 2 == 0 else 1.0j) / wts[i]
    final = linburgers_batch(
        v0, w, lambda ta, tm, tb: np.zeros((len(ta), 3, 1, 0)),
        np.zeros((1, 0, grid.n_modes + 1), dtype=complex), grid, tg, (), backend,
    )
    return encode(final, cutoff, s).T


def control_operator(Tm: SynthesisOperator, w, gamma: float, rank_cutoff, grid, tg, backend=None) -> np.ndarray:
    """Matrix C with theta = C [encode(u0); encode(u1)], the affine-free part of the control law."""
    K = right_inverse_matrix(Tm, gamma, rank_cutoff)
    Phi = input_map(w, grid, tg, Tm.target_cutoff, Tm.s, backend)
    return np.hstack([-K @ Phi, K])


def rescale_control(
    g: TrajectorySignal | None,
    xi: TrajectorySignal,
    w: TrajectorySignal,
    tau: float,
    j: int,
) -> TrajectorySignal:
    """eta_tau(t) = (g(t/tau) + L_j w(t/tau))/tau + xi(t/tau)/tau^2 on [0, T tau].

    The L_j term acts on the rescaled profile w_tau = w(t/tau)/tau, so the
    remainder equation carries only the source -L_j v_tau - B(v_tau).
    """
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    eta = xi.rescaled(tau, tau**-2) + w.map_space(lambda p: lj_apply(p, j)).rescaled(tau, 1.0 / tau)
    if g is not None and not g.is_zero():
        eta = g.rescaled(tau, 1.0 / tau) + eta
    eta.meta["tau"] = tau
    return eta


@dataclass(eq=False)
class SteeringResult:
    eta: TrajectorySignal
    g: TrajectorySignal
    u_final: SpectralField
    v_final: SpectralField
    residual_s: float
    linear_residual_s: float
    remainder_final: float
    gramian_condition: float
    tau: float
    gamma: float
    j: int
    s: int
    u: Trajectory | None = None
    v: Trajectory | None = None
    runtime_s: float = 0.0

    def to_json(self) -> dict:
        return {
            "tau": self.tau,
            "gamma": self.gamma,
            "j": self.j,
            "s": self.s,
            "residual_s": self.residual_s,
            "linear_residual_s": self.linear_residual_s,
            "remainder_final": self.remainder_final,
            "gramian_condition": self.gramian_condition,
            "control": {
                "theta": [float(x) for x in self.g.meta.get("theta", [])],
                "horizon": self.eta.horizon,
            },
            "u_final": self.u_final.to_json(),
        }


def steer(
    u0: SpectralField,
    u1: SpectralField,
    tau: float,
    gamma: float,
    rank_cutoff: int | None,
    j: int,
    s: int,
    grid: Grid,
    tg: TimeGrid,
    basis: ControlBasis,
    w: TrajectorySignal,
    operator: SynthesisOperator | None = None,
    target_cutoff: int = 8,
    nonlinearity_on: bool = True,
    keep_trajectories: bool = False,
    backend: str | None = None,
) -> SteeringResult:
    """Small-time steering u0 -> u1 on [0, T tau] with an H-valued control."""
    start = time.perf_counter()
    xi = build_xi(w)
    if operator is None:
        operator = assemble_T(w, basis, grid, tg, target_cutoff, s, backend)
    G = gramian(operator)
    cond = gramian_condition(G)
    g = synthesize_g(u0, u1, w, operator, gamma, rank_cutoff, grid, tg, backend)
    eta = rescale_control(g, xi, w, tau, j)
    utg = TimeGrid(0.0, tau * (tg.t1 - tg.t0), tg.n_steps)
    try:
        u = hnkdv_solve(u0, eta, j, grid, utg, nonlinearity_on, backend)
    except Exception as exc:
        raise type(exc)(f"steer[hnkdv tau={tau}]: {exc}") from exc
    try:
        v = linburgers_solve(u0, w, g, grid, tg, backend)
    except Exception as exc:
        raise type(exc)(f"steer[linearized]: {exc}") from exc
    uf, vf = u.final, v.final
    return SteeringResult(
        eta=eta,
        g=g,
        u_final=uf,
        v_final=vf,
        residual_s=sobolev_norm(uf - u1, s),
        linear_residual_s=sobolev_norm(vf - u1, s),
        remainder_final=sobolev_norm(uf - vf, s),
        gramian_condition=cond,
        tau=tau,
        gamma=gamma,
        j=j,
        s=s,
        u=u if keep_trajectories else None,
        v=v if keep_trajectories else None,
        runtime_s=time.perf_counter() - start,
    )


# --- fixed-time steering ------------------------------------------------------------


class FixedTimeError(RuntimeError):
    """Fixed-time schedule needs more than max_segments segments."""

    def __init__(self, message: str, history: list[dict]):
        super().__init__(message)
        self.history = history


@dataclass(eq=False)
class FixedTimeResult:
    segments: list[dict]
    steers: list[SteeringResult]
    final_error: float
    budget: float
    t_total: float
    u_final: SpectralField

    def to_json(self) -> dict:
        return {
            "T_total": self.t_total,
            "budget": self.budget,
            "final_error": self.final_error,
            "n_segments": len(self.segments),
            "segments": self.segments,
        }


def drift_window(
    state: SpectralField,
    u1: SpectralField,
    j: int,
    s: int,
    horizon: float,
    budget: float,
    grid: Grid,
    dt: float,
    backend: str | None = None,
) -> tuple[float, SpectralField]:
    """Largest t' <= horizon with ||u(t) - u1||_s <= budget along the free flow.

    Returns t' and the free-flow state at t'.
    """
    n = max(8, math.ceil(horizon / dt))
    traj = hnkdv_solve(state, None, j, grid, TimeGrid(0.0, horizon, n), True, backend)
    d = half_sobolev_norm(traj.coeffs - u1.half, s)
    over = np.nonzero(d > budget)[0]
    i = len(d) - 1 if over.size == 0 else max(int(over[0]) - 1, 0)
    return float(traj.times[i]), SpectralField.from_half(traj.coeffs[i])


def fixed_time_steer(
    u0: SpectralField,
    u1: SpectralField,
    t_total: float,
    tau: float,
    gamma: float,
    rank_cutoff: int | None,
    j: int,
    s: int,
    grid: Grid,
    tg: TimeGrid,
    basis: ControlBasis,
    w: TrajectorySignal,
    operator: SynthesisOperator | None = None,
    max_segments: int = 5,
    budget_factor: float = 2.0,
    backend: str | None = None,
) -> FixedTimeResult:
    """Reach u1 at exactly t_total: small-time steers separated by zero-control patches.

    The first steer fixes the budget ``budget_factor * residual``.  After each
    steer the free flow is followed while it stays inside the budget (the
    drift window t'); if that does not reach t_total, the state is steered
    again, the last steer being shortened to end exactly at t_total.
    """
    if t_total <= 0:
        raise ValueError("T_total must be positive")
    horizon = tg.t1 - tg.t0
    if operator is None:
        operator = assemble_T(w, basis, grid, tg, target_cutoff=8, s=s, backend=backend)
    segments: list[dict] = []
    steers: list[SteeringResult] = []
    t, state, budget = 0.0, u0, None
    dt_fine = tg.dt * tau

    def add(seg):
        segments.append(seg)
        if len(segments) > max_segments:
            raise FixedTimeError(f"fixed_time_steer: more than {max_segments} segments", segments)

    while True:
        rem = t_total - t
        if steers:
            t_prime, _ = drift_window(state, u1, j, s, rem, budget, grid, dt_fine, backend)
            if t_prime >= rem * (1 - 1e-12):
                _, state = drift_window(state, u1, j, s, rem, math.inf, grid, dt_fine, backend)
                add({"kind": "zero", "t_start": t, "t_end": t_total, "t_prime": t_prime,
                     "error_end": sobolev_norm(state - u1, s)})
                t = t_total
                break
            patch = min(t_prime, max(rem - tau * horizon, 0.0))
            if patch > 0:
                _, state = drift_window(state, u1, j, s, patch, math.inf, grid, dt_fine, backend)
                add({"kind": "zero", "t_start": t, "t_end": t + patch, "t_prime": t_prime,
                     "error_end": sobolev_norm(state - u1, s)})
                t += patch
                rem = t_total - t
        tau_k = min(tau, rem / horizon)
        res = steer(state, u1, tau_k, gamma, rank_cutoff, j, s, grid, tg, basis, w,
                    operator=operator, backend=backend)
        steers.append(res)
        if budget is None:
            budget = budget_factor * res.residual_s
        add({"kind": "steer", "t_start": t, "t_end": t + tau_k * horizon, "tau": tau_k,
             "residual_s": res.residual_s, "linear_residual_s": res.linear_residual_s,
             "remainder_final": res.remainder_final, "error_end": res.residual_s})
        t += tau_k * horizon
        state = res.u_final
        if t >= t_total * (1 - 1e-12):
            break
    final = sobolev_norm(state - u1, s)
    return FixedTimeResult(segments, steers, final, budget, t_total, state)
