"""Integrators for the forced HNKdV equation and the linearized Burgers equation.

HNKdV:        u_t + (-1)^(j+1) d_x^(2j+1) u + (u^2)_x / 2 = eta(t, x)
linearized:   v_t + (w v)_x = g(t, x)

Both run a fourth-order exponential integrator in Fourier space (ETDRK4 by
default, integrating-factor RK4 on request; see :mod:`.kernels`).  The
step sequence is the uniform grid of :class:`TimeGrid` refined at every jump
of the forcing/advecting signals, so piecewise-smooth controls are stepped
piece by piece.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import kernels
from .reference import LEFT, RIGHT, TrajectorySignal
from .spectral import Grid, SpectralField, half_sobolev_norm


class SolverError(RuntimeError):
    """Non-finite state during time stepping."""

    def __init__(self, message: str, step: int | None = None, stage: str | None = None):
        super().__init__(message)
        self.step = step
        self.stage = stage


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t1: float
    n_steps: int

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ValueError("t1 must exceed t0")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    def nodes(self, breakpoints=()) -> np.ndarray:
        """Uniform nodes refined by the breakpoints strictly inside (t0, t1)."""
        base = np.linspace(self.t0, self.t1, self.n_steps + 1)
        bp = np.asarray(breakpoints, dtype=float)
        span = self.t1 - self.t0
        bp = bp[(bp > self.t0 + 1e-12 * span) & (bp < self.t1 - 1e-12 * span)]
        if bp.size == 0:
            return base
        # snap breakpoints sitting on uniform nodes
        idx = np.clip(np.round((bp - self.t0) / self.dt).astype(int), 0, self.n_steps)
        near = np.abs(base[idx] - bp) <= 1e-12 * span
        base[idx[near]] = bp[near]
        nodes = np.union1d(base, bp[~near])
        return nodes


@dataclass(eq=False)
class Trajectory:
    grid: Grid
    times: np.ndarray
    coeffs: np.ndarray  # (n_times, N+1) half spectra

    @property
    def states(self) -> list[SpectralField]:
        return [SpectralField.from_half(c) for c in self.coeffs]

    @property
    def final(self) -> SpectralField:
        return SpectralField.from_half(self.coeffs[-1])

    def norms(self, s: int) -> np.ndarray:
        return half_sobolev_norm(self.coeffs, s)

    def at(self, t: float) -> np.ndarray:
        """Half spectrum at time t by cubic interpolation in time."""
        return _spline(self)(t)

    def to_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "k", "re", "im"])
            for t, c in zip(self.times, self.coeffs):
                for k, ck in enumerate(c):
                    wr.writerow([repr(float(t)), k, repr(float(ck.real)), repr(float(ck.imag))])

    def to_json(self) -> dict:
        return {
            "n_modes": self.grid.n_modes,
            "n_points": self.grid.n_points,
            "times": [float(t) for t in self.times],
            "states": [SpectralField.from_half(c).to_json() for c in self.coeffs],
        }


def _spline(traj: Trajectory) -> CubicSpline:
    return CubicSpline(traj.times, traj.coeffs, axis=0)


def dispersion_multiplier(j: int, k: int, dt: float) -> complex:
    """exp(i k^(2j+1) dt): the exact propagator of u_t + L_j u = 0 on e^{ikx}."""
    return complex(np.exp(1j * kernels.reduced_phase(int(k) ** (2 * j + 1), float(dt))))


def dispersion_omega(j: int, n_modes: int) -> np.ndarray:
    k = np.arange(n_modes + 1, dtype=np.int64)
    return k ** (2 * j + 1)


def _stage_times(nodes: np.ndarray):
    t0 = nodes[:-1]
    h = np.diff(nodes)
    return t0, t0 + 0.5 * h, nodes[1:], h


def _signal_coeffs(sig: TrajectorySignal | None, nodes: np.ndarray):
    """Stage time coefficients (n, 3, Q) and patterns (Q, K+1) of a signal."""
    n = len(nodes) - 1
    if sig is None or sig.is_zero():
        return np.zeros((n, 3, 0)), None
    ta, tm, tb, _ = _stage_times(nodes)
    out = np.stack(
        [sig.time_coeffs(ta, RIGHT), sig.time_coeffs(tm, RIGHT), sig.time_coeffs(tb, LEFT)],
        axis=1,
    )
    return out, sig


def _patterns(sig: TrajectorySignal | None, grid: Grid) -> np.ndarray:
    if sig is None or sig.is_zero():
        return np.zeros((0, grid.n_modes + 1), dtype=complex)
    if sig.degree > grid.n_modes:
        raise ValueError(f"signal degree {sig.degree} exceeds grid N={grid.n_modes}")
    for _, p in sig.terms:
        if not p.is_mean_zero():
            raise ValueError("forcing and advecting fields must be mean-zero")
    return sig.patterns(grid.n_modes)


def _check_mean_zero(f: SpectralField):
    if abs(f.half[0]) > 0:
        raise ValueError("initial data must be mean-zero")


def _run(
    c0: np.ndarray,
    omega: np.ndarray,
    nodes: np.ndarray,
    fcoef: np.ndarray,
    fpat: np.ndarray,
    acoef: np.ndarray,
    apat: np.ndarray,
    nu: float,
    grid: Grid,
    save_all: bool,
    backend: str | None,
    stage: str,
    scheme: str = "etdrk4",
):
    steps = np.diff(nodes)
    states, bad = kernels.integrate(
        c0, omega, steps, fcoef, fpat, acoef, apat, nu, grid.dealias_cutoff, grid.n_points,
        save_all=save_all, backend=backend, scheme=scheme,
    )
    if bad >= 0:
        raise SolverError(f"{stage}: non-finite state at step {bad} (t={nodes[bad + 1]:.6g})", bad, stage)
    return states


def hnkdv_solve(
    u0: SpectralField,
    eta: TrajectorySignal | None,
    j: int,
    grid: Grid,
    tg: TimeGrid,
    nonlinearity_on: bool = True,
    backend: str | None = None,
    scheme: str = "etdrk4",
) -> Trajectory:
    _check_mean_zero(u0)
    nodes = tg.nodes(eta.breakpoints() if eta is not None else ())
    fc, _ = _signal_coeffs(eta, nodes)
    fpat = _patterns(eta, grid)[None]
    n = len(nodes) - 1
    states = _run(
        u0.half[None, : grid.n_modes + 1], dispersion_omega(j, grid.n_modes), nodes,
        fc[:, :, None, :], fpat, np.zeros((n, 3, 0)), np.zeros((0, grid.n_modes + 1)),
        1.0 if nonlinearity_on else 0.0, grid, True, backend, "hnkdv", scheme,
    )
    return Trajectory(grid, nodes, states[:, 0, :])


def linburgers_solve(
    v0: SpectralField,
    w: TrajectorySignal | None,
    g: TrajectorySignal | None,
    grid: Grid,
    tg: TimeGrid,
    backend: str | None = None,
) -> Trajectory:
    _check_mean_zero(v0)
    bps = np.empty(0)
    for sig in (w, g):
        if sig is not None:
            bps = np.union1d(bps, sig.breakpoints())
    nodes = tg.nodes(bps)
    fc, _ = _signal_coeffs(g, nodes)
    ac, _ = _signal_coeffs(w, nodes)
    states = _run(
        v0.half[None, : grid.n_modes + 1], np.zeros(grid.n_modes + 1, dtype=np.int64), nodes,
        fc[:, :, None, :], _patterns(g, grid)[None], ac, _patterns(w, grid),
        0.0, grid, True, backend, "linburgers",
    )
    return Trajectory(grid, nodes, states[:, 0, :])


def linburgers_batch(
    v0: np.ndarray,
    w: TrajectorySignal | None,
    fcoef_fn,
    fpat: np.ndarray,
    grid: Grid,
    tg: TimeGrid,
    extra_breakpoints=(),
    backend: str | None = None,
) -> np.ndarray:
    """Terminal half spectra for a batch of linearized runs sharing w.

    ``fcoef_fn(ta, tm, tb)`` returns the forcing coefficients (n, 3, Bf, Q)
    at the three RK4 stage times of every substep; ``fpat`` is (Bp, Q, K+1).
    """
    bps = np.asarray(extra_breakpoints, dtype=float)
    if w is not None:
        bps = np.union1d(bps, w.breakpoints())
    nodes = tg.nodes(bps)
    ta, tm, tb, _ = _stage_times(nodes)
    fc = fcoef_fn(ta, tm, tb)
    ac, _ = _signal_coeffs(w, nodes)
    states = _run(
        v0, np.zeros(grid.n_modes + 1, dtype=np.int64), nodes, fc, fpat, ac, _patterns(w, grid),
        0.0, grid, False, backend, "linburgers-batch",
    )
    return states[0]


def resolvent(
    delta: float,
    v0: SpectralField,
    w: TrajectorySignal | None,
    grid: Grid,
    tg: TimeGrid,
    backend: str | None = None,
) -> SpectralField:
    """R(t1, delta) v0: unforced linearized flow from time delta to tg.t1."""
    if not tg.t0 <= delta <= tg.t1:
        raise ValueError("delta must lie in [t0, t1]")
    if math.isclose(delta, tg.t1, rel_tol=0, abs_tol=1e-14 * max(1.0, abs(tg.t1))):
        return v0
    frac = (tg.t1 - delta) / (tg.t1 - tg.t0)
    sub = TimeGrid(delta, tg.t1, max(1, int(round(tg.n_steps * frac))))
    return linburgers_solve(v0, w, None, grid, sub, backend).final


def remainder_trajectory(
    u: Trajectory,
    v: Trajectory,
    w: TrajectorySignal,
    tau: float,
    s: int,
) -> list[tuple[float, float]]:
    """||r(t)||_s for r(t) = u(t) - v(t/tau) - w(t/tau)/tau on u's time nodes."""
    T = v.times[-1]
    if not math.isclose(u.times[-1], tau * T, rel_tol=1e-9):
        raise ValueError(f"horizon mismatch: u ends at {u.times[-1]}, expected tau*T = {tau * T}")
    spline = _spline(v)
    n = u.grid.n_modes
    out = []
    for t, uc in zip(u.times, u.coeffs):
        sv = min(t / tau, T)
        vc = spline(sv)
        # w is continuous in time, either side gives the same value
        wc = w.spectral_at(sv, n, LEFT if sv >= T else RIGHT)[0] if not w.is_zero() else 0.0
        r = uc - vc[: n + 1] - wc / tau
        out.append((float(t), float(half_sobolev_norm(r, s))))
    return out


def write_norms_csv(path: Path, traj: Trajectory, s: int) -> None:
    l2 = traj.norms(0)
    hs = traj.norms(s)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "mass", "l2", f"h{s}"])
        for t, c, a, b in zip(traj.times, traj.coeffs, l2, hs):
            mass = 2 * math.pi * c[0].real
            wr.writerow([repr(float(t)), repr(float(mass)), repr(float(a)), repr(float(b))])
