"""Return-method reference trajectory, its Burgers control, and time signals.

Time dependence is carried by small composable :class:`TimeFunction` objects
that evaluate exactly (piecewise-polynomial closed forms) and know their own
breakpoints, so solvers can step across jumps without smearing them.  A
:class:`TrajectorySignal` is a finite sum ``sum_i f_i(t) p_i(x)`` of time
functions times trig polynomials.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .trig import (
    ModeSet,
    SubspaceBasis,
    TrigPoly,
    b_nonlinear,
    h0_subspace,
    hk_subspace,
    lj_apply,
    membership,
    q_bilinear,
)

RIGHT, LEFT = "right", "left"


def _as_array(t) -> np.ndarray:
    return np.atleast_1d(np.asarray(t, dtype=float))


class TimeFunction:
    """Scalar function of time with exact derivative and known breakpoints.

    ``side`` selects the one-sided limit at jump points: ``"right"`` returns
    f(t+), ``"left"`` returns f(t-).
    """

    def __call__(self, t, side: str = RIGHT) -> np.ndarray:
        raise NotImplementedError

    def derivative(self) -> TimeFunction:
        raise NotImplementedError

    def breakpoints(self) -> np.ndarray:
        return np.empty(0)

    def __mul__(self, other):
        if isinstance(other, TimeFunction):
            return Product(self, other)
        return Product(Const(float(other)), self)

    __rmul__ = __mul__

    def __add__(self, other: TimeFunction) -> TimeFunction:
        return Sum(self, other)


@dataclass(eq=False)
class Const(TimeFunction):
    value: float

    def __call__(self, t, side=RIGHT):
        return np.full(_as_array(t).shape, self.value)

    def derivative(self):
        return Const(0.0)


@dataclass(eq=False)
class Linear(TimeFunction):
    """a + b t."""

    a: float
    b: float

    def __call__(self, t, side=RIGHT):
        return self.a + self.b * _as_array(t)

    def derivative(self):
        return Const(self.b)


@dataclass(eq=False)
class Sum(TimeFunction):
    f: TimeFunction
    g: TimeFunction

    def __call__(self, t, side=RIGHT):
        return self.f(t, side) + self.g(t, side)

    def derivative(self):
        return Sum(self.f.derivative(), self.g.derivative())

    def breakpoints(self):
        return np.union1d(self.f.breakpoints(), self.g.breakpoints())


@dataclass(eq=False)
class Product(TimeFunction):
    f: TimeFunction
    g: TimeFunction

    def __call__(self, t, side=RIGHT):
        return self.f(t, side) * self.g(t, side)

    def derivative(self):
        return Sum(Product(self.f.derivative(), self.g), Product(self.f, self.g.derivative()))

    def breakpoints(self):
        return np.union1d(self.f.breakpoints(), self.g.breakpoints())


@dataclass(eq=False)
class Rescaled(TimeFunction):
    """factor * f(t / tau)."""

    f: TimeFunction
    tau: float
    factor: float = 1.0

    def __call__(self, t, side=RIGHT):
        return self.factor * self.f(_as_array(t) / self.tau, side)

    def derivative(self):
        return Rescaled(self.f.derivative(), self.tau, self.factor / self.tau)

    def breakpoints(self):
        return self.f.breakpoints() * self.tau


@dataclass(eq=False)
class StepFunction(TimeFunction):
    """Piecewise-constant function on [0, horizon].

    ``values[i]`` holds on ``[breakpoints[i-1], breakpoints[i])`` with
    ``breakpoints[-1] = 0`` and ``breakpoints[n] = horizon`` implied.
    """

    breakpoints_: np.ndarray
    values: np.ndarray
    horizon: float
    prime: int | None = None
    depth: int | None = None
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        b = np.asarray(self.breakpoints_, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if len(v) != len(b) + 1:
            raise ValueError("need len(values) == len(breakpoints) + 1")
        if len(b) and (np.any(np.diff(b) <= 0) or b[0] <= 0 or b[-1] >= self.horizon):
            raise ValueError("breakpoints must be strictly increasing inside (0, horizon)")
        self.breakpoints_, self.values = b, v
        edges = np.concatenate([[0.0], b])
        widths = np.diff(np.concatenate([edges, [self.horizon]]))
        self._cum = np.concatenate([[0.0], np.cumsum(v * widths)])[:-1]

    def _index(self, t, side):
        return np.searchsorted(self.breakpoints_, _as_array(t), side=side)

    def __call__(self, t, side=RIGHT):
        return self.values[self._index(t, side)]

    def derivative(self):
        return Const(0.0)

    def breakpoints(self):
        return self.breakpoints_

    def integral(self) -> TimeFunction:
        return StepIntegral(self)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(eq=False)
class StepIntegral(TimeFunction):
    """t -> int_0^t phi(rho) d rho, continuous and piecewise linear."""

    phi: StepFunction

    def __call__(self, t, side=RIGHT):
        t = _as_array(t)
        i = np.searchsorted(self.phi.breakpoints_, t, side=RIGHT)
        edges = np.concatenate([[0.0], self.phi.breakpoints_])
        return self.phi._cum[i] + self.phi.values[i] * (t - edges[i])

    def derivative(self):
        return self.phi

    def breakpoints(self):
        return self.phi.breakpoints_


def _is_prime(p: int) -> bool:
    return p >= 2 and all(p % d for d in range(2, int(math.isqrt(p)) + 1))


def first_primes(n: int) -> list[int]:
    out, p = [], 2
    while len(out) < n:
        if _is_prime(p):
            out.append(p)
        p += 1
    return out


def observable_phi(prime: int, depth: int, horizon: float) -> StepFunction:
    """phi(t) = sum_{n<=depth} p^-n sigma(p^n t / T), sigma the 2-periodic unit square wave.

    Jumps sit exactly at m T / p^n with p not dividing m.
    """
    if not _is_prime(prime):
        raise ValueError(f"{prime} is not prime")
    if depth < 1 or horizon <= 0:
        raise ValueError("depth >= 1 and horizon > 0 required")
    n_cells = prime**depth
    m = np.arange(n_cells)
    values = np.zeros(n_cells)
    for n in range(1, depth + 1):
        # cell m lies in [m, m+1) * T/p^depth -> level-n square wave index m // p^(depth-n)
        idx = m // prime ** (depth - n)
        values += prime ** (-n) * np.where(idx % 2 == 0, 1.0, -1.0)
    breaks = np.arange(1, n_cells) * horizon / n_cells
    return StepFunction(breaks, values, horizon, prime=prime, depth=depth)


def jump_points_exact(prime: int, depth: int) -> set[Fraction]:
    """Jump set of observable_phi in units of the horizon, as exact fractions."""
    return {
        Fraction(m, prime**n)
        for n in range(1, depth + 1)
        for m in range(1, prime**n)
        if m % prime
    }


@dataclass(frozen=True)
class ThetaWindow:
    """Theta(t) = (T - t) / T: C^1, positive on [0, T), zero only at T."""

    horizon: float

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")

    def __call__(self, t):
        return (self.horizon - np.asarray(t, dtype=float)) / self.horizon

    def derivative(self, t=None):
        return -1.0 / self.horizon

    def as_function(self) -> Linear:
        return Linear(1.0, -1.0 / self.horizon)


def theta_window(T: float) -> ThetaWindow:
    return ThetaWindow(T)


def vartheta(phi: StepFunction, theta: ThetaWindow, amplitude: float = 1.0) -> tuple[TimeFunction, TimeFunction]:
    """(vartheta, vartheta') with vartheta(t) = A Theta(t) int_0^t phi."""
    if not math.isclose(phi.horizon, theta.horizon):
        raise ValueError("phi and Theta horizons differ")
    f = Product(Const(amplitude), Product(theta.as_function(), phi.integral()))
    return f, f.derivative()


@dataclass(eq=False)
class TrajectorySignal:
    """sum_i f_i(t) p_i(x) on [0, horizon]."""

    horizon: float
    terms: list[tuple[TimeFunction, TrigPoly]]
    meta: dict = field(default_factory=dict)

    @classmethod
    def zero(cls, horizon: float) -> TrajectorySignal:
        return cls(horizon, [])

    def is_zero(self) -> bool:
        return not self.terms

    def value_at(self, t: float, side: str = RIGHT) -> TrigPoly:
        out = TrigPoly()
        for f, p in self.terms:
            out = out + p.scale(float(f(t, side)[0]))
        return out

    def derivative(self) -> TrajectorySignal:
        return TrajectorySignal(self.horizon, [(f.derivative(), p) for f, p in self.terms])

    def derivative_at(self, t: float, side: str = RIGHT) -> TrigPoly:
        return self.derivative().value_at(t, side)

    def breakpoints(self) -> np.ndarray:
        out = np.empty(0)
        for f, _ in self.terms:
            out = np.union1d(out, f.breakpoints())
        return out

    @property
    def degree(self) -> int:
        return max([0, *(p.degree for _, p in self.terms)])

    def __add__(self, other: TrajectorySignal) -> TrajectorySignal:
        if not math.isclose(self.horizon, other.horizon):
            raise ValueError("horizon mismatch")
        return TrajectorySignal(self.horizon, self.terms + other.terms)

    def scale(self, alpha: float) -> TrajectorySignal:
        return TrajectorySignal(self.horizon, [(f, p.scale(alpha)) for f, p in self.terms], dict(self.meta))

    def map_space(self, op: Callable[[TrigPoly], TrigPoly]) -> TrajectorySignal:
        terms = [(f, op(p)) for f, p in self.terms]
        return TrajectorySignal(self.horizon, [(f, p) for f, p in terms if not p.is_zero()])

    def rescaled(self, tau: float, factor: float = 1.0) -> TrajectorySignal:
        """t -> factor * self(t / tau), living on [0, tau * horizon]."""
        return TrajectorySignal(
            self.horizon * tau, [(Rescaled(f, tau, factor), p) for f, p in self.terms]
        )

    def time_coeffs(self, times, side: str = RIGHT) -> np.ndarray:
        """(n_times, n_terms) matrix of f_i(t)."""
        times = _as_array(times)
        if not self.terms:
            return np.zeros((len(times), 0))
        return np.stack([f(times, side) for f, _ in self.terms], axis=1)

    def patterns(self, n_modes: int) -> np.ndarray:
        """(n_terms, N+1) non-negative Fourier coefficients of each p_i."""
        from .spectral import Grid, from_trigpoly

        grid = Grid(n_modes, 2 * n_modes + 2)
        if not self.terms:
            return np.zeros((0, n_modes + 1), dtype=complex)
        return np.stack([from_trigpoly(p, grid).half for _, p in self.terms])

    def spectral_at(self, times, n_modes: int, side: str = RIGHT) -> np.ndarray:
        return self.time_coeffs(times, side) @ self.patterns(n_modes)

    def to_json(self) -> dict:
        if "channels" in self.meta:
            return {"T": self.horizon, "channels": self.meta["channels"]}
        return {"T": self.horizon, "n_terms": len(self.terms)}


def build_w(
    J: ModeSet,
    T: float,
    depth: int = 3,
    amplitude: float = 1.0,
    flat: bool = False,
) -> TrajectorySignal:
    """w(t, x) = sum_{l in J} (vartheta_l^s(t) sin lx + vartheta_l^c(t) cos lx).

    Channel (l, sin), (l, cos) for l in increasing order take the primes 2, 3, 5, ...
    ``flat=True`` replaces each observable step function by the constant 1/p
    (no jumps), for conditioning comparisons.
    """
    theta = theta_window(T)
    primes = first_primes(2 * len(J.levels))
    terms, channels = [], []
    for i, l in enumerate(J.levels):
        for c, (kind, poly) in enumerate((("sin", TrigPoly.sin(l)), ("cos", TrigPoly.cos(l)))):
            p = primes[2 * i + c]
            if flat:
                phi = StepFunction(np.empty(0), np.array([1.0 / p]), T, prime=p, depth=0)
            else:
                phi = observable_phi(p, depth, T)
            f, _ = vartheta(phi, theta, amplitude)
            terms.append((f, poly))
            channels.append(
                {"mode": l, "channel": kind, "prime": p, "depth": 0 if flat else depth, "amplitude": amplitude}
            )
    return TrajectorySignal(T, terms, {"channels": channels, "levels": list(J.levels), "flat": flat})


def w_from_json(data: dict) -> TrajectorySignal:
    ch = data["channels"]
    levels = sorted({c["mode"] for c in ch})
    depth = ch[0]["depth"]
    return build_w(ModeSet(tuple(levels)), data["T"], depth or 1, ch[0]["amplitude"], flat=depth == 0)


def build_xi(w: TrajectorySignal) -> TrajectorySignal:
    """xi = dw/dt + B(w), expanded exactly: B(sum f_i p_i) = sum_{i,j} f_i f_j Q(p_i, p_j) / 2."""
    terms = list(w.derivative().terms)
    for a, (fa, pa) in enumerate(w.terms):
        for b, (fb, pb) in enumerate(w.terms):
            if b < a:
                continue
            q = q_bilinear(pa, pb)
            if a == b:
                q = q.scale(0.5)
            if not q.is_zero():
                terms.append((Product(fa, fb), q))
    return TrajectorySignal(w.horizon, terms, {"kind": "xi"})


@dataclass
class A1Report:
    j: int
    samples: int
    tol: float
    endpoint_norms: tuple[float, float]
    max_lj_distance: float
    max_xi_distance: float
    max_burgers_residual: float
    failures: list[tuple[str, float]]

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "j": self.j,
            "samples": self.samples,
            "tol": self.tol,
            "w0_norm": self.endpoint_norms[0],
            "wT_norm": self.endpoint_norms[1],
            "max_lj_w_distance_to_H0": self.max_lj_distance,
            "max_xi_distance_to_H1": self.max_xi_distance,
            "max_burgers_residual": self.max_burgers_residual,
            "failures": [{"clause": c, "t": t} for c, t in self.failures],
        }


def verify_a1(
    w: TrajectorySignal,
    xi: TrajectorySignal,
    j: int,
    samples: int = 100,
    tol: float = 1e-10,
    J: ModeSet | None = None,
) -> A1Report:
    """Check w(0)=w(T)=0, L_j w(t) in H_0^J, xi(t) in H_1^J, and the Burgers identity."""
    if J is None:
        J = ModeSet(tuple(w.meta.get("levels", (1,))))
    h0 = h0_subspace(J)
    h1 = hk_subspace(J, 1)
    failures: list[tuple[str, float]] = []
    n0 = w.value_at(0.0).l2_norm()
    nT = w.value_at(w.horizon, LEFT).l2_norm()
    if n0 > tol:
        failures.append(("(i) w(0) = 0", 0.0))
    if nT > tol:
        failures.append(("(i) w(T) = 0", w.horizon))
    dw = w.derivative()
    max_lj = max_xi = max_res = 0.0
    for t in np.linspace(0.0, w.horizon, samples):
        wt = w.value_at(t)
        lw = lj_apply(wt, j)
        d = h0.distance(lw)
        max_lj = max(max_lj, d / (1 + lw.l2_norm()))
        if not membership(lw, h0, tol):
            failures.append(("(ii) L_j w(t) in H_0", float(t)))
        xt = xi.value_at(t)
        max_xi = max(max_xi, h1.distance(xt) / (1 + xt.l2_norm()))
        if not membership(xt, h1, tol):
            failures.append(("(iii) xi(t) in H_1", float(t)))
        res = (dw.value_at(t) + b_nonlinear(wt) - xt).l2_norm()
        max_res = max(max_res, res)
        if res > tol:
            failures.append(("(iv) Burgers residual", float(t)))
    return A1Report(j, samples, tol, (n0, nT), max_lj, max_xi, max_res, failures)
