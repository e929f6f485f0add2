"""Exact algebra of real trigonometric polynomials on the 2*pi torus.

A :class:`TrigPoly` stores ``const + sum_l (a_l sin lx + b_l cos lx)`` with
float coefficients in canonical form (no stored zeros, modes >= 1).  On top
of it live the operators of the HNKdV problem (``B``, ``Q``, ``L_j``) and the
saturation calculus: the mode sets ``J_k`` and the nested spaces ``H_k^J``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Mapping

import numpy as np
import scipy.linalg

ZERO_TOL = 1e-13
INDEPENDENCE_TOL = 1e-10


def _clean(coeffs: Mapping[int, float]) -> dict[int, float]:
    out = {}
    for l, c in coeffs.items():
        if l < 1:
            raise ValueError(f"mode index must be >= 1, got {l}")
        if abs(c) > ZERO_TOL:
            out[int(l)] = float(c)
    return dict(sorted(out.items()))


@dataclass(frozen=True)
class TrigPoly:
    """u(x) = const + sum_l (sin_coeffs[l] sin lx + cos_coeffs[l] cos lx)."""

    const_term: float = 0.0
    sin_coeffs: Mapping[int, float] = field(default_factory=dict)
    cos_coeffs: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        c = float(self.const_term)
        object.__setattr__(self, "const_term", c if abs(c) > ZERO_TOL else 0.0)
        object.__setattr__(self, "sin_coeffs", _clean(self.sin_coeffs))
        object.__setattr__(self, "cos_coeffs", _clean(self.cos_coeffs))

    @classmethod
    def sin(cls, l: int, amp: float = 1.0) -> TrigPoly:
        return cls(0.0, {l: amp}, {})

    @classmethod
    def cos(cls, l: int, amp: float = 1.0) -> TrigPoly:
        return cls(0.0, {}, {l: amp})

    @classmethod
    def zero(cls) -> TrigPoly:
        return cls()

    @property
    def degree(self) -> int:
        return max([0, *self.sin_coeffs, *self.cos_coeffs])

    @property
    def modes(self) -> set[int]:
        return set(self.sin_coeffs) | set(self.cos_coeffs)

    def is_zero(self) -> bool:
        return self.const_term == 0.0 and not self.sin_coeffs and not self.cos_coeffs

    def is_mean_zero(self) -> bool:
        return self.const_term == 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full_like(x, self.const_term)
        for l, a in self.sin_coeffs.items():
            out = out + a * np.sin(l * x)
        for l, b in self.cos_coeffs.items():
            out = out + b * np.cos(l * x)
        return out

    def __add__(self, other: TrigPoly) -> TrigPoly:
        return tp_combine(1.0, self, 1.0, other)

    def __sub__(self, other: TrigPoly) -> TrigPoly:
        return tp_combine(1.0, self, -1.0, other)

    def __neg__(self) -> TrigPoly:
        return self.scale(-1.0)

    def __mul__(self, other):
        if isinstance(other, TrigPoly):
            return tp_product(self, other)
        return self.scale(float(other))

    __rmul__ = __mul__

    def scale(self, alpha: float) -> TrigPoly:
        return TrigPoly(
            alpha * self.const_term,
            {l: alpha * a for l, a in self.sin_coeffs.items()},
            {l: alpha * b for l, b in self.cos_coeffs.items()},
        )

    def l2_inner(self, other: TrigPoly) -> float:
        """L^2(0, 2pi) inner product."""
        s = 2 * math.pi * self.const_term * other.const_term
        for l, a in self.sin_coeffs.items():
            s += math.pi * a * other.sin_coeffs.get(l, 0.0)
        for l, b in self.cos_coeffs.items():
            s += math.pi * b * other.cos_coeffs.get(l, 0.0)
        return s

    def l2_norm(self) -> float:
        return math.sqrt(max(self.l2_inner(self), 0.0))

    def allclose(self, other: TrigPoly, atol: float = 1e-12) -> bool:
        return (self - other).l2_norm() <= atol * (1.0 + self.l2_norm())

    def to_vector(self, max_mode: int) -> np.ndarray:
        """Coefficients as [a_1, b_1, a_2, b_2, ...]; the constant is dropped."""
        if self.degree > max_mode:
            raise ValueError(f"degree {self.degree} exceeds {max_mode}")
        v = np.zeros(2 * max_mode)
        for l, a in self.sin_coeffs.items():
            v[2 * (l - 1)] = a
        for l, b in self.cos_coeffs.items():
            v[2 * (l - 1) + 1] = b
        return v

    @classmethod
    def from_vector(cls, v: np.ndarray) -> TrigPoly:
        v = np.asarray(v, dtype=float)
        n = len(v) // 2
        return cls(
            0.0,
            {l + 1: v[2 * l] for l in range(n)},
            {l + 1: v[2 * l + 1] for l in range(n)},
        )

    def to_json(self) -> list[dict]:
        return [
            {"mode": l, "sin": self.sin_coeffs.get(l, 0.0), "cos": self.cos_coeffs.get(l, 0.0)}
            for l in sorted(self.modes)
        ]

    @classmethod
    def from_json(cls, entries: Iterable[Mapping]) -> TrigPoly:
        sin, cos = {}, {}
        for e in entries:
            l = int(e["mode"])
            if l < 1:
                raise ValueError("mode-0 entries are not allowed in mean-zero data")
            sin[l] = sin.get(l, 0.0) + float(e.get("sin", 0.0))
            cos[l] = cos.get(l, 0.0) + float(e.get("cos", 0.0))
        return cls(0.0, sin, cos)

    def __repr__(self):
        parts = []
        if self.const_term:
            parts.append(f"{self.const_term:g}")
        for l in sorted(self.modes):
            if l in self.sin_coeffs:
                parts.append(f"{self.sin_coeffs[l]:g} sin {l}x")
            if l in self.cos_coeffs:
                parts.append(f"{self.cos_coeffs[l]:g} cos {l}x")
        return "TrigPoly(" + (" + ".join(parts) or "0") + ")"


def tp_combine(alpha: float, p: TrigPoly, beta: float, q: TrigPoly) -> TrigPoly:
    sin = {l: alpha * a for l, a in p.sin_coeffs.items()}
    cos = {l: alpha * b for l, b in p.cos_coeffs.items()}
    for l, a in q.sin_coeffs.items():
        sin[l] = sin.get(l, 0.0) + beta * a
    for l, b in q.cos_coeffs.items():
        cos[l] = cos.get(l, 0.0) + beta * b
    return TrigPoly(alpha * p.const_term + beta * q.const_term, sin, cos)


def tp_derivative(p: TrigPoly) -> TrigPoly:
    return TrigPoly(
        0.0,
        {l: -l * b for l, b in p.cos_coeffs.items()},
        {l: l * a for l, a in p.sin_coeffs.items()},
    )


def tp_product(p: TrigPoly, q: TrigPoly) -> TrigPoly:
    """Pointwise product via product-to-sum identities."""
    const = p.const_term * q.const_term
    sin: dict[int, float] = {}
    cos: dict[int, float] = {}

    def add(store, l, c):
        store[l] = store.get(l, 0.0) + c

    def add_sin(m, c):
        # sin(mx) for signed m; sin 0 = 0
        if m > 0:
            add(sin, m, c)
        elif m < 0:
            add(sin, -m, -c)

    def add_cos(m, c):
        nonlocal const
        if m == 0:
            const += c
        else:
            add(cos, abs(m), c)

    for a, b in ((p, q), (q, p)):
        if a.const_term:
            for l, c in b.sin_coeffs.items():
                add(sin, l, a.const_term * c)
            for l, c in b.cos_coeffs.items():
                add(cos, l, a.const_term * c)
    for k, a in p.sin_coeffs.items():
        for l, b in q.sin_coeffs.items():
            add_cos(k - l, 0.5 * a * b)
            add_cos(k + l, -0.5 * a * b)
        for l, b in q.cos_coeffs.items():
            add_sin(k + l, 0.5 * a * b)
            add_sin(k - l, 0.5 * a * b)
    for k, a in p.cos_coeffs.items():
        for l, b in q.cos_coeffs.items():
            add_cos(k - l, 0.5 * a * b)
            add_cos(k + l, 0.5 * a * b)
        for l, b in q.sin_coeffs.items():
            add_sin(l + k, 0.5 * a * b)
            add_sin(l - k, 0.5 * a * b)
    return TrigPoly(const, sin, cos)


def q_bilinear(v: TrigPoly, w: TrigPoly) -> TrigPoly:
    """Q(v, w) = v w_x + w v_x = d/dx (v w)."""
    return tp_derivative(tp_product(v, w))


def b_nonlinear(u: TrigPoly) -> TrigPoly:
    """B(u) = u u_x = (1/2) d/dx (u^2)."""
    return q_bilinear(u, u).scale(0.5)


def lj_apply(p: TrigPoly, j: int) -> TrigPoly:
    """L_j p = (-1)^(j+1) d^(2j+1)/dx^(2j+1) p."""
    if j < 1:
        raise ValueError("j must be >= 1")
    n = 2 * j + 1
    return TrigPoly(
        0.0,
        {l: b * l**n for l, b in p.cos_coeffs.items()},
        {l: -a * l**n for l, a in p.sin_coeffs.items()},
    )


# --- mode sets and saturation -------------------------------------------------


@dataclass(frozen=True)
class ModeSet:
    """Symmetric set J = {+-l : l in levels}; only positive representatives kept."""

    levels: tuple[int, ...]

    def __post_init__(self):
        lv = tuple(sorted({int(l) for l in self.levels}))
        if not lv:
            raise ValueError("ModeSet must be nonempty")
        if lv[0] < 1:
            raise ValueError("ModeSet levels must be >= 1")
        object.__setattr__(self, "levels", lv)

    def signed(self) -> set[int]:
        return {s * l for l in self.levels for s in (1, -1)}


def is_generator(J: ModeSet) -> bool:
    return reduce(math.gcd, J.levels) == 1


def jk_iterate(J: ModeSet, k: int) -> set[int]:
    base = J.signed()
    cur = set(base)
    for _ in range(k):
        cur = {i + j for i in cur for j in base}
    return cur


@dataclass
class SubspaceBasis:
    """Linearly independent mean-zero trig polynomials spanning a subspace."""

    elements: list[TrigPoly]
    gram: np.ndarray = field(init=False, repr=False)
    _ortho: np.ndarray = field(init=False, repr=False)
    _max_mode: int = field(init=False, repr=False)

    def __post_init__(self):
        if any(not e.is_mean_zero() for e in self.elements):
            raise ValueError("basis elements must be mean-zero")
        n = len(self.elements)
        self.gram = np.array(
            [[self.elements[a].l2_inner(self.elements[b]) for b in range(n)] for a in range(n)]
        )
        self._max_mode = max([1, *(e.degree for e in self.elements)])
        if n:
            V = np.array([e.to_vector(self._max_mode) for e in self.elements]).T
            Q, R = np.linalg.qr(V)
            if np.min(np.abs(np.diag(R))) <= INDEPENDENCE_TOL * max(1.0, np.abs(R).max()):
                raise ValueError("basis elements are linearly dependent")
            self._ortho = Q
        else:
            self._ortho = np.zeros((2 * self._max_mode, 0))

    def __len__(self):
        return len(self.elements)

    @property
    def dim(self) -> int:
        return len(self.elements)

    def distance(self, p: TrigPoly) -> float:
        """L^2 distance from p to the span."""
        m = max(self._max_mode, p.degree)
        v = p.to_vector(m)
        Q = np.zeros((2 * m, self._ortho.shape[1]))
        Q[: self._ortho.shape[0]] = self._ortho
        resid = v - Q @ (Q.T @ v)
        # coefficient vector norm -> L^2 norm (each sin/cos carries pi); constant added separately
        return math.sqrt(math.pi * float(resid @ resid) + 2 * math.pi * p.const_term**2)

    def orthonormal(self) -> list[TrigPoly]:
        """L^2-orthonormal basis of the same span."""
        scale = 1.0 / math.sqrt(math.pi)
        return [TrigPoly.from_vector(q * scale) for q in self._ortho.T]

    def modes_covered(self, tol: float = INDEPENDENCE_TOL) -> set[int]:
        """Modes l for which both sin lx and cos lx lie in the span."""
        out = set()
        for l in range(1, self._max_mode + 1):
            if (
                self.distance(TrigPoly.sin(l)) <= tol * 2
                and self.distance(TrigPoly.cos(l)) <= tol * 2
            ):
                out.add(l)
        return out

    def to_json(self) -> list[list[dict]]:
        return [e.to_json() for e in self.elements]


def membership(p: TrigPoly, basis: SubspaceBasis, tol: float) -> bool:
    if tol <= 0:
        raise ValueError("tol must be positive")
    if p.is_zero():
        return True
    return basis.distance(p) <= tol * (1.0 + p.l2_norm())


def _reduce_span(candidates: list[TrigPoly]) -> list[TrigPoly]:
    """Independent subset of ``candidates`` by column-pivoted QR (L^2 geometry)."""
    cands = [c for c in candidates if not c.is_zero()]
    if not cands:
        return []
    m = max(c.degree for c in cands)
    A = np.array([c.to_vector(m) for c in cands]).T
    A = A / np.linalg.norm(A, axis=0)
    _, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > INDEPENDENCE_TOL))
    return [cands[i] for i in piv[:rank]]


def h0_subspace(J: ModeSet) -> SubspaceBasis:
    els = []
    for l in J.levels:
        els += [TrigPoly.sin(l), TrigPoly.cos(l)]
    return SubspaceBasis(els)


def _hk_levels(J: ModeSet, k_max: int):
    """Yield bases of H_0^J, H_1^J, ..., H_{k_max}^J.

    H_k = span{psi_1 + Q(psi_2, phi)} = H_{k-1} + Q(H_{k-1}, H_0) by bilinearity.
    Each level is re-orthonormalized so coefficients stay O(1) as modes grow.
    """
    h0 = h0_subspace(J).elements
    current = list(h0)
    yield SubspaceBasis(current)
    for _ in range(k_max):
        products = [q_bilinear(psi, phi) for psi in current for phi in h0]
        kept = _reduce_span(current + products)
        current = SubspaceBasis(kept).orthonormal()
        yield SubspaceBasis(current)


def hk_subspace(J: ModeSet, k: int) -> SubspaceBasis:
    if k < 0:
        raise ValueError("k must be non-negative")
    for basis in _hk_levels(J, k):
        pass
    return _pure_modes_first(basis)


def _pure_modes_first(basis: SubspaceBasis) -> SubspaceBasis:
    """Swap to pure sin/cos elements when the span is a coordinate subspace."""
    pure = []
    for l in range(1, basis._max_mode + 1):
        for p in (TrigPoly.sin(l), TrigPoly.cos(l)):
            if basis.distance(p) <= INDEPENDENCE_TOL:
                pure.append(p)
    if len(pure) == basis.dim:
        return SubspaceBasis(pure)
    return basis


@dataclass
class SaturationReport:
    levels: tuple[int, ...]
    mode_cutoff: int
    k_max: int
    is_generator: bool
    modes_by_k: list[list[int]]
    dims_by_k: list[int]
    covered_at: int | None
    h1_basis: list[list[dict]]

    @property
    def saturating(self) -> bool:
        return self.covered_at is not None

    def to_json(self) -> dict:
        return {
            "levels": list(self.levels),
            "mode_cutoff": self.mode_cutoff,
            "k_max": self.k_max,
            "is_generator": self.is_generator,
            "saturating": self.saturating,
            "covered_at": self.covered_at,
            "modes_by_k": self.modes_by_k,
            "dims_by_k": self.dims_by_k,
            "h1_basis": self.h1_basis,
        }


def saturation_report(J: ModeSet, mode_cutoff: int, k_max: int) -> SaturationReport:
    modes_by_k, dims = [], []
    covered_at = None
    h1 = None
    target = set(range(1, mode_cutoff + 1))
    for k, basis in enumerate(_hk_levels(J, k_max)):
        if k == 1:
            h1 = _pure_modes_first(basis)
        covered = basis.modes_covered()
        modes_by_k.append(sorted(covered))
        dims.append(basis.dim)
        if covered_at is None and target <= covered:
            covered_at = k
    if h1 is None:
        h1 = hk_subspace(J, 1)
    return SaturationReport(
        levels=J.levels,
        mode_cutoff=mode_cutoff,
        k_max=k_max,
        is_generator=is_generator(J),
        modes_by_k=modes_by_k,
        dims_by_k=dims,
        covered_at=covered_at,
        h1_basis=h1.to_json(),
    )
