"""Truncated Fourier representation of real mean-zero fields on the torus."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .trig import TrigPoly


@dataclass(frozen=True)
class Grid:
    n_modes: int = 64
    n_points: int = 192

    def __post_init__(self):
        if self.n_modes < 2:
            raise ValueError("n_modes must be >= 2")
        if self.n_points < 2 * self.n_modes + 2:
            raise ValueError("n_points must be >= 2*n_modes + 2")

    @property
    def x(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n_points) / self.n_points

    @property
    def k(self) -> np.ndarray:
        """Signed wavenumbers -N..N in storage order."""
        return np.arange(-self.n_modes, self.n_modes + 1)

    @property
    def dealias_cutoff(self) -> int:
        return (2 * self.n_modes) // 3


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients c_k, k = -N..N, of a real field (Hermitian)."""

    coeffs: np.ndarray
    mean_zero: bool = True
    _n: int = field(init=False, repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim != 1 or len(c) % 2 != 1:
            raise ValueError("coeffs must have odd length 2N+1")
        n = len(c) // 2
        # enforce exact Hermitian symmetry and the mean-zero flag
        half = c[n:].copy()
        half[0] = half[0].real
        if self.mean_zero:
            half[0] = 0.0
        c = np.concatenate([np.conj(half[:0:-1]), half])
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "_n", n)

    @property
    def n_modes(self) -> int:
        return self._n

    @property
    def half(self) -> np.ndarray:
        """Non-negative half c_0..c_N."""
        return self.coeffs[self._n :]

    @classmethod
    def from_half(cls, half: np.ndarray, mean_zero: bool = True) -> SpectralField:
        half = np.asarray(half, dtype=complex)
        return cls(np.concatenate([np.conj(half[:0:-1]), half]), mean_zero)

    @classmethod
    def zeros(cls, grid: Grid) -> SpectralField:
        return cls(np.zeros(2 * grid.n_modes + 1, dtype=complex))

    def __getitem__(self, k: int) -> complex:
        return complex(self.coeffs[k + self._n])

    def __add__(self, other: SpectralField) -> SpectralField:
        return SpectralField(self.coeffs + other.coeffs, self.mean_zero and other.mean_zero)

    def __sub__(self, other: SpectralField) -> SpectralField:
        return SpectralField(self.coeffs - other.coeffs, self.mean_zero and other.mean_zero)

    def __mul__(self, alpha: float) -> SpectralField:
        return SpectralField(self.coeffs * float(alpha), self.mean_zero)

    __rmul__ = __mul__

    def to_trigpoly(self) -> TrigPoly:
        h = self.half
        return TrigPoly(
            float(h[0].real),
            {l: -2 * h[l].imag for l in range(1, len(h))},
            {l: 2 * h[l].real for l in range(1, len(h))},
        )

    def to_json(self) -> list[dict]:
        return [{"k": k, "re": float(c.real), "im": float(c.imag)} for k, c in enumerate(self.half)]

    @classmethod
    def from_json(cls, entries, mean_zero: bool = True) -> SpectralField:
        n = max(int(e["k"]) for e in entries)
        half = np.zeros(n + 1, dtype=complex)
        for e in entries:
            half[int(e["k"])] = complex(e["re"], e["im"])
        return cls.from_half(half, mean_zero)


def to_spectral(samples, grid: Grid, mean_zero: bool = False) -> SpectralField:
    u = np.asarray(samples, dtype=float)
    if u.shape != (grid.n_points,):
        raise ValueError(f"expected {grid.n_points} samples, got {u.shape}")
    c = np.fft.fft(u) / grid.n_points
    k = grid.k
    return SpectralField(c[k % grid.n_points], mean_zero)


def to_physical(f: SpectralField, grid: Grid) -> np.ndarray:
    half = np.zeros(grid.n_points // 2 + 1, dtype=complex)
    n = min(f.n_modes, grid.n_modes)
    half[: n + 1] = f.half[: n + 1]
    if grid.n_points % 2 == 0 and n == grid.n_points // 2:
        half[n] = half[n].real
    return np.fft.irfft(half, n=grid.n_points) * grid.n_points


def from_trigpoly(p: TrigPoly, grid: Grid, mean_zero: bool = True) -> SpectralField:
    if p.degree > grid.n_modes:
        raise ValueError(f"degree {p.degree} exceeds grid N={grid.n_modes}")
    if mean_zero and not p.is_mean_zero():
        raise ValueError("mean-zero field requested from a polynomial with a constant term")
    half = np.zeros(grid.n_modes + 1, dtype=complex)
    half[0] = p.const_term
    for l, a in p.sin_coeffs.items():
        half[l] += -0.5j * a
    for l, b in p.cos_coeffs.items():
        half[l] += 0.5 * b
    return SpectralField.from_half(half, mean_zero)


def sobolev_weights(n_modes: int, s: int) -> np.ndarray:
    """(1 + k^2)^s for k = 0..N."""
    k = np.arange(n_modes + 1, dtype=float)
    return (1.0 + k * k) ** s


def sobolev_norm(f: SpectralField, s: int) -> float:
    if s < 0:
        raise ValueError("negative Sobolev index is not supported")
    return half_sobolev_norm(f.half, s)


def half_sobolev_norm(half: np.ndarray, s: int) -> float | np.ndarray:
    """H^s norm from non-negative coefficients; leading axes are batch axes."""
    half = np.asarray(half)
    w = sobolev_weights(half.shape[-1] - 1, s)
    a2 = np.abs(half) ** 2
    tot = 2 * (a2[..., 1:] * w[1:]).sum(axis=-1) + a2[..., 0] * w[0]
    return np.sqrt(2 * math.pi * tot)


def dealias(f: SpectralField, grid: Grid) -> SpectralField:
    half = f.half.copy()
    half[grid.dealias_cutoff + 1 :] = 0.0
    return SpectralField.from_half(half, f.mean_zero)
