"""Time-stepping kernels for spectral evolution equations on the torus.

Both solvers reduce to one family of equations in Fourier space

    d/dt c_k = i omega_k c_k - nu * (ik/2) (u^2)_k - ik (a u)_k + f_k,

with ``omega_k`` the dispersion frequency (zero for transport), ``a(t)`` a
given advecting field and ``f(t)`` a forcing.  The stiff linear part is
treated exactly and all quadratic products are 2/3-dealiased.  Two
fourth-order schemes share the same stage times (t, t+h/2, t+h):

* ``etdrk4``: exponential time differencing RK4 (Cox-Matthews), with the
  phi-function coefficients evaluated by contour averaging near z = 0;
* ``ifrk4``: integrating-factor RK4.

Both reduce to classical RK4 when omega = 0.  ETDRK4 is the default: its
error constants stay bounded as |omega h| grows, which matters for j >= 2.

Two interchangeable backends implement the loop:

* ``numba``: an ``@njit`` loop computing products by direct truncated
  convolution of the dealiased half spectra (sparse in the advecting field,
  which typically occupies a handful of modes);
* ``numpy``: a pure-numpy loop computing products pseudospectrally with FFTs.

The backend defaults to numba when importable.  Set ``HNKDV_BACKEND=numpy``
to force the fallback path.
"""
from __future__ import annotations

import os
from fractions import Fraction
from functools import lru_cache

import numpy as np

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

# 2*pi to 40 significant digits, exact as a rational
_TWO_PI = Fraction("6.283185307179586476925286766559005768394")


def default_backend() -> str:
    choice = os.environ.get("HNKDV_BACKEND", "").strip().lower()
    if choice in ("numpy", "python", "fallback"):
        return "numpy"
    if choice == "numba" and not HAVE_NUMBA:
        raise RuntimeError("HNKDV_BACKEND=numba but numba is not installed")
    return "numba" if HAVE_NUMBA else "numpy"


@lru_cache(maxsize=65536)
def reduced_phase(omega: int, dt: float) -> float:
    """(omega * dt) mod 2pi, computed in exact rational arithmetic.

    omega is an integer frequency k^(2j+1); the product with dt is exact before
    reduction, so large |k| keep their phase to double precision.
    """
    x = Fraction(int(omega)) * Fraction(dt)
    n = x // _TWO_PI
    r = float(x - n * _TWO_PI)
    return r - 2 * np.pi if r > np.pi else r


SCHEMES = ("etdrk4", "ifrk4")
_CONTOUR = np.exp(2j * np.pi * (np.arange(1, 33) - 0.5) / 32)


def _etd_direct(z, E, E2):
    z3 = z**3
    return (
        (E2 - 1) / z,
        (-4 - z + E * (4 - 3 * z + z * z)) / z3,
        (2 + z + E * (z - 2)) / z3,
        (-4 - 3 * z - z * z + E * (4 - z)) / z3,
    )


def etd_coefficients(omega: np.ndarray, h: float) -> np.ndarray:
    """Rows E, E2, Q, f1, f2, f3 of ETDRK4 for dc/dt = i omega c + N, step h.

    Exponentials use the exactly reduced phase; |z| < 1 is handled by
    averaging over a unit circle around z, which avoids cancellation.
    """
    omega = np.asarray(omega)
    z = 1j * omega.astype(float) * h
    E = np.exp(1j * np.array([reduced_phase(int(w), h) for w in omega]))
    E2 = np.exp(1j * np.array([reduced_phase(int(w), h / 2) for w in omega]))
    out = np.empty((6, len(omega)), dtype=complex)
    out[0], out[1] = E, E2
    big = np.abs(z) >= 1
    if np.any(big):
        for r, v in enumerate(_etd_direct(z[big], E[big], E2[big])):
            out[2 + r, big] = v
    small = ~big
    if np.any(small):
        lr = z[small, None] + _CONTOUR[None, :]
        for r, v in enumerate(_etd_direct(lr, np.exp(lr), np.exp(lr / 2))):
            out[2 + r, small] = v.mean(axis=1)
    zero = omega == 0
    out[2, zero] = 0.5
    out[3:, zero] = 1.0 / 6.0
    out[2:] *= h
    return out


def step_table(omega: np.ndarray, steps: np.ndarray, scheme: str = "etdrk4"):
    """Per-unique-step coefficient rows and the index of each step into them.

    ``ifrk4`` rows: (E2,); ``etdrk4`` rows: (E, E2, Q, f1, f2, f3).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    omega = np.asarray(omega)
    uniq, inv = np.unique(steps, return_inverse=True)
    rows = 6 if scheme == "etdrk4" else 1
    table = np.empty((len(uniq), rows, len(omega)), dtype=complex)
    for a, h in enumerate(uniq):
        if scheme == "etdrk4":
            table[a] = etd_coefficients(omega, float(h))
        else:
            table[a, 0] = np.exp(1j * np.array([reduced_phase(int(w), float(h) / 2) for w in omega]))
    return table, inv.astype(np.int64)


# --- numpy backend -------------------------------------------------------------


def _np_rhs(u, fcoef_s, fpat, acoef_s, apat, nu, kd, n_points, ik):
    B, K1 = u.shape
    out = np.einsum("bq,bqk->bk", np.broadcast_to(fcoef_s, (B, fcoef_s.shape[-1])),
                    np.broadcast_to(fpat, (B,) + fpat.shape[1:]))
    out = np.array(out, dtype=complex)
    if nu == 0.0 and acoef_s.shape[0] == 0:
        return out
    m2 = n_points // 2 + 1
    ud = np.zeros((B, m2), dtype=complex)
    ud[:, : kd + 1] = u[:, : kd + 1]
    phys = np.fft.irfft(ud, n=n_points, axis=-1) * n_points
    nl = np.zeros((B, kd + 1), dtype=complex)
    if nu != 0.0:
        sq = np.fft.rfft(phys * phys, axis=-1)[:, : kd + 1] / n_points
        nl += 0.5 * nu * sq
    if acoef_s.shape[0]:
        a = acoef_s @ apat
        ad = np.zeros(m2, dtype=complex)
        ad[: kd + 1] = a[: kd + 1]
        aphys = np.fft.irfft(ad, n=n_points) * n_points
        nl += np.fft.rfft(aphys[None, :] * phys, axis=-1)[:, : kd + 1] / n_points
    out[:, : kd + 1] -= ik[: kd + 1] * nl
    return out


def _integrate_numpy(c0, table, inv, steps, fcoef, fpat, acoef, apat, nu, kd, n_points, save_all, etd):
    n = len(steps)
    B, K1 = c0.shape
    ik = 1j * np.arange(K1)
    u = c0.copy()
    states = np.empty((n + 1 if save_all else 1, B, K1), dtype=complex)
    states[0] = u

    def rhs(v, s, stage):
        return _np_rhs(v, fcoef[s, stage], fpat, acoef[s, stage], apat, nu, kd, n_points, ik)

    for s in range(n):
        h = steps[s]
        co = table[inv[s]]
        if etd:
            E, E2, Q, f1, f2, f3 = co
            nu_ = rhs(u, s, 0)
            a = E2 * u + Q * nu_
            na = rhs(a, s, 1)
            b = E2 * u + Q * na
            nb = rhs(b, s, 1)
            c = E2 * a + Q * (2.0 * nb - nu_)
            nc = rhs(c, s, 2)
            u = E * u + f1 * nu_ + 2.0 * f2 * (na + nb) + f3 * nc
        else:
            E2 = co[0]
            E = E2 * E2
            a = rhs(u, s, 0)
            b = rhs(E2 * (u + 0.5 * h * a), s, 1)
            c = rhs(E2 * u + 0.5 * h * b, s, 1)
            d = rhs(E * u + h * E2 * c, s, 2)
            u = E * u + (h / 6.0) * (E * a + 2.0 * E2 * (b + c) + d)
        if not np.all(np.isfinite(u)):
            return states, s
        if save_all:
            states[s + 1] = u
    if not save_all:
        states[0] = u
    return states, -1


# --- numba backend -------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _conv_half(a, b, kd, out):
        # out_k = sum_m a_m b_{k-m}, |m|, |k-m| <= kd, for k = 0..kd
        for k in range(kd + 1):
            acc = 0.0 + 0.0j
            lo = k - kd
            for m in range(lo, kd + 1):
                if m >= 0:
                    am = a[m]
                else:
                    am = np.conj(a[-m])
                r = k - m
                if r >= 0:
                    br = b[r]
                else:
                    br = np.conj(b[-r])
                acc += am * br
            out[k] = acc

    @njit(cache=True)
    def _conv_sparse(a, idx, nnz, u, kd, out):
        # same as _conv_half(a, u) but summing only over the nonzero modes of a
        for k in range(kd + 1):
            out[k] = 0.0 + 0.0j
        for q in range(nnz):
            m = idx[q]
            am = a[m]
            for k in range(kd + 1):
                r = k - m
                if r >= -kd:
                    out[k] += am * (u[r] if r >= 0 else np.conj(u[-r]))
                if m > 0:
                    r = k + m
                    if r <= kd:
                        out[k] += np.conj(am) * u[r]

    @njit(cache=True)
    def _nb_rhs(u, fcoef_s, fpat, acoef_s, apat, nu, kd, out, work, aw, aidx):
        B, K1 = u.shape
        Q = fcoef_s.shape[1]
        Bf = fcoef_s.shape[0]
        Bp = fpat.shape[0]
        Qa = acoef_s.shape[0]
        nnz = 0
        if Qa > 0:
            for k in range(kd + 1):
                acc = 0.0 + 0.0j
                for q in range(Qa):
                    acc += acoef_s[q] * apat[q, k]
                aw[k] = acc
                if acc != 0:
                    aidx[nnz] = k
                    nnz += 1
        for b in range(B):
            fb = b if Bf > 1 else 0
            pb = b if Bp > 1 else 0
            for k in range(K1):
                acc = 0.0 + 0.0j
                for q in range(Q):
                    acc += fcoef_s[fb, q] * fpat[pb, q, k]
                out[b, k] = acc
            if nu != 0.0:
                _conv_half(u[b], u[b], kd, work)
                for k in range(kd + 1):
                    out[b, k] -= 0.5j * nu * k * work[k]
            if Qa > 0:
                _conv_sparse(aw, aidx, nnz, u[b], kd, work)
                for k in range(kd + 1):
                    out[b, k] -= 1j * k * work[k]

    @njit(cache=True)
    def _integrate_numba(c0, table, inv, steps, fcoef, fpat, acoef, apat, nu, kd, save_all, etd):
        n = steps.shape[0]
        B, K1 = c0.shape
        u = c0.copy()
        if save_all:
            states = np.empty((n + 1, B, K1), dtype=np.complex128)
        else:
            states = np.empty((1, B, K1), dtype=np.complex128)
        states[0] = u
        ka = np.empty((B, K1), dtype=np.complex128)
        kb = np.empty((B, K1), dtype=np.complex128)
        kc = np.empty((B, K1), dtype=np.complex128)
        kdd = np.empty((B, K1), dtype=np.complex128)
        sa = np.empty((B, K1), dtype=np.complex128)
        tmp = np.empty((B, K1), dtype=np.complex128)
        work = np.empty(kd + 1, dtype=np.complex128)
        aw = np.zeros(kd + 1, dtype=np.complex128)
        aidx = np.zeros(kd + 1, dtype=np.int64)
        for s in range(n):
            h = steps[s]
            co = table[inv[s]]
            if etd:
                E = co[0]
                E2 = co[1]
                Q = co[2]
                _nb_rhs(u, fcoef[s, 0], fpat, acoef[s, 0], apat, nu, kd, ka, work, aw, aidx)
                for b in range(B):
                    for k in range(K1):
                        sa[b, k] = E2[k] * u[b, k] + Q[k] * ka[b, k]
                _nb_rhs(sa, fcoef[s, 1], fpat, acoef[s, 1], apat, nu, kd, kb, work, aw, aidx)
                for b in range(B):
                    for k in range(K1):
                        tmp[b, k] = E2[k] * u[b, k] + Q[k] * kb[b, k]
                _nb_rhs(tmp, fcoef[s, 1], fpat, acoef[s, 1], apat, nu, kd, kc, work, aw, aidx)
                for b in range(B):
                    for k in range(K1):
                        tmp[b, k] = E2[k] * sa[b, k] + Q[k] * (2.0 * kc[b, k] - ka[b, k])
                _nb_rhs(tmp, fcoef[s, 2], fpat, acoef[s, 2], apat, nu, kd, kdd, work, aw, aidx)
            else:
                E2 = co[0]
                _nb_rhs(u, fcoef[s, 0], fpat, acoef[s, 0], apat, nu, kd, ka, work, aw, aidx)
                for b in range(B):
                    for k in range(K1):
                        tmp[b, k] = E2[k] * (u[b, k] + 0.5 * h * ka[b, k])
                _nb_rhs(tmp, fcoef[s, 1], fpat, acoef[s, 1], apat, nu, kd, kb, work, aw, aidx)
                for b in range(B):
                    for k in range(K1):
                        tmp[b, k] = E2[k] * u[b, k] + 0.5 * h * kb[b, k]
                _nb_rhs(tmp, fcoef[s, 1], fpat, acoef[s, 1], apat, nu, kd, kc, work, aw, aidx)
                for b in range(B):
                    for k in range(K1):
                        tmp[b, k] = E2[k] * E2[k] * u[b, k] + h * E2[k] * kc[b, k]
                _nb_rhs(tmp, fcoef[s, 2], fpat, acoef[s, 2], apat, nu, kd, kdd, work, aw, aidx)
            bad = False
            for b in range(B):
                for k in range(K1):
                    if etd:
                        v = (co[0, k] * u[b, k] + co[3, k] * ka[b, k]
                             + 2.0 * co[4, k] * (kb[b, k] + kc[b, k]) + co[5, k] * kdd[b, k])
                    else:
                        e2 = co[0, k]
                        e = e2 * e2
                        v = e * u[b, k] + (h / 6.0) * (e * ka[b, k] + 2.0 * e2 * (kb[b, k] + kc[b, k]) + kdd[b, k])
                    if not (np.isfinite(v.real) and np.isfinite(v.imag)):
                        bad = True
                    u[b, k] = v
            if bad:
                return states, s
            if save_all:
                states[s + 1] = u
        if not save_all:
            states[0] = u
        return states, -1


def integrate(
    c0: np.ndarray,
    omega: np.ndarray,
    steps: np.ndarray,
    fcoef: np.ndarray,
    fpat: np.ndarray,
    acoef: np.ndarray,
    apat: np.ndarray,
    nu: float,
    kd: int,
    n_points: int,
    save_all: bool = True,
    backend: str | None = None,
    scheme: str = "etdrk4",
):
    """Advance a batch of half spectra through ``steps``.

    Shapes: c0 (B, K+1); omega (K+1,) integer frequencies; steps (n,);
    fcoef (n, 3, Bf, Q) forcing time coefficients at the RK4 stage times
    (t, t+h/2, t+h); fpat (Bp, Q, K+1) forcing patterns, Bf and Bp either 1
    or B; acoef (n, 3, Qa) and apat (Qa, K+1) for the advecting field.

    ``scheme`` is "etdrk4" (default) or "ifrk4".

    Returns (states, bad_step): states (n+1, B, K+1) or (1, B, K+1) final
    only, and the index of the first step producing non-finite values (-1 if
    none).
    """
    backend = backend or default_backend()
    c0 = np.ascontiguousarray(c0, dtype=np.complex128)
    steps = np.ascontiguousarray(steps, dtype=np.float64)
    table, inv = step_table(omega, steps, scheme)
    etd = scheme == "etdrk4"
    fcoef = np.ascontiguousarray(fcoef, dtype=np.float64)
    fpat = np.ascontiguousarray(fpat, dtype=np.complex128)
    acoef = np.ascontiguousarray(acoef, dtype=np.float64)
    apat = np.ascontiguousarray(apat, dtype=np.complex128)
    if apat.shape[0] == 0:
        apat = np.zeros((0, c0.shape[1]), dtype=np.complex128)
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        return _integrate_numba(c0, table, inv, steps, fcoef, fpat, acoef, apat, float(nu), int(kd), bool(save_all), etd)
    if backend != "numpy":
        raise ValueError(f"unknown backend {backend!r}")
    # overflow is reported through the non-finite state check, not as a float warning
    with np.errstate(over="ignore", invalid="ignore"):
        return _integrate_numpy(c0, table, inv, steps, fcoef, fpat, acoef, apat, float(nu), int(kd), n_points, save_all, etd)
