"""Compiled inner loops. Diagonal layout: ``d[k + b, i] == M[i, i + k]``."""
import math

import numpy as np
from numba import njit

FLAG_OK = 0
FLAG_LEAKAGE = 1
FLAG_NONFINITE = 2
FLAG_RECENTER = 3


@njit(cache=True)
def banded_apply(d, b, v, out):
    n = v.shape[0]
    for i in range(n):
        acc = 0j
        lo = -b if i >= b else -i
        hi = b if i + b < n else n - 1 - i
        for k in range(lo, hi + 1):
            acc += d[k + b, i] * v[i + k]
        out[i] = acc


@njit(cache=True)
def banded_expect(d, b, v):
    n = v.shape[0]
    acc = 0j
    for i in range(n):
        row = 0j
        lo = -b if i >= b else -i
        hi = b if i + b < n else n - 1 - i
        for k in range(lo, hi + 1):
            row += d[k + b, i] * v[i + k]
        acc += v[i].conjugate() * row
    return acc


@njit(cache=True)
def lower_expect(v):
    """<v|a|v> without normalization."""
    acc = 0j
    for n in range(1, v.shape[0]):
        acc += v[n - 1].conjugate() * math.sqrt(n) * v[n]
    return acc


@njit(cache=True)
def _ladder_generator(v, br, bi, out):
    # out = beta a^dag v - conj(beta) a v
    n = v.shape[0]
    beta = complex(br, bi)
    cb = complex(br, -bi)
    for i in range(n):
        acc = 0j
        if i > 0:
            acc += beta * math.sqrt(i) * v[i - 1]
        if i + 1 < n:
            acc -= cb * math.sqrt(i + 1) * v[i + 1]
        out[i] = acc


@njit(cache=True)
def displace_inplace(v, br, bi, steps, tol):
    n = v.shape[0]
    term = np.empty(n, dtype=np.complex128)
    nxt = np.empty(n, dtype=np.complex128)
    for _ in range(steps):
        term[:] = v
        ref = 0.0
        for i in range(n):
            ref += abs(v[i]) ** 2
        ref = math.sqrt(ref)
        k = 1
        while True:
            _ladder_generator(term, br, bi, nxt)
            tn = 0.0
            for i in range(n):
                term[i] = nxt[i] / k
                v[i] += term[i]
                tn += abs(term[i]) ** 2
            if math.sqrt(tn) <= tol * ref or k > 200:
                break
            k += 1


@njit(cache=True)
def banded_lu(d, b):
    """In-place LU (no pivoting) of a banded matrix; unit-lower factor stored below."""
    n = d.shape[1]
    for k in range(n):
        piv = d[b, k]
        top = min(k + b, n - 1)
        for i in range(k + 1, top + 1):
            lik = d[k - i + b, i] / piv
            d[k - i + b, i] = lik
            for j in range(k + 1, top + 1):
                d[j - i + b, i] -= lik * d[j - k + b, k]


@njit(cache=True)
def banded_solve(lu, b, rhs, out):
    n = rhs.shape[0]
    for i in range(n):
        acc = rhs[i]
        for j in range(max(0, i - b), i):
            acc -= lu[j - i + b, i] * out[j]
        out[i] = acc
    for i in range(n - 1, -1, -1):
        acc = out[i]
        for j in range(i + 1, min(i + b, n - 1) + 1):
            acc -= lu[j - i + b, i] * out[j]
        out[i] = acc / lu[b, i]


@njit(cache=True)
def qsd_chunk(
    psi,
    h, bh,
    q, k_op, kdk,
    implicit,
    t0, dt, nsteps,
    dxi,
    drive_amp, omega,
    recenter_thr,
    leak_bound,
    stats,
):
    """Advance ``psi`` in place by up to ``nsteps`` QSD steps.

    ``h`` is the static Hamiltonian (half-bandwidth ``bh``), driven by
    ``drive_amp * cos(omega t) * q``. When ``implicit`` the whole Hamiltonian
    is taken with the trapezoidal rule (drive at the step midpoint); the
    dissipative drift and the noise are explicit Euler-Maruyama.
    ``stats`` receives [max deficit, max leakage, steps done, flag].
    """
    n = psi.shape[0]
    hpsi = np.empty(n, dtype=np.complex128)
    qpsi = np.empty(n, dtype=np.complex128)
    kpsi = np.empty(n, dtype=np.complex128)
    kkpsi = np.empty(n, dtype=np.complex128)
    rhs = np.empty(n, dtype=np.complex128)
    lhs = np.empty_like(h)
    max_def = 0.0
    max_leak = 0.0
    flag = FLAG_OK
    done = 0
    hfac = 0.5 * dt if implicit else dt
    for j in range(nsteps):
        t = t0 + j * dt
        if implicit:
            c = drive_amp * math.cos(omega * (t + 0.5 * dt))
        else:
            c = drive_amp * math.cos(omega * t)
        banded_apply(h, bh, psi, hpsi)
        banded_apply(q, 1, psi, qpsi)
        banded_apply(k_op, 1, psi, kpsi)
        banded_apply(kdk, 2, psi, kkpsi)
        ell = 0j
        for i in range(n):
            ell += psi[i].conjugate() * kpsi[i]
        ellc = ell.conjugate()
        ell2 = (ell * ellc).real
        dx = dxi[j]
        for i in range(n):
            drift = ellc * kpsi[i] - 0.5 * kkpsi[i] - 0.5 * ell2 * psi[i]
            rhs[i] = (
                psi[i]
                - 1j * hfac * (hpsi[i] + c * qpsi[i])
                + dt * drift
                + dx * (kpsi[i] - ell * psi[i])
            )
        if implicit:
            for r in range(2 * bh + 1):
                for i in range(n):
                    lhs[r, i] = 0.5j * dt * h[r, i]
            for r in range(3):
                for i in range(n):
                    lhs[bh - 1 + r, i] += 0.5j * dt * c * q[r, i]
            for i in range(n):
                lhs[bh, i] += 1.0
            banded_lu(lhs, bh)
            banded_solve(lhs, bh, rhs, psi)
        else:
            psi[:] = rhs
        nrm = 0.0
        for i in range(n):
            nrm += psi[i].real ** 2 + psi[i].imag ** 2
        done = j + 1
        if not math.isfinite(nrm) or nrm == 0.0:
            flag = FLAG_NONFINITE
            break
        deficit = abs(1.0 - nrm)
        if deficit > max_def:
            max_def = deficit
        s = 1.0 / math.sqrt(nrm)
        for i in range(n):
            psi[i] *= s
        leak = abs(psi[n - 1]) ** 2 + abs(psi[n - 2]) ** 2
        if leak > max_leak:
            max_leak = leak
        if leak > leak_bound:
            flag = FLAG_LEAKAGE
            break
        if recenter_thr > 0.0:
            av = lower_expect(psi)
            r = math.sqrt(2.0) * abs(av)
            if r > recenter_thr:
                flag = FLAG_RECENTER
                break
    stats[0] = max_def
    stats[1] = max_leak
    stats[2] = done
    stats[3] = flag
