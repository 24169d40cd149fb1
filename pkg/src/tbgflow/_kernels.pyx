# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RK4 stepping for the two multi-agent systems over catalog costs."""

from libc.math cimport sin, cos, atan, floor, fabs, isfinite, M_PI
from libc.stdlib cimport malloc, free

cdef double CLIP_HI = 0.8 * sin(2.5) - cos(2.5)
cdef double CLIP_LO = 0.4 * sin(5.0) - cos(5.0)


cdef inline double cubic_grad(double x) noexcept nogil:
    cdef int k
    cdef double lo
    if x < -1.0:
        return 0.011 * x
    if x >= 1.0:
        return 0.009 * x
    k = <int>floor((x + 1.0) / 0.2)
    if k > 9:
        k = 9
    lo = -1.0 + 0.2 * k
    if x < lo:
        k -= 1
    elif x >= lo + 0.2 and k < 9:
        k += 1
    lo = x - (-0.9 + 0.2 * k)
    return lo * lo * lo + (-0.01 + 0.002 * k)


cdef inline double grad_one(int code, double a, double b, double x) noexcept nogil:
    cdef double u
    if code == 0:
        return a * x + b
    if code == 1:
        return a * cubic_grad(x)
    if code == 2:
        if x >= 0.4:
            return a * CLIP_HI
        if x > 0.2:
            return a * (2.0 * x * sin(1.0 / x) - cos(1.0 / x))
        return a * CLIP_LO
    if code == 3:
        if fabs(x) <= 1e-9:
            return 0.0
        return a * (2.0 * x * sin(1.0 / x) - cos(1.0 / x))
    if code == 4:
        if x >= 0.1:
            return a * (100.0 * x + 90.0)
        if x > -0.1:
            return a * 1000.0 * x
        return a * (100.0 * x - 90.0)
    if code == 5:
        if fabs(x) <= 1e-9:
            return 0.0
        u = 1.0 / x
        return a * (sin(u) - u * cos(u))
    return 0.0


cdef inline double gain_at(int code, double* p, double t) noexcept nogil:
    cdef double s, g, gdot, val
    if code == 0:
        return p[0]
    if code == 1:
        return p[0] * (1.0 + 1.0 / ((M_PI / 2.0 + atan(t)) * (1.0 + t * t)))
    # quintic ramp prior generator: p = (v, t_p, varsigma, floor)
    s = t / p[1]
    if s < 0.0:
        s = 0.0
    if s > 1.0:
        s = 1.0
    g = s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
    if t <= 0.0 or t >= p[1]:
        gdot = 0.0
    else:
        gdot = 30.0 * s * s * (1.0 - s) * (1.0 - s) / p[1]
    val = p[0] * gdot / (1.0 + p[2] - g)
    if val < p[3]:
        return p[3]
    return val


cdef inline void matvec(double[:, ::1] m, double* v, double* out, int n) noexcept nogil:
    cdef int i, j
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc = acc + m[i, j] * v[j]
        out[i] = acc


cdef void rhs(int system, double* s, double* d, double[:, ::1] lap, double[::1] q,
              int[::1] codes, double[::1] ca, double[::1] cb,
              double g_fixed, double g_gain, double z_fixed, double z_gain,
              double gain, double* work, int n) noexcept nogil:
    cdef int i
    cdef double gcoef = g_fixed + g_gain * gain
    cdef double zcoef = z_fixed + z_gain * gain
    cdef double* lx = work
    cdef double* ly = work + n
    cdef double* lz = work + 2 * n
    cdef double* lu = work + 3 * n
    if system == 0:
        matvec(lap, s, lx, n)
        matvec(lap, s + n, ly, n)
        matvec(lap, s + 2 * n, lz, n)
        matvec(lap, s + 3 * n, lu, n)
        for i in range(n):
            d[i] = -gcoef * grad_one(codes[i], ca[i], cb[i], s[i]) + gain * (s[n + i] - s[i])
            d[n + i] = gain * (-ly[i] + q[i] - s[i]) + zcoef * lz[i]
            d[2 * n + i] = gain * (ly[i] - lz[i] - lu[i])
            d[3 * n + i] = gain * (ly[i] - lx[i])
    else:
        matvec(lap, s, lx, n)
        matvec(lap, s + n, ly, n)
        for i in range(n):
            d[i] = -gcoef * grad_one(codes[i], ca[i], cb[i], s[i]) - gain * (lx[i] + ly[i])
            d[n + i] = gain * lx[i]


def grad_batch(int[::1] codes, double[::1] ca, double[::1] cb, double[::1] x):
    """Catalog gradients evaluated elementwise (used to cross-check the Python catalog)."""
    import numpy as np
    out = np.empty(x.shape[0])
    cdef double[::1] o = out
    cdef int i
    for i in range(x.shape[0]):
        o[i] = grad_one(codes[i], ca[i], cb[i], x[i])
    return out


def rk4_mas(int system, double[::1] state, double[:, ::1] lap, double[::1] q,
            int[::1] codes, double[::1] ca, double[::1] cb,
            double g_fixed, double g_gain, double z_fixed, double z_gain,
            int gain_code, double[::1] gain_params,
            double t0, double dt, long nsteps, long sample_every,
            double[:, ::1] samples):
    """Advance `state` in place by `nsteps` classical RK4 steps from time t0.

    Every `sample_every`-th state is copied into the next row of `samples`.
    Returns (rows written, index of the first non-finite step or -1).
    """
    cdef int n = lap.shape[0]
    cdef int dim = state.shape[0]
    cdef int i
    cdef long step, row = 0
    cdef long bad = -1
    cdef double t, half = 0.5 * dt, sixth = dt / 6.0
    cdef double g0, g1, g2
    cdef double p[4]
    cdef double* buf = <double*>malloc(sizeof(double) * (6 * dim + 4 * n))
    if buf == NULL:
        raise MemoryError()
    cdef double* k1 = buf
    cdef double* k2 = buf + dim
    cdef double* k3 = buf + 2 * dim
    cdef double* k4 = buf + 3 * dim
    cdef double* tmp = buf + 4 * dim
    cdef double* s = buf + 5 * dim
    cdef double* work = buf + 6 * dim
    for i in range(4):
        p[i] = gain_params[i] if i < gain_params.shape[0] else 0.0
    for i in range(dim):
        s[i] = state[i]
    with nogil:
        for step in range(nsteps):
            t = t0 + step * dt
            g0 = gain_at(gain_code, p, t)
            g1 = gain_at(gain_code, p, t + half)
            g2 = gain_at(gain_code, p, t + dt)
            rhs(system, s, k1, lap, q, codes, ca, cb, g_fixed, g_gain, z_fixed, z_gain, g0, work, n)
            for i in range(dim):
                tmp[i] = s[i] + half * k1[i]
            rhs(system, tmp, k2, lap, q, codes, ca, cb, g_fixed, g_gain, z_fixed, z_gain, g1, work, n)
            for i in range(dim):
                tmp[i] = s[i] + half * k2[i]
            rhs(system, tmp, k3, lap, q, codes, ca, cb, g_fixed, g_gain, z_fixed, z_gain, g1, work, n)
            for i in range(dim):
                tmp[i] = s[i] + dt * k3[i]
            rhs(system, tmp, k4, lap, q, codes, ca, cb, g_fixed, g_gain, z_fixed, z_gain, g2, work, n)
            for i in range(dim):
                s[i] = s[i] + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            for i in range(dim):
                if not isfinite(s[i]):
                    bad = step
                    break
            if bad >= 0:
                break
            if (step + 1) % sample_every == 0:
                for i in range(dim):
                    samples[row, i] = s[i]
                row += 1
    for i in range(dim):
        state[i] = s[i]
    free(buf)
    return row, bad
