"""Pure-Python implementation of the compiled kernel API (same signatures and results)."""

from __future__ import annotations

import math

import numpy as np

from . import costs as _costs

_SCALAR = {
    1: _costs.piecewise_cubic_grad,
    2: _costs.clipped_oscillatory_grad,
    3: _costs.xsq_sin_inv_grad,
    4: _costs.steep_piecewise_linear_grad,
    5: _costs.x_sin_inv_grad,
}


def _grad_one(code: int, a: float, b: float, x: float) -> float:
    if code == 0:
        return a * x + b
    return a * _SCALAR[code](x)


def grad_batch(codes, ca, cb, x) -> np.ndarray:
    return np.array([_grad_one(int(c), a, b, v) for c, a, b, v in zip(codes, ca, cb, x)])


def _gain_at(code: int, p, t: float) -> float:
    if code == 0:
        return p[0]
    if code == 1:
        return p[0] * (1.0 + 1.0 / ((math.pi / 2.0 + math.atan(t)) * (1.0 + t * t)))
    s = min(max(t / p[1], 0.0), 1.0)
    g = s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
    gdot = 0.0 if (t <= 0.0 or t >= p[1]) else 30.0 * s * s * (1.0 - s) * (1.0 - s) / p[1]
    return max(p[0] * gdot / (1.0 + p[2] - g), p[3])


def rk4_mas(system, state, lap, q, codes, ca, cb, g_fixed, g_gain, z_fixed, z_gain,
            gain_code, gain_params, t0, dt, nsteps, sample_every, samples):
    n = lap.shape[0]
    p = list(gain_params) + [0.0] * (4 - len(gain_params))
    codes_l = [int(c) for c in codes]

    def grads(x):
        return np.array([_grad_one(c, a, b, v) for c, a, b, v in zip(codes_l, ca, cb, x)])

    def rhs(s, gain):
        d = np.empty_like(s)
        gcoef = g_fixed + g_gain * gain
        x = s[:n]
        lx = lap @ x
        if system == 0:
            y, z, u = s[n:2 * n], s[2 * n:3 * n], s[3 * n:]
            ly, lz, lu = lap @ y, lap @ z, lap @ u
            d[:n] = -gcoef * grads(x) + gain * (y - x)
            d[n:2 * n] = gain * (-ly + q - x) + (z_fixed + z_gain * gain) * lz
            d[2 * n:3 * n] = gain * (ly - lz - lu)
            d[3 * n:] = gain * (ly - lx)
        else:
            lw = lap @ s[n:]
            d[:n] = -gcoef * grads(x) - gain * (lx + lw)
            d[n:] = gain * lx
        return d

    s = np.array(state, dtype=np.float64)
    half, sixth = 0.5 * dt, dt / 6.0
    row, bad = 0, -1
    for step in range(nsteps):
        t = t0 + step * dt
        g0, g1, g2 = _gain_at(gain_code, p, t), _gain_at(gain_code, p, t + half), _gain_at(gain_code, p, t + dt)
        k1 = rhs(s, g0)
        k2 = rhs(s + half * k1, g1)
        k3 = rhs(s + half * k2, g1)
        k4 = rhs(s + dt * k3, g2)
        s = s + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(s)):
            bad = step
            break
        if (step + 1) % sample_every == 0:
            samples[row] = s
            row += 1
    state[:] = s
    return row, bad
