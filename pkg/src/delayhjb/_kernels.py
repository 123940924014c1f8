"""Compiled inner loops for the delay-equation stepper.

Both the compiled and the pure-Python loop implement the same Heun step on
the fine path buffer.  Index ``m`` of ``path`` is time ``-T + m * dt`` and
the delay integral at step ``n`` is ``sum_j w[j] * path[n + j * k]``.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None


def _heun_affine_py(path, w, k, r, a1, a2, K, b, cvals, dt, q0):
    N1 = len(w)
    base = k * (N1 - 1)
    for n in range(len(cvals)):
        if n == 0:
            q = q0
        else:
            q = 0.0
            for j in range(N1):
                q += w[j] * path[n + j * k]
        x = path[base + n]
        c = cvals[n]
        g = r * x + a1 * min(max(x, 0.0), K) + a2 * min(q, K) + b
        xp = x + dt * (g - c)
        path[base + n + 1] = xp
        qp = 0.0
        for j in range(N1):
            qp += w[j] * path[n + 1 + j * k]
        gp = r * xp + a1 * min(max(xp, 0.0), K) + a2 * min(qp, K) + b
        path[base + n + 1] = x + 0.5 * dt * (g + gp) - dt * c
    return path


if njit is not None:
    _heun_affine = njit(cache=True, fastmath=False)(_heun_affine_py)
else:  # pragma: no cover
    _heun_affine = _heun_affine_py


def heun_generic(path, w, k, r, f, cvals, dt, q0):
    """Heun loop for an arbitrary ``f(x, y)`` callable (slow path)."""
    N1 = len(w)
    base = k * (N1 - 1)
    for n in range(len(cvals)):
        q = q0 if n == 0 else float(w @ path[n:n + k * (N1 - 1) + 1:k])
        x = path[base + n]
        c = cvals[n]
        g = r * x + float(f(x, q))
        xp = x + dt * (g - c)
        path[base + n + 1] = xp
        qp = float(w @ path[n + 1:n + 1 + k * (N1 - 1) + 1:k])
        gp = r * xp + float(f(xp, qp))
        path[base + n + 1] = x + 0.5 * dt * (g + gp) - dt * c
    return path


def heun_affine(path, w, k, r, params, cvals, dt, q0, compiled=True):
    a1, a2, K, b = params
    fn = _heun_affine if compiled else _heun_affine_py
    return fn(path, np.ascontiguousarray(w, dtype=np.float64), int(k), float(r), float(a1),
              float(a2), float(K), float(b), np.ascontiguousarray(cvals, dtype=np.float64),
              float(dt), float(q0))


def _heun_affine_tangent_py(path, w, k, r, a1, a2, K, b, cvals, dt, q0, seg_steps, M):
    """Heun loop plus forward sensitivities ``D[m, i] = d path[m] / d c_i``.

    ``c_i`` is the control on steps ``i * seg_steps`` to ``(i + 1) * seg_steps - 1``.
    Kinks of ``min``/``max`` take the one-sided derivative of the active branch.
    """
    N1 = len(w)
    base = k * (N1 - 1)
    D = np.zeros((len(path), M))
    dq = np.zeros(M)
    dqp = np.zeros(M)
    dg = np.zeros(M)
    for n in range(len(cvals)):
        if n == 0:
            q = q0
            for i in range(M):
                dq[i] = 0.0
        else:
            q = 0.0
            for i in range(M):
                dq[i] = 0.0
            for j in range(N1):
                m = n + j * k
                q += w[j] * path[m]
                if m > base:
                    for i in range(M):
                        dq[i] += w[j] * D[m, i]
        x = path[base + n]
        c = cvals[n]
        seg = n // seg_steps
        phi1 = 1.0 if (x > 0.0 and x < K) else 0.0
        psi = 1.0 if q < K else 0.0
        g = r * x + a1 * min(max(x, 0.0), K) + a2 * min(q, K) + b
        for i in range(M):
            dg[i] = (r + a1 * phi1) * D[base + n, i] + a2 * psi * dq[i]
        xp = x + dt * (g - c)
        path[base + n + 1] = xp
        for i in range(M):
            D[base + n + 1, i] = D[base + n, i] + dt * dg[i]
        if seg < M:
            D[base + n + 1, seg] -= dt
        qp = 0.0
        for i in range(M):
            dqp[i] = 0.0
        for j in range(N1):
            m = n + 1 + j * k
            qp += w[j] * path[m]
            if m > base:
                for i in range(M):
                    dqp[i] += w[j] * D[m, i]
        phi1p = 1.0 if (xp > 0.0 and xp < K) else 0.0
        psip = 1.0 if qp < K else 0.0
        gp = r * xp + a1 * min(max(xp, 0.0), K) + a2 * min(qp, K) + b
        path[base + n + 1] = x + 0.5 * dt * (g + gp) - dt * c
        for i in range(M):
            dgp = (r + a1 * phi1p) * D[base + n + 1, i] + a2 * psip * dqp[i]
            D[base + n + 1, i] = D[base + n, i] + 0.5 * dt * (dg[i] + dgp)
        if seg < M:
            D[base + n + 1, seg] -= dt
    return path, D


if njit is not None:
    _heun_affine_tangent = njit(cache=True)(_heun_affine_tangent_py)
else:  # pragma: no cover
    _heun_affine_tangent = _heun_affine_tangent_py


def heun_affine_tangent(path, w, k, r, params, cvals, dt, q0, seg_steps, M, compiled=True):
    a1, a2, K, b = params
    fn = _heun_affine_tangent if compiled else _heun_affine_tangent_py
    return fn(path, np.ascontiguousarray(w, dtype=np.float64), int(k), float(r), float(a1),
              float(a2), float(K), float(b), np.ascontiguousarray(cvals, dtype=np.float64),
              float(dt), float(q0), int(seg_steps), int(M))
