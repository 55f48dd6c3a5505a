"""Compiled inner loops: point-wise MLP evaluation, RK4 and its discrete adjoint.

The network is passed as a flat parameter vector: for each layer the
``(n_in, n_out)`` weight matrix (row-major) followed by the bias.
Hidden layers use ReLU (derivative 0 at the kink), the output is linear.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def mlp_value(x, flat, sizes, mean, scale):
    n_layers = sizes.size - 1
    width = 0
    for l in range(sizes.size):
        if sizes[l] > width:
            width = sizes[l]
    h = np.empty(width)
    z = np.empty(width)
    for i in range(sizes[0]):
        h[i] = (x[i] - mean[i]) / scale[i]
    off = 0
    for l in range(n_layers):
        nin = sizes[l]
        nout = sizes[l + 1]
        boff = off + nin * nout
        for j in range(nout):
            z[j] = flat[boff + j]
        for i in range(nin):
            hi = h[i]
            if hi != 0.0:
                row = off + i * nout
                for j in range(nout):
                    z[j] += hi * flat[row + j]
        off = boff + nout
        if l < n_layers - 1:
            for j in range(nout):
                h[j] = z[j] if z[j] > 0.0 else 0.0
        else:
            for j in range(nout):
                h[j] = z[j]
    return h[0]


@njit(cache=True)
def mlp_value_grad(x, flat, sizes, mean, scale, grad):
    """Network output and its gradient with respect to the raw inputs (written to ``grad``)."""
    n_layers = sizes.size - 1
    total = 0
    width = 0
    for l in range(sizes.size):
        total += sizes[l]
        if sizes[l] > width:
            width = sizes[l]
    acts = np.empty(total)
    for i in range(sizes[0]):
        acts[i] = (x[i] - mean[i]) / scale[i]
    off = 0
    aoff = 0
    for l in range(n_layers):
        nin = sizes[l]
        nout = sizes[l + 1]
        boff = off + nin * nout
        ooff = aoff + nin
        for j in range(nout):
            acts[ooff + j] = flat[boff + j]
        for i in range(nin):
            hi = acts[aoff + i]
            if hi != 0.0:
                row = off + i * nout
                for j in range(nout):
                    acts[ooff + j] += hi * flat[row + j]
        if l < n_layers - 1:
            for j in range(nout):
                if acts[ooff + j] < 0.0:
                    acts[ooff + j] = 0.0
        off = boff + nout
        aoff = ooff
    value = acts[aoff]

    g_out = np.zeros(width)
    g_in = np.zeros(width)
    g_out[0] = 1.0
    for l in range(n_layers - 1, -1, -1):
        nin = sizes[l]
        nout = sizes[l + 1]
        # locate this layer's weights and its input activations
        woff = 0
        ioff = 0
        for q in range(l):
            woff += sizes[q] * sizes[q + 1] + sizes[q + 1]
            ioff += sizes[q]
        for i in range(nin):
            acc = 0.0
            if l == 0 or acts[ioff + i] > 0.0:
                row = woff + i * nout
                for j in range(nout):
                    acc += flat[row + j] * g_out[j]
            g_in[i] = acc
        for i in range(nin):
            g_out[i] = g_in[i]
    for i in range(sizes[0]):
        grad[i] = g_out[i] / scale[i]
    return value


@njit(cache=True)
def incidence_partials(s, i, n, beta, kappa, flat, sizes, mean, scale, out):
    """``F = f * s * i`` and ``out = (dF/dS, dF/dI, dF/dbeta, dF/dkappa)``."""
    x = np.empty(5)
    x[0] = s
    x[1] = i
    x[2] = n
    x[3] = beta
    x[4] = kappa
    g = np.empty(5)
    f = mlp_value_grad(x, flat, sizes, mean, scale, g)
    si = s * i
    out[0] = g[0] * si + f * i
    out[1] = g[1] * si + f * s
    out[2] = g[3] * si
    out[3] = g[4] * si
    return f * si


@njit(cache=True)
def _incidence(s, i, n, beta, kappa, flat, sizes, mean, scale):
    x = np.empty(5)
    x[0] = s
    x[1] = i
    x[2] = n
    x[3] = beta
    x[4] = kappa
    return mlp_value(x, flat, sizes, mean, scale) * s * i


@njit(cache=True)
def rk4_path(s0, i0, times, beta_int, kappa_int, nsub, n, gamma, mu,
             flat, sizes, mean, scale, keep_sub):
    """Classic RK4 with ``nsub[j]`` equal steps on each ``[times[j], times[j+1]]``.

    Right-hand side: ``S' = -F + mu (1 - S)``, ``I' = F - (gamma + mu) I``.
    Returns ``(Y, sub_states, ok)`` where ``Y[j]`` is the state at ``times[j]``
    and ``sub_states`` holds the start of every sub-step when ``keep_sub``.
    """
    n_int = times.size - 1
    Y = np.empty((n_int + 1, 2))
    total = 0
    for j in range(n_int):
        total += nsub[j]
    sub = np.empty((total if keep_sub else 0, 2))
    s = s0
    i = i0
    Y[0, 0] = s
    Y[0, 1] = i
    idx = 0
    ok = True
    for j in range(n_int):
        h = (times[j + 1] - times[j]) / nsub[j]
        b = beta_int[j]
        k = kappa_int[j]
        for _ in range(nsub[j]):
            if keep_sub:
                sub[idx, 0] = s
                sub[idx, 1] = i
            idx += 1
            F1 = _incidence(s, i, n, b, k, flat, sizes, mean, scale)
            k1s = -F1 + mu * (1.0 - s)
            k1i = F1 - (gamma + mu) * i
            s2 = s + 0.5 * h * k1s
            i2 = i + 0.5 * h * k1i
            F2 = _incidence(s2, i2, n, b, k, flat, sizes, mean, scale)
            k2s = -F2 + mu * (1.0 - s2)
            k2i = F2 - (gamma + mu) * i2
            s3 = s + 0.5 * h * k2s
            i3 = i + 0.5 * h * k2i
            F3 = _incidence(s3, i3, n, b, k, flat, sizes, mean, scale)
            k3s = -F3 + mu * (1.0 - s3)
            k3i = F3 - (gamma + mu) * i3
            s4 = s + h * k3s
            i4 = i + h * k3i
            F4 = _incidence(s4, i4, n, b, k, flat, sizes, mean, scale)
            k4s = -F4 + mu * (1.0 - s4)
            k4i = F4 - (gamma + mu) * i4
            s = s + h / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
            i = i + h / 6.0 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i)
        if not (math.isfinite(s) and math.isfinite(i)):
            ok = False
        Y[j + 1, 0] = s
        Y[j + 1, 1] = i
    return Y, sub, ok


@njit(cache=True)
def _vjp_stage(s, i, n, b, k, gamma, flat, sizes, mean, scale, a_s, a_i, jac, res):
    """Stage k = g(y): returns (y_bar, c_bar) contributions of adjoint ``a``.

    ``res`` receives (ybar_s, ybar_i, cbar_beta, cbar_kappa) and the stage
    value (k_s, k_i) in slots 4, 5.
    """
    F = incidence_partials(s, i, n, b, k, flat, sizes, mean, scale, jac)
    Fs, Fi, Fb, Fk = jac[0], jac[1], jac[2], jac[3]
    # g = (-F, F - gamma I); dF-direction weight is (a_i - a_s)
    w = a_i - a_s
    res[0] = w * Fs
    res[1] = w * Fi - gamma * a_i
    res[2] = w * Fb
    res[3] = w * Fk
    res[4] = -F
    res[5] = F - gamma * i


@njit(cache=True)
def rk4_adjoint(times, beta_int, kappa_int, nsub, n, gamma, flat, sizes, mean, scale,
                sub_states, dJdY):
    """Reverse sweep through :func:`rk4_path` (``mu = 0``).

    ``dJdY[j]`` is the explicit derivative of the cost with respect to the
    state at ``times[j]``. Returns ``(P, C)``: ``P[j]`` is the derivative of
    the cost incurred after ``times[j]`` with respect to ``Y[j]`` (so
    ``P[-1] = 0``) and ``C[j]`` the derivative with respect to the
    interval's ``(beta, kappa)``.
    """
    n_int = times.size - 1
    P = np.zeros((n_int + 1, 2))
    C = np.zeros((n_int, 2))
    jac = np.empty(4)
    r = np.empty(6)
    lam_s = dJdY[n_int, 0]
    lam_i = dJdY[n_int, 1]
    idx = sub_states.shape[0]
    for j in range(n_int - 1, -1, -1):
        h = (times[j + 1] - times[j]) / nsub[j]
        b = beta_int[j]
        k = kappa_int[j]
        cb = 0.0
        ck = 0.0
        for _ in range(nsub[j]):
            idx -= 1
            s = sub_states[idx, 0]
            i = sub_states[idx, 1]
            # recompute stage inputs
            F1 = _incidence(s, i, n, b, k, flat, sizes, mean, scale)
            k1s = -F1
            k1i = F1 - gamma * i
            s2 = s + 0.5 * h * k1s
            i2 = i + 0.5 * h * k1i
            F2 = _incidence(s2, i2, n, b, k, flat, sizes, mean, scale)
            k2s = -F2
            k2i = F2 - gamma * i2
            s3 = s + 0.5 * h * k2s
            i3 = i + 0.5 * h * k2i
            F3 = _incidence(s3, i3, n, b, k, flat, sizes, mean, scale)
            k3s = -F3
            k3i = F3 - gamma * i3
            s4 = s + h * k3s
            i4 = i + h * k3i

            a1s = h / 6.0 * lam_s
            a1i = h / 6.0 * lam_i
            a2s = h / 3.0 * lam_s
            a2i = h / 3.0 * lam_i
            a3s = a2s
            a3i = a2i
            a4s = a1s
            a4i = a1i
            ys = lam_s
            yi = lam_i

            _vjp_stage(s4, i4, n, b, k, gamma, flat, sizes, mean, scale, a4s, a4i, jac, r)
            ys += r[0]
            yi += r[1]
            a3s += h * r[0]
            a3i += h * r[1]
            cb += r[2]
            ck += r[3]

            _vjp_stage(s3, i3, n, b, k, gamma, flat, sizes, mean, scale, a3s, a3i, jac, r)
            ys += r[0]
            yi += r[1]
            a2s += 0.5 * h * r[0]
            a2i += 0.5 * h * r[1]
            cb += r[2]
            ck += r[3]

            _vjp_stage(s2, i2, n, b, k, gamma, flat, sizes, mean, scale, a2s, a2i, jac, r)
            ys += r[0]
            yi += r[1]
            a1s += 0.5 * h * r[0]
            a1i += 0.5 * h * r[1]
            cb += r[2]
            ck += r[3]

            _vjp_stage(s, i, n, b, k, gamma, flat, sizes, mean, scale, a1s, a1i, jac, r)
            ys += r[0]
            yi += r[1]
            cb += r[2]
            ck += r[3]

            lam_s = ys
            lam_i = yi
        C[j, 0] = cb
        C[j, 1] = ck
        P[j, 0] = lam_s
        P[j, 1] = lam_i
        lam_s += dJdY[j, 0]
        lam_i += dJdY[j, 1]
    return P, C
