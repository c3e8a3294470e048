# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled versions of the kernels in ``iqshrink.tensor.kernels``.

Signatures and evaluation order match the numpy fallback; caches are
backend-private.
"""
import numpy as np

from libc.math cimport exp, expf, tanh, tanhf

ctypedef fused real:
    float
    double


cdef inline real _sigmoid(real z) noexcept nogil:
    if real is float:
        return 1 / (1 + expf(-z))
    else:
        return 1 / (1 + exp(-z))


cdef inline real _tanh(real z) noexcept nogil:
    if real is float:
        return tanhf(z)
    else:
        return tanh(z)


def _garrote_fwd(real[:, :, ::1] u, real[:, ::1] t, real[:, :, ::1] y):
    cdef Py_ssize_t B = u.shape[0], S = u.shape[1], C = u.shape[2]
    cdef Py_ssize_t b, s, c
    cdef real x, tc, den, eps = 1e-6
    with nogil:
        for b in range(B):
            for s in range(S):
                for c in range(C):
                    x = u[b, s, c]
                    tc = t[b, c]
                    if (x if x >= 0 else -x) >= tc:
                        den = x + eps
                        y[b, s, c] = x - (tc * tc) / den if den != 0 else x
                    else:
                        y[b, s, c] = 0


def _garrote_bwd(real[:, :, ::1] dy, real[:, :, ::1] u, real[:, ::1] t, real[:, :, ::1] du, real[:, ::1] dt):
    cdef Py_ssize_t B = u.shape[0], S = u.shape[1], C = u.shape[2]
    cdef Py_ssize_t b, s, c
    cdef real x, tc, den, q, g, eps = 1e-6
    with nogil:
        for b in range(B):
            for c in range(C):
                dt[b, c] = 0
            for s in range(S):
                for c in range(C):
                    x = u[b, s, c]
                    tc = t[b, c]
                    if (x if x >= 0 else -x) >= tc:
                        g = dy[b, s, c]
                        den = x + eps
                        q = tc / den if den != 0 else 0
                        du[b, s, c] = g + g * (q * q)
                        dt[b, c] += -2 * g * q
                    else:
                        du[b, s, c] = 0


def garrote_channel_forward(u, t):
    B, H, W, C = u.shape
    u3 = np.ascontiguousarray(u).reshape(B, H * W, C)
    t2 = np.ascontiguousarray(t, dtype=u.dtype)
    y = np.empty_like(u3)
    _garrote_fwd(u3, t2, y)
    return y.reshape(u.shape), (u3, t2, u.shape)


def garrote_channel_backward(dy, cache):
    u3, t2, shape = cache
    dy3 = np.ascontiguousarray(dy, dtype=u3.dtype).reshape(u3.shape)
    du = np.empty_like(u3)
    dt = np.empty_like(t2)
    _garrote_bwd(dy3, u3, t2, du, dt)
    return du.reshape(shape), dt


def _lstm_fwd(real[:, :, ::1] zx, real[:, ::1] Wh, real[:, :, ::1] hs, real[:, :, ::1] cs,
              real[:, :, ::1] gates, real[:, :, ::1] tcs):
    cdef Py_ssize_t B = zx.shape[0], T = zx.shape[1], U = Wh.shape[0], G = Wh.shape[1]
    cdef Py_ssize_t b, t, k, j
    cdef real hk, cp, c, tc
    cdef real* z
    cdef real* ga
    cdef real* w
    with nogil:
        for b in range(B):
            for t in range(T):
                ga = &gates[b, t, 0]
                z = &zx[b, t, 0]
                for j in range(G):
                    ga[j] = z[j]
                if t > 0:
                    for k in range(U):
                        hk = hs[b, t - 1, k]
                        w = &Wh[k, 0]
                        for j in range(G):
                            ga[j] += hk * w[j]
                for j in range(U):
                    ga[j] = _sigmoid(ga[j])
                    ga[U + j] = _sigmoid(ga[U + j])
                    ga[2 * U + j] = _tanh(ga[2 * U + j])
                    ga[3 * U + j] = _sigmoid(ga[3 * U + j])
                for j in range(U):
                    cp = cs[b, t - 1, j] if t > 0 else 0
                    c = ga[U + j] * cp + ga[j] * ga[2 * U + j]
                    tc = _tanh(c)
                    cs[b, t, j] = c
                    tcs[b, t, j] = tc
                    hs[b, t, j] = ga[3 * U + j] * tc


def _lstm_bwd(real[:, :, ::1] dH, real[:, :, ::1] cs, real[:, :, ::1] gates, real[:, :, ::1] tcs,
              real[:, ::1] Wh, real[:, :, ::1] dz):
    cdef Py_ssize_t B = dH.shape[0], T = dH.shape[1], U = Wh.shape[0], G = Wh.shape[1]
    cdef Py_ssize_t b, t, k, j
    cdef real dh, dc, cp, i, f, g, o, tc, acc
    cdef real* ga
    cdef real* d
    cdef real* w
    dh_next_arr = np.zeros(U, dtype=np.asarray(dH).dtype)
    dc_next_arr = np.zeros(U, dtype=np.asarray(dH).dtype)
    cdef real[::1] dh_next = dh_next_arr
    cdef real[::1] dc_next = dc_next_arr
    with nogil:
        for b in range(B):
            for j in range(U):
                dh_next[j] = 0
                dc_next[j] = 0
            for t in range(T - 1, -1, -1):
                ga = &gates[b, t, 0]
                d = &dz[b, t, 0]
                for j in range(U):
                    i = ga[j]
                    f = ga[U + j]
                    g = ga[2 * U + j]
                    o = ga[3 * U + j]
                    tc = tcs[b, t, j]
                    cp = cs[b, t - 1, j] if t > 0 else 0
                    dh = dH[b, t, j] + dh_next[j]
                    dc = dc_next[j] + dh * o * (1 - tc * tc)
                    d[j] = dc * g * i * (1 - i)
                    d[U + j] = dc * cp * f * (1 - f)
                    d[2 * U + j] = dc * i * (1 - g * g)
                    d[3 * U + j] = dh * tc * o * (1 - o)
                    dc_next[j] = dc * f
                for k in range(U):
                    w = &Wh[k, 0]
                    acc = 0
                    for j in range(G):
                        acc = acc + d[j] * w[j]
                    dh_next[k] = acc


def lstm_sequence_forward(zx, Wh):
    zx = np.ascontiguousarray(zx)
    B, T, G = zx.shape
    U = Wh.shape[0]
    hs = np.empty((B, T, U), dtype=zx.dtype)
    cs = np.empty_like(hs)
    tcs = np.empty_like(hs)
    gates = np.empty((B, T, G), dtype=zx.dtype)
    _lstm_fwd(zx, np.ascontiguousarray(Wh, dtype=zx.dtype), hs, cs, gates, tcs)
    return hs, cs, gates, tcs


def lstm_sequence_backward(dH, saved, Wh):
    hs, cs, gates, tcs = saved
    dH = np.ascontiguousarray(dH, dtype=hs.dtype)
    dz = np.empty_like(gates)
    _lstm_bwd(dH, cs, gates, tcs, np.ascontiguousarray(Wh, dtype=hs.dtype), dz)
    return dz
