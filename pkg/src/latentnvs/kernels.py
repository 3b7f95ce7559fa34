"""Fused numeric kernels for the hot paths of the model.

Each kernel has a numba implementation (float32, fastmath, in-place where
possible) and a pure-numpy reference; `backend.backend_name()` picks the
implementation. float64 inputs always take the numpy path, which is the
reference used by the finite-difference gradient checks. The numba softmax
and tanh use a degree-6 polynomial exp2 scaled by a bitcast-constructed
power of two; relative error is ~1e-7, well under the cross-backend test
tolerance.
"""

from __future__ import annotations

import numpy as np

from .backend import use_numba

try:
    from numba import njit, types
    from numba.extending import intrinsic

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


_F32 = np.float32
_LOG2E = _F32(1.4426950408889634)
# Taylor coefficients of 2**f around 0, valid on [-0.5, 0.5]
_C1 = _F32(0.6931471805599453)
_C2 = _F32(0.2402265069591007)
_C3 = _F32(0.05550410866482158)
_C4 = _F32(0.009618129107628477)
_C5 = _F32(0.0013333558146428443)
_C6 = _F32(0.00015403530393381608)

if _HAVE_NUMBA:

    @intrinsic
    def _bits_to_f32(typingctx, x):
        """Reinterpret an int32 bit pattern as a float32."""
        if x != types.int32:
            return None
        sig = types.float32(types.int32)

        def codegen(context, builder, signature, args):
            return builder.bitcast(args[0], context.get_value_type(types.float32))

        return sig, codegen

    @njit(inline="always")
    def _exp_f32(x):
        # exp(x) = 2**k * 2**f with k integral, f in [-0.5, 0.5].
        # Clamp via min/max (not branches) so the loops around this stay
        # vectorizable.
        y = min(max(x * _LOG2E, _F32(-126.0)), _F32(126.0))
        k = np.floor(y + _F32(0.5))
        f = y - k
        p = _C6
        p = p * f + _C5
        p = p * f + _C4
        p = p * f + _C3
        p = p * f + _C2
        p = p * f + _C1
        p = p * f + _F32(1.0)
        return p * _bits_to_f32(np.int32((np.int32(k) + 127) << 23))

    @njit(fastmath=True)
    def _softmax_rows_f32(x):
        rows, n = x.shape
        for r in range(rows):
            # Eight running maxima instead of one: a single max chain is a
            # serial dependence the vectorizer cannot break (4x slower).
            m0 = x[r, 0]
            m1 = m0; m2 = m0; m3 = m0; m4 = m0; m5 = m0; m6 = m0; m7 = m0
            i = 0
            while i + 8 <= n:
                m0 = max(m0, x[r, i])
                m1 = max(m1, x[r, i + 1])
                m2 = max(m2, x[r, i + 2])
                m3 = max(m3, x[r, i + 3])
                m4 = max(m4, x[r, i + 4])
                m5 = max(m5, x[r, i + 5])
                m6 = max(m6, x[r, i + 6])
                m7 = max(m7, x[r, i + 7])
                i += 8
            while i < n:
                m0 = max(m0, x[r, i])
                i += 1
            m = max(max(max(m0, m1), max(m2, m3)),
                    max(max(m4, m5), max(m6, m7)))
            s = _F32(0.0)
            for i in range(n):
                v = _exp_f32(x[r, i] - m)
                x[r, i] = v
                s += v
            inv = np.divide(_F32(1.0), s)
            for i in range(n):
                x[r, i] *= inv
        return x

    @njit(fastmath=True)
    def _softmax_grad_rows_f32(p, dp):
        rows, n = p.shape
        for r in range(rows):
            s = _F32(0.0)
            for i in range(n):
                s += p[r, i] * dp[r, i]
            for i in range(n):
                dp[r, i] = p[r, i] * (dp[r, i] - s)
        return dp

    @njit(fastmath=True)
    def _ln_fwd_f32(x, gain, bias, out, xhat, rstd, eps):
        rows, n = x.shape
        inv_n = np.divide(_F32(1.0), _F32(n))
        for r in range(rows):
            s = _F32(0.0)
            for i in range(n):
                s += x[r, i]
            mu = s * inv_n
            v = _F32(0.0)
            for i in range(n):
                d = x[r, i] - mu
                v += d * d
            rs = np.divide(_F32(1.0), np.sqrt(v * inv_n + eps))
            rstd[r] = rs
            for i in range(n):
                xh = (x[r, i] - mu) * rs
                xhat[r, i] = xh
                out[r, i] = xh * gain[i] + bias[i]

    @njit(fastmath=True)
    def _ln_bwd_f32(g, xhat, rstd, gain, dx, dgain, dbias):
        rows, n = g.shape
        inv_n = np.divide(_F32(1.0), _F32(n))
        for r in range(rows):
            m1 = _F32(0.0)
            m2 = _F32(0.0)
            for i in range(n):
                gi = g[r, i]
                xh = xhat[r, i]
                dgain[i] += gi * xh
                dbias[i] += gi
                dxh = gi * gain[i]
                m1 += dxh
                m2 += dxh * xh
            m1 *= inv_n
            m2 *= inv_n
            rs = rstd[r]
            for i in range(n):
                dxh = g[r, i] * gain[i]
                dx[r, i] = (dxh - m1 - xhat[r, i] * m2) * rs

    @njit(inline="always")
    def _tanh_f32(u):
        # tanh(u) = 1 - 2 / (exp(2u) + 1).  np.divide, not the / operator:
        # Python-semantics division carries a zero-divisor branch that
        # defeats the loop vectorizer (6x slowdown).
        return _F32(1.0) - _F32(2.0) * np.divide(_F32(1.0), _exp_f32(_F32(2.0) * u) + _F32(1.0))

    @njit(fastmath=True)
    def _gelu_fwd_f32(x, y, t):
        c = _F32(0.7978845608028654)  # sqrt(2/pi)
        a = _F32(0.044715)
        for i in range(x.size):
            v = x[i]
            ti = _tanh_f32(c * (v + a * v * v * v))
            t[i] = ti
            y[i] = _F32(0.5) * v * (_F32(1.0) + ti)

    @njit(fastmath=True)
    def _gelu_bwd_f32(x, t, dy, dx):
        c = _F32(0.7978845608028654)
        a3 = _F32(3.0 * 0.044715)
        for i in range(x.size):
            v = x[i]
            ti = t[i]
            du = c * (_F32(1.0) + a3 * v * v)
            dx[i] = dy[i] * (
                _F32(0.5) * (_F32(1.0) + ti)
                + _F32(0.5) * v * (_F32(1.0) - ti * ti) * du
            )


if _HAVE_NUMBA:

    # Query rows per score panel. A [tile, T] panel and its companions stay
    # inside L2, so the softmax and gradient passes never touch DRAM.
    _ATTN_TILE = 128

    @njit(fastmath=True)
    def _attn_fwd_f32(q, k, v, out):
        """q [BH,Tq,D] (pre-scaled), k/v [BH,T,D] -> out [BH,Tq,D].

        Per head slice, per query tile: both matrix products go through
        BLAS and the [tile, T] probability panel dies cache-hot.  The
        full [Tq, T] probability matrix is never materialised.
        """
        bh_n, tq_n, _ = q.shape
        for bh in range(bh_n):
            kt = np.ascontiguousarray(k[bh].T)
            vb = v[bh]
            start = 0
            while start < tq_n:
                stop = min(start + _ATTN_TILE, tq_n)
                s = np.dot(q[bh, start:stop], kt)
                _softmax_rows_f32(s)
                out[bh, start:stop] = np.dot(s, vb)
                start = stop

    @njit(fastmath=True)
    def _attn_bwd_f32(q, k, v, g, dq, dk, dv):
        """Backward for _attn_fwd_f32; probabilities are recomputed per tile.

        q is the pre-scaled query, so dq is the gradient w.r.t. that scaled
        query.  The k/v gradients accumulate transposed -- dv^T += g^T P,
        dk^T += q^T dS -- so the only transpose copies are of skinny
        [tile, D] blocks, never of a [tile, T] panel.
        """
        bh_n, tq_n, d_n = q.shape
        t_n = k.shape[1]
        for bh in range(bh_n):
            kb = k[bh]
            vb = v[bh]
            kt = np.ascontiguousarray(kb.T)
            vt = np.ascontiguousarray(vb.T)
            dvt = np.zeros((d_n, t_n), np.float32)
            dkt = np.zeros((d_n, t_n), np.float32)
            start = 0
            while start < tq_n:
                stop = min(start + _ATTN_TILE, tq_n)
                qb = q[bh, start:stop]
                gb = g[bh, start:stop]
                p = np.dot(qb, kt)
                _softmax_rows_f32(p)
                dvt += np.dot(np.ascontiguousarray(gb.T), p)
                dp = np.dot(gb, vt)
                rows, n = p.shape
                for r in range(rows):
                    tot = _F32(0.0)
                    for i in range(n):
                        tot += p[r, i] * dp[r, i]
                    for i in range(n):
                        dp[r, i] = p[r, i] * (dp[r, i] - tot)
                dq[bh, start:stop] = np.dot(dp, kb)
                dkt += np.dot(np.ascontiguousarray(qb.T), dp)
                start = stop
            dv[bh] = dvt.T
            dk[bh] = dkt.T


_GELU_C = 0.7978845608028654
_GELU_A = 0.044715


def _numba_ok(*arrays) -> bool:
    return (
        _HAVE_NUMBA
        and use_numba()
        and all(a.dtype == np.float32 for a in arrays)
    )


def softmax_lastaxis_(x: np.ndarray) -> np.ndarray:
    """In-place softmax over the last axis of a C-contiguous array."""
    flat = x.reshape(-1, x.shape[-1])
    if _numba_ok(x):
        _softmax_rows_f32(flat)
        return x
    m = flat.max(axis=-1, keepdims=True)
    np.subtract(flat, m, out=flat)
    np.exp(flat, out=flat)
    s = flat.sum(axis=-1, keepdims=True)
    np.divide(flat, s, out=flat)
    return x


def softmax_grad_(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Given probabilities p and upstream grad dp, write dscores into dp."""
    pf = p.reshape(-1, p.shape[-1])
    df = dp.reshape(-1, dp.shape[-1])
    if _numba_ok(p, dp):
        _softmax_grad_rows_f32(pf, df)
        return dp
    s = (pf * df).sum(axis=-1, keepdims=True)
    np.multiply(pf, df - s, out=df)
    return dp


def gelu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """tanh-approximation GELU. Returns (y, tanh_term) with the tanh term
    kept for the backward pass."""
    if _numba_ok(x):
        y = np.empty_like(x)
        t = np.empty_like(x)
        _gelu_fwd_f32(x.ravel(), y.ravel(), t.ravel())
        return y, t
    u = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), t


def gelu_backward(x: np.ndarray, t: np.ndarray, dy: np.ndarray) -> np.ndarray:
    if _numba_ok(x, t, dy):
        dx = np.empty_like(x)
        _gelu_bwd_f32(x.ravel(), t.ravel(), dy.ravel(), dx.ravel())
        return dx
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def layer_norm_forward(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalise over the last axis, then scale and shift.

    Returns (out, xhat, rstd) with xhat/rstd kept for the backward pass;
    rstd has one entry per row of the flattened [-1, D] view.
    """
    flat = np.ascontiguousarray(x).reshape(-1, x.shape[-1])
    if _numba_ok(x, gain, bias):
        out = np.empty_like(flat)
        xhat = np.empty_like(flat)
        rstd = np.empty(flat.shape[0], np.float32)
        _ln_fwd_f32(flat, gain, bias, out, xhat, rstd, np.float32(eps))
        return out.reshape(x.shape), xhat, rstd
    mu = flat.mean(axis=-1, keepdims=True)
    xc = flat - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gain + bias
    return out.reshape(x.shape), xhat, rstd[:, 0]


def layer_norm_backward(
    g: np.ndarray, xhat: np.ndarray, rstd: np.ndarray, gain: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of layer_norm_forward w.r.t. (x, gain, bias)."""
    gf = np.ascontiguousarray(g).reshape(-1, g.shape[-1])
    if _numba_ok(g, xhat, rstd, gain):
        dx = np.empty_like(gf)
        dgain = np.zeros_like(gain)
        dbias = np.zeros_like(gain)
        _ln_bwd_f32(gf, xhat, rstd, gain, dx, dgain, dbias)
        return dx.reshape(g.shape), dgain, dbias
    dbias = gf.sum(axis=0)
    dgain = (gf * xhat).sum(axis=0)
    dxh = gf * gain
    m1 = dxh.mean(axis=-1, keepdims=True)
    m2 = (dxh * xhat).mean(axis=-1, keepdims=True)
    dx = (dxh - m1 - xhat * m2) * rstd[:, None]
    return dx.reshape(g.shape), dgain, dbias


def _flatten_heads(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a).reshape(-1, a.shape[-2], a.shape[-1])


def attn_forward(q: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float) -> np.ndarray:
    """softmax(q k^T * scale) v over the last two axes of [..., T, D] stacks."""
    if _numba_ok(q, k, v):
        qs = _flatten_heads(q * np.float32(scale))
        kf = _flatten_heads(k)
        vf = _flatten_heads(v)
        out = np.empty_like(qs)
        _attn_fwd_f32(qs, kf, vf, out)
        return out.reshape(q.shape)
    scores = np.matmul(q * scale, np.swapaxes(k, -1, -2))
    softmax_lastaxis_(scores)
    return np.matmul(scores, v)


def attn_backward(q: np.ndarray, k: np.ndarray, v: np.ndarray, g: np.ndarray,
                  scale: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of attn_forward; probabilities are recomputed, not stored."""
    if _numba_ok(q, k, v, g):
        qs = _flatten_heads(q * np.float32(scale))
        kf = _flatten_heads(k)
        vf = _flatten_heads(v)
        gf = _flatten_heads(g)
        dq = np.empty_like(qs)
        dk = np.empty_like(kf)
        dv = np.empty_like(vf)
        _attn_bwd_f32(qs, kf, vf, gf, dq, dk, dv)
        dq *= np.float32(scale)
        return dq.reshape(q.shape), dk.reshape(k.shape), dv.reshape(v.shape)
    qs = q * scale
    probs = np.matmul(qs, np.swapaxes(k, -1, -2))
    softmax_lastaxis_(probs)
    dv = np.matmul(np.swapaxes(probs, -1, -2), g)
    dp = np.matmul(g, np.swapaxes(v, -1, -2))
    rowdot = np.sum(dp * probs, axis=-1, keepdims=True)
    ds = probs * (dp - rowdot)
    dq = np.matmul(ds, k) * scale
    dk = np.matmul(np.swapaxes(ds, -1, -2), qs)
    return dq, dk, dv


def warmup() -> None:
    """Trigger JIT compilation of the numba kernels on tiny inputs."""
    if not (_HAVE_NUMBA and use_numba()):
        return
    x = np.zeros((2, 4), np.float32)
    softmax_lastaxis_(x.copy())
    softmax_grad_(x + 0.25, x.copy())
    y, t = gelu_forward(x)
    gelu_backward(x, t, y)
    qkv = np.zeros((1, 2, 4), np.float32)
    out = attn_forward(qkv, qkv, qkv, 1.0)
    attn_backward(qkv, qkv, qkv, out, 1.0)
    gb = np.zeros(4, np.float32)
    ln, xh, rs = layer_norm_forward(x, gb + 1.0, gb, 1e-5)
    layer_norm_backward(ln, xh, rs, gb + 1.0)
