"""Fused kernels: backend selection, cross-backend equivalence at pinned
tolerances, and finite-difference checks of the hand-written backward passes."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.special import softmax as scipy_softmax

from latentnvs import backend, kernels

NUMBA = pytest.mark.skipif(not backend.numba_available(),
                           reason="numba not importable")

# The numba exp/tanh use a polynomial exp2 with ~1e-7 relative error; after
# summation over <=64-long rows the cross-backend gap stays under these.
EQUIV_ATOL = 3e-5
EQUIV_RTOL = 3e-5


@pytest.fixture(params=["numpy", pytest.param("numba", marks=NUMBA)])
def any_backend(request, monkeypatch):
    monkeypatch.setenv(backend.ENV_FLAG, request.param)
    return request.param


def _rng(seed=0):
    return np.random.default_rng(seed)


def _under(flag, fn):
    import os

    saved = os.environ.get(backend.ENV_FLAG)
    os.environ[backend.ENV_FLAG] = flag
    try:
        return fn()
    finally:
        if saved is None:
            del os.environ[backend.ENV_FLAG]
        else:
            os.environ[backend.ENV_FLAG] = saved


def _both(fn):
    """Run fn under both backends; (numpy_result, numba_result)."""
    return _under("numpy", fn), _under("numba", fn)


# -- backend selection --------------------------------------------------


def test_flag_selects_backend(monkeypatch):
    monkeypatch.setenv(backend.ENV_FLAG, "numpy")
    assert backend.backend_name() == "numpy"
    monkeypatch.setenv(backend.ENV_FLAG, " NuMbA ")
    if backend.numba_available():
        assert backend.backend_name() == "numba"
    monkeypatch.delenv(backend.ENV_FLAG)
    assert backend.backend_name() in ("numpy", "numba")


def test_unrecognized_flag_raises(monkeypatch):
    monkeypatch.setenv(backend.ENV_FLAG, "cuda")
    with pytest.raises(RuntimeError, match="cuda"):
        backend.backend_name()


def test_warmup_is_safe(any_backend):
    kernels.warmup()
    kernels.warmup()


# -- softmax ------------------------------------------------------------


def test_softmax_matches_scipy(any_backend):
    x = _rng(1).normal(0, 3, (5, 7, 33)).astype(np.float32)
    out = kernels.softmax_lastaxis_(x.copy())
    np.testing.assert_allclose(out, scipy_softmax(x.astype(np.float64), axis=-1),
                               atol=EQUIV_ATOL)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-5)


def test_softmax_is_in_place(any_backend):
    x = _rng(2).normal(size=(4, 16)).astype(np.float32)
    assert kernels.softmax_lastaxis_(x) is x


def test_softmax_extreme_values(any_backend):
    x = np.array([[-100.0, 0.0, 100.0], [50.0, 50.0, 50.0]], np.float32)
    out = kernels.softmax_lastaxis_(x.copy())
    np.testing.assert_allclose(out[0], [0.0, 0.0, 1.0], atol=1e-6)
    np.testing.assert_allclose(out[1], [1 / 3] * 3, atol=1e-6)


def test_float64_always_takes_the_reference_path():
    x = _rng(3).normal(size=(6, 40))

    a, b = _both(lambda: kernels.softmax_lastaxis_(x.copy()))
    np.testing.assert_array_equal(a, b)  # bitwise: same code ran

    y, t = _under("numba", lambda: kernels.gelu_forward(x))
    y2, t2 = _under("numpy", lambda: kernels.gelu_forward(x))
    np.testing.assert_array_equal(y, y2)
    np.testing.assert_array_equal(t, t2)


# -- cross-backend equivalence ------------------------------------------


@NUMBA
def test_softmax_backends_agree():
    x = _rng(4).normal(0, 2, (64, 3, 40)).astype(np.float32)
    a, b = _both(lambda: kernels.softmax_lastaxis_(x.copy()))
    np.testing.assert_allclose(a, b, atol=EQUIV_ATOL)


@NUMBA
def test_softmax_grad_backends_agree():
    p = _under("numpy", lambda: kernels.softmax_lastaxis_(
        _rng(5).normal(size=(48, 33)).astype(np.float32)))
    dp = _rng(6).normal(size=p.shape).astype(np.float32)
    a, b = _both(lambda: kernels.softmax_grad_(p.copy(), dp.copy()))
    np.testing.assert_allclose(a, b, atol=EQUIV_ATOL)


@NUMBA
def test_gelu_backends_agree():
    x = _rng(7).normal(0, 2.5, (11, 130)).astype(np.float32)
    (ya, ta), (yb, tb) = _both(lambda: kernels.gelu_forward(x))
    np.testing.assert_allclose(ya, yb, atol=EQUIV_ATOL, rtol=EQUIV_RTOL)
    np.testing.assert_allclose(ta, tb, atol=EQUIV_ATOL)
    dy = _rng(8).normal(size=x.shape).astype(np.float32)
    da, db = _both(lambda: kernels.gelu_backward(x, ta, dy))
    np.testing.assert_allclose(da, db, atol=EQUIV_ATOL, rtol=1e-4)


@NUMBA
def test_layer_norm_backends_agree():
    x = _rng(9).normal(2.0, 3.0, (6, 21, 32)).astype(np.float32)
    gain = _rng(10).normal(1.0, 0.2, 32).astype(np.float32)
    bias = _rng(11).normal(0.0, 0.2, 32).astype(np.float32)
    (oa, xa, ra), (ob, xb, rb) = _both(
        lambda: kernels.layer_norm_forward(x, gain, bias, 1e-5))
    np.testing.assert_allclose(oa, ob, atol=EQUIV_ATOL)
    np.testing.assert_allclose(xa, xb, atol=EQUIV_ATOL)
    np.testing.assert_allclose(ra, rb, atol=EQUIV_ATOL, rtol=EQUIV_RTOL)
    g = _rng(12).normal(size=x.shape).astype(np.float32)
    a, b = _both(lambda: kernels.layer_norm_backward(g, xa, ra, gain))
    for da, db in zip(a, b):
        np.testing.assert_allclose(da, db, atol=1e-4, rtol=1e-4)


@NUMBA
def test_attention_backends_agree():
    rng = _rng(13)
    q = rng.normal(size=(2, 4, 18, 16)).astype(np.float32)
    k = rng.normal(size=(2, 4, 40, 16)).astype(np.float32)
    v = rng.normal(size=(2, 4, 40, 16)).astype(np.float32)
    scale = 0.25
    fa, fb = _both(lambda: kernels.attn_forward(q, k, v, scale))
    np.testing.assert_allclose(fa, fb, atol=EQUIV_ATOL, rtol=EQUIV_RTOL)
    g = rng.normal(size=fa.shape).astype(np.float32)
    ga, gb = _both(lambda: kernels.attn_backward(q, k, v, g, scale))
    for da, db in zip(ga, gb):
        np.testing.assert_allclose(da, db, atol=2e-4, rtol=2e-4)


# -- independent oracles ------------------------------------------------


def test_attention_matches_naive_loops(any_backend):
    rng = _rng(14)
    q = rng.normal(size=(3, 5, 8)).astype(np.float32)
    k = rng.normal(size=(3, 9, 8)).astype(np.float32)
    v = rng.normal(size=(3, 9, 8)).astype(np.float32)
    scale = 1.0 / np.sqrt(8.0)
    out = kernels.attn_forward(q, k, v, scale)
    for b in range(3):
        for t in range(5):
            scores = np.array([q[b, t].astype(np.float64) @ k[b, s] * scale
                               for s in range(9)])
            probs = np.exp(scores - scores.max())
            probs /= probs.sum()
            expect = sum(probs[s] * v[b, s].astype(np.float64) for s in range(9))
            np.testing.assert_allclose(out[b, t], expect, atol=1e-5)


def _fd_check(fn_forward, fn_grads, arrays, h=1e-6, atol=5e-6):
    """Central-difference check of every input element, in float64."""
    grads = fn_grads()
    for arr, grad in zip(arrays, grads):
        flat, gflat = arr.ravel(), grad.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            hi = fn_forward()
            flat[i] = keep - h
            lo = fn_forward()
            flat[i] = keep
            np.testing.assert_allclose(gflat[i], (hi - lo) / (2 * h), atol=atol)


def test_gelu_backward_matches_finite_differences():
    x = _rng(15).normal(0, 1.5, 17)
    dy = _rng(16).normal(size=17)

    def forward():
        y, _ = kernels.gelu_forward(x)
        return float(y @ dy)

    def grads():
        _, t = kernels.gelu_forward(x)
        return [kernels.gelu_backward(x, t, dy)]

    _fd_check(forward, grads, [x])


def test_layer_norm_backward_matches_finite_differences():
    rng = _rng(17)
    x = rng.normal(1.0, 2.0, (3, 6))
    gain = rng.normal(1.0, 0.3, 6)
    bias = rng.normal(0.0, 0.3, 6)
    g = rng.normal(size=(3, 6))

    def forward():
        out, _, _ = kernels.layer_norm_forward(x, gain, bias, 1e-5)
        return float((out * g).sum())

    def grads():
        _, xhat, rstd = kernels.layer_norm_forward(x, gain, bias, 1e-5)
        return list(kernels.layer_norm_backward(g, xhat, rstd, gain))

    _fd_check(forward, grads, [x, gain, bias], atol=2e-5)


def test_attention_backward_matches_finite_differences():
    rng = _rng(18)
    q = rng.normal(size=(1, 3, 4))
    k = rng.normal(size=(1, 5, 4))
    v = rng.normal(size=(1, 5, 4))
    g = rng.normal(size=(1, 3, 4))
    scale = 0.5

    def forward():
        return float((kernels.attn_forward(q, k, v, scale) * g).sum())

    def grads():
        return list(kernels.attn_backward(q, k, v, g, scale))

    _fd_check(forward, grads, [q, k, v], atol=1e-5)


def test_softmax_grad_matches_finite_differences():
    rng = _rng(19)
    x = rng.normal(size=(2, 6))
    dp = rng.normal(size=(2, 6))

    def forward():
        return float((kernels.softmax_lastaxis_(x.copy()) * dp).sum())

    def grads():
        p = kernels.softmax_lastaxis_(x.copy())
        return [kernels.softmax_grad_(p, dp.copy())]

    _fd_check(forward, grads, [x], atol=1e-6)


# -- layer norm semantics ----------------------------------------------


def test_layer_norm_normalizes_rows(any_backend):
    x = _rng(20).normal(5.0, 4.0, (10, 24)).astype(np.float32)
    ones = np.ones(24, np.float32)
    zeros = np.zeros(24, np.float32)
    out, _, _ = kernels.layer_norm_forward(x, ones, zeros, 1e-5)
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-5)
    np.testing.assert_allclose(out.std(axis=-1), 1.0, atol=1e-3)
