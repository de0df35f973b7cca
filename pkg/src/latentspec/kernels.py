"""Hot numeric kernels: dilated same-padding 1D convolution, forward and backward.

Both backends lower the convolution to one GEMM over an im2col layout
(k-major, channel-minor rows; batch*time columns). The numba path jits the
pack/scatter loops and calls BLAS from nopython code; it is deliberately
serial, since on small core counts a second worker pool fighting BLAS for
cores costs more than it buys (see benchmarks/bench_kernels.py). Select the
backend globally with the environment variable ``LATENTSPEC_BACKEND``
(``numba`` | ``numpy`` | ``auto``), or per call via the ``backend`` argument.
Results are deterministic run-to-run for a fixed configuration.
"""

from __future__ import annotations

import os

import numpy as np

from .exceptions import ConfigError

try:
    import numba
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    HAS_NUMBA = False


def _pad_amount(kernel_size: int, dilation: int) -> int:
    if kernel_size % 2 != 1:
        raise ConfigError(f"kernel size must be odd, got {kernel_size}")
    if dilation < 1:
        raise ConfigError(f"dilation must be >= 1, got {dilation}")
    return dilation * (kernel_size - 1) // 2


def _w_mat(w: np.ndarray) -> np.ndarray:
    """(Co, Ci, K) -> (Co, K*Ci), row layout matching the im2col rows."""
    Co, Ci, K = w.shape
    return np.ascontiguousarray(w.transpose(0, 2, 1)).reshape(Co, K * Ci)


# ---------------------------------------------------------------------------
# numpy implementation


def _pad_np(x, pad):
    B, Ci, T = x.shape
    xpad = np.zeros((B, Ci, T + 2 * pad), dtype=x.dtype)
    xpad[:, :, pad : pad + T] = x
    return xpad


def _im2col_np(xpad, T, K, dilation):
    B, Ci = xpad.shape[:2]
    cols = np.empty((K, Ci, B, T), dtype=xpad.dtype)
    for k in range(K):
        lo = k * dilation
        cols[k] = xpad[:, :, lo : lo + T].transpose(1, 0, 2)
    return cols.reshape(K * Ci, B * T)


def _forward_np(x, w, dilation):
    B, Ci, T = x.shape
    Co, _, K = w.shape
    pad = _pad_amount(K, dilation)
    cols = _im2col_np(_pad_np(x, pad), T, K, dilation)
    y = _w_mat(w) @ cols
    return np.ascontiguousarray(y.reshape(Co, B, T).transpose(1, 0, 2))


def _grad_input_np(g, w, dilation):
    B, Co, T = g.shape
    _, Ci, K = w.shape
    pad = _pad_amount(K, dilation)
    g2 = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(Co, B * T)
    gcols = (_w_mat(w).T @ g2).reshape(K, Ci, B, T)
    dxpad = np.zeros((B, Ci, T + 2 * pad), dtype=g.dtype)
    for k in range(K):
        lo = k * dilation
        dxpad[:, :, lo : lo + T] += gcols[k].transpose(1, 0, 2)
    return np.ascontiguousarray(dxpad[:, :, pad : pad + T])


def _grad_weight_np(g, x, dilation, kernel_size):
    B, Ci, T = x.shape
    K = kernel_size
    Co = g.shape[1]
    pad = _pad_amount(K, dilation)
    cols = _im2col_np(_pad_np(x, pad), T, K, dilation)
    g2 = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(Co, B * T)
    dw2 = g2 @ cols.T
    return np.ascontiguousarray(dw2.reshape(Co, K, Ci).transpose(0, 2, 1))


# ---------------------------------------------------------------------------
# numba implementation

if HAS_NUMBA:

    @njit(cache=True)
    def _im2col_nb(x, K, dilation, pad):  # pragma: no cover - jitted
        B, Ci, T = x.shape
        cols = np.zeros((K * Ci, B * T))
        for b in range(B):
            for k in range(K):
                off = k * dilation - pad
                lo = max(0, -off)
                hi = min(T, T - off)
                for c in range(Ci):
                    row = k * Ci + c
                    base = b * T
                    for t in range(lo, hi):
                        cols[row, base + t] = x[b, c, t + off]
        return cols

    @njit(cache=True)
    def _flatten_bt(g):  # pragma: no cover - jitted
        B, Co, T = g.shape
        g2 = np.empty((Co, B * T))
        for b in range(B):
            for o in range(Co):
                base = b * T
                for t in range(T):
                    g2[o, base + t] = g[b, o, t]
        return g2

    @njit(cache=True)
    def _unflatten_bt(y2, B, Co, T):  # pragma: no cover - jitted
        y = np.empty((B, Co, T))
        for b in range(B):
            for o in range(Co):
                base = b * T
                for t in range(T):
                    y[b, o, t] = y2[o, base + t]
        return y

    @njit(cache=True)
    def _forward_nb(x, w2, Co, K, dilation, pad):  # pragma: no cover - jitted
        B, Ci, T = x.shape
        if K == 1:
            cols = _flatten_bt(x)
        else:
            cols = _im2col_nb(x, K, dilation, pad)
        y2 = np.dot(w2, cols)
        return _unflatten_bt(y2, B, Co, T)

    @njit(cache=True)
    def _grad_input_nb(g, w2t, Ci, K, dilation, pad):  # pragma: no cover - jitted
        B, Co, T = g.shape
        gcols = np.dot(w2t, _flatten_bt(g))
        if K == 1:
            return _unflatten_bt(gcols, B, Ci, T)
        dx = np.zeros((B, Ci, T))
        for b in range(B):
            for k in range(K):
                off = k * dilation - pad
                lo = max(0, off)
                hi = min(T, T + off)
                for c in range(Ci):
                    row = k * Ci + c
                    base = b * T
                    for t in range(lo, hi):
                        dx[b, c, t] += gcols[row, base + t - off]
        return dx

    @njit(cache=True)
    def _silu_backward_nb(g, a, sig):  # pragma: no cover - jitted
        gf, af, sf = g.ravel(), a.ravel(), sig.ravel()
        out = np.empty_like(gf)
        for i in range(gf.size):
            out[i] = gf[i] * sf[i] * (1.0 + af[i] * (1.0 - sf[i]))
        return out.reshape(g.shape)

    @njit(cache=True)
    def _grad_weight_nb(g, x, K, dilation, pad):  # pragma: no cover - jitted
        B, Co, T = g.shape
        Ci = x.shape[1]
        if K == 1:
            cols = _flatten_bt(x)
        else:
            cols = _im2col_nb(x, K, dilation, pad)
        dw2 = np.dot(_flatten_bt(g), cols.T.copy())
        dw = np.empty((Co, Ci, K))
        for o in range(Co):
            for k in range(K):
                for c in range(Ci):
                    dw[o, c, k] = dw2[o, k * Ci + c]
        return dw


# ---------------------------------------------------------------------------
# dispatch


def _resolve_backend(name: str | None) -> str:
    if name is None:
        name = os.environ.get("LATENTSPEC_BACKEND", "auto").lower()
    if name == "auto":
        return "numba" if HAS_NUMBA else "numpy"
    if name == "numba" and not HAS_NUMBA:
        raise ConfigError("LATENTSPEC_BACKEND=numba but numba is not installed")
    if name not in ("numba", "numpy"):
        raise ConfigError(f"unknown kernel backend {name!r}")
    return name


def backend_name() -> str:
    """Backend the module-level kernels dispatch to by default."""
    return _resolve_backend(None)


def _load_blas_pools() -> None:
    """Force-load every BLAS this process will use so limits apply to all.

    numpy's OpenBLAS loads on first GEMM; numba's np.dot binds a second copy
    through scipy's cython_blas, which otherwise loads after limits are set.
    """
    np.ones((2, 2)) @ np.ones((2, 2))
    if HAS_NUMBA:
        try:
            import scipy.linalg  # noqa: F401
        except ImportError:  # pragma: no cover
            pass


def single_thread_blas():
    """Context manager pinning BLAS pools to one thread.

    The GEMMs in this package are small (channel dims well under 200); on the
    machines this runs on, OpenBLAS's cross-thread synchronization costs more
    than the arithmetic, so the training and sampling loops run inside this
    context. Falls back to a no-op when threadpoolctl is unavailable.
    """
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        import contextlib

        return contextlib.nullcontext()
    _load_blas_pools()
    return threadpool_limits(limits=1, user_api="blas")


def set_num_threads(n: int) -> None:
    """Cap numba and BLAS worker threads."""
    if HAS_NUMBA:
        numba.set_num_threads(max(1, n))
    try:
        import threadpoolctl
    except ImportError:  # pragma: no cover
        return
    _load_blas_pools()
    threadpoolctl.threadpool_limits(limits=max(1, n), user_api="blas")


def conv1d_forward(x, w, dilation=1, backend=None):
    """Same-padding dilated conv of x (B,Ci,T) with w (Co,Ci,K) -> (B,Co,T)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    pad = _pad_amount(w.shape[2], dilation)
    if _resolve_backend(backend) == "numba":
        return _forward_nb(x, _w_mat(w), w.shape[0], w.shape[2], dilation, pad)
    return _forward_np(x, w, dilation)


def conv1d_grad_input(g, w, dilation=1, backend=None):
    """d(loss)/dx given upstream gradient g (B,Co,T); returns (B,Ci,T)."""
    g = np.ascontiguousarray(g, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    pad = _pad_amount(w.shape[2], dilation)
    if _resolve_backend(backend) == "numba":
        w2t = np.ascontiguousarray(_w_mat(w).T)
        return _grad_input_nb(g, w2t, w.shape[1], w.shape[2], dilation, pad)
    return _grad_input_np(g, w, dilation)


def conv1d_grad_weight(g, x, kernel_size, dilation=1, backend=None):
    """d(loss)/dw given upstream gradient g (B,Co,T); returns (Co,Ci,K)."""
    g = np.ascontiguousarray(g, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    pad = _pad_amount(kernel_size, dilation)
    if _resolve_backend(backend) == "numba":
        return _grad_weight_nb(g, x, kernel_size, dilation, pad)
    return _grad_weight_np(g, x, dilation, kernel_size)


def silu_backward(g, a, sig, backend=None):
    """Gradient of a*sigmoid(a) given upstream g and the cached sigmoid."""
    if _resolve_backend(backend) == "numba":
        return _silu_backward_nb(
            np.ascontiguousarray(g), np.ascontiguousarray(a), np.ascontiguousarray(sig)
        )
    return g * sig * (1.0 + a * (1.0 - sig))
