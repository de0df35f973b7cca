"""Independent oracles the tests check the package against.

Everything here is deliberately naive: O(N^2) sums, central finite
differences, two-pass statistics. None of it shares code with the paths it
verifies.
"""

from __future__ import annotations

import numpy as np


def fd_gradient(f, array: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f with respect to every element."""
    grad = np.zeros_like(array)
    flat = array.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Max relative error with an absolute floor for near-zero entries."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = np.maximum(np.abs(a) + np.abs(b), 1e-8)
    return float(np.max(np.abs(a - b) / scale))


def direct_dft(x: np.ndarray, n: int | None = None) -> np.ndarray:
    """O(N^2) DFT of the last axis: X[k] = sum_n x[n] e^{-2 pi i k n / N}."""
    x = np.asarray(x, dtype=np.complex128)
    if n is not None:
        padded = np.zeros(x.shape[:-1] + (n,), dtype=np.complex128)
        padded[..., : x.shape[-1]] = x
        x = padded
    N = x.shape[-1]
    k = np.arange(N)
    basis = np.exp(-2j * np.pi * np.outer(k, k) / N)
    return x @ basis.T


def direct_half_dft(x: np.ndarray, n: int | None = None) -> np.ndarray:
    full = direct_dft(x, n)
    return full[..., : full.shape[-1] // 2 + 1]


def two_pass_stats(values: np.ndarray) -> tuple[float, float]:
    flat = np.asarray(values, dtype=np.float64).ravel()
    mean = flat.sum() / flat.size
    var = ((flat - mean) ** 2).sum() / flat.size
    return float(mean), float(np.sqrt(var))


def run_lengths(keep: np.ndarray) -> list[int]:
    """Lengths of maximal runs of ones in a binary vector."""
    lengths = []
    count = 0
    for v in keep:
        if v:
            count += 1
        elif count:
            lengths.append(count)
            count = 0
    if count:
        lengths.append(count)
    return lengths
