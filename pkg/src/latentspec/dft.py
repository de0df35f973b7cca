"""Real DFT analysis/synthesis of latent time series.

A latent sequence is zero-padded at its end by an integer factor before the
transform, which refines the frequency grid (spectral interpolation). Only
the half-spectrum is stored; synthesis rebuilds the full Hermitian spectrum
explicitly so corrupted coefficients are detected rather than silently
projected onto a real signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, NumericError, SpectrumCorruptionError

RESIDUE_TOL = 1e-9


@dataclass
class LatentSequence:
    """Real C'xT' matrix of latent frames sampled at ``frame_rate_hz``."""

    values: np.ndarray
    frame_rate_hz: float

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if self.values.shape[1] < 2:
            raise ConfigError("latent sequence needs at least 2 frames")
        if self.frame_rate_hz <= 0:
            raise ConfigError("frame_rate_hz must be positive")

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class SpectrumMeta:
    """Geometry of a latent spectrum: origin length, pad factor, frame rate."""

    origin_len: int
    pad_factor: int
    frame_rate_hz: float

    @property
    def padded_len(self) -> int:
        return self.pad_factor * self.origin_len

    @property
    def n_bins(self) -> int:
        return self.padded_len // 2 + 1

    @property
    def nyquist_hz(self) -> float:
        return self.frame_rate_hz / 2.0


@dataclass
class LatentSpectrum:
    """Complex C'xF half-spectrum of a zero-padded latent sequence."""

    coeffs: np.ndarray
    meta: SpectrumMeta

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=np.complex128))
        if self.coeffs.shape[1] != self.meta.n_bins:
            raise ConfigError(
                f"expected {self.meta.n_bins} bins for origin_len={self.meta.origin_len}, "
                f"pad_factor={self.meta.pad_factor}; got {self.coeffs.shape[1]}"
            )

    @property
    def n_bins(self) -> int:
        return self.coeffs.shape[1]


def analyze(z: LatentSequence, pad_factor: int = 2) -> LatentSpectrum:
    """Half-spectrum of each channel after end-padding to pad_factor * T'."""
    if pad_factor < 1:
        raise ConfigError(f"pad_factor must be >= 1, got {pad_factor}")
    if not np.isfinite(z.values).all():
        raise NumericError("latent sequence contains non-finite values")
    n = pad_factor * z.n_frames
    coeffs = np.fft.rfft(z.values, n=n, axis=1)
    meta = SpectrumMeta(z.n_frames, pad_factor, z.frame_rate_hz)
    return LatentSpectrum(coeffs, meta)


def synthesize(spec: LatentSpectrum) -> LatentSequence:
    """Invert the Hermitian extension; truncate the pad; check realness."""
    n = spec.meta.padded_len
    full = np.zeros((spec.coeffs.shape[0], n), dtype=np.complex128)
    half = spec.coeffs
    full[:, : spec.n_bins] = half
    mirror = np.conj(half[:, 1 : spec.n_bins - 1 if n % 2 == 0 else spec.n_bins])
    full[:, : n - mirror.shape[1] - 1 : -1] = mirror
    x = np.fft.ifft(full, axis=1)
    out = x.real[:, : spec.meta.origin_len]
    residue = np.abs(x.imag).max() if x.size else 0.0
    norm = np.linalg.norm(out)
    if residue > RESIDUE_TOL * max(norm, 1e-300):
        raise SpectrumCorruptionError(
            f"imaginary residue {residue:.3e} exceeds {RESIDUE_TOL:g} * |output|"
        )
    return LatentSequence(out, spec.meta.frame_rate_hz)


def bin_frequency(k: int, meta: SpectrumMeta) -> float:
    """Frequency in Hz of bin k: k * f_r / (L * T')."""
    if not 0 <= k < meta.n_bins:
        raise IndexError(f"bin {k} outside [0, {meta.n_bins})")
    return k * meta.frame_rate_hz / meta.padded_len


def bin_frequencies(meta: SpectrumMeta) -> np.ndarray:
    """All bin frequencies in Hz, ascending."""
    return np.arange(meta.n_bins) * meta.frame_rate_hz / meta.padded_len


def band_to_bins(lo_hz: float, hi_hz: float, meta: SpectrumMeta) -> np.ndarray:
    """Bins with lo <= f_k < hi. A band reaching the Nyquist edge keeps it.

    Half-open intervals let partitions tile the axis without double counting;
    the closed top edge makes the full axis [0, Nyquist] reachable (the last
    bin would otherwise be unselectable by any finite band).
    """
    if not 0 <= lo_hz < hi_hz:
        raise ConfigError(f"need 0 <= lo < hi, got [{lo_hz}, {hi_hz})")
    f = bin_frequencies(meta)
    keep = (f >= lo_hz) & (f < hi_hz)
    if hi_hz >= meta.nyquist_hz:
        keep |= f == f[-1]
        keep &= f >= lo_hz
    return np.nonzero(keep)[0]


def log_band_partition(
    n_bands: int, meta: SpectrumMeta, floor_hz: float | None = None
) -> list[tuple[float, float]]:
    """[0, floor) plus n_bands-1 bands of equal width on a log-frequency axis.

    ``floor_hz`` defaults to the frequency of bin 8, mirroring a partition
    whose lowest edge sits a few bins above DC.
    """
    if n_bands < 1:
        raise ConfigError("n_bands must be >= 1")
    if n_bands > meta.n_bins:
        raise ConfigError(f"{n_bands} bands exceed {meta.n_bins} bins")
    nyq = meta.nyquist_hz
    if n_bands == 1:
        return [(0.0, nyq)]
    if floor_hz is None:
        floor_hz = bin_frequency(min(8, meta.n_bins - 1), meta)
    if not 0 < floor_hz < nyq:
        raise ConfigError(f"floor_hz {floor_hz} outside (0, {nyq})")
    edges = np.exp(np.linspace(np.log(floor_hz), np.log(nyq), n_bands))
    edges = [0.0] + list(edges)
    return list(zip(edges[:-1], edges[1:]))
