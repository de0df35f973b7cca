"""Binary masks over latent-spectrum bins.

Training-time masks come from thresholding correlated Gaussian bin scores:
a random scalar threshold against scores ``s = K u`` where ``K`` is a
row-normalized radial-basis kernel over (log-scaled) bin frequencies.
Row normalization gives every bin unit marginal score variance, hence an
exact 1/2 marginal keep probability. Inference-time masks are user bands.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dft import LatentSpectrum, SpectrumMeta, band_to_bins, bin_frequencies
from .exceptions import ConfigError, DimensionError

DEFAULT_SIGMA = 0.5
DEFAULT_POWER = 2.0
DEFAULT_EPS = 1e-6
DEFAULT_THRESHOLD_CLAMP = 6.0


@dataclass
class FrequencyMask:
    """Length-F keep vector (1 = bin survives) plus optional band annotations."""

    keep: np.ndarray
    bands_hz: list[tuple[float, float]] | None = None

    def __post_init__(self):
        self.keep = np.asarray(self.keep, dtype=np.float64)
        if self.keep.ndim != 1:
            raise DimensionError("mask keep vector must be 1-D")
        if not np.isin(self.keep, (0.0, 1.0)).all():
            raise ConfigError("mask entries must be 0 or 1")

    @property
    def n_bins(self) -> int:
        return self.keep.shape[0]

    @property
    def density(self) -> float:
        return float(self.keep.mean())


@dataclass
class MaskKernel:
    """Row-normalized score-correlation matrix and the knobs that built it."""

    matrix: np.ndarray
    sigma: float
    power: float
    eps: float
    log_axis: bool
    correlate: bool

    @property
    def n_bins(self) -> int:
        return self.matrix.shape[0]


def build_kernel(
    bin_freqs_hz: np.ndarray,
    sigma: float = DEFAULT_SIGMA,
    power: float = DEFAULT_POWER,
    eps: float = DEFAULT_EPS,
    log_axis: bool = True,
    correlate: bool = True,
) -> MaskKernel:
    """K[i,j] = c_i * exp(-|a_i - a_j|^p / (2 sigma^p)), rows unit l2 norm.

    ``a`` is log(f + eps) on the log axis, plain f otherwise. With
    ``correlate`` off the kernel is the identity (independent bin scores).
    """
    if sigma <= 0 or eps <= 0:
        raise ConfigError("sigma and eps must be positive")
    f = np.asarray(bin_freqs_hz, dtype=np.float64)
    if f.ndim != 1 or f.size < 1 or np.any(np.diff(f) <= 0):
        raise ConfigError("bin frequencies must be strictly increasing")
    if not correlate:
        matrix = np.eye(f.size)
    else:
        a = np.log(f + eps) if log_axis else f
        dist = np.abs(a[:, None] - a[None, :])
        matrix = np.exp(-(dist**power) / (2.0 * sigma**power))
        matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
    return MaskKernel(matrix, sigma, power, eps, log_axis, correlate)


def sample_training_mask(
    kernel: MaskKernel,
    rng: np.random.Generator,
    threshold_clamp: float | None = DEFAULT_THRESHOLD_CLAMP,
) -> FrequencyMask:
    """Draw threshold eta ~ N(0,1) and scores s = K u, u ~ N(0,I); keep s > eta.

    The clamp bounds |eta| to avoid spending training steps on degenerate
    all-or-nothing masks; pass None to disable it.
    """
    eta = rng.standard_normal()
    if threshold_clamp is not None:
        eta = float(np.clip(eta, -threshold_clamp, threshold_clamp))
    u = rng.standard_normal(kernel.n_bins)
    s = kernel.matrix @ u
    return FrequencyMask((s > eta).astype(np.float64))


def user_mask(
    bands_hz: list[tuple[float, float]], meta: SpectrumMeta
) -> FrequencyMask:
    """Union of band_to_bins over user bands; bands kept as annotations.

    Bands must not overlap after clipping to [0, Nyquist]; touching edges
    are fine. An empty band list is the all-zeros mask.
    """
    nyq = meta.nyquist_hz
    spans = []
    for lo, hi in bands_hz:
        lo, hi = max(0.0, float(lo)), min(float(hi), nyq)
        if lo < hi:
            spans.append((lo, hi))
    spans.sort()
    for (lo1, hi1), (lo2, _) in zip(spans, spans[1:]):
        if hi1 > lo2:
            raise ConfigError(f"bands overlap near [{lo2:g}, {hi1:g})")
    keep = np.zeros(meta.n_bins)
    for lo, hi in bands_hz:
        lo, hi = max(0.0, float(lo)), float(hi)
        if lo < hi:
            keep[band_to_bins(lo, hi, meta)] = 1.0
    return FrequencyMask(keep, bands_hz=[(float(lo), float(hi)) for lo, hi in bands_hz])


def apply_mask(spec: LatentSpectrum, mask: FrequencyMask) -> LatentSpectrum:
    """Zero masked coefficients across all channels; metadata preserved."""
    if mask.n_bins != spec.n_bins:
        raise DimensionError(
            f"mask has {mask.n_bins} bins, spectrum has {spec.n_bins}"
        )
    return LatentSpectrum(spec.coeffs * mask.keep[None, :], spec.meta)


def default_kernel(meta: SpectrumMeta, **overrides) -> MaskKernel:
    """Kernel over the spectrum's own bin grid with package defaults."""
    return build_kernel(bin_frequencies(meta), **overrides)


# ---------------------------------------------------------------------------
# mask JSON: {"bands_hz": [[lo, hi], ...]} or {"bins": [k, ...]}


def mask_from_json(text: str, meta: SpectrumMeta) -> FrequencyMask:
    obj = json.loads(text)
    if "bands_hz" in obj:
        return user_mask([tuple(b) for b in obj["bands_hz"]], meta)
    if "bins" in obj:
        keep = np.zeros(meta.n_bins)
        bins = np.asarray(obj["bins"], dtype=np.int64)
        if bins.size and (bins.min() < 0 or bins.max() >= meta.n_bins):
            raise ConfigError("bin index outside spectrum")
        keep[bins] = 1.0
        return FrequencyMask(keep)
    raise ConfigError("mask JSON needs 'bands_hz' or 'bins'")


def mask_to_json(mask: FrequencyMask) -> str:
    if mask.bands_hz is not None:
        return json.dumps({"bands_hz": [list(b) for b in mask.bands_hz]})
    return json.dumps({"bins": np.nonzero(mask.keep)[0].tolist()})
