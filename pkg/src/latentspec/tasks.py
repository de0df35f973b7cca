"""User-facing procedures: conditional generation, blending, band isolation,
and the interpretability sweep over latent-frequency windows.

All tasks share one conditioning pipeline (encode, analyze, mask, synthesize)
and one sampler core, so the degenerate identities hold exactly: blending a
clip with itself under one mask reproduces conditional generation, and
isolation with zero bandpass weight reproduces full-mask generation.
Variation i always draws its starting noise from a generator seeded by
(seed, i), independent of how many variations are requested.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import masking, metrics, net
from .data import ClipConfig, PatternRecord, ToyClip, pattern_envelope, pattern_template
from .dft import LatentSequence, SpectrumMeta, analyze, bin_frequencies, synthesize
from .diffusion import NoiseSchedule, karras_schedule, weighted_ode_sample
from .exceptions import ConfigError, DimensionError
from .masking import FrequencyMask
from .net import Model


@dataclass
class SamplerConfig:
    n_steps: int = 32
    heun: bool = True
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0

    def schedule(self) -> NoiseSchedule:
        return karras_schedule(self.n_steps, self.sigma_min, self.sigma_max, self.rho)


@dataclass
class TaskRequest:
    """A reproducible task invocation: references, masks, weights, seeds."""

    task: str  # generate | blend | isolate
    references: list
    masks: list
    weights: tuple[float, float] = (0.5, 0.5)
    n_variations: int = 1
    seed: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        n_refs = {"generate": 1, "blend": 2, "isolate": 1}.get(self.task)
        if n_refs is None:
            raise ConfigError(f"unknown task {self.task!r}")
        if len(self.references) != n_refs or len(self.masks) != n_refs:
            raise ConfigError(
                f"{self.task} needs {n_refs} reference(s) and {n_refs} mask(s)"
            )
        if self.n_variations < 1:
            raise ConfigError("n_variations must be >= 1")


def spectrum_meta(model: Model, n_frames: int) -> SpectrumMeta:
    return SpectrumMeta(n_frames, model.config.pad_factor, model.config.frame_rate_hz)


def condition_latent(y: np.ndarray, mask: FrequencyMask, model: Model) -> LatentSequence:
    """Encode a reference and keep only the masked part of its latent spectrum."""
    z = net.encode(y, model.encoder, model.config.frame_rate_hz)
    spec = analyze(z, model.config.pad_factor)
    return synthesize(masking.apply_mask(spec, mask))


def _variation_init(shape, seed: int, index: int, sigma_max: float) -> np.ndarray:
    rng = np.random.default_rng([seed, index])
    return rng.standard_normal(shape) * sigma_max


def conditional_generate(
    y: np.ndarray,
    mask: FrequencyMask,
    model: Model,
    cfg: SamplerConfig | None = None,
    n_variations: int = 1,
    seed: int = 0,
) -> list[np.ndarray]:
    """Variations of y preserving only the masked latent frequencies.

    Variations are sampled one at a time so that variation i is a function of
    (seed, i) alone; batching them would let BLAS blocking leak the batch
    size into the low-order bits.
    """
    cfg = cfg or SamplerConfig()
    zc = condition_latent(y, mask, model).values
    meta = spectrum_meta(model, y.shape[1])
    if mask.n_bins != meta.n_bins:
        raise DimensionError(f"mask has {mask.n_bins} bins, model expects {meta.n_bins}")
    sched = cfg.schedule()
    outs = []
    for i in range(n_variations):
        x_init = _variation_init(y.shape, seed, i, cfg.sigma_max)[None]
        outs.append(weighted_ode_sample([(1.0, zc[None])], sched, model, x_init, cfg.heun)[0])
    return outs


def _steered(y1, y2, mask1, mask2, alpha, beta, model, cfg, n_variations, seed):
    cfg = cfg or SamplerConfig()
    z1 = condition_latent(y1, mask1, model).values[None]
    z2 = condition_latent(y2, mask2, model).values[None]
    sched = cfg.schedule()
    outs = []
    for i in range(n_variations):
        x_init = _variation_init(y1.shape, seed, i, cfg.sigma_max)[None]
        out = weighted_ode_sample(
            [(alpha, z1), (beta, z2)], sched, model, x_init, cfg.heun
        )
        outs.append(out[0])
    return outs


def blend(
    y1: np.ndarray,
    y2: np.ndarray,
    mask1: FrequencyMask,
    mask2: FrequencyMask,
    alpha: float,
    beta: float,
    model: Model,
    cfg: SamplerConfig | None = None,
    n_variations: int = 1,
    seed: int = 0,
) -> list[np.ndarray]:
    """Blend two references, steering with alpha*d1 + beta*d2 each step."""
    if np.any(mask1.keep * mask2.keep > 0):
        warnings.warn("blend masks overlap in bins; proceeding", stacklevel=2)
    return _steered(y1, y2, mask1, mask2, alpha, beta, model, cfg, n_variations, seed)


def isolate(
    y: np.ndarray,
    band_hz: tuple[float, float],
    alpha: float,
    beta: float,
    model: Model,
    cfg: SamplerConfig | None = None,
    n_variations: int = 1,
    seed: int = 0,
) -> list[np.ndarray]:
    """Boost one latent band by self-blending the full and bandpassed latents.

    beta >> alpha isolates the band almost completely; beta = 0 degenerates to
    plain full-spectrum conditional generation.
    """
    if alpha == 0 and beta == 0:
        raise ConfigError("isolate needs alpha or beta nonzero")
    meta = spectrum_meta(model, y.shape[1])
    full_mask = FrequencyMask(np.ones(meta.n_bins))
    band_mask = masking.user_mask([band_hz], meta)
    return _steered(y, y, full_mask, band_mask, alpha, beta, model, cfg, n_variations, seed)


# ---------------------------------------------------------------------------
# interpretability sweep


def matched_filter_preservation(
    gen_signal: np.ndarray,
    record: PatternRecord,
    config: ClipConfig,
    half_width_bins: float = 1.5,
) -> float:
    """Correlation between a pattern's ground-truth activity series and the
    generation's activity filtered to the pattern's rate.

    Both series are projected onto the DFT bins within ``half_width_bins`` of
    the record rate (DC excluded) before the Pearson correlation, which makes
    the measure phase-sensitive but insensitive to unrelated content.
    """
    fr, T = config.frame_rate_hz, config.n_frames
    obs = pattern_envelope(gen_signal, record)
    tmpl = pattern_template(record, config)

    freqs = np.fft.rfftfreq(T, d=1.0 / fr)
    keep = (np.abs(freqs - record.rate_hz) <= half_width_bins * fr / T) & (freqs > 0)

    def bp(v):
        spec = np.fft.rfft(v) * keep
        return np.fft.irfft(spec, n=T)

    return metrics.pearson(bp(tmpl), bp(obs))


@dataclass
class SweepResult:
    window_starts: np.ndarray
    centers_hz: np.ndarray
    labels: list[str]
    raw: np.ndarray  # (n_windows, n_records)
    smoothed: np.ndarray

    def argmax_center(self, record_index: int, smoothed: bool = True) -> float:
        curve = (self.smoothed if smoothed else self.raw)[:, record_index]
        return float(self.centers_hz[int(np.argmax(curve))])


def gaussian_smooth(values: np.ndarray, std: float) -> np.ndarray:
    """Column-wise Gaussian smoothing with edge renormalization."""
    if std <= 0:
        return values.copy()
    radius = max(1, int(np.ceil(4 * std)))
    k = np.exp(-0.5 * (np.arange(-radius, radius + 1) / std) ** 2)
    out = np.empty_like(values)
    n = values.shape[0]
    for i in range(n):
        lo, hi = max(0, i - radius), min(n, i + radius + 1)
        w = k[lo - i + radius : hi - i + radius]
        out[i] = (values[lo:hi] * w[:, None]).sum(axis=0) / w.sum()
    return out


def sweep(
    clip: ToyClip,
    model: Model,
    cfg: SamplerConfig | None = None,
    window_bins: int = 10,
    stride: int = 8,
    seed: int = 0,
    smooth_std: float = 2.0,
) -> SweepResult:
    """Slide a kept-bin window over the latent spectrum; for each position,
    generate one variation and score preservation of every ground-truth
    pattern. Returns raw and Gaussian-smoothed curves."""
    cfg = cfg or SamplerConfig()
    if window_bins < 1:
        raise ConfigError("window_bins must be >= 1")
    meta = spectrum_meta(model, clip.signal.shape[1])
    F = meta.n_bins
    window_bins = min(window_bins, F)
    starts = np.arange(0, F - window_bins + 1, stride)
    freqs = bin_frequencies(meta)
    centers = np.array([freqs[s : s + window_bins].mean() for s in starts])

    z = net.encode(clip.signal, model.encoder, model.config.frame_rate_hz)
    spec = analyze(z, model.config.pad_factor)
    conds = np.empty((len(starts),) + z.values.shape)
    for w, s in enumerate(starts):
        keep = np.zeros(F)
        keep[s : s + window_bins] = 1.0
        conds[w] = synthesize(masking.apply_mask(spec, FrequencyMask(keep))).values
    x_init = np.empty((len(starts),) + clip.signal.shape)
    for w in range(len(starts)):
        x_init[w] = (
            np.random.default_rng([seed, w]).standard_normal(clip.signal.shape)
            * cfg.sigma_max
        )
    gens = weighted_ode_sample([(1.0, conds)], cfg.schedule(), model, x_init, cfg.heun)

    clip_cfg = ClipConfig(
        n_channels=clip.signal.shape[0],
        n_frames=clip.signal.shape[1],
        frame_rate_hz=clip.frame_rate_hz,
    )
    raw = np.empty((len(starts), len(clip.attributes)))
    for w in range(len(starts)):
        for r, rec in enumerate(clip.attributes):
            raw[w, r] = matched_filter_preservation(gens[w], rec, clip_cfg)
    labels = [f"{rec.kind}@{rec.rate_hz:.2f}hz" for rec in clip.attributes]
    return SweepResult(starts, centers, labels, raw, gaussian_smooth(raw, smooth_std))
