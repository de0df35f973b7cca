"""Diffusion autoencoder with latent-frequency masking on synthetic signals.

The latent time series produced by a frame-aligned encoder is masked in its
DFT domain during training; at inference, user-chosen frequency bands of a
reference's latent spectrum condition an ODE sampler to generate variations,
blends of two references, or band-isolated renditions.
"""

from .data import ClipConfig, Dataset, PatternRecord, ToyClip, generate_clip, make_dataset
from .dft import LatentSequence, LatentSpectrum, SpectrumMeta, analyze, synthesize
from .diffusion import NoiseSchedule, TrainConfig, karras_schedule, train
from .masking import FrequencyMask, MaskKernel, build_kernel, sample_training_mask, user_mask
from .net import Model, ModelConfig, Preconditioning
from .tasks import SamplerConfig, blend, conditional_generate, isolate, sweep

__version__ = "0.1.0"

__all__ = [
    "ClipConfig",
    "Dataset",
    "PatternRecord",
    "ToyClip",
    "generate_clip",
    "make_dataset",
    "LatentSequence",
    "LatentSpectrum",
    "SpectrumMeta",
    "analyze",
    "synthesize",
    "NoiseSchedule",
    "TrainConfig",
    "karras_schedule",
    "train",
    "FrequencyMask",
    "MaskKernel",
    "build_kernel",
    "sample_training_mask",
    "user_mask",
    "Model",
    "ModelConfig",
    "Preconditioning",
    "SamplerConfig",
    "blend",
    "conditional_generate",
    "isolate",
    "sweep",
    "__version__",
]
