"""Encoder, conditional denoiser and diffusion preconditioning.

The encoder is a frame-wise MLP: every time frame passes through the same
stack of linear+SiLU layers, so there is zero temporal mixing and the latent
sequence is exactly frame-aligned with the input. The denoiser is a stack of
residual dilated-conv blocks (dilation doubling per block) over the noisy
clip concatenated with the masked latent and a broadcast noise embedding.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dft import LatentSequence
from .exceptions import ConfigError, DimensionError, DomainError
from .tensor import (
    Tape,
    Tensor,
    add,
    broadcast_to,
    concat,
    constant,
    conv1d,
    matmul,
    mul,
    read_tensor,
    reshape,
    silu,
    transpose,
    write_tensor,
)


@dataclass
class EncoderConfig:
    in_channels: int = 16
    latent_channels: int = 16
    hidden_dim: int = 128
    n_layers: int = 4


@dataclass
class DenoiserConfig:
    data_channels: int = 16
    latent_channels: int = 16
    hidden_dim: int = 48
    n_blocks: int = 6
    kernel_size: int = 3
    embed_channels: int = 16

    @property
    def in_channels(self) -> int:
        return self.data_channels + self.latent_channels + self.embed_channels

    @property
    def dilations(self) -> list[int]:
        return [2**i for i in range(self.n_blocks)]

    @property
    def receptive_field_frames(self) -> int:
        return 1 + (self.kernel_size - 1) * sum(self.dilations)


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    limit = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape))


class EncoderParams:
    """Weights/biases of the frame-wise MLP; weights stored (in_dim, out_dim)."""

    def __init__(self, config: EncoderConfig, weights, biases):
        self.config = config
        self.weights = weights
        self.biases = biases

    @classmethod
    def init(cls, config: EncoderConfig, rng: np.random.Generator) -> "EncoderParams":
        dims = (
            [config.in_channels]
            + [config.hidden_dim] * (config.n_layers - 1)
            + [config.latent_channels]
        )
        weights, biases = [], []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            weights.append(_he_uniform(rng, (d_in, d_out), d_in))
            biases.append(Tensor(np.zeros((1, d_out))))
        return cls(config, weights, biases)

    def named_parameters(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"enc_w{i}", w
            yield f"enc_b{i}", b


class DenoiserParams:
    """Parameters of the dilated residual conv stack."""

    def __init__(self, config, emb_w, emb_b, in_w, in_b, blocks, out_w, out_b):
        self.config = config
        self.emb_w = emb_w
        self.emb_b = emb_b
        self.in_w = in_w
        self.in_b = in_b
        self.blocks = blocks  # list of (conv_w, conv_b, mix_w, mix_b)
        self.out_w = out_w
        self.out_b = out_b

    @classmethod
    def init(
        cls,
        config: DenoiserConfig,
        rng: np.random.Generator,
        zero_out: bool = True,
    ) -> "DenoiserParams":
        H, K, E = config.hidden_dim, config.kernel_size, config.embed_channels
        if E % 2:
            raise ConfigError("embed_channels must be even")
        emb_w = _he_uniform(rng, (E, E), E)
        emb_b = Tensor(np.zeros((1, E)))
        in_w = _he_uniform(rng, (H, config.in_channels, 1), config.in_channels)
        in_b = Tensor(np.zeros((1, H, 1)))
        blocks = []
        for _ in range(config.n_blocks):
            conv_w = _he_uniform(rng, (H, H, K), H * K)
            conv_b = Tensor(np.zeros((1, H, 1)))
            mix_w = _he_uniform(rng, (H, H, 1), H)
            mix_b = Tensor(np.zeros((1, H, 1)))
            blocks.append((conv_w, conv_b, mix_w, mix_b))
        if zero_out:
            out_w = Tensor(np.zeros((config.data_channels, H, 1)))
        else:
            out_w = _he_uniform(rng, (config.data_channels, H, 1), H)
        out_b = Tensor(np.zeros((1, config.data_channels, 1)))
        return cls(config, emb_w, emb_b, in_w, in_b, blocks, out_w, out_b)

    def named_parameters(self):
        yield "dec_emb_w", self.emb_w
        yield "dec_emb_b", self.emb_b
        yield "dec_in_w", self.in_w
        yield "dec_in_b", self.in_b
        for i, (cw, cb, mw, mb) in enumerate(self.blocks):
            yield f"dec_blk{i}_conv_w", cw
            yield f"dec_blk{i}_conv_b", cb
            yield f"dec_blk{i}_mix_w", mw
            yield f"dec_blk{i}_mix_b", mb
        yield "dec_out_w", self.out_w
        yield "dec_out_b", self.out_b


@dataclass
class Preconditioning:
    """Noise-dependent input/output scalings around the raw network."""

    sigma_data: float

    def __post_init__(self):
        if self.sigma_data <= 0:
            raise ConfigError("sigma_data must be positive")

    def c_skip(self, sigma):
        sd2 = self.sigma_data**2
        return sd2 / (np.asarray(sigma) ** 2 + sd2)

    def c_out(self, sigma):
        sigma = np.asarray(sigma)
        return sigma * self.sigma_data / np.sqrt(sigma**2 + self.sigma_data**2)

    def c_in(self, sigma):
        return 1.0 / np.sqrt(np.asarray(sigma) ** 2 + self.sigma_data**2)

    def c_noise(self, sigma):
        return 0.25 * np.log(np.asarray(sigma))


# ---------------------------------------------------------------------------
# forward passes


def encode_batch(x: Tensor, params: EncoderParams, tape: Tape | None = None) -> Tensor:
    """(B, C, T) -> (B, C', T); every frame through the same MLP."""
    B, C, T = x.shape
    if C != params.config.in_channels:
        raise DimensionError(f"encoder expects {params.config.in_channels} channels, got {C}")
    h = reshape(transpose(x, (0, 2, 1), tape), (B * T, C), tape)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = add(matmul(h, w, tape), b, tape)
        if i != last:
            h = silu(h, tape)
    cl = params.config.latent_channels
    return transpose(reshape(h, (B, T, cl), tape), (0, 2, 1), tape)


def encode(x0: np.ndarray, params: EncoderParams, frame_rate_hz: float) -> LatentSequence:
    """Encode one clip (C, T) into a latent sequence at the clip's frame rate."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 2:
        raise DimensionError("clip must be a C x T matrix")
    out = encode_batch(Tensor(x0[None]), params)
    return LatentSequence(out.data[0], frame_rate_hz)


def _sinusoidal_features(c_noise: np.ndarray, n_channels: int) -> np.ndarray:
    """(B,) -> (B, n_channels) interleaved sin/cos at octave-spaced rates."""
    m = n_channels // 2
    freqs = 2.0 ** np.arange(m)
    arg = c_noise[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def denoise_batch(
    z_masked: Tensor,
    x_tau: Tensor,
    sigma,
    params: DenoiserParams,
    precond: Preconditioning,
    tape: Tape | None = None,
) -> Tensor:
    """c_skip * x_tau + c_out * F(c_in * x_tau ++ z_masked ++ embed, c_noise)."""
    cfg = params.config
    B, C, T = x_tau.shape
    if C != cfg.data_channels or z_masked.shape != (B, cfg.latent_channels, T):
        raise DimensionError(
            f"denoiser got x {list(x_tau.shape)}, z {list(z_masked.shape)}"
        )
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (B,))
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive")
    c_skip = constant(precond.c_skip(sigma)[:, None, None])
    c_out = constant(precond.c_out(sigma)[:, None, None])
    c_in = constant(precond.c_in(sigma)[:, None, None])

    x_in = mul(x_tau, c_in, tape)
    feats = constant(_sinusoidal_features(precond.c_noise(sigma), cfg.embed_channels))
    emb = add(matmul(feats, params.emb_w, tape), params.emb_b, tape)
    emb = broadcast_to(reshape(emb, (B, cfg.embed_channels, 1), tape), (B, cfg.embed_channels, T), tape)

    h = concat([x_in, z_masked, emb], axis=1, tape=tape)
    h = add(conv1d(h, params.in_w, 1, tape), params.in_b, tape)
    for dil, (conv_w, conv_b, mix_w, mix_b) in zip(cfg.dilations, params.blocks):
        u = silu(h, tape)
        u = add(conv1d(u, conv_w, dil, tape), conv_b, tape)
        u = silu(u, tape)
        u = add(conv1d(u, mix_w, 1, tape), mix_b, tape)
        h = add(h, u, tape)
    raw = add(conv1d(h, params.out_w, 1, tape), params.out_b, tape)
    return add(mul(x_tau, c_skip, tape), mul(raw, c_out, tape), tape)


def denoise(
    z_masked: LatentSequence,
    x_tau: np.ndarray,
    sigma: float,
    params: DenoiserParams,
    precond: Preconditioning,
) -> np.ndarray:
    """Single-clip denoise; returns the x0 estimate as a C x T array."""
    out = denoise_batch(
        Tensor(z_masked.values[None]),
        Tensor(np.asarray(x_tau, dtype=np.float64)[None]),
        float(sigma),
        params,
        precond,
    )
    return out.data[0]


# ---------------------------------------------------------------------------
# model bundle + checkpoints


@dataclass
class ModelConfig:
    frame_rate_hz: float = 64.0
    pad_factor: int = 2
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            frame_rate_hz=d["frame_rate_hz"],
            pad_factor=d["pad_factor"],
            encoder=EncoderConfig(**d["encoder"]),
            denoiser=DenoiserConfig(**d["denoiser"]),
        )


class Model:
    """Encoder + denoiser + preconditioning, the unit tasks operate on."""

    def __init__(self, config: ModelConfig, encoder, denoiser, precond, step=0):
        self.config = config
        self.encoder = encoder
        self.denoiser = denoiser
        self.precond = precond
        self.step = step

    @classmethod
    def init(
        cls,
        config: ModelConfig,
        sigma_data: float,
        rng: np.random.Generator,
        zero_out: bool = True,
    ) -> "Model":
        enc = EncoderParams.init(config.encoder, rng)
        dec = DenoiserParams.init(config.denoiser, rng, zero_out=zero_out)
        return cls(config, enc, dec, Preconditioning(sigma_data))

    def named_parameters(self):
        yield from self.encoder.named_parameters()
        yield from self.denoiser.named_parameters()

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def clone(self) -> "Model":
        other = Model.init(self.config, self.precond.sigma_data, np.random.default_rng(0))
        for (_, dst), (_, src) in zip(other.named_parameters(), self.named_parameters()):
            dst.data[...] = src.data
        other.step = self.step
        return other

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "config": self.config.to_dict(),
            "sigma_data": self.precond.sigma_data,
            "step": self.step,
            "parameters": [],
        }
        for name, t in self.named_parameters():
            write_tensor(directory / f"{name}.lft", t.data, dtype=np.float32)
            manifest["parameters"].append(name)
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))

    @classmethod
    def load(cls, directory) -> "Model":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        config = ModelConfig.from_dict(manifest["config"])
        model = cls.init(config, manifest["sigma_data"], np.random.default_rng(0))
        model.step = manifest["step"]
        for name, t in model.named_parameters():
            t.data[...] = read_tensor(directory / f"{name}.lft")
        return model
