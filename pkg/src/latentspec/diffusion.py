"""Forward noising, training loop, noise schedules and deterministic ODE samplers.

Noise level tau is identified with sigma throughout (variance-exploding
parameterization). The sampler follows the probability-flow update
x <- x + (sigma_next - sigma) * d with d = (x - xhat0)/sigma, optionally with
a trapezoidal (Heun) correction. Blending replaces d by a weighted sum of the
derivatives induced by each condition; both samplers share one core so the
degenerate cases coincide bit-for-bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dft import LatentSequence
from .exceptions import ConfigError, SamplerDivergenceError, TrainingAbortedError
from .masking import MaskKernel, build_kernel, sample_training_mask
from .net import Model, denoise_batch, encode_batch
from .tensor import Tape, Tensor, add, backward, constant, mul, scale, tsum
from . import dft
from . import kernels


@dataclass
class NoiseSchedule:
    """Strictly decreasing noise levels; first is sigma_max, last exactly 0."""

    sigmas: np.ndarray
    rho: float
    sigma_min: float
    sigma_max: float

    def __post_init__(self):
        self.sigmas = np.asarray(self.sigmas, dtype=np.float64)
        if self.sigmas[0] != self.sigma_max or self.sigmas[-1] != 0.0:
            raise ConfigError("schedule must start at sigma_max and end at 0")
        if np.any(np.diff(self.sigmas) >= 0):
            raise ConfigError("schedule must be strictly decreasing")

    @property
    def n_steps(self) -> int:
        return len(self.sigmas) - 1


def karras_schedule(
    n_steps: int,
    sigma_min: float = 0.002,
    sigma_max: float = 80.0,
    rho: float = 7.0,
) -> NoiseSchedule:
    """sigma_i on the rho-warped grid from sigma_max down to sigma_min, then 0."""
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1")
    if n_steps == 1:
        sig = np.array([sigma_max, 0.0])
    else:
        i = np.arange(n_steps) / (n_steps - 1)
        inv = sigma_max ** (1 / rho) + i * (sigma_min ** (1 / rho) - sigma_max ** (1 / rho))
        sig = np.concatenate([inv**rho, [0.0]])
    return NoiseSchedule(sig, rho, sigma_min, sigma_max)


def sample_sigma(
    rng: np.random.Generator,
    p_mean: float = -1.2,
    p_std: float = 1.2,
    sigma_max: float = 80.0,
    size=None,
):
    """ln sigma ~ N(p_mean, p_std^2), clipped from above to sigma_max."""
    sig = np.exp(p_mean + p_std * rng.standard_normal(size))
    return np.minimum(sig, sigma_max)


def forward_noise(x0: np.ndarray, sigma, rng: np.random.Generator) -> np.ndarray:
    """x0 + sigma * eps with eps ~ N(0, I); sigma may be per-example."""
    x0 = np.asarray(x0, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ConfigError("sigma must be >= 0")
    if sigma.ndim == 1:
        sigma = sigma.reshape((-1,) + (1,) * (x0.ndim - 1))
    return x0 + sigma * rng.standard_normal(x0.shape)


def loss_weight(sigma, sigma_data: float):
    """lambda(sigma) = (sigma^2 + sigma_d^2) / (sigma * sigma_d)^2 > 0."""
    sigma = np.asarray(sigma, dtype=np.float64)
    return (sigma**2 + sigma_data**2) / (sigma * sigma_data) ** 2


# ---------------------------------------------------------------------------
# latent spectral masking inside the training graph


def masked_spectral_roundtrip(
    z: Tensor, keep: np.ndarray, pad_factor: int, tape: Tape | None = None
) -> Tensor:
    """DFT -> per-example bin mask -> inverse DFT -> truncate, as one tensor op.

    The operator is linear and self-adjoint (the mask is symmetric across the
    Hermitian mirror), so the backward pass applies the identical transform
    to the upstream gradient.
    """
    B, _, T = z.shape
    keep = np.asarray(keep, dtype=np.float64)
    if keep.shape != (B, pad_factor * T // 2 + 1):
        raise ConfigError(f"keep must be (batch, n_bins), got {keep.shape}")
    n = pad_factor * T

    def apply(arr):
        spec = np.fft.rfft(arr, n=n, axis=2)
        spec *= keep[:, None, :]
        return np.ascontiguousarray(np.fft.irfft(spec, n=n, axis=2)[:, :, :T])

    out = Tensor(apply(z.data))
    if tape is not None:

        def bwd():
            if out.grad is None:
                return
            if z.grad is None:
                z.grad = np.zeros_like(z.data)
            z.grad += apply(out.grad)

        tape.record(bwd)
    return out


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with linear warmup and cosine decay of the learning rate."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                 warmup_steps=0, decay_start=None, total_steps=None):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.warmup_steps = warmup_steps
        self.decay_start = decay_start
        self.total_steps = total_steps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def learning_rate(self, step: int) -> float:
        lr = self.lr
        if self.warmup_steps and step < self.warmup_steps:
            return lr * (step + 1) / self.warmup_steps
        if (
            self.total_steps
            and self.decay_start is not None
            and step >= self.decay_start
            and self.total_steps > self.decay_start
        ):
            frac = (step - self.decay_start) / (self.total_steps - self.decay_start)
            return lr * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))
        return lr

    def step(self, grad_clip: float | None = None) -> float:
        lr = self.learning_rate(self.t)
        if grad_clip is not None:
            sq = sum(float(np.sum(p.grad**2)) for p in self.params if p.grad is not None)
            norm = math.sqrt(sq)
            if norm > grad_clip:
                factor = grad_clip / norm
                for p in self.params:
                    if p.grad is not None:
                        p.grad *= factor
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else 0.0
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
        return lr


class Ema:
    """Exponential moving average of model parameters (the inference weights)."""

    def __init__(self, model: Model, decay: float):
        self.decay = decay
        self.model = model.clone()

    def update(self, model: Model) -> None:
        for (_, e), (_, p) in zip(self.model.named_parameters(), model.named_parameters()):
            e.data *= self.decay
            e.data += (1.0 - self.decay) * p.data


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-4
    warmup_steps: int = 100
    total_steps: int = 2000
    decay_start: int | None = None  # default: total_steps // 2
    grad_clip: float = 1.0
    ema_decay: float = 0.999
    no_masking: bool = False
    no_correlation: bool = False
    no_log_scale: bool = False
    mask_sigma: float = 0.5
    mask_power: float = 2.0
    mask_eps: float = 1e-6
    threshold_clamp: float | None = 6.0
    p_mean: float = -1.2
    p_std: float = 1.2
    sigma_max: float = 80.0
    seed: int = 0
    log_every: int = 25
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def __post_init__(self):
        if min(self.batch_size, self.total_steps) < 1 or self.lr <= 0:
            raise ConfigError("batch_size, total_steps and lr must be positive")
        if self.decay_start is None:
            self.decay_start = self.total_steps // 2


def mask_kernel_for(cfg: TrainConfig, meta: dft.SpectrumMeta) -> MaskKernel:
    """Training-mask kernel honoring the ablation flags."""
    return build_kernel(
        dft.bin_frequencies(meta),
        sigma=cfg.mask_sigma,
        power=cfg.mask_power,
        eps=cfg.mask_eps,
        log_axis=not cfg.no_log_scale,
        correlate=not cfg.no_correlation,
    )


def sample_mask_batch(
    kernel: MaskKernel, batch_size: int, rng: np.random.Generator, cfg: TrainConfig
) -> np.ndarray:
    """One mask per example, stacked to (B, F)."""
    if cfg.no_masking:
        return np.ones((batch_size, kernel.n_bins))
    rows = [
        sample_training_mask(kernel, rng, threshold_clamp=cfg.threshold_clamp).keep
        for _ in range(batch_size)
    ]
    return np.stack(rows)


def training_loss(
    x0: np.ndarray,
    model: Model,
    keep: np.ndarray,
    sigmas: np.ndarray,
    eps: np.ndarray,
    tape: Tape | None = None,
):
    """Weighted reconstruction loss for a fixed batch and fixed randomness.

    Runs encode -> spectral mask roundtrip -> denoise and returns
    mean_b lambda(sigma_b) * mean_elem (xhat0 - x0)^2 as a tensor, plus the
    xhat0 tensor. All randomness (masks, sigmas, noise) comes from the caller,
    which keeps this function deterministic and directly testable.
    """
    B, C, T = x0.shape
    x0_t = constant(x0)
    z = encode_batch(x0_t, model.encoder, tape)
    z_masked = masked_spectral_roundtrip(z, keep, model.config.pad_factor, tape)
    x_tau = constant(x0 + sigmas[:, None, None] * eps)
    xhat = denoise_batch(z_masked, x_tau, sigmas, model.denoiser, model.precond, tape)
    diff = add(xhat, scale(x0_t, -1.0, tape), tape)
    sq = mul(diff, diff, tape)
    w = constant(loss_weight(sigmas, model.precond.sigma_data)[:, None, None] / (B * C * T))
    return tsum(mul(sq, w, tape), tape), xhat


@dataclass
class TrainLogRow:
    step: int
    loss: float
    lr: float
    mask_density: float


def train_step(
    x0: np.ndarray,
    model: Model,
    kernel: MaskKernel,
    opt: Adam,
    ema: Ema,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> tuple[float, float, float]:
    """One optimizer step on a batch; returns (pre-update loss, lr, mask density)."""
    B = x0.shape[0]
    keep = sample_mask_batch(kernel, B, rng, cfg)
    sigmas = sample_sigma(rng, cfg.p_mean, cfg.p_std, cfg.sigma_max, size=B)
    eps = rng.standard_normal(x0.shape)
    tape = Tape()
    loss_t, _ = training_loss(x0, model, keep, sigmas, eps, tape)
    loss = float(loss_t.data)
    density = float(keep.mean())
    if not np.isfinite(loss):
        raise TrainingAbortedError(opt.t, sigmas, density)
    for p in model.parameters():
        p.zero_grad()
    backward(tape, loss_t)
    lr = opt.step(grad_clip=cfg.grad_clip)
    ema.update(model)
    return loss, lr, density


def train(
    clips: np.ndarray,
    model: Model,
    cfg: TrainConfig,
    out_dir=None,
) -> tuple[Model, list[TrainLogRow]]:
    """Run the full training loop; returns the EMA model and the log rows.

    ``clips`` is the (N, C, T) training set. Checkpoints (EMA weights) and a
    CSV log are written under ``out_dir`` when given.
    """
    meta = dft.SpectrumMeta(clips.shape[2], model.config.pad_factor, model.config.frame_rate_hz)
    kernel = mask_kernel_for(cfg, meta)
    opt = Adam(
        model.parameters(),
        lr=cfg.lr,
        warmup_steps=cfg.warmup_steps,
        decay_start=cfg.decay_start,
        total_steps=cfg.total_steps,
    )
    ema = Ema(model, cfg.ema_decay)
    rng = np.random.default_rng(cfg.seed)
    rows: list[TrainLogRow] = []
    out_dir = Path(out_dir) if out_dir is not None else None
    with kernels.single_thread_blas():
        for step in range(cfg.total_steps):
            idx = rng.integers(0, clips.shape[0], size=cfg.batch_size)
            loss, lr, density = train_step(clips[idx], model, kernel, opt, ema, cfg, rng)
            if step % cfg.log_every == 0 or step == cfg.total_steps - 1:
                rows.append(TrainLogRow(step, loss, lr, density))
            if out_dir and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                ema.model.step = step + 1
                ema.model.save(out_dir / f"checkpoint_{step + 1:06d}")
    ema.model.step = cfg.total_steps
    if out_dir:
        ema.model.save(out_dir / "checkpoint")
        with open(out_dir / "train_log.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "lr", "mask_density"])
            for r in rows:
                writer.writerow([r.step, f"{r.loss:.8g}", f"{r.lr:.8g}", f"{r.mask_density:.6f}"])
    return ema.model, rows


# ---------------------------------------------------------------------------
# sampling


def _as_cond_array(z) -> np.ndarray:
    arr = z.values if isinstance(z, LatentSequence) else np.asarray(z, dtype=np.float64)
    return arr[None] if arr.ndim == 2 else arr


def ode_core(
    conds: list[tuple[float, np.ndarray]],
    schedule: NoiseSchedule,
    x_init: np.ndarray,
    denoise_fn,
    heun: bool = True,
) -> np.ndarray:
    """Sampler core: derivative = sum_i w_i * (x - xhat0_i) / sigma per step.

    ``denoise_fn(z_cond, x, sigma) -> xhat0`` supplies the model (or an
    analytic oracle in tests). Deterministic given its inputs; the Euler and
    weighted-blend paths share every arithmetic expression, so single-
    condition sampling and degenerate blends coincide bit-for-bit.
    """
    x = np.array(x_init, dtype=np.float64)

    def deriv(state, sigma):
        d = None
        for wgt, zc in conds:
            xhat = denoise_fn(zc, state, float(sigma))
            term = wgt * ((state - xhat) / sigma)
            d = term if d is None else d + term
        return d

    sig = schedule.sigmas
    with kernels.single_thread_blas():
        for i in range(schedule.n_steps):
            d = deriv(x, sig[i])
            x_next = x + (sig[i + 1] - sig[i]) * d
            if heun and sig[i + 1] > 0:
                d_next = deriv(x_next, sig[i + 1])
                x_next = x + (sig[i + 1] - sig[i]) * (0.5 * (d + d_next))
            x = x_next
            if not np.isfinite(x).all():
                raise SamplerDivergenceError(i, float(sig[i]))
    return x


def model_denoise_fn(model: Model):
    """Denoise callback over raw arrays for the sampler core."""

    def fn(z_cond: np.ndarray, x: np.ndarray, sigma: float) -> np.ndarray:
        return denoise_batch(
            Tensor(z_cond), Tensor(x), sigma, model.denoiser, model.precond
        ).data

    return fn


def weighted_ode_sample(
    conds: list[tuple[float, np.ndarray]],
    schedule: NoiseSchedule,
    model: Model,
    x_init: np.ndarray,
    heun: bool = True,
) -> np.ndarray:
    """ode_core steered by a trained model; conds are (weight, (B,C',T)) pairs."""
    return ode_core(conds, schedule, x_init, model_denoise_fn(model), heun)


def ode_sample(
    z_masked,
    schedule: NoiseSchedule,
    model: Model,
    rng: np.random.Generator,
    heun: bool = True,
) -> np.ndarray:
    """Conditional generation from pure noise; returns a (C, T) clip."""
    zc = _as_cond_array(z_masked)
    shape = (zc.shape[0], model.config.denoiser.data_channels, zc.shape[2])
    x_init = rng.standard_normal(shape) * schedule.sigma_max
    out = weighted_ode_sample([(1.0, zc)], schedule, model, x_init, heun)
    return out[0] if out.shape[0] == 1 else out


def blend_sample(
    z1_masked,
    z2_masked,
    schedule: NoiseSchedule,
    model: Model,
    alpha: float,
    beta: float,
    rng: np.random.Generator,
    heun: bool = True,
) -> np.ndarray:
    """Generation steered by two conditions with derivative alpha*d1 + beta*d2."""
    z1, z2 = _as_cond_array(z1_masked), _as_cond_array(z2_masked)
    shape = (z1.shape[0], model.config.denoiser.data_channels, z1.shape[2])
    x_init = rng.standard_normal(shape) * schedule.sigma_max
    out = weighted_ode_sample([(alpha, z1), (beta, z2)], schedule, model, x_init, heun)
    return out[0] if out.shape[0] == 1 else out
