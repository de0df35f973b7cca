"""Calibration driver: trains a desk-scale model and reports the margins the
acceptance criteria rely on. Not part of the test suite; run manually to pick
step budgets before committing to thresholds."""

import json
import sys
import time

import numpy as np

from latentspec import dft, metrics
from latentspec.data import make_dataset
from latentspec.diffusion import TrainConfig, karras_schedule, train, weighted_ode_sample
from latentspec.net import DenoiserConfig, EncoderConfig, Model, ModelConfig
from latentspec.tasks import sweep

STEPS = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
OUT = sys.argv[2] if len(sys.argv) > 2 else "/tmp/calib"

LEAN = ModelConfig(
    encoder=EncoderConfig(16, 16, 64, 3),
    denoiser=DenoiserConfig(16, 16, 48, 6, embed_channels=16),
)


def batched_generate(model, clips, mask_keep, seed, n_steps=32):
    """One variation per clip, conditions batched for speed."""
    n = clips.shape[0]
    conds = np.empty((n, 16, 256))
    for i in range(n):
        from latentspec.net import encode

        z = encode(clips[i], model.encoder, model.config.frame_rate_hz)
        spec = dft.analyze(z, model.config.pad_factor)
        masked = dft.LatentSpectrum(spec.coeffs * mask_keep, spec.meta)
        conds[i] = dft.synthesize(masked).values
    x_init = np.empty_like(clips)
    for i in range(n):
        x_init[i] = np.random.default_rng([seed, i]).standard_normal((16, 256)) * 80.0
    return weighted_ode_sample([(1.0, conds)], karras_schedule(n_steps), model, x_init)


def main():
    t_start = time.time()
    ds = make_dataset(4096, seed=0)
    holdout = make_dataset(64, seed=1)
    print(f"data: {time.time()-t_start:.1f}s", flush=True)

    model = Model.init(LEAN, 1.0, np.random.default_rng(0))
    cfg = TrainConfig(batch_size=16, total_steps=STEPS, warmup_steps=100,
                      seed=0, log_every=10)
    t0 = time.time()
    ema_model, rows = train(ds.clips, model, cfg, out_dir=OUT)
    train_time = time.time() - t0
    losses = np.array([r.loss for r in rows])
    k = max(1, 50 // cfg.log_every)
    first = losses[:k].mean()
    last = losses[-k:].mean()
    print(f"train {STEPS} steps: {train_time/60:.1f} min; loss {first:.3f} -> {last:.3f} "
          f"(ratio {first/last:.1f}x)", flush=True)

    meta = dft.SpectrumMeta(256, 2, 64.0)
    F = meta.n_bins

    # reconstruction: all-ones vs all-zeros mask on 8 training clips
    refs = ds.clips[:8]
    ones = batched_generate(ema_model, refs, np.ones(F), seed=100)
    zeros = batched_generate(ema_model, refs, np.zeros(F), seed=100)
    rel = lambda gen: np.linalg.norm(gen - refs) / np.linalg.norm(refs)
    r_ones, r_zeros = rel(ones), rel(zeros)
    print(f"recon rel err: ones {r_ones:.3f} zeros {r_zeros:.3f} "
          f"(ratio {r_zeros/r_ones:.1f}x)", flush=True)

    # adherence: 4-band partition on holdout clips
    bands = dft.log_band_partition(4, meta)
    refs = holdout.clips
    in_band, out_band = [], []
    for bi, band in enumerate(bands):
        keep = np.zeros(F)
        keep[dft.band_to_bins(band[0], band[1], meta)] = 1.0
        gens = batched_generate(ema_model, refs, keep, seed=200 + bi)
        for i in range(len(refs)):
            for bj, other in enumerate(bands):
                v = metrics.band_adherence(refs[i], gens[i], other, "loudness", 64.0)
                if np.isnan(v):
                    continue
                (in_band if bj == bi else out_band).append(v)
        print(f"band {bi} done {time.time()-t_start:.0f}s", flush=True)
    in_m, out_m = np.mean(in_band), np.mean(out_band)
    print(f"adherence: in {in_m:.3f} out {out_m:.3f} margin {in_m-out_m:.3f}", flush=True)

    # sweep separation on 8 holdout clips
    wins = 0
    for i in range(8):
        clip = holdout.clip(i)
        res = sweep(clip, ema_model, window_bins=10, stride=16, seed=300 + i)
        slow = [k for k, r in enumerate(clip.attributes) if r.rate_hz < 1.0]
        fast = [k for k, r in enumerate(clip.attributes) if r.rate_hz > 8.0]
        s_arg = res.argmax_center(slow[0])
        f_arg = res.argmax_center(fast[0])
        wins += int(s_arg < f_arg)
        print(f"clip {i}: slow argmax {s_arg:.2f} Hz, fast argmax {f_arg:.2f} Hz", flush=True)
    print(f"sweep separation: {wins}/8", flush=True)

    result = {
        "steps": STEPS,
        "train_min": train_time / 60,
        "loss_first": float(first),
        "loss_last": float(last),
        "recon_ones": float(r_ones),
        "recon_zeros": float(r_zeros),
        "adh_in": float(in_m),
        "adh_out": float(out_m),
        "sweep_wins": wins,
        "total_min": (time.time() - t_start) / 60,
    }
    with open(f"{OUT}/calib.json", "w") as fh:
        json.dump(result, fh, indent=1)
    print(json.dumps(result, indent=1), flush=True)


if __name__ == "__main__":
    main()
