"""Command-line interface: data synthesis, training, inspection, generation,
blending, isolation, sweeps and metrics.

Every run writes a run manifest (resolved config, seed, input/checkpoint
hashes, outputs, wall time) next to its outputs so it can be reproduced
exactly. Progress goes to stderr; data goes to files or stdout only.
Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import dft, diffusion, kernels, masking, metrics, net, tasks
from .exceptions import LatentSpecError
from .tensor import read_tensor, write_tensor


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        raise UsageError(message)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def parse_bands(spec: str) -> list[tuple[float, float]]:
    """'lo:hi[,lo:hi...]' in Hz, or the literals 'all' / 'none'."""
    spec = spec.strip().lower()
    if spec == "all":
        return [(0.0, float("inf"))]
    if spec == "none":
        return []
    bands = []
    for part in spec.split(","):
        lo, _, hi = part.partition(":")
        try:
            bands.append((float(lo), float(hi)))
        except ValueError:
            raise UsageError(f"bad band {part!r}; expected lo:hi") from None
    return bands


def parse_bins(spec: str) -> list[int]:
    try:
        return [int(p) for p in spec.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"bad bin list {spec!r}") from None


def _mask_for(args, meta: dft.SpectrumMeta) -> masking.FrequencyMask:
    given = [k for k in ("bands", "bins", "mask_json") if getattr(args, k, None)]
    if len(given) != 1:
        raise UsageError("specify exactly one of --bands, --bins, --mask-json")
    if args.bands:
        return masking.user_mask(parse_bands(args.bands), meta)
    if args.bins:
        return masking.mask_from_json(json.dumps({"bins": parse_bins(args.bins)}), meta)
    return masking.mask_from_json(Path(args.mask_json).read_text(), meta)


def _hash_bytes(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def _hash_file(path) -> str:
    return _hash_bytes(Path(path).read_bytes())


def _hash_dir(path) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(path).rglob("*")):
        if p.is_file():
            h.update(p.name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def write_run_manifest(out_dir, command, config, seed, outputs, started,
                       checkpoint=None, inputs=()):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "checkpoint_hash": _hash_dir(checkpoint) if checkpoint else None,
        "input_hashes": {str(p): _hash_file(p) for p in inputs},
        "output_paths": [str(p) for p in outputs],
        "wall_time_s": round(time.monotonic() - started, 3),
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=1))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_data(args):
    cfg = data_mod.ClipConfig(
        n_channels=args.channels,
        n_frames=args.frames,
        frame_rate_hz=args.frame_rate,
        noise_std=args.noise_std,
    )
    started = time.monotonic()
    ds = data_mod.make_dataset(args.n_clips, cfg, seed=args.seed)
    data_mod.save_dataset(ds, args.out)
    write_run_manifest(args.out, "synth-data", {**asdict(cfg), "n_clips": args.n_clips},
                       args.seed, [args.out], started)
    _log(f"wrote {args.n_clips} clips to {args.out}")
    return 0


def cmd_train(args):
    started = time.monotonic()
    ds = data_mod.load_dataset(args.data)
    _, sigma_data = data_mod.dataset_stats(ds.clips)
    model_cfg = net.ModelConfig(
        frame_rate_hz=ds.frame_rate_hz,
        pad_factor=args.pad,
        encoder=net.EncoderConfig(
            in_channels=ds.clips.shape[1],
            latent_channels=args.latent_channels,
            hidden_dim=args.enc_hidden,
            n_layers=args.enc_layers,
        ),
        denoiser=net.DenoiserConfig(
            data_channels=ds.clips.shape[1],
            latent_channels=args.latent_channels,
            hidden_dim=args.hidden,
            n_blocks=args.blocks,
            embed_channels=args.embed_channels,
        ),
    )
    model = net.Model.init(model_cfg, sigma_data, np.random.default_rng(args.seed))
    train_cfg = diffusion.TrainConfig(
        batch_size=args.batch_size,
        lr=args.lr,
        warmup_steps=args.warmup,
        total_steps=args.steps,
        no_masking=bool(args.no_masking),
        no_correlation=bool(args.no_correlation),
        no_log_scale=bool(args.no_log_scale),
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
    )
    _log(f"training {args.steps} steps on {len(ds)} clips (sigma_data={sigma_data:.4f})")
    _, rows = diffusion.train(ds.clips, model, train_cfg, out_dir=args.out)
    _log(f"final loss {rows[-1].loss:.5f}")
    write_run_manifest(args.out, "train",
                       {"model": model_cfg.to_dict(), "train": asdict(train_cfg)},
                       args.seed, [str(Path(args.out) / "checkpoint")], started,
                       inputs=[Path(args.data) / "meta.json"])
    return 0


def cmd_encode(args):
    started = time.monotonic()
    model = net.Model.load(args.checkpoint)
    clip = read_tensor(args.clip)
    z = net.encode(clip, model.encoder, model.config.frame_rate_hz)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tensor(out, z.values)
    write_run_manifest(out.parent, "encode", {"clip": str(args.clip)}, 0, [out],
                       started, checkpoint=args.checkpoint, inputs=[args.clip])
    _log(f"encoded {args.clip} -> {out}")
    return 0


def cmd_spectrum(args):
    started = time.monotonic()
    z = read_tensor(args.latent)
    seq = dft.LatentSequence(z, args.frame_rate)
    spec = dft.analyze(seq, args.pad)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stacked = np.stack([spec.coeffs.real, spec.coeffs.imag])
    write_tensor(out, stacked)
    sidecar = {"origin_len": spec.meta.origin_len, "pad_factor": spec.meta.pad_factor,
               "frame_rate_hz": spec.meta.frame_rate_hz}
    out.with_suffix(".json").write_text(json.dumps(sidecar))
    write_run_manifest(out.parent, "spectrum", sidecar, 0,
                       [out, out.with_suffix(".json")], started, inputs=[args.latent])
    _log(f"spectrum {spec.coeffs.shape} -> {out}")
    return 0


def cmd_mask_preview(args):
    meta = dft.SpectrumMeta(args.frames, args.pad, args.frame_rate)
    if args.bins:
        mask = masking.mask_from_json(json.dumps({"bins": parse_bins(args.bins)}), meta)
    else:
        mask = masking.user_mask(parse_bands(args.bands or "all"), meta)
    freqs = dft.bin_frequencies(meta)
    sink = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(sink)
        writer.writerow(["bin", "freq_hz", "keep"])
        for k in range(meta.n_bins):
            writer.writerow([k, f"{freqs[k]:.6f}", int(mask.keep[k])])
    finally:
        if args.out:
            sink.close()
    return 0


def _sampler_config(args) -> tasks.SamplerConfig:
    return tasks.SamplerConfig(n_steps=args.steps, heun=not args.euler)


def _write_generations(outs, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, g in enumerate(outs):
        p = out_dir / f"gen_{i:03d}.lft"
        write_tensor(p, g)
        paths.append(p)
    return paths


def cmd_generate(args):
    started = time.monotonic()
    model = net.Model.load(args.checkpoint)
    y = read_tensor(args.reference)
    meta = tasks.spectrum_meta(model, y.shape[1])
    mask = _mask_for(args, meta)
    outs = tasks.conditional_generate(
        y, mask, model, _sampler_config(args), n_variations=args.n_variations, seed=args.seed
    )
    paths = _write_generations(outs, args.out)
    write_run_manifest(args.out, "generate",
                       {"mask": masking.mask_to_json(mask), "steps": args.steps,
                        "heun": not args.euler, "n_variations": args.n_variations},
                       args.seed, paths, started, checkpoint=args.checkpoint,
                       inputs=[args.reference])
    _log(f"wrote {len(paths)} variation(s) to {args.out}")
    return 0


def cmd_blend(args):
    started = time.monotonic()
    model = net.Model.load(args.checkpoint)
    y1, y2 = read_tensor(args.reference_a), read_tensor(args.reference_b)
    meta = tasks.spectrum_meta(model, y1.shape[1])
    m1 = masking.user_mask(parse_bands(args.bands_a), meta)
    m2 = masking.user_mask(parse_bands(args.bands_b), meta)
    outs = tasks.blend(y1, y2, m1, m2, args.alpha, args.beta, model,
                       _sampler_config(args), n_variations=args.n_variations, seed=args.seed)
    paths = _write_generations(outs, args.out)
    write_run_manifest(args.out, "blend",
                       {"bands_a": args.bands_a, "bands_b": args.bands_b,
                        "alpha": args.alpha, "beta": args.beta, "steps": args.steps,
                        "heun": not args.euler, "n_variations": args.n_variations},
                       args.seed, paths, started, checkpoint=args.checkpoint,
                       inputs=[args.reference_a, args.reference_b])
    _log(f"wrote {len(paths)} blend(s) to {args.out}")
    return 0


def cmd_isolate(args):
    started = time.monotonic()
    model = net.Model.load(args.checkpoint)
    y = read_tensor(args.reference)
    bands = parse_bands(args.band)
    if len(bands) != 1:
        raise UsageError("--band takes exactly one lo:hi range")
    outs = tasks.isolate(y, bands[0], args.alpha, args.beta, model,
                         _sampler_config(args), n_variations=args.n_variations, seed=args.seed)
    paths = _write_generations(outs, args.out)
    write_run_manifest(args.out, "isolate",
                       {"band": args.band, "alpha": args.alpha, "beta": args.beta,
                        "steps": args.steps, "heun": not args.euler,
                        "n_variations": args.n_variations},
                       args.seed, paths, started, checkpoint=args.checkpoint,
                       inputs=[args.reference])
    _log(f"wrote {len(paths)} isolation(s) to {args.out}")
    return 0


def cmd_sweep(args):
    started = time.monotonic()
    model = net.Model.load(args.checkpoint)
    ds = data_mod.load_dataset(args.data)
    clip = ds.clip(args.clip_index)
    res = tasks.sweep(clip, model, _sampler_config(args),
                      window_bins=args.window_bins, stride=args.stride,
                      seed=args.seed, smooth_std=args.smooth_std)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "sweep.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["window_start", "center_hz"]
        header += [f"raw:{l}" for l in res.labels] + [f"smooth:{l}" for l in res.labels]
        writer.writerow(header)
        for i in range(len(res.window_starts)):
            row = [int(res.window_starts[i]), f"{res.centers_hz[i]:.6f}"]
            row += [f"{v:.6f}" for v in res.raw[i]] + [f"{v:.6f}" for v in res.smoothed[i]]
            writer.writerow(row)
    write_run_manifest(args.out, "sweep",
                       {"clip_index": args.clip_index, "window_bins": args.window_bins,
                        "stride": args.stride, "smooth_std": args.smooth_std,
                        "steps": args.steps},
                       args.seed, [path], started, checkpoint=args.checkpoint)
    _log(f"sweep over {len(res.window_starts)} windows -> {path}")
    return 0


def cmd_metrics(args):
    started = time.monotonic()
    rows = []
    pair_specs = [json.loads(line) for line in Path(args.pairs).read_text().splitlines() if line.strip()]
    for spec in pair_specs:
        ref = read_tensor(spec["reference"])
        gen = read_tensor(spec["generation"])
        band = tuple(spec["band"])
        kind = spec.get("kind", "loudness")
        value = metrics.band_adherence(ref, gen, band, kind, args.frame_rate)
        rows.append({
            "task": spec.get("task", "generate"),
            "band": f"{band[0]:g}:{band[1]:g}",
            "metric": kind,
            "reference": spec["reference"],
            "generation": spec["generation"],
            "value": value,
        })
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows_path = out_dir / "rows.csv"
    with open(rows_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["task", "band", "metric", "reference", "generation", "value"])
        writer.writeheader()
        writer.writerows(rows)
    agg_path = out_dir / "aggregate.csv"
    agg = metrics.aggregate(rows)
    with open(agg_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["task", "band", "metric", "count", "mean", "std"])
        writer.writeheader()
        writer.writerows(agg)
    write_run_manifest(args.out, "metrics", {"pairs": str(args.pairs)}, 0,
                       [rows_path, agg_path], started, inputs=[args.pairs])
    _log(f"{len(rows)} rows -> {rows_path}")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing

DEFAULTS = {
    "synth-data": {"n_clips": 4096, "channels": 16, "frames": 256, "frame_rate": 64.0,
                   "noise_std": 0.05, "seed": 0},
    "train": {"steps": 2000, "batch_size": 16, "lr": 1e-4, "warmup": 100,
              "latent_channels": 16, "enc_hidden": 128, "enc_layers": 4,
              "hidden": 48, "blocks": 6, "embed_channels": 16, "pad": 2,
              "checkpoint_every": 0, "seed": 0, "no_masking": False,
              "no_correlation": False, "no_log_scale": False},
    "mask-preview": {"frames": 256, "pad": 2, "frame_rate": 64.0},
    "spectrum": {"pad": 2, "frame_rate": 64.0},
    "generate": {"n_variations": 1, "seed": 0, "steps": 32, "euler": False},
    "blend": {"n_variations": 1, "seed": 0, "steps": 32, "euler": False,
              "alpha": 0.5, "beta": 0.5},
    "isolate": {"n_variations": 1, "seed": 0, "steps": 32, "euler": False,
                "alpha": 0.5, "beta": 0.5},
    "sweep": {"clip_index": 0, "window_bins": 10, "stride": 8, "smooth_std": 2.0,
              "seed": 0, "steps": 32, "euler": False},
    "metrics": {"frame_rate": 64.0},
}


def build_parser() -> Parser:
    parser = Parser(prog="latentspec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--threads", type=int, default=None, help="cap worker threads")
        p.add_argument("--config", default=None, help="JSON config file (defaults < config < flags)")

    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-clips", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--frame-rate", type=float)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup", type=int)
    p.add_argument("--latent-channels", type=int)
    p.add_argument("--enc-hidden", type=int)
    p.add_argument("--enc-layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--embed-channels", type=int)
    p.add_argument("--pad", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-masking", action="store_const", const=True)
    p.add_argument("--no-correlation", action="store_const", const=True)
    p.add_argument("--no-log-scale", action="store_const", const=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode a clip into a latent sequence")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("spectrum", help="latent spectrum of a latent tensor")
    common(p)
    p.add_argument("--latent", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pad", type=int)
    p.add_argument("--frame-rate", type=float)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("mask-preview", help="realized bins of a mask spec as CSV")
    common(p)
    p.add_argument("--bands", help="lo:hi[,lo:hi...] in Hz, or all/none")
    p.add_argument("--bins", help="explicit bin indices, comma separated")
    p.add_argument("--frames", type=int)
    p.add_argument("--pad", type=int)
    p.add_argument("--frame-rate", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mask_preview)

    def gen_common(p):
        common(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--n-variations", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--euler", action="store_const", const=True)

    p = sub.add_parser("generate", help="conditional generation from a reference")
    gen_common(p)
    p.add_argument("--reference", required=True)
    p.add_argument("--bands")
    p.add_argument("--bins")
    p.add_argument("--mask-json")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("blend", help="blend two references")
    gen_common(p)
    p.add_argument("--reference-a", required=True)
    p.add_argument("--reference-b", required=True)
    p.add_argument("--bands-a", required=True)
    p.add_argument("--bands-b", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_blend)

    p = sub.add_parser("isolate", help="boost one latent band of a reference")
    gen_common(p)
    p.add_argument("--reference", required=True)
    p.add_argument("--band", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_isolate)

    p = sub.add_parser("sweep", help="preservation curves over latent-frequency windows")
    gen_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--clip-index", type=int)
    p.add_argument("--window-bins", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--smooth-std", type=float)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("metrics", help="bandpassed adherence for (ref, gen, band) rows")
    common(p)
    p.add_argument("--pairs", required=True, help="JSONL: reference, generation, band, kind")
    p.add_argument("--out", required=True)
    p.add_argument("--frame-rate", type=float)
    p.set_defaults(func=cmd_metrics)

    return parser


def _apply_config(args) -> None:
    """Fill unset (None) options from the config file, then the defaults table."""
    table = dict(DEFAULTS.get(args.command, {}))
    if getattr(args, "config", None):
        table.update(json.loads(Path(args.config).read_text()))
    for key, value in table.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config(args)
        if getattr(args, "threads", None):
            kernels.set_num_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (LatentSpecError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
