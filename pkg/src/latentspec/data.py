"""Synthetic multi-timescale clips with ground-truth pattern records.

Every clip is a sum of patterns drawn from three rate pools (slow envelopes,
mid-rate pulse trains, fast trills between adjacent channel rows) plus white
noise. The generating records are kept alongside the signal so adherence and
preservation can be measured against construction-time truth instead of
learned feature extractors.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .tensor import read_tensor, write_tensor


@dataclass
class PatternRecord:
    kind: str  # envelope | pulse | trill
    rate_hz: float
    channel_span: tuple[int, int]  # [lo, hi)
    amplitude: float
    phase: float

    def __post_init__(self):
        if self.kind not in ("envelope", "pulse", "trill"):
            raise ConfigError(f"unknown pattern kind {self.kind!r}")
        if self.rate_hz <= 0:
            raise ConfigError("rate_hz must be positive")
        self.channel_span = (int(self.channel_span[0]), int(self.channel_span[1]))


@dataclass
class ToyClip:
    signal: np.ndarray  # (C, T)
    attributes: list[PatternRecord]
    frame_rate_hz: float


@dataclass
class ClipConfig:
    n_channels: int = 16
    n_frames: int = 256
    frame_rate_hz: float = 64.0
    n_slow: int = 1
    n_mid: int = 1
    n_fast: int = 1
    slow_rate: tuple[float, float] = (0.2, 0.9)
    mid_rate: tuple[float, float] = (1.5, 6.0)
    fast_rate: tuple[float, float] = (9.0, 24.0)
    amplitude: tuple[float, float] = (0.6, 1.4)
    noise_std: float = 0.05

    def __post_init__(self):
        nyq = self.frame_rate_hz / 2.0
        if min(self.n_slow, self.n_mid, self.n_fast) < 1:
            raise ConfigError("need at least one pattern per rate pool")
        if not (self.slow_rate[1] < 1.0 <= self.mid_rate[0]):
            raise ConfigError("slow pool must sit below 1 Hz, mid pool at or above")
        if not (self.mid_rate[1] <= 8.0 < self.fast_rate[0]):
            raise ConfigError("mid pool must end by 8 Hz, fast pool above")
        if self.fast_rate[1] >= nyq:
            raise ConfigError(f"fast rates must stay below Nyquist ({nyq} Hz)")


def pattern_field(record: PatternRecord, config: ClipConfig) -> np.ndarray:
    """The isolated (C, T) contribution a record adds to a clip."""
    C, T, fr = config.n_channels, config.n_frames, config.frame_rate_hz
    lo, hi = record.channel_span
    if not 0 <= lo < hi <= C:
        raise ConfigError(f"channel span {record.channel_span} outside [0, {C})")
    t = np.arange(T) / fr
    out = np.zeros((C, T))
    osc = np.sin(2 * np.pi * record.rate_hz * t + record.phase)
    if record.kind == "envelope":
        out[lo:hi] = record.amplitude * (0.5 + 0.5 * osc)
    elif record.kind == "pulse":
        period_frames = fr / record.rate_hz
        width = max(1.5, 0.15 * period_frames)
        cycle = (np.arange(T) / period_frames + record.phase / (2 * np.pi)) % 1.0
        dist = ((cycle + 0.5) % 1.0 - 0.5) * period_frames
        out[lo:hi] = record.amplitude * np.exp(-(dist**2) / (2 * width**2))
    else:  # trill: energy alternates between two adjacent rows
        if hi - lo != 2:
            raise ConfigError("trill span must cover exactly 2 rows")
        out[lo] = record.amplitude * (0.5 + 0.5 * osc)
        out[lo + 1] = record.amplitude * (0.5 - 0.5 * osc)
    return out


def pattern_envelope(field: np.ndarray, record: PatternRecord) -> np.ndarray:
    """Length-T activity series of a pattern inside a (C, T) signal.

    Envelope and pulse patterns move all their span rows together, so the
    span mean tracks them; a trill moves its two rows in antiphase, so the
    row difference oscillates at the trill rate.
    """
    lo, hi = record.channel_span
    if record.kind == "trill":
        return field[lo] - field[lo + 1]
    return field[lo:hi].mean(axis=0)


def pattern_template(record: PatternRecord, config: ClipConfig) -> np.ndarray:
    """Ground-truth activity series the record would produce on its own."""
    return pattern_envelope(pattern_field(record, config), record)


def _draw_span(rng, width, n_channels):
    start = int(rng.integers(0, n_channels - width + 1))
    return (start, start + width)


def generate_clip(rng: np.random.Generator, config: ClipConfig) -> ToyClip:
    """One clip: slow envelopes + mid pulses + fast trills + white noise."""
    records: list[PatternRecord] = []
    pools = (
        ("envelope", config.n_slow, config.slow_rate),
        ("pulse", config.n_mid, config.mid_rate),
        ("trill", config.n_fast, config.fast_rate),
    )
    for kind, count, (r_lo, r_hi) in pools:
        for _ in range(count):
            rate = float(rng.uniform(r_lo, r_hi))
            if kind == "trill":
                span = _draw_span(rng, 2, config.n_channels)
            else:
                width = int(rng.integers(4, min(9, config.n_channels + 1)))
                span = _draw_span(rng, width, config.n_channels)
            records.append(
                PatternRecord(
                    kind=kind,
                    rate_hz=rate,
                    channel_span=span,
                    amplitude=float(rng.uniform(*config.amplitude)),
                    phase=float(rng.uniform(0.0, 2 * np.pi)),
                )
            )
    signal = np.zeros((config.n_channels, config.n_frames))
    for rec in records:
        signal += pattern_field(rec, config)
    if config.noise_std:
        signal += config.noise_std * rng.standard_normal(signal.shape)
    return ToyClip(signal, records, config.frame_rate_hz)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    clips: np.ndarray  # (N, C, T), standardized
    records: list[list[PatternRecord]]
    frame_rate_hz: float
    seed: int
    mean: float
    std: float
    config: ClipConfig = field(default_factory=ClipConfig)

    def __len__(self) -> int:
        return self.clips.shape[0]

    def clip(self, i: int) -> ToyClip:
        return ToyClip(self.clips[i], self.records[i], self.frame_rate_hz)


def dataset_stats(clips: np.ndarray) -> tuple[float, float]:
    """Streaming per-element mean/std over every element of every clip."""
    clips = np.asarray(clips)
    if clips.size == 0:
        raise ConfigError("dataset is empty")
    count = 0
    mean = 0.0
    m2 = 0.0
    for clip in clips.reshape(clips.shape[0], -1):
        for block in np.array_split(clip, max(1, clip.size // 4096)):
            n = block.size
            b_mean = block.mean()
            b_m2 = ((block - b_mean) ** 2).sum()
            delta = b_mean - mean
            tot = count + n
            mean += delta * n / tot
            m2 += b_m2 + delta**2 * count * n / tot
            count = tot
    return float(mean), float(np.sqrt(m2 / count))


def make_dataset(n_clips: int, config: ClipConfig | None = None, seed: int = 0) -> Dataset:
    """Generate, then standardize to zero mean / unit std across the dataset.

    Clip i draws from its own generator seeded by (seed, i), so the dataset is
    reproducible regardless of generation order.
    """
    config = config or ClipConfig()
    signals = np.empty((n_clips, config.n_channels, config.n_frames))
    records = []
    for i in range(n_clips):
        clip = generate_clip(np.random.default_rng([seed, i]), config)
        signals[i] = clip.signal
        records.append(clip.attributes)
    mean, std = dataset_stats(signals)
    if std <= 0:
        raise ConfigError("dataset has zero variance; cannot standardize")
    signals = (signals - mean) / std
    return Dataset(signals, records, config.frame_rate_hz, seed, mean, std, config)


def save_dataset(ds: Dataset, directory) -> None:
    directory = Path(directory)
    (directory / "clips").mkdir(parents=True, exist_ok=True)
    for i in range(len(ds)):
        write_tensor(directory / "clips" / f"clip_{i:05d}.lft", ds.clips[i], dtype=np.float32)
    with open(directory / "patterns.jsonl", "w") as fh:
        for i, recs in enumerate(ds.records):
            fh.write(json.dumps({"clip": i, "patterns": [asdict(r) for r in recs]}) + "\n")
    meta = {
        "n_clips": len(ds),
        "seed": ds.seed,
        "mean": ds.mean,
        "std": ds.std,
        "frame_rate_hz": ds.frame_rate_hz,
        "config": asdict(ds.config),
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=1))


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    n = meta["n_clips"]
    clips = np.stack([read_tensor(directory / "clips" / f"clip_{i:05d}.lft") for i in range(n)])
    records: list[list[PatternRecord]] = [[] for _ in range(n)]
    with open(directory / "patterns.jsonl") as fh:
        for line in fh:
            obj = json.loads(line)
            records[obj["clip"]] = [PatternRecord(**p) for p in obj["patterns"]]
    cfg = ClipConfig(**meta["config"])
    return Dataset(clips, records, meta["frame_rate_hz"], meta["seed"], meta["mean"], meta["std"], cfg)
