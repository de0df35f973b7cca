"""Bandpassed-descriptor adherence between a reference clip and a generation.

Two descriptor time series are extracted per clip: a loudness curve
(per-frame log energy) and an onset-strength envelope (rectified first
difference of channel magnitudes). Both are bandpassed with a hard DFT mask
over the requested latent-frequency band; loudness adherence is the Pearson
correlation of the bandpassed curves, rhythm adherence is the cosine
similarity of their beat spectra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dft import SpectrumMeta, band_to_bins
from .exceptions import ConfigError, DimensionError

LOUDNESS_FLOOR = 1e-8
DESCRIPTOR_KINDS = ("loudness", "onset")


@dataclass
class DescriptorSignal:
    values: np.ndarray  # length T
    kind: str
    frame_rate_hz: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.kind not in DESCRIPTOR_KINDS:
            raise ConfigError(f"unknown descriptor kind {self.kind!r}")


def loudness_descriptor(x: np.ndarray, frame_rate_hz: float) -> DescriptorSignal:
    """Per-frame log energy: log(floor + sum_c x[c,t]^2)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return DescriptorSignal(np.log(LOUDNESS_FLOOR + (x**2).sum(axis=0)), "loudness", frame_rate_hz)


def onset_descriptor(x: np.ndarray, frame_rate_hz: float) -> DescriptorSignal:
    """Half-wave-rectified first difference of |x|, summed over channels."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    mag = np.abs(x)
    onset = np.zeros(x.shape[1])
    onset[1:] = np.maximum(0.0, mag[:, 1:] - mag[:, :-1]).sum(axis=0)
    return DescriptorSignal(onset, "onset", frame_rate_hz)


def descriptor(x: np.ndarray, kind: str, frame_rate_hz: float) -> DescriptorSignal:
    if kind == "loudness":
        return loudness_descriptor(x, frame_rate_hz)
    if kind == "onset":
        return onset_descriptor(x, frame_rate_hz)
    raise ConfigError(f"unknown descriptor kind {kind!r}")


def bandpass_series(values: np.ndarray, band_hz: tuple[float, float], frame_rate_hz: float) -> np.ndarray:
    """Hard DFT mask: zero every bin outside [lo, hi) of the series' own grid."""
    values = np.asarray(values, dtype=np.float64)
    meta = SpectrumMeta(values.shape[0], 1, frame_rate_hz)
    keep = np.zeros(meta.n_bins)
    keep[band_to_bins(band_hz[0], band_hz[1], meta)] = 1.0
    spec = np.fft.rfft(values) * keep
    return np.fft.irfft(spec, n=values.shape[0])


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Correlation coefficient; NaN when either side has zero variance."""
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return float("nan")
    return float(np.dot(a, b) / (na * nb))


def beat_spectrum(onset_values: np.ndarray) -> np.ndarray:
    """Power spectrum of the onset envelope (DC removed)."""
    v = onset_values - onset_values.mean()
    return np.abs(np.fft.rfft(v)) ** 2


def band_adherence(
    ref: np.ndarray,
    gen: np.ndarray,
    band_hz: tuple[float, float],
    kind: str,
    frame_rate_hz: float,
) -> float:
    """Similarity of bandpassed descriptors; NaN sentinel when degenerate.

    kind="loudness": Pearson correlation of the bandpassed loudness curves.
    kind="onset": cosine similarity of beat spectra of the bandpassed onset
    envelopes.
    """
    ref = np.asarray(ref, dtype=np.float64)
    gen = np.asarray(gen, dtype=np.float64)
    if ref.shape != gen.shape:
        raise DimensionError(f"clip shapes differ: {ref.shape} vs {gen.shape}")
    nyq = frame_rate_hz / 2.0
    if band_hz[0] >= nyq:
        raise ConfigError(f"band {band_hz} entirely above descriptor Nyquist {nyq}")
    d_ref = descriptor(ref, kind, frame_rate_hz).values
    d_gen = descriptor(gen, kind, frame_rate_hz).values
    bp_ref = bandpass_series(d_ref, band_hz, frame_rate_hz)
    bp_gen = bandpass_series(d_gen, band_hz, frame_rate_hz)
    if kind == "loudness":
        return pearson(bp_ref, bp_gen)
    b_ref, b_gen = beat_spectrum(bp_ref), beat_spectrum(bp_gen)
    n_ref, n_gen = np.linalg.norm(b_ref), np.linalg.norm(b_gen)
    if n_ref == 0.0 or n_gen == 0.0:
        return float("nan")
    return float(np.dot(b_ref, b_gen) / (n_ref * n_gen))


def aggregate(rows: list[dict]) -> list[dict]:
    """Mean/std/count per (task, band, metric); NaN sentinels are excluded.

    Rows need keys task, band, metric, value. Output order is sorted by the
    group key, so repeated runs produce identical tables.
    """
    if not rows:
        raise ConfigError("nothing to aggregate")
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        key = (str(row["task"]), str(row["band"]), str(row["metric"]))
        groups.setdefault(key, [])
        v = float(row["value"])
        if np.isfinite(v):
            groups[key].append(v)
    out = []
    for key in sorted(groups):
        vals = np.asarray(groups[key])
        out.append(
            {
                "task": key[0],
                "band": key[1],
                "metric": key[2],
                "count": int(vals.size),
                "mean": float(vals.mean()) if vals.size else float("nan"),
                "std": float(vals.std()) if vals.size else float("nan"),
            }
        )
    return out
