import time

import numpy as np
import pytest
from _oracles import two_pass_stats

from latentspec.data import (
    ClipConfig,
    PatternRecord,
    dataset_stats,
    generate_clip,
    load_dataset,
    make_dataset,
    pattern_envelope,
    pattern_field,
    pattern_template,
    save_dataset,
)
from latentspec.exceptions import ConfigError

CFG = ClipConfig()


def test_zero_patterns_zero_noise_is_zero_clip():
    cfg = ClipConfig(noise_std=0.0)
    clip = generate_clip(np.random.default_rng(0), cfg)
    manual = np.zeros_like(clip.signal)
    for rec in clip.attributes:
        manual += pattern_field(rec, cfg)
    np.testing.assert_allclose(clip.signal, manual, atol=1e-12)
    # and a record-free signal is exactly zero
    assert np.all(manual - sum(pattern_field(r, cfg) for r in clip.attributes) == 0)


def test_pattern_kinds_validated():
    with pytest.raises(ConfigError):
        PatternRecord("wiggle", 1.0, (0, 4), 1.0, 0.0)
    with pytest.raises(ConfigError):
        PatternRecord("pulse", -1.0, (0, 4), 1.0, 0.0)
    with pytest.raises(ConfigError):
        pattern_field(PatternRecord("trill", 10.0, (0, 4), 1.0, 0.0), CFG)


def test_config_pools_validated():
    with pytest.raises(ConfigError):
        ClipConfig(fast_rate=(9.0, 40.0))  # above Nyquist at 64 fps
    with pytest.raises(ConfigError):
        ClipConfig(slow_rate=(0.5, 1.5))  # slow pool crossing 1 Hz
    with pytest.raises(ConfigError):
        ClipConfig(n_mid=0)


def test_pulse_pattern_envelope_peaks_at_its_rate():
    rec = PatternRecord("pulse", 4.0, (2, 6), 1.0, 0.3)
    env = pattern_envelope(pattern_field(rec, CFG), rec)
    spec = np.abs(np.fft.rfft(env - env.mean()))
    freqs = np.fft.rfftfreq(CFG.n_frames, d=1.0 / CFG.frame_rate_hz)
    assert abs(freqs[int(np.argmax(spec))] - 4.0) <= CFG.frame_rate_hz / CFG.n_frames


@pytest.mark.parametrize("kind,rate", [("envelope", 0.43), ("pulse", 3.7), ("trill", 17.3)])
def test_timescale_fidelity_energy_near_rate(kind, rate):
    # >= 80% of envelope energy within one bin of the pattern rate
    span = (3, 5) if kind == "trill" else (2, 8)
    rec = PatternRecord(kind, rate, span, 1.1, 1.0)
    env = pattern_envelope(pattern_field(rec, CFG), rec)
    env = env - env.mean()
    spec = np.abs(np.fft.rfft(env)) ** 2
    freqs = np.fft.rfftfreq(CFG.n_frames, d=1.0 / CFG.frame_rate_hz)
    df = CFG.frame_rate_hz / CFG.n_frames
    near = np.abs(freqs - rate) <= df
    assert spec[near].sum() >= 0.8 * spec.sum()


def test_generated_patterns_cover_all_pools():
    clip = generate_clip(np.random.default_rng(1), CFG)
    kinds = {r.kind for r in clip.attributes}
    assert kinds == {"envelope", "pulse", "trill"}
    for r in clip.attributes:
        assert r.rate_hz < CFG.frame_rate_hz / 2
        if r.kind == "envelope":
            assert r.rate_hz < 1.0
        elif r.kind == "pulse":
            assert 1.0 <= r.rate_hz <= 8.0
        else:
            assert r.rate_hz > 8.0


def test_template_matches_envelope_of_field():
    rec = PatternRecord("trill", 12.0, (0, 2), 0.8, 0.5)
    np.testing.assert_allclose(
        pattern_template(rec, CFG),
        pattern_envelope(pattern_field(rec, CFG), rec),
        atol=1e-12,
    )


def test_dataset_stats_matches_two_pass_oracle():
    rng = np.random.default_rng(2)
    clips = rng.standard_normal((17, 3, 50)) * 2.3 + 0.7
    mean, std = dataset_stats(clips)
    want_mean, want_std = two_pass_stats(clips)
    assert mean == pytest.approx(want_mean, abs=1e-9)
    assert std == pytest.approx(want_std, abs=1e-9)


def test_dataset_stats_constant_dataset_reports_zero_std():
    mean, std = dataset_stats(np.full((4, 2, 8), 3.0))
    assert (mean, std) == (3.0, 0.0)
    with pytest.raises(ConfigError):
        make_dataset(2, ClipConfig(noise_std=0.0, amplitude=(0.0, 0.0)), seed=0)


def test_make_dataset_standardized_and_fast():
    t0 = time.monotonic()
    ds = make_dataset(512, seed=3)
    elapsed = time.monotonic() - t0
    assert elapsed < 10.0
    mean, std = dataset_stats(ds.clips)
    assert abs(mean) < 1e-9
    assert std == pytest.approx(1.0, abs=1e-9)
    assert 0.2 <= std <= 2.0


def test_dataset_reproducible_and_order_independent():
    a = make_dataset(8, seed=5)
    b = make_dataset(8, seed=5)
    np.testing.assert_array_equal(a.clips, b.clips)
    # clip i depends only on (seed, i): a smaller dataset shares its prefix
    small = make_dataset(4, seed=5)
    for i in range(4):
        g_big = a.clips[i] * a.std + a.mean
        g_small = small.clips[i] * small.std + small.mean
        np.testing.assert_allclose(g_big, g_small, atol=1e-12)


def test_save_load_roundtrip(tmp_path):
    ds = make_dataset(6, seed=7)
    save_dataset(ds, tmp_path / "ds")
    again = load_dataset(tmp_path / "ds")
    assert len(again) == 6
    np.testing.assert_allclose(again.clips, ds.clips, atol=1e-6)  # f32 storage
    assert again.records[3] == ds.records[3]
    assert again.frame_rate_hz == ds.frame_rate_hz
    clip = again.clip(2)
    assert clip.signal.shape == (16, 256)
    assert clip.attributes == ds.records[2]


def test_saved_dataset_bytes_reproducible(tmp_path):
    for name in ("x", "y"):
        save_dataset(make_dataset(5, seed=11), tmp_path / name)
    for rel in ["meta.json", "patterns.jsonl", "clips/clip_00002.lft"]:
        assert (tmp_path / "x" / rel).read_bytes() == (tmp_path / "y" / rel).read_bytes()
