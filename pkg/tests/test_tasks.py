import numpy as np
import pytest

from latentspec.data import ClipConfig, PatternRecord, ToyClip, pattern_field
from latentspec.dft import SpectrumMeta
from latentspec.exceptions import ConfigError
from latentspec.masking import FrequencyMask, user_mask
from latentspec.net import DenoiserConfig, EncoderConfig, Model, ModelConfig
from latentspec.tasks import (
    SamplerConfig,
    TaskRequest,
    blend,
    conditional_generate,
    condition_latent,
    gaussian_smooth,
    isolate,
    matched_filter_preservation,
    sweep,
)

CFG = ModelConfig(
    frame_rate_hz=64.0,
    pad_factor=2,
    encoder=EncoderConfig(in_channels=4, latent_channels=4, hidden_dim=8, n_layers=2),
    denoiser=DenoiserConfig(4, 4, hidden_dim=8, n_blocks=2, embed_channels=4),
)
FAST = SamplerConfig(n_steps=4)


@pytest.fixture(scope="module")
def model():
    return Model.init(CFG, 1.0, np.random.default_rng(0), zero_out=False)


@pytest.fixture(scope="module")
def clip():
    return np.random.default_rng(1).standard_normal((4, 32))


def _meta():
    return SpectrumMeta(32, 2, 64.0)


def test_blend_of_clip_with_itself_equals_generate(model, clip):
    mask = user_mask([(0.0, 5.0)], _meta())
    gen = conditional_generate(clip, mask, model, FAST, n_variations=2, seed=3)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mix = blend(clip, clip, mask, mask, 0.5, 0.5, model, FAST, n_variations=2, seed=3)
    for g, m in zip(gen, mix):
        assert np.array_equal(g, m)


def test_blend_alpha1_beta0_equals_generate_on_first(model, clip):
    other = np.random.default_rng(2).standard_normal((4, 32))
    m1 = user_mask([(0.0, 4.0)], _meta())
    m2 = user_mask([(8.0, 30.0)], _meta())
    gen = conditional_generate(clip, m1, model, FAST, seed=9)
    mix = blend(clip, other, m1, m2, 1.0, 0.0, model, FAST, seed=9)
    assert np.array_equal(gen[0], mix[0])


def test_isolate_beta0_equals_full_mask_generate(model, clip):
    full = FrequencyMask(np.ones(_meta().n_bins))
    gen = conditional_generate(clip, full, model, FAST, seed=5)
    iso = isolate(clip, (1.0, 9.0), 1.0, 0.0, model, FAST, seed=5)
    assert np.array_equal(gen[0], iso[0])


def test_isolate_rejects_all_zero_weights(model, clip):
    with pytest.raises(ConfigError):
        isolate(clip, (1.0, 4.0), 0.0, 0.0, model, FAST)


def test_seed_isolation_variation_independent_of_count(model, clip):
    mask = user_mask([(0.0, 10.0)], _meta())
    one = conditional_generate(clip, mask, model, FAST, n_variations=1, seed=11)
    many = conditional_generate(clip, mask, model, FAST, n_variations=3, seed=11)
    assert np.array_equal(one[0], many[0])
    # different variation indices differ
    assert not np.array_equal(many[0], many[1])


def test_different_seeds_differ(model, clip):
    mask = user_mask([(0.0, 10.0)], _meta())
    a = conditional_generate(clip, mask, model, FAST, seed=1)[0]
    b = conditional_generate(clip, mask, model, FAST, seed=2)[0]
    assert not np.array_equal(a, b)


def test_condition_latent_masks_spectrum(model, clip):
    mask = user_mask([], _meta())  # all-zero mask -> zero latent
    z = condition_latent(clip, mask, model)
    np.testing.assert_allclose(z.values, 0.0, atol=1e-12)


def test_overlapping_blend_masks_warn(model, clip):
    m = user_mask([(0.0, 10.0)], _meta())
    with pytest.warns(UserWarning):
        blend(clip, clip, m, m, 0.5, 0.5, model, FAST)


def test_task_request_validation():
    with pytest.raises(ConfigError):
        TaskRequest("blend", references=[1], masks=[1])
    with pytest.raises(ConfigError):
        TaskRequest("generate", references=[1], masks=[1], n_variations=0)
    with pytest.raises(ConfigError):
        TaskRequest("warp", references=[1], masks=[1])
    TaskRequest("generate", references=[1], masks=[1])


def test_matched_filter_preservation_perfect_and_null():
    cfg = ClipConfig(n_channels=4, n_frames=64)
    rec = PatternRecord("pulse", 4.0, (0, 3), 1.0, 0.7)
    field = pattern_field(rec, cfg)
    perfect = matched_filter_preservation(field, rec, cfg)
    assert perfect == pytest.approx(1.0, abs=1e-6)
    noise = np.random.default_rng(3).standard_normal(field.shape)
    assert abs(matched_filter_preservation(noise, rec, cfg)) < 0.9
    # phase-flipped pattern anti-correlates
    flipped = pattern_field(
        PatternRecord("pulse", 4.0, (0, 3), 1.0, 0.7 + np.pi), cfg
    )
    assert matched_filter_preservation(flipped, rec, cfg) < 0


def test_gaussian_smooth_preserves_constants():
    v = np.ones((9, 2))
    np.testing.assert_allclose(gaussian_smooth(v, 2.0), 1.0, atol=1e-12)
    raw = np.random.default_rng(4).standard_normal((9, 2))
    assert gaussian_smooth(raw, 0.0) is not raw
    np.testing.assert_array_equal(gaussian_smooth(raw, 0.0), raw)


def test_sweep_full_window_single_row(model):
    cfg = ClipConfig(n_channels=4, n_frames=32)
    recs = [
        PatternRecord("envelope", 0.5, (0, 3), 1.0, 0.0),
        PatternRecord("trill", 12.0, (2, 4), 1.0, 0.0),
    ]
    signal = sum(pattern_field(r, cfg) for r in recs)
    clip = ToyClip(signal, recs, 64.0)
    F = SpectrumMeta(32, 2, 64.0).n_bins
    res = sweep(clip, model, FAST, window_bins=F, stride=1, seed=0)
    assert res.raw.shape == (1, 2)
    # full-window sweep equals all-ones-mask generation scored the same way
    full = FrequencyMask(np.ones(F))
    gen = conditional_generate(clip.signal, full, model, FAST, seed=0)[0]
    for r, rec in enumerate(recs):
        want = matched_filter_preservation(gen, rec, cfg)
        assert res.raw[0, r] == pytest.approx(want, abs=1e-12)


def test_sweep_windows_cover_spectrum(model):
    cfg = ClipConfig(n_channels=4, n_frames=32)
    recs = [PatternRecord("envelope", 0.5, (0, 3), 1.0, 0.0)]
    clip = ToyClip(pattern_field(recs[0], cfg), recs, 64.0)
    res = sweep(clip, model, FAST, window_bins=10, stride=8, seed=0)
    assert res.window_starts[0] == 0
    assert res.window_starts[-1] + 10 <= SpectrumMeta(32, 2, 64.0).n_bins
    assert res.raw.shape == (len(res.window_starts), 1)
    assert res.smoothed.shape == res.raw.shape
    assert np.all(np.diff(res.centers_hz) > 0)
    assert res.labels == ["envelope@0.50hz"]
