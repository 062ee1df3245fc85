from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssmbeam.errors import SignalError, WavFormatError
from ssmbeam.rng import make_rng
from ssmbeam.signals import (
    MonoSignal,
    MultichannelSignal,
    UtteranceSpec,
    apply_snr,
    assemble_utterance,
    convolve,
    mean_power,
    measured_snr_db,
    mix_images,
    raised_cosine_fade,
    read_wav,
    render_microphones,
    resample,
    write_wav,
)

FS = 16000


def noise(n, seed=0):
    return make_rng(seed).standard_normal(n)


def test_one_long_trace_truncated_with_fades():
    x = np.ones(12 * FS)
    spec = UtteranceSpec(target_duration=10.0, gain_range_db=(0.0, 0.0))
    out = assemble_utterance([MonoSignal(x)], spec, make_rng(0)).samples
    assert len(out) == 10 * FS
    assert out[0] == 0.0 and out[-1] < 0.01
    assert np.all(out[FS:9 * FS] == 1.0)
    # fades are at least the minimum configured length
    assert out[int(0.05 * FS) - 2] < 1.0 and out[-int(0.05 * FS) + 2] < 1.0


def test_unit_gain_no_fades_is_identity():
    x = noise(3 * FS)
    spec = UtteranceSpec(target_duration=2.0, fade_range=(0.0, 0.0), gain_range_db=(0.0, 0.0))
    out = assemble_utterance([MonoSignal(x)], spec, make_rng(1)).samples
    assert np.array_equal(out, x[:2 * FS])


def test_concatenation_of_short_traces():
    traces = [MonoSignal(noise(FS, k)) for k in range(4)]
    spec = UtteranceSpec(target_duration=2.5, fade_range=(0.0, 0.0), gain_range_db=(0.0, 0.0))
    out = assemble_utterance(traces, spec, make_rng(2)).samples
    assert np.array_equal(out, np.concatenate([t.samples for t in traces])[:int(2.5 * FS)])


def test_seeded_replay():
    traces = [MonoSignal(noise(FS, k)) for k in range(12)]
    a = assemble_utterance(traces, UtteranceSpec(target_duration=10.0), make_rng(9)).samples
    b = assemble_utterance(traces, UtteranceSpec(target_duration=10.0), make_rng(9)).samples
    assert np.array_equal(a, b)


def test_not_enough_speech():
    with pytest.raises(SignalError, match="not enough speech"):
        assemble_utterance([MonoSignal(noise(FS))], UtteranceSpec(target_duration=2.0), make_rng(0))


def test_raised_cosine_fade_shape():
    f = raised_cosine_fade(100)
    assert f[0] == 0.0 and np.all(np.diff(f) > 0) and f[-1] < 1.0


def test_render_identity_kernel():
    x = noise(1000)
    rirs = np.zeros((1, 4, 5))
    rirs[0, :, 0] = 1.0
    img = render_microphones([MonoSignal(x)], rirs)
    assert img.shape == (1, 4, 1000)
    assert np.allclose(img[0], x[None, :], atol=1e-12)


@pytest.mark.parametrize("k", [1, 7, 40])
def test_render_delay_kernel(k):
    x = noise(1000)
    rirs = np.zeros((1, 2, 64))
    rirs[0, :, k] = 1.0
    img = render_microphones([MonoSignal(x)], rirs)
    assert np.allclose(img[0, :, k:], x[None, :-k], atol=1e-12)
    assert np.allclose(img[0, :, :k], 0.0, atol=1e-12)


def test_render_linearity_and_direct_oracle():
    rng = make_rng(3)
    utts = [MonoSignal(rng.standard_normal(2000)) for _ in range(2)]
    rirs = rng.standard_normal((2, 3, 50))
    img = render_microphones(utts, rirs)
    for n in range(2):
        for m in range(3):
            direct = np.convolve(utts[n].samples, rirs[n, m])[:2000]
            assert np.max(np.abs(img[n, m] - direct)) <= 1e-9
    both = render_microphones([MonoSignal(utts[0].samples + utts[1].samples)], rirs[:1])
    assert np.max(np.abs(both[0] - img[:, :, :].sum(0) + render_microphones([utts[1]], rirs[1:])[0]
                         - render_microphones([utts[1]], rirs[:1])[0])) <= 1e-9


def test_render_shape_errors():
    with pytest.raises(SignalError):
        render_microphones([MonoSignal(noise(100))], np.zeros((2, 4, 5)))
    with pytest.raises(SignalError):
        render_microphones([MonoSignal(noise(100)), MonoSignal(noise(90))], np.zeros((2, 4, 5)))


def test_convolve_matches_numpy():
    x, h = noise(3000, 1), noise(300, 2)
    assert np.allclose(convolve(x, h), np.convolve(x, h), atol=1e-9)


def test_apply_snr_example():
    d = np.ones(100)
    i = 2.0 * np.ones(100)
    assert apply_snr(d, [i], 0.0) == pytest.approx(0.5)


def test_apply_snr_large_limit():
    assert apply_snr(noise(500, 1), [noise(500, 2)], 300.0) < 1e-14


def test_apply_snr_zero_energy():
    with pytest.raises(SignalError):
        apply_snr(np.zeros(10), [np.ones(10)], 0.0)
    with pytest.raises(SignalError):
        apply_snr(np.ones(10), [np.zeros(10)], 0.0)


@given(st.floats(-20, 30), st.integers(0, 1000), st.integers(1, 3))
def test_snr_contract(snr, seed, n_interf):
    rng = make_rng(seed)
    images = rng.standard_normal((n_interf + 1, 2, 800)) * rng.uniform(0.1, 3.0, (n_interf + 1, 1, 1))
    mix = mix_images(images, 0, snr)
    assert measured_snr_db(mix) == pytest.approx(snr, abs=1e-6)
    assert np.max(np.abs(mix.mics)) <= 1.0
    assert np.allclose(mix.mics, mix.images.sum(0))


def test_clip_gain_shared():
    images = np.stack([np.full((2, 50), 3.0), np.full((2, 50), 3.0)])
    mix = mix_images(images, 1, 0.0)
    assert np.max(np.abs(mix.mics)) == pytest.approx(0.99)
    assert mix.clip_gain < 1.0
    assert np.allclose(mix.images[1], 3.0 * mix.clip_gain)


def test_wav_float_roundtrip(tmp_path):
    x = noise(1234).astype(np.float32) * 0.3
    write_wav(tmp_path / "a.wav", MonoSignal(x.astype(float)))
    y = read_wav(tmp_path / "a.wav")
    assert isinstance(y, MonoSignal) and y.sample_rate == FS
    assert np.array_equal(y.samples.astype(np.float32), x)


def test_wav_multichannel_roundtrip(tmp_path):
    x = (noise(4 * 500).reshape(4, 500) * 0.2).astype(np.float32)
    write_wav(tmp_path / "m.wav", MultichannelSignal(x.astype(float)))
    y = read_wav(tmp_path / "m.wav")
    assert isinstance(y, MultichannelSignal) and np.array_equal(y.channels.astype(np.float32), x)


def test_wav_pcm16_within_one_lsb(tmp_path):
    x = np.clip(noise(1000) * 0.3, -1, 1)
    write_wav(tmp_path / "p.wav", MonoSignal(x), pcm16=True)
    y = read_wav(tmp_path / "p.wav").samples
    assert np.max(np.abs(y - x)) <= 1.0 / 32767 + 1e-12


def test_truncated_wav(tmp_path):
    write_wav(tmp_path / "t.wav", MonoSignal(noise(1000)))
    raw = (tmp_path / "t.wav").read_bytes()
    (tmp_path / "bad.wav").write_bytes(raw[:20])
    with pytest.raises(WavFormatError):
        read_wav(tmp_path / "bad.wav")


def test_resample_48k_sine_thd():
    fs = 48000
    t = np.arange(2 * fs) / fs
    y = resample(MonoSignal(np.sin(2 * math.pi * 1000 * t), fs), 16000)
    assert y.sample_rate == 16000
    seg = y.samples[4000:4000 + 16000]
    spec = np.abs(np.fft.rfft(seg * np.hanning(len(seg)))) ** 2
    k = int(np.argmax(spec))
    assert k == 1000
    fund = spec[k - 3:k + 4].sum()
    harmonics = sum(spec[h * 1000 - 3:h * 1000 + 4].sum() for h in range(2, 8))
    assert 10 * math.log10(harmonics / fund) <= -60


def test_mean_power():
    assert mean_power(np.array([1.0, -1.0, 1.0, -1.0])) == 1.0
