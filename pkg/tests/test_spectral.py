from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmbeam.errors import SpectralError
from ssmbeam.spectral import (
    PackedFeatures,
    StftConfig,
    energy_weights,
    istft,
    istft_adjoint,
    pack_features,
    stft,
    unpack_features,
)

CFG = StftConfig()


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_shapes_and_frame_count():
    x = np.random.default_rng(0).standard_normal((4, 16000))
    S = stft(x)
    assert S.data.shape == (4, 129, 16000 // 128 + 1)
    assert CFG.n_bins == 129


def test_dc_energy_in_lowest_bins():
    # the periodic Hann window spreads DC into bin 0 and half its amplitude into bin 1
    S = stft(np.ones(2048)).data
    assert np.allclose(np.abs(S[2:]), 0.0, atol=1e-9)
    assert np.allclose(S[0], 128.0, atol=1e-9)
    assert np.allclose(S[1], -64.0, atol=1e-9)


def test_sine_peak_bin():
    t = np.arange(16000) / 16000
    S = stft(np.sin(2 * np.pi * 1000 * t)).data
    assert np.all(np.argmax(np.abs(S[:, 2:-2]), axis=0) == 16)


@pytest.mark.parametrize("n", [256, 257, 1000, 16000, 16001])
def test_round_trip(n):
    x = np.random.default_rng(n).standard_normal((2, n))
    assert rel_err(istft(stft(x)), x) <= 1e-6


@settings(max_examples=25)
@given(st.integers(256, 5000), st.integers(0, 2**31 - 1))
def test_round_trip_property(n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    assert rel_err(istft(stft(x)), x) <= 1e-6


def test_zero_spectrogram_zero_signal():
    assert np.all(istft(np.zeros((129, 9), complex), 1024) == 0.0)


def test_istft_linear():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((129, 20)) + 1j * rng.standard_normal((129, 20))
    Y = rng.standard_normal((129, 20)) + 1j * rng.standard_normal((129, 20))
    lhs = istft(2.5 * X - 0.7 * Y, 19 * 128)
    rhs = 2.5 * istft(X, 19 * 128) - 0.7 * istft(Y, 19 * 128)
    assert np.max(np.abs(lhs - rhs)) <= 1e-9


def test_adjoint_inner_product():
    rng = np.random.default_rng(2)
    n = 3000
    T = CFG.n_frames(n)
    X = rng.standard_normal((129, T)) + 1j * rng.standard_normal((129, T))
    g = rng.standard_normal(n)
    G = istft_adjoint(g)
    lhs = float(g @ istft(X, n))
    rhs = float(np.sum(G.real * X.real + G.imag * X.imag))
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_frame_parseval_identity():
    # one-sided spectrogram energy equals the energy of the windowed frames
    rng = np.random.default_rng(3)
    ratios = []
    for _ in range(5):
        x = rng.standard_normal(4000) * rng.uniform(0.1, 10)
        S = stft(x).data
        spec_energy = float(np.sum(energy_weights()[:, None] * np.abs(S) ** 2)) / CFG.fft_size
        pad = CFG.fft_size // 2
        T = S.shape[1]
        xp = np.pad(x, (pad, (T - 1) * CFG.hop + CFG.fft_size - len(x) - pad), mode="reflect")
        frames = np.lib.stride_tricks.sliding_window_view(xp, CFG.fft_size)[::CFG.hop][:T]
        ratios.append(spec_energy / float(np.sum((frames * CFG.window_array()) ** 2)))
    assert np.allclose(ratios, 1.0, rtol=1e-10)


def test_too_short():
    with pytest.raises(SpectralError):
        stft(np.zeros(100))


def test_istft_shape_errors():
    with pytest.raises(SpectralError):
        istft(np.zeros((128, 9), complex), 1024)
    with pytest.raises(SpectralError):
        istft(np.zeros((129, 5), complex), 1024)


def test_non_invertible_hop():
    with pytest.raises(SpectralError):
        StftConfig(hop=300)


def test_pack_layout_and_moments():
    rng = np.random.default_rng(4)
    S = stft(rng.standard_normal((4, 3000)))
    p = pack_features(S)
    assert p.data.shape == (4, 258, S.data.shape[-1])
    assert abs(p.data.mean()) <= 1e-6 and abs(p.data.std() - 1.0) <= 1e-6
    raw = (np.concatenate([S.data.real, S.data.imag], axis=-2) - p.mean) / p.std
    assert np.array_equal(p.data, raw)


@pytest.mark.parametrize("per_bin", [False, True])
def test_unpack_inverts_pack(per_bin):
    S = stft(np.random.default_rng(5).standard_normal((2, 2000)))
    assert np.allclose(unpack_features(pack_features(S, per_bin=per_bin)), S.data, atol=1e-12)


def test_per_bin_moments():
    p = pack_features(stft(np.random.default_rng(6).standard_normal((2, 4000))), per_bin=True)
    # DC/Nyquist imaginary rows are identically zero, so only real rows are checked
    rows = p.data[:, :129]
    assert np.allclose(rows.mean(axis=(0, 2)), 0.0, atol=1e-9)


def test_pack_degenerate():
    with pytest.raises(SpectralError, match="degenerate input"):
        pack_features(np.full((2, 129, 10), 1.0 + 1.0j))


def test_pack_non_finite():
    bad = np.zeros((1, 129, 4), complex)
    bad[0, 0, 0] = np.nan
    with pytest.raises(SpectralError):
        pack_features(bad)


def test_pack_linear_bijection():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((2, 129, 6)) + 1j * rng.standard_normal((2, 129, 6))
    p = pack_features(a)
    again = pack_features(unpack_features(PackedFeatures(p.data, p.mean, p.std)))
    assert np.allclose(again.data, p.data, atol=1e-12)
