"""STFT / ISTFT and the real-valued network input packing.

Frames are centred: the signal is reflect-padded by ``fft_size // 2`` at
the front and padded at the back so that ``ceil(len / hop) + 1`` frames
are produced.  With that count every sample is covered by two frames,
keeping the window-square normaliser of the inverse bounded away from
zero (Hann-256 / hop-128 gives values in [0.5, 1]).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import get_window

from .errors import SpectralError


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 256
    hop: int = 128
    window: str = "hann"

    def __post_init__(self):
        w = self.window_array()
        wss = np.zeros(self.fft_size + self.hop)
        for start in (0, self.hop):
            wss[start:start + self.fft_size] += w ** 2
        if self.hop > self.fft_size or np.min(wss[self.hop:self.fft_size]) <= 0:
            raise SpectralError("window/hop pair cannot be inverted")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window_array(self) -> np.ndarray:
        return get_window(self.window, self.fft_size, fftbins=True)

    def n_frames(self, length: int) -> int:
        return -(-length // self.hop) + 1


@dataclass(frozen=True)
class SpectrogramTensor:
    data: np.ndarray  # (..., F, T) complex
    config: StftConfig = field(default_factory=StftConfig)
    length: int | None = None


def _frame_geometry(length: int, cfg: StftConfig) -> tuple[int, int, int]:
    pad = cfg.fft_size // 2
    T = cfg.n_frames(length)
    padded = (T - 1) * cfg.hop + cfg.fft_size
    return pad, T, padded


def stft(x: np.ndarray, cfg: StftConfig = StftConfig()) -> SpectrogramTensor:
    """One-sided STFT along the last axis; output (..., F, T)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if n < cfg.fft_size:
        raise SpectralError("signal shorter than fft_size")
    pad, T, padded = _frame_geometry(n, cfg)
    back = padded - n - pad
    widths = [(0, 0)] * (x.ndim - 1)
    xp = np.pad(x, widths + [(pad, 0)], mode="reflect")
    back_reflect = min(back, n - 1)
    xp = np.pad(xp, widths + [(0, back_reflect)], mode="reflect")
    if back > back_reflect:
        xp = np.pad(xp, widths + [(0, back - back_reflect)])
    frames = np.lib.stride_tricks.sliding_window_view(xp, cfg.fft_size, axis=-1)[..., ::cfg.hop, :]
    spec = np.fft.rfft(frames * cfg.window_array(), axis=-1)
    return SpectrogramTensor(np.swapaxes(spec, -1, -2), cfg, n)


def _window_square_sum(length: int, cfg: StftConfig) -> np.ndarray:
    pad, T, padded = _frame_geometry(length, cfg)
    w2 = cfg.window_array() ** 2
    acc = np.zeros(padded)
    for t in range(T):
        acc[t * cfg.hop:t * cfg.hop + cfg.fft_size] += w2
    return acc[pad:pad + length]


def _overlap_add(frames: np.ndarray, cfg: StftConfig, padded: int) -> np.ndarray:
    # frames (..., T, N)
    T = frames.shape[-2]
    out = np.zeros(frames.shape[:-2] + (padded,), dtype=frames.dtype)
    hop, N = cfg.hop, cfg.fft_size
    # frames overlap by N/hop; add in non-overlapping groups
    step = -(-N // hop)
    for g in range(step):
        sel = frames[..., g::step, :]
        k = sel.shape[-2]
        if k == 0:
            continue
        span = np.zeros(frames.shape[:-2] + (k * step * hop,), dtype=frames.dtype)
        view = span.reshape(frames.shape[:-2] + (k, step * hop))
        view[..., :N] = sel
        start = g * hop
        stop = min(start + span.shape[-1], padded)
        out[..., start:stop] += span[..., :stop - start]
    return out


def istft(spec: SpectrogramTensor | np.ndarray, length: int | None = None,
          cfg: StftConfig | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`, output (..., length)."""
    if isinstance(spec, SpectrogramTensor):
        cfg = cfg or spec.config
        length = length if length is not None else spec.length
        data = spec.data
    else:
        data = spec
    cfg = cfg or StftConfig()
    if data.shape[-2] != cfg.n_bins:
        raise SpectralError("frequency axis does not match configuration")
    T = data.shape[-1]
    if length is None:
        length = (T - 1) * cfg.hop
    if cfg.n_frames(length) != T:
        raise SpectralError("frame count does not match signal length")
    pad, _, padded = _frame_geometry(length, cfg)
    frames = np.fft.irfft(np.swapaxes(data, -1, -2), n=cfg.fft_size, axis=-1) * cfg.window_array()
    y = _overlap_add(frames, cfg, padded)[..., pad:pad + length]
    return y / _window_square_sum(length, cfg)


def istft_adjoint(grad: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Adjoint of :func:`istft` with respect to (Re, Im) of the spectrum.

    Given dL/dy (..., length) returns the complex array G (..., F, T) with
    Re G = dL/dRe(S) and Im G = dL/dIm(S).
    """
    grad = np.asarray(grad)
    length = grad.shape[-1]
    pad, T, padded = _frame_geometry(length, cfg)
    g = np.zeros(grad.shape[:-1] + (padded,), dtype=grad.dtype)
    g[..., pad:pad + length] = grad / _window_square_sum(length, cfg)
    frames = np.lib.stride_tricks.sliding_window_view(g, cfg.fft_size, axis=-1)[..., ::cfg.hop, :]
    frames = frames * cfg.window_array()
    G = np.fft.rfft(frames, axis=-1) / cfg.fft_size
    G[..., 1:-1] *= 2.0
    G[..., 0] = G[..., 0].real
    G[..., -1] = G[..., -1].real
    return np.swapaxes(G, -1, -2)


def energy_weights(cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Per-bin weights turning one-sided |X|^2 sums into two-sided energy."""
    w = np.full(cfg.n_bins, 2.0)
    w[0] = 1.0
    if cfg.fft_size % 2 == 0:
        w[-1] = 1.0
    return w


# -- network input packing -------------------------------------------------------

@dataclass(frozen=True)
class PackedFeatures:
    data: np.ndarray  # (..., M, 2F, T) real
    mean: float | np.ndarray
    std: float | np.ndarray


def pack_features(spec: SpectrogramTensor | np.ndarray, per_bin: bool = False,
                  dtype=np.float64) -> PackedFeatures:
    """Normalise by mean/std and stack real above imaginary along frequency.

    Statistics are global scalars over every real and imaginary value of
    the utterance, or per packed frequency row when ``per_bin``.
    """
    data = spec.data if isinstance(spec, SpectrogramTensor) else np.asarray(spec)
    if not np.all(np.isfinite(data)):
        raise SpectralError("non-finite spectrogram")
    packed = np.concatenate([data.real, data.imag], axis=-2)
    if per_bin:
        axes = tuple(i for i in range(packed.ndim) if i != packed.ndim - 2)
        mean = packed.mean(axis=axes, keepdims=True)
        std = packed.std(axis=axes, keepdims=True)
        if float(packed.std()) == 0.0:
            raise SpectralError("degenerate input")
        # rows that are identically constant (imaginary DC/Nyquist) keep unit scale
        std = np.where(std == 0, 1.0, std)
    else:
        mean = float(packed.mean())
        std = float(packed.std())
        if std == 0.0:
            raise SpectralError("degenerate input")
    return PackedFeatures(((packed - mean) / std).astype(dtype), mean, std)


def unpack_features(features: PackedFeatures) -> np.ndarray:
    packed = features.data * features.std + features.mean
    F = packed.shape[-2] // 2
    return packed[..., :F, :] + 1j * packed[..., F:, :]
