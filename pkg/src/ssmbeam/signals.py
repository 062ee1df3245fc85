"""Utterance assembly, convolutional mixing, SNR scaling and WAV I/O."""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve, resample_poly

from .errors import SignalError, WavFormatError
from .rng import RngState

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class MonoSignal:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if np.ndim(self.samples) != 1:
            raise SignalError("mono signal must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise SignalError("non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class MultichannelSignal:
    channels: np.ndarray  # (M, T)
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if np.ndim(self.channels) != 2:
            raise SignalError("multichannel signal must be (M, T)")

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]


@dataclass(frozen=True)
class UtteranceSpec:
    target_duration: float = 10.0
    fade_range: tuple[float, float] = (0.05, 0.20)
    gain_range_db: tuple[float, float] = (-3.0, 3.0)

    def __post_init__(self):
        if not self.target_duration > 0:
            raise SignalError("target_duration must be positive")
        if self.fade_range[0] > self.fade_range[1] or self.gain_range_db[0] > self.gain_range_db[1]:
            raise SignalError("utterance ranges must be ordered")
        if self.fade_range[0] < 0:
            raise SignalError("fade lengths must be non-negative")


def raised_cosine_fade(n: int) -> np.ndarray:
    """Rising half-cosine of length ``n`` (0 -> 1, exclusive of the 1)."""
    if n <= 0:
        return np.ones(0)
    return 0.5 * (1.0 - np.cos(np.pi * np.arange(n) / n))


def _apply_fades(x: np.ndarray, n_in: int, n_out: int) -> np.ndarray:
    y = x.copy()
    n_in = min(n_in, len(y))
    n_out = min(n_out, len(y))
    if n_in:
        y[:n_in] *= raised_cosine_fade(n_in)
    if n_out:
        y[len(y) - n_out:] *= raised_cosine_fade(n_out)[::-1]
    return y


def assemble_utterance(traces: Sequence[MonoSignal], spec: UtteranceSpec, rng: RngState) -> MonoSignal:
    """Concatenate faded, gain-scaled traces and cut to the target duration.

    Traces are used in the given order; each gets its own gain and fade
    lengths.  When the cut lands inside a trace, that trace's fade-out is
    re-applied at the new end.
    """
    if not traces:
        raise SignalError("not enough speech")
    fs = traces[0].sample_rate
    if any(t.sample_rate != fs for t in traces):
        raise SignalError("traces must share one sample rate")
    target = int(round(spec.target_duration * fs))
    if sum(len(t.samples) for t in traces) < target:
        raise SignalError("not enough speech")

    pieces = []
    total = 0
    last_fade_out = 0
    for tr in traces:
        gain = 10.0 ** (rng.uniform(*spec.gain_range_db) / 20.0)
        n_in = int(round(rng.uniform(*spec.fade_range) * fs))
        n_out = int(round(rng.uniform(*spec.fade_range) * fs))
        pieces.append(_apply_fades(np.asarray(tr.samples, dtype=float) * gain, n_in, n_out))
        total += len(tr.samples)
        last_fade_out = n_out
        if total >= target:
            break
    out = np.concatenate(pieces)
    if len(out) > target:
        cut = len(out) - target
        out = out[:target]
        if cut > 0 and last_fade_out:
            n = min(last_fade_out, len(pieces[-1]) - cut)
            if n > 0:
                out[target - n:] *= raised_cosine_fade(n)[::-1]
    return MonoSignal(out, fs)


def draw_utterance(corpus: Sequence[MonoSignal], spec: UtteranceSpec, rng: RngState) -> MonoSignal:
    """Randomly pick corpus traces (without replacement) until the target is reached."""
    if not corpus:
        raise SignalError("not enough speech")
    fs = corpus[0].sample_rate
    need = spec.target_duration * fs
    order = rng.permutation(len(corpus))
    picked, total = [], 0
    for i in order:
        picked.append(corpus[int(i)])
        total += len(corpus[int(i)].samples)
        if total >= need:
            break
    if total < need:
        raise SignalError("not enough speech")
    return assemble_utterance(picked, spec, rng)


def convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Full linear convolution along the last axis (FFT based)."""
    return fftconvolve(x, h, mode="full", axes=-1)


def render_microphones(utterances: Sequence[MonoSignal], rirs: np.ndarray) -> np.ndarray:
    """Per-speaker reverberant images at every microphone.

    ``rirs`` has shape (N, M, L).  Returns images of shape (N, M, T) with T
    the utterance length; the microphone signals are ``images.sum(0)``.
    """
    rirs = np.asarray(rirs)
    if rirs.ndim != 3 or rirs.shape[0] != len(utterances):
        raise SignalError("RIR grid must be (n_speakers, n_mics, length)")
    lengths = {len(u.samples) for u in utterances}
    if len(lengths) != 1:
        raise SignalError("utterances must have equal length")
    if len({u.sample_rate for u in utterances}) != 1:
        raise SignalError("utterances must share one sample rate")
    T = lengths.pop()
    out = np.empty((rirs.shape[0], rirs.shape[1], T))
    for n, u in enumerate(utterances):
        full = convolve(np.asarray(u.samples, dtype=float)[None, :], rirs[n])
        out[n] = full[:, :T]
    return out


def mean_power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def apply_snr(desired_image: MonoSignal | np.ndarray, interferer_images: Sequence[MonoSignal | np.ndarray],
              snr_db: float) -> float:
    """Gain for the interferer sum so that P_desired / P_interf = 10**(snr/10)."""
    d = np.asarray(getattr(desired_image, "samples", desired_image), dtype=float)
    if not interferer_images:
        raise SignalError("at least one interferer required")
    i = np.sum([np.asarray(getattr(x, "samples", x), dtype=float) for x in interferer_images], axis=0)
    p_d, p_i = mean_power(d), mean_power(i)
    if p_d == 0.0 or p_i == 0.0:
        raise SignalError("zero-energy input")
    return math.sqrt(p_d / (p_i * 10.0 ** (snr_db / 10.0)))


@dataclass(frozen=True)
class Mixture:
    mics: np.ndarray        # (M, T) microphone signals
    images: np.ndarray      # (N, M, T) scaled per-speaker images; mics == images.sum(0)
    desired: int
    interferer_gain: float
    clip_gain: float

    def reference_targets(self, ref: int = 0) -> np.ndarray:
        return self.images[:, ref, :]


def mix_images(images: np.ndarray, desired: int, snr_db: float, ref: int = 0,
               peak: float = 0.99) -> Mixture:
    """Scale interferers to the requested SNR at ``ref`` and apply the anti-clip gain.

    The anti-clip gain min(1, peak / max|y|) multiplies every image and
    the mixture alike, so the SNR and inter-channel cues are untouched.
    """
    images = np.asarray(images, dtype=float)
    n = images.shape[0]
    if not 0 <= desired < n:
        raise SignalError("desired index out of range")
    scaled = images.copy()
    alpha = 1.0
    if n > 1:
        others = [images[k, ref] for k in range(n) if k != desired]
        alpha = apply_snr(images[desired, ref], others, snr_db)
        for k in range(n):
            if k != desired:
                scaled[k] *= alpha
    mics = scaled.sum(axis=0)
    top = float(np.max(np.abs(mics)))
    g = min(1.0, peak / top) if top > 0 else 1.0
    return Mixture(mics * g, scaled * g, desired, alpha, g)


def measured_snr_db(mix: Mixture, ref: int = 0) -> float:
    d = mix.images[mix.desired, ref]
    i = mix.images[[k for k in range(mix.images.shape[0]) if k != mix.desired], ref].sum(axis=0)
    return 10.0 * math.log10(mean_power(d) / mean_power(i))


# -- WAV I/O -------------------------------------------------------------------

def write_wav(path: str | os.PathLike, signal: MonoSignal | MultichannelSignal, *, pcm16: bool = False) -> None:
    """Write float32 (default) or PCM16 WAV; atomic via write-then-rename."""
    path = Path(path)
    if isinstance(signal, MultichannelSignal):
        data = signal.channels.T
    else:
        data = signal.samples
    if pcm16:
        data = np.clip(np.round(np.asarray(data) * 32767.0), -32768, 32767).astype("<i2")
    else:
        data = np.asarray(data, dtype="<f4")
    tmp = path.with_name(path.name + ".tmp")
    wavfile.write(tmp, signal.sample_rate, data)
    os.replace(tmp, path)


def read_wav(path: str | os.PathLike) -> MonoSignal | MultichannelSignal:
    path = Path(path)
    try:
        fs, data = wavfile.read(path)
    except (ValueError, EOFError, struct.error) as exc:
        raise WavFormatError(f"{path}: malformed or unsupported WAV ({exc})") from exc
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32767.0
    elif data.dtype == np.float32:
        data = data.astype(np.float64)
    else:
        raise WavFormatError(f"{path}: unsupported sample format {data.dtype}")
    if data.ndim == 1:
        return MonoSignal(data, int(fs))
    return MultichannelSignal(np.ascontiguousarray(data.T), int(fs))


def resample(signal: MonoSignal, target_rate: int = SAMPLE_RATE) -> MonoSignal:
    """Polyphase resampling with a Kaiser-windowed sinc low-pass."""
    if signal.sample_rate == target_rate:
        return signal
    g = math.gcd(int(signal.sample_rate), int(target_rate))
    up, down = target_rate // g, signal.sample_rate // g
    y = resample_poly(signal.samples, up, down, window=("kaiser", 8.0))
    return MonoSignal(y, target_rate)
