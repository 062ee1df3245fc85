"""Speech sources: a directory of WAV files, or a synthetic speech-like corpus.

The synthetic voices are glottal pulse trains with a wandering pitch,
shaped by a few resonant formant filters and gated by a syllable-rate
envelope with short pauses.  They are sparse in time-frequency like real
speech, which is what the beamforming experiments depend on.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import SignalError
from .rng import RngState, derive_seed, make_rng
from .signals import SAMPLE_RATE, MonoSignal, MultichannelSignal, read_wav, resample

CORPUS_ENV = "SSMBEAM_CORPUS"
_VOWEL_FORMANTS = (
    (730, 1090, 2440), (270, 2290, 3010), (300, 870, 2240),
    (530, 1840, 2480), (570, 840, 2410), (660, 1720, 2410),
)


def _resonator(x: np.ndarray, freq: float, bandwidth: float, fs: int) -> np.ndarray:
    r = np.exp(-np.pi * bandwidth / fs)
    a = [1.0, -2.0 * r * np.cos(2.0 * np.pi * freq / fs), r * r]
    return lfilter([1.0 - r], a, x)


def synthetic_utterance(duration: float, rng: RngState, sample_rate: int = SAMPLE_RATE) -> MonoSignal:
    n = int(round(duration * sample_rate))
    if n <= 0:
        raise SignalError("duration must be positive")
    fs = sample_rate
    f0_base = rng.uniform(90.0, 240.0)
    # slow random pitch contour
    knots = max(2, int(duration * 4) + 2)
    contour = np.interp(np.arange(n), np.linspace(0, n, knots), rng.uniform(-0.15, 0.15, knots))
    f0 = f0_base * (1.0 + contour)
    phase = np.cumsum(f0 / fs)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    excitation = lfilter([1.0], [1.0, -0.97], pulses) + 0.02 * rng.standard_normal(n)
    out = np.zeros(n)
    envelope = np.zeros(n)
    pos = 0
    while pos < n:
        seg = int(rng.uniform(0.12, 0.35) * fs)
        stop = min(n, pos + seg)
        formants = _VOWEL_FORMANTS[rng.integers(len(_VOWEL_FORMANTS))]
        shift = rng.uniform(0.85, 1.2)
        chunk = excitation[pos:stop]
        if rng.uniform() < 0.2:
            # fricative-like noise burst
            chunk = rng.standard_normal(stop - pos) * 0.3
            voiced = _resonator(chunk, rng.uniform(3000, 6000), 1500.0, fs)
        else:
            voiced = sum(_resonator(chunk, f * shift, 80.0 + 0.05 * f, fs) / (k + 1)
                         for k, f in enumerate(formants))
        out[pos:stop] = voiced
        env = np.sin(np.linspace(0.0, np.pi, stop - pos)) ** 0.7
        envelope[pos:stop] = env * rng.uniform(0.4, 1.0)
        pos = stop
        if rng.uniform() < 0.3:
            pos += int(rng.uniform(0.05, 0.25) * fs)  # pause
    y = out * envelope
    peak = np.max(np.abs(y))
    return MonoSignal(y / peak * 0.5 if peak > 0 else y, fs)


def synthetic_corpus(n_traces: int, seed: int, duration_range: tuple[float, float] = (2.0, 6.0),
                     sample_rate: int = SAMPLE_RATE) -> list[MonoSignal]:
    """Deterministic list of speech-like traces; trace i depends only on (seed, i)."""
    traces = []
    for i in range(n_traces):
        rng = make_rng(derive_seed(seed, i))
        traces.append(synthetic_utterance(rng.uniform(*duration_range), rng, sample_rate))
    return traces


def load_corpus(root: str | os.PathLike | None = None, sample_rate: int = SAMPLE_RATE,
                limit: int | None = None) -> list[MonoSignal]:
    """Every WAV under ``root`` (sorted path order), as mono at ``sample_rate``.

    ``root`` defaults to the SSMBEAM_CORPUS environment variable.  Nested
    speaker/chapter directories are walked recursively.
    """
    root = root if root is not None else os.environ.get(CORPUS_ENV)
    if not root:
        raise SignalError(f"no corpus directory given and {CORPUS_ENV} is unset")
    paths = sorted(Path(root).rglob("*.wav"))
    if not paths:
        raise SignalError(f"no WAV files under {root}")
    out = []
    for p in paths[:limit]:
        sig = read_wav(p)
        if isinstance(sig, MultichannelSignal):
            sig = MonoSignal(sig.channels.mean(axis=0), sig.sample_rate)
        if sig.sample_rate != sample_rate:
            sig = resample(sig, sample_rate)
        if np.any(sig.samples):
            out.append(sig)
    return out
