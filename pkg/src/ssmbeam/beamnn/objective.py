"""Filter-and-sum output stage and the negative SI-SDR training loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ModelError, TrainingDivergedError
from ..metrics import si_sdr_and_grad
from ..spectral import SpectrogramTensor, StftConfig, istft, istft_adjoint
from . import model as net


def filter_and_sum(Y, H) -> np.ndarray:
    """S(f, t) = sum_m Y_m(f, t) H_m(f, t); channel axis is -3."""
    y = Y.data if isinstance(Y, SpectrogramTensor) else np.asarray(Y)
    h = np.asarray(H)
    if y.shape != h.shape:
        raise ModelError(f"spectrogram {y.shape} and filter {h.shape} differ in shape")
    return (y * h).sum(axis=-3)


@dataclass(frozen=True)
class Batch:
    """A fixed-length batch.

    mics: (B, M, F, T) complex microphone spectrograms
    features: (B, M, 2F, T) packed network input
    targets: (B, length) reference-microphone image of each item's target speaker
    """
    mics: np.ndarray
    features: np.ndarray
    targets: np.ndarray
    length: int

    def __post_init__(self):
        if self.mics.ndim != 4 or self.features.ndim != 4:
            raise ModelError("batch spectrograms must be 4-D")
        if self.mics.shape[0] != self.targets.shape[0] or self.targets.shape[-1] != self.length:
            raise ModelError("targets do not match batch")

    @property
    def size(self) -> int:
        return self.mics.shape[0]


def enhance(mics: np.ndarray, features: np.ndarray, weights: net.BeamformerWeights,
            cfg: net.ModelConfig, length: int, stft_cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Eval-mode forward to time-domain estimates (B, length)."""
    mask, _, _ = net.forward(features, weights, cfg, train=False)
    return istft(filter_and_sum(mics, mask), length, stft_cfg)


def loss_and_gradients(batch: Batch, weights: net.BeamformerWeights, cfg: net.ModelConfig,
                       train: bool = True, stft_cfg: StftConfig = StftConfig(),
                       zero_mean: bool = True):
    """Return (loss, grads, new_buffers, per_item_si_sdr).

    loss = -mean_b SI-SDR(istft(sum_m Y_m H_m)_b, target_b).
    """
    mask, caches, new_buf = net.forward(batch.features, weights, cfg, train=train)
    est_spec = filter_and_sum(batch.mics, mask)
    est = istft(est_spec, batch.length, stft_cfg)
    B = batch.size
    scores = np.empty(B)
    dest = np.empty_like(est)
    for b in range(B):
        scores[b], g = si_sdr_and_grad(est[b], batch.targets[b], need_grad=True, zero_mean=zero_mean)
        dest[b] = -g / B
    loss = -float(scores.mean())
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss (per-item SI-SDR {scores.tolist()})")
    G = istft_adjoint(dest, stft_cfg)
    # dL/dH = G * conj(Y) for S = sum_m Y_m H_m
    dmask = G[:, None] * np.conj(batch.mics)
    dmask = dmask.astype(np.result_type(weights.dtype, np.complex64))
    grads = net.backward(dmask, caches, cfg)
    for k, v in grads.items():
        if not np.all(np.isfinite(v)):
            raise TrainingDivergedError(f"non-finite gradient in {k}")
    return loss, grads, new_buf, scores
