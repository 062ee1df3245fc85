"""Encoder / GRU / decoder network producing a complex multichannel filter.

Input: packed features (B, M, 2F, T), real parts stacked above imaginary
parts along frequency.  Encoder: strided (8, 1) convolutions along
frequency, each followed by batch norm and ReLU, with an extra tanh on
the encoder output.  The recurrent stage runs over frames on the
flattened channel x frequency vector, a linear layer maps back to the
encoder output size, and transposed convolutions mirror the encoder.
The last decoder layer has M output channels and no normalisation or
activation; its 2F rows are split back into real and imaginary filter
parts, giving H of shape (B, M, F, T).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ModelError
from ..rng import RngState
from . import layers as L


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int = 4
    n_bins: int = 129
    encoder_channels: tuple[int, ...] = (16, 32, 64)
    gru_layers: int = 2
    gru_hidden: int = 128
    kernel: int = 8
    stride: int = 2
    padding: int = 3
    bn_momentum: float = 0.1

    def __post_init__(self):
        if not self.encoder_channels:
            raise ModelError("encoder_channels must be non-empty")
        if self.gru_layers < 1 or self.gru_hidden < 1:
            raise ModelError("need at least one GRU layer with positive width")
        sizes = self.encoder_sizes()
        if sizes[-1] < 1:
            raise ModelError("frequency axis too short for the encoder stride chain")
        for want, got in zip(sizes[:-1][::-1], self._decoder_plain_sizes()):
            op = want - got
            if not 0 <= op < self.stride:
                raise ModelError("decoder cannot mirror encoder sizes")

    @property
    def packed_rows(self) -> int:
        return 2 * self.n_bins

    def encoder_sizes(self) -> list[int]:
        sizes = [self.packed_rows]
        for _ in self.encoder_channels:
            sizes.append(L.conv_out_len(sizes[-1], self.kernel, self.stride, self.padding))
        return sizes

    def _decoder_plain_sizes(self) -> list[int]:
        enc = self.encoder_sizes()
        return [L.convt_out_len(n, self.kernel, self.stride, self.padding) for n in enc[1:][::-1]]

    def decoder_channels(self) -> tuple[int, ...]:
        return tuple(self.encoder_channels[:-1][::-1]) + (self.input_channels,)

    def decoder_output_padding(self) -> list[int]:
        enc = self.encoder_sizes()
        return [want - got for want, got in zip(enc[:-1][::-1], self._decoder_plain_sizes())]

    def decoder_sizes(self) -> list[int]:
        enc = self.encoder_sizes()
        return [enc[-1]] + enc[:-1][::-1]

    @property
    def bottleneck(self) -> int:
        return self.encoder_channels[-1] * self.encoder_sizes()[-1]

    @classmethod
    def tiny(cls, input_channels: int = 2) -> ModelConfig:
        return cls(input_channels=input_channels, encoder_channels=(3, 4), gru_layers=2, gru_hidden=5)


@dataclass
class BeamformerWeights:
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> BeamformerWeights:
        return BeamformerWeights({k: v.copy() for k, v in self.params.items()},
                                 {k: v.copy() for k, v in self.buffers.items()})

    def astype(self, dtype) -> BeamformerWeights:
        return BeamformerWeights({k: v.astype(dtype) for k, v in self.params.items()},
                                 {k: v.astype(dtype) for k, v in self.buffers.items()})

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def init_weights(cfg: ModelConfig, rng: RngState, dtype=np.float32) -> BeamformerWeights:
    """Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    p: dict[str, np.ndarray] = {}
    b: dict[str, np.ndarray] = {}

    def uni(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    cin = cfg.input_channels
    K = cfg.kernel
    for i, cout in enumerate(cfg.encoder_channels):
        p[f"enc{i}.weight"] = uni((cout, cin, K), cin * K)
        p[f"enc{i}.bias"] = uni((cout,), cin * K)
        p[f"enc{i}.bn.gamma"] = np.ones(cout, dtype)
        p[f"enc{i}.bn.beta"] = np.zeros(cout, dtype)
        b[f"enc{i}.bn.running_mean"] = np.zeros(cout, dtype)
        b[f"enc{i}.bn.running_var"] = np.ones(cout, dtype)
        cin = cout
    d_in = cfg.bottleneck
    H = cfg.gru_hidden
    for layer in range(cfg.gru_layers):
        p[f"gru{layer}.w_ih"] = uni((3 * H, d_in), H)
        p[f"gru{layer}.w_hh"] = uni((3 * H, H), H)
        p[f"gru{layer}.b_ih"] = uni((3 * H,), H)
        p[f"gru{layer}.b_hh"] = uni((3 * H,), H)
        d_in = H
    p["fc.weight"] = uni((cfg.bottleneck, H), H)
    p["fc.bias"] = uni((cfg.bottleneck,), H)
    dec_ch = cfg.decoder_channels()
    cin = cfg.encoder_channels[-1]
    for j, cout in enumerate(dec_ch):
        # transposed-conv fan-in follows the output-channel convention
        p[f"dec{j}.weight"] = uni((cin, cout, K), cout * K)
        p[f"dec{j}.bias"] = uni((cout,), cout * K)
        if j < len(dec_ch) - 1:
            p[f"dec{j}.bn.gamma"] = np.ones(cout, dtype)
            p[f"dec{j}.bn.beta"] = np.zeros(cout, dtype)
            b[f"dec{j}.bn.running_mean"] = np.zeros(cout, dtype)
            b[f"dec{j}.bn.running_var"] = np.ones(cout, dtype)
        cin = cout
    return BeamformerWeights(p, b)


def zeros_like_weights(weights: BeamformerWeights) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in weights.params.items()}


def forward(features: np.ndarray, weights: BeamformerWeights, cfg: ModelConfig, train: bool = False):
    """Packed features (B, M, 2F, T) -> (filter (B, M, F, T) complex, cache, new_buffers).

    In training mode batch norm uses batch statistics and the returned
    buffers carry the updated running averages; in eval mode the buffers
    are returned unchanged and the call is a pure function.
    """
    x = np.asarray(features, dtype=weights.dtype)
    if x.ndim == 3:
        x = x[None]
    B, M, R, T = x.shape
    if M != cfg.input_channels or R != cfg.packed_rows:
        raise ModelError(f"feature shape {x.shape[1:3]} does not match model "
                         f"({cfg.input_channels}, {cfg.packed_rows})")
    P, buf = weights.params, weights.buffers
    new_buf = dict(buf)
    caches = {}
    h = x
    n_enc = len(cfg.encoder_channels)
    for i in range(n_enc):
        h, c_conv = L.conv_forward(h, P[f"enc{i}.weight"], P[f"enc{i}.bias"], cfg.stride, cfg.padding)
        h, c_bn, stats = L.batchnorm_forward(h, P[f"enc{i}.bn.gamma"], P[f"enc{i}.bn.beta"],
                                             buf[f"enc{i}.bn.running_mean"], buf[f"enc{i}.bn.running_var"],
                                             train, cfg.bn_momentum)
        new_buf[f"enc{i}.bn.running_mean"], new_buf[f"enc{i}.bn.running_var"] = stats
        h, c_relu = L.relu_forward(h)
        caches[f"enc{i}"] = (c_conv, c_bn, c_relu)
    h, c_tanh = L.tanh_forward(h)
    caches["enc_tanh"] = c_tanh
    C, Lb = h.shape[1], h.shape[2]
    seq = h.reshape(B, C * Lb, T).transpose(0, 2, 1)
    for layer in range(cfg.gru_layers):
        seq, c_gru = L.gru_forward(seq, P[f"gru{layer}.w_ih"], P[f"gru{layer}.w_hh"],
                                   P[f"gru{layer}.b_ih"], P[f"gru{layer}.b_hh"])
        caches[f"gru{layer}"] = c_gru
    seq, c_fc = L.linear_forward(seq, P["fc.weight"], P["fc.bias"])
    caches["fc"] = (c_fc, P["fc.weight"])
    h = np.ascontiguousarray(seq.transpose(0, 2, 1).reshape(B, C, Lb, T))
    ops = cfg.decoder_output_padding()
    n_dec = len(ops)
    for j in range(n_dec):
        h, c_ct = L.convt_forward(h, P[f"dec{j}.weight"], P[f"dec{j}.bias"], cfg.stride, cfg.padding, ops[j])
        if j < n_dec - 1:
            h, c_bn, stats = L.batchnorm_forward(h, P[f"dec{j}.bn.gamma"], P[f"dec{j}.bn.beta"],
                                                 buf[f"dec{j}.bn.running_mean"], buf[f"dec{j}.bn.running_var"],
                                                 train, cfg.bn_momentum)
            new_buf[f"dec{j}.bn.running_mean"], new_buf[f"dec{j}.bn.running_var"] = stats
            h, c_relu = L.relu_forward(h)
            caches[f"dec{j}"] = (c_ct, c_bn, c_relu)
        else:
            caches[f"dec{j}"] = (c_ct, None, None)
    F = cfg.n_bins
    mask = h[:, :, :F, :] + 1j * h[:, :, F:, :]
    return mask, caches, new_buf


def backward(dmask: np.ndarray, caches: dict, cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Parameter gradients given dL/dH as a complex array (Re = dL/dRe H, Im = dL/dIm H)."""
    grads: dict[str, np.ndarray] = {}
    dh = np.concatenate([dmask.real, dmask.imag], axis=2)
    n_dec = len(cfg.decoder_output_padding())
    for j in range(n_dec - 1, -1, -1):
        c_ct, c_bn, c_relu = caches[f"dec{j}"]
        if c_bn is not None:
            dh = L.relu_backward(dh, c_relu)
            dh, grads[f"dec{j}.bn.gamma"], grads[f"dec{j}.bn.beta"] = L.batchnorm_backward(dh, c_bn)
        dh, grads[f"dec{j}.weight"], grads[f"dec{j}.bias"] = L.convt_backward(dh, c_ct)
    B, C, Lb, T = dh.shape
    dseq = dh.reshape(B, C * Lb, T).transpose(0, 2, 1)
    x_fc, w_fc = caches["fc"]
    dseq, grads["fc.weight"], grads["fc.bias"] = L.linear_backward(dseq, x_fc, w_fc)
    for layer in range(cfg.gru_layers - 1, -1, -1):
        dseq, gw_ih, gw_hh, gb_ih, gb_hh = L.gru_backward(dseq, caches[f"gru{layer}"])
        grads[f"gru{layer}.w_ih"], grads[f"gru{layer}.w_hh"] = gw_ih, gw_hh
        grads[f"gru{layer}.b_ih"], grads[f"gru{layer}.b_hh"] = gb_ih, gb_hh
    dh = np.ascontiguousarray(dseq.transpose(0, 2, 1).reshape(B, C, Lb, T))
    dh = L.tanh_backward(dh, caches["enc_tanh"])
    for i in range(len(cfg.encoder_channels) - 1, -1, -1):
        c_conv, c_bn, c_relu = caches[f"enc{i}"]
        dh = L.relu_backward(dh, c_relu)
        dh, grads[f"enc{i}.bn.gamma"], grads[f"enc{i}.bn.beta"] = L.batchnorm_backward(dh, c_bn)
        dh, grads[f"enc{i}.weight"], grads[f"enc{i}.bias"] = L.conv_backward(dh, c_conv)
    return grads


def relu_masks(caches: dict) -> list[np.ndarray]:
    """Active-unit masks of every ReLU in a forward cache, encoder first."""
    out = []
    for key, val in caches.items():
        if key.startswith(("enc", "dec")) and isinstance(val, tuple) and val[2] is not None:
            out.append(val[2])
    return out
