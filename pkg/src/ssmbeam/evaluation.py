"""Score rendered examples with every method of the results table."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .beamnn.model import BeamformerWeights, ModelConfig
from .beamnn.objective import enhance
from .beamnn.train import prepare
from .errors import MetricError
from .metrics import METHODS, EvalRecord, si_sdr, stoi
from .mvdr import mvdr_filter, oracle_mvdr
from .spectral import StftConfig, istft, stft

Model = tuple[BeamformerWeights, ModelConfig]


def mvdr_estimate(example, ref: int = 0, stft_cfg: StftConfig = StftConfig()) -> np.ndarray:
    images = stft(example.images, stft_cfg).data        # (N, M, F, T)
    w = oracle_mvdr(images, example.desired, ref)
    return istft(mvdr_filter(stft(example.mics, stft_cfg).data, w), example.length, stft_cfg)


def method_estimate(method: str, example, models: Mapping[str, Model], ref: int = 0,
                    stft_cfg: StftConfig = StftConfig(), per_bin: bool = False) -> np.ndarray:
    if method == "mixed":
        return np.asarray(example.mics[ref], dtype=float)
    if method == "mvdr":
        return mvdr_estimate(example, ref, stft_cfg)
    if method in ("nn", "nn+ssm"):
        if method not in models:
            raise MetricError(f"missing checkpoint for method {method!r}")
        weights, cfg = models[method]
        item = prepare(example, stft_cfg, ref, per_bin, dtype=weights.dtype)
        return enhance(item.mics[None], item.features[None], weights, cfg, item.length, stft_cfg)[0]
    raise MetricError(f"unknown method {method!r}")


def evaluate(examples: Sequence, models: Mapping[str, Model] | None = None,
             methods: Sequence[str] | None = None, ref: int = 0,
             stft_cfg: StftConfig = StftConfig(), with_stoi: bool = True,
             per_bin: bool = False) -> list[EvalRecord]:
    """One record per (example, method).

    ``methods`` defaults to "mixed" and "mvdr" plus whichever network
    methods have a model supplied.
    """
    models = dict(models or {})
    if methods is None:
        methods = [m for m in METHODS if m in ("mixed", "mvdr") or m in models]
    records = []
    for ex in examples:
        target = np.asarray(ex.images[ex.desired, ref], dtype=float)
        for method in methods:
            est = method_estimate(method, ex, models, ref, stft_cfg, per_bin)
            score = stoi(est, target, ex.sample_rate) if with_stoi else 0.0
            records.append(EvalRecord(ex.scene_id, method, ex.n_speakers, float(ex.snr_db),
                                      score, si_sdr(est, target)))
    return records
