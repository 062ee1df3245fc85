"""Adam training loop with SSM or random target selection, plus checkpoints.

Checkpoint layout (a single ``.npz`` archive, i.e. a zip of ``.npy``
arrays, each carrying its own name, shape, dtype and little-endian data):

    param/<name>      model parameter
    buffer/<name>     batch-norm running statistic
    adam_m/<name>     first-moment estimate
    adam_v/<name>     second-moment estimate
    __meta__          uint8 array holding UTF-8 JSON: format version, step,
                      epoch, seed, selector, model and training config,
                      loss and validation history
"""

from __future__ import annotations

import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..errors import ModelError, TrainingDivergedError
from ..metrics import si_sdr
from ..rng import derive_seed, make_rng
from ..spectral import StftConfig, pack_features, stft
from .model import BeamformerWeights, ModelConfig, init_weights
from .objective import Batch, enhance, loss_and_gradients

CHECKPOINT_VERSION = 1
SELECTORS = ("ssm", "random")
# stream keys for derived seeds
_INIT, _SHUFFLE, _RANDOM_TARGET = 1, 2, 3


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 4
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    selector: str = "ssm"
    dtype: str = "float32"
    per_bin_norm: bool = False
    max_steps: int | None = None
    ref_mic: int = 0

    def __post_init__(self):
        if self.selector not in SELECTORS:
            raise ModelError(f"selector must be one of {SELECTORS}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ModelError("batch_size must be >= 1 and epochs >= 0")
        if self.learning_rate <= 0:
            raise ModelError("learning_rate must be positive")


@dataclass
class TrainState:
    weights: BeamformerWeights
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    step: int = 0
    seed: int = 0
    loss_history: list[float] = field(default_factory=list)
    val_history: list[dict] = field(default_factory=list)

    def __post_init__(self):
        for k, v in self.weights.params.items():
            if self.adam_m[k].shape != v.shape or self.adam_v[k].shape != v.shape:
                raise ModelError(f"optimizer moments do not match parameter {k}")


def new_state(model_cfg: ModelConfig, train_cfg: TrainConfig) -> TrainState:
    w = init_weights(model_cfg, make_rng(derive_seed(train_cfg.seed, _INIT)), np.dtype(train_cfg.dtype))
    zeros = lambda: {k: np.zeros_like(v) for k, v in w.params.items()}  # noqa: E731
    return TrainState(w, zeros(), zeros(), 0, train_cfg.seed)


def adam_update(state: TrainState, grads: dict[str, np.ndarray], cfg: TrainConfig) -> None:
    """In-place Adam step with bias correction."""
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for k, p in state.weights.params.items():
        g = grads[k].astype(p.dtype, copy=False)
        m, v = state.adam_m[k], state.adam_v[k]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= (cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.dtype)


def select_target(desired: int, n_speakers: int, selector: str, seed: int, epoch: int, index: int) -> int:
    """Target speaker for one utterance in one epoch.

    ``ssm`` keeps the geometric selection; ``random`` draws uniformly
    among all speakers, independently per (epoch, utterance).
    """
    if selector == "ssm":
        return desired
    if selector == "random":
        return int(make_rng(derive_seed(seed, _RANDOM_TARGET, epoch, index)).integers(n_speakers))
    raise ModelError(f"unknown selector {selector!r}")


@dataclass(frozen=True)
class PreparedItem:
    mics: np.ndarray      # (M, F, T) complex
    features: np.ndarray  # (M, 2F, T)
    targets: np.ndarray   # (N, length) reference-mic images
    desired: int
    length: int


def prepare(example, stft_cfg: StftConfig = StftConfig(), ref: int = 0, per_bin: bool = False,
            dtype=np.float32) -> PreparedItem:
    """STFT and packed features for anything with ``mics``, ``images`` and ``desired``."""
    spec = stft(example.mics, stft_cfg)
    feats = pack_features(spec, per_bin=per_bin, dtype=dtype).data
    return PreparedItem(spec.data, feats, np.asarray(example.images[:, ref, :], dtype=float),
                        int(example.desired), example.mics.shape[-1])


def make_batch(items: Sequence[PreparedItem], targets: Sequence[int]) -> Batch:
    lengths = {it.length for it in items}
    if len(lengths) != 1:
        raise ModelError("batch items must share one length")
    return Batch(np.stack([it.mics for it in items]),
                 np.stack([it.features for it in items]),
                 np.stack([it.targets[t] for it, t in zip(items, targets)]),
                 lengths.pop())


def epoch_order(n_items: int, seed: int, epoch: int) -> np.ndarray:
    return make_rng(derive_seed(seed, _SHUFFLE, epoch)).permutation(n_items)


def steps_per_epoch(n_items: int, batch_size: int) -> int:
    return -(-n_items // batch_size)


def batch_at(step: int, items: Sequence[PreparedItem], cfg: TrainConfig) -> tuple[Batch, list[int]]:
    """The batch consumed at global ``step``; depends only on (seed, step)."""
    spe = steps_per_epoch(len(items), cfg.batch_size)
    epoch, pos = divmod(step, spe)
    order = epoch_order(len(items), cfg.seed, epoch)
    idx = [int(i) for i in order[pos * cfg.batch_size:(pos + 1) * cfg.batch_size]]
    targets = [select_target(items[i].desired, items[i].targets.shape[0], cfg.selector, cfg.seed, epoch, i)
               for i in idx]
    return make_batch([items[i] for i in idx], targets), idx


def train_step(state: TrainState, items: Sequence[PreparedItem], model_cfg: ModelConfig,
               cfg: TrainConfig, stft_cfg: StftConfig = StftConfig()) -> float:
    batch, _ = batch_at(state.step, items, cfg)
    loss, grads, new_buf, _ = loss_and_gradients(batch, state.weights, model_cfg, train=True, stft_cfg=stft_cfg)
    adam_update(state, grads, cfg)
    state.weights.buffers.update(new_buf)
    for k, v in state.weights.params.items():
        if not np.all(np.isfinite(v)):
            raise TrainingDivergedError(f"parameter {k} became non-finite at step {state.step}")
    state.loss_history.append(loss)
    return loss


def validate(weights: BeamformerWeights, model_cfg: ModelConfig, items: Sequence[PreparedItem],
             stft_cfg: StftConfig = StftConfig()) -> float:
    """Mean eval-mode SI-SDR against each item's geometrically selected speaker."""
    scores = []
    for it in items:
        est = enhance(it.mics[None], it.features[None], weights, model_cfg, it.length, stft_cfg)[0]
        scores.append(si_sdr(est, it.targets[it.desired]))
    return float(np.mean(scores)) if scores else float("nan")


def train(items: Sequence[PreparedItem], model_cfg: ModelConfig, cfg: TrainConfig,
          state: TrainState | None = None, val_items: Sequence[PreparedItem] = (),
          checkpoint_path: str | os.PathLike | None = None,
          log: Callable[[str], None] | None = None, stft_cfg: StftConfig = StftConfig()) -> TrainState:
    """Run (or resume) training until ``epochs`` epochs or ``max_steps`` steps are done.

    A checkpoint is written after every epoch and, when the loss
    diverges, once more before the error is re-raised.
    """
    if not items:
        raise ModelError("empty training set")
    state = state if state is not None else new_state(model_cfg, cfg)
    spe = steps_per_epoch(len(items), cfg.batch_size)
    total = cfg.epochs * spe if cfg.max_steps is None else min(cfg.max_steps, cfg.epochs * spe)
    while state.step < total:
        try:
            loss = train_step(state, items, model_cfg, cfg, stft_cfg)
        except TrainingDivergedError:
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, state, model_cfg, cfg)
            raise
        if state.step % spe == 0 or state.step == total:
            epoch = math.ceil(state.step / spe) - 1
            recent = state.loss_history[-spe:]
            rec = {"epoch": epoch, "step": state.step, "train_loss": float(np.mean(recent))}
            if val_items:
                rec["val_si_sdr"] = validate(state.weights, model_cfg, val_items, stft_cfg)
            state.val_history.append(rec)
            if log is not None:
                log(json.dumps(rec))
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, state, model_cfg, cfg)
        elif log is not None and state.step % 10 == 0:
            log(f"step {state.step} loss {loss:.4f}")
    return state


# -- checkpoints ---------------------------------------------------------------------

def _model_cfg_dict(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    d["encoder_channels"] = list(cfg.encoder_channels)
    return d


def save_checkpoint(path: str | os.PathLike, state: TrainState, model_cfg: ModelConfig,
                    train_cfg: TrainConfig) -> None:
    """Atomically write ``path`` (write to a temp file, then rename)."""
    arrays = {}
    for prefix, group in (("param", state.weights.params), ("buffer", state.weights.buffers),
                          ("adam_m", state.adam_m), ("adam_v", state.adam_v)):
        for k, v in group.items():
            arrays[f"{prefix}/{k}"] = np.ascontiguousarray(v).astype(v.dtype.newbyteorder("<"))
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "step": state.step,
        "seed": state.seed,
        "model_config": _model_cfg_dict(model_cfg),
        "train_config": asdict(train_cfg),
        "loss_history": state.loss_history,
        "val_history": state.val_history,
    }
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> tuple[TrainState, ModelConfig, TrainConfig]:
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ModelError(f"cannot read checkpoint {path}: {exc}") from exc
    with archive:
        if "__meta__" not in archive.files:
            raise ModelError(f"{path} is not a checkpoint (no metadata)")
        meta = json.loads(archive["__meta__"].tobytes().decode("utf-8"))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ModelError(f"unsupported checkpoint version {meta.get('format_version')}")
        groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "buffer": {}, "adam_m": {}, "adam_v": {}}
        for name in archive.files:
            if name == "__meta__":
                continue
            prefix, key = name.split("/", 1)
            groups[prefix][key] = archive[name].astype(archive[name].dtype.newbyteorder("="))
    mc = dict(meta["model_config"])
    mc["encoder_channels"] = tuple(mc["encoder_channels"])
    model_cfg = ModelConfig(**mc)
    train_cfg = TrainConfig(**meta["train_config"])
    state = TrainState(BeamformerWeights(groups["param"], groups["buffer"]), groups["adam_m"], groups["adam_v"],
                       int(meta["step"]), int(meta["seed"]), list(meta["loss_history"]), list(meta["val_history"]))
    return state, model_cfg, train_cfg


def resume_config(saved: TrainConfig, **overrides) -> TrainConfig:
    return replace(saved, **overrides)
