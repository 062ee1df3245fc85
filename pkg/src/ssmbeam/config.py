"""Workbench configuration: one JSON document with typed sections."""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .acoustics import RirConfig
from .beamnn.model import ModelConfig
from .beamnn.train import TrainConfig
from .corpus import CORPUS_ENV
from .errors import ConfigError, WorkbenchError
from .geometry import SsmConfig
from .signals import UtteranceSpec
from .spectral import StftConfig

CONFIG_VERSION = 1

# simulation bounds; leaving them needs an explicit override
T60_BOUNDS = (0.20, 1.00)
SNR_BOUNDS = (-10.0, 20.0)
HEIGHT_BOUNDS = (1.50, 1.95)
MAX_UNDERSHOT_DEG = 30.0


@dataclass(frozen=True)
class DatasetConfig:
    n_speakers: int = 2
    train_scenes: int = 200
    eval_scenes_per_bin: int = 50
    utterance_duration: float = 10.0
    # used when no corpus directory is available
    synthetic_traces: int = 400
    ref_mic: int = 0


@dataclass(frozen=True)
class EvalConfig:
    snr_bins: tuple[float, ...] = (-10.0, 0.0, 10.0, 20.0)
    stoi: bool = True


@dataclass(frozen=True)
class Seeds:
    scenes: int = 0
    corpus: int = 0
    train: int = 0


@dataclass(frozen=True)
class WorkbenchConfig:
    corpus_dir: str | None = None
    output_dir: str = "runs"
    ssm: SsmConfig = field(default_factory=SsmConfig)
    rir: RirConfig = field(default_factory=lambda: RirConfig(max_rir_length=8000))
    stft: StftConfig = field(default_factory=StftConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seeds: Seeds = field(default_factory=Seeds)

    def resolved_corpus_dir(self) -> str | None:
        return self.corpus_dir or os.environ.get(CORPUS_ENV) or None

    def utterance_spec(self) -> UtteranceSpec:
        return UtteranceSpec(target_duration=self.dataset.utterance_duration)

    def ssm_for(self, n_speakers: int) -> SsmConfig:
        """The N >= 3 evaluation relaxes distance and separation constraints."""
        if n_speakers >= 3:
            return replace(self.ssm, min_dist=min(self.ssm.min_dist, 0.5),
                           min_sep_deg=min(self.ssm.min_sep_deg, 20.0))
        return self.ssm


_SECTIONS = {"ssm": SsmConfig, "rir": RirConfig, "stft": StftConfig, "model": ModelConfig,
             "train": TrainConfig, "dataset": DatasetConfig, "eval": EvalConfig, "seeds": Seeds}
_TUPLE_FIELDS = {"room_dims", "t60_range", "snr_range", "height_range", "encoder_channels", "snr_bins"}


def _build(cls, data: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
    kwargs = {k: tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except WorkbenchError as exc:
        raise ConfigError(f"[{section}] {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def config_from_dict(data: dict) -> WorkbenchConfig:
    data = dict(data)
    version = data.pop("schema_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config schema_version {version}")
    kwargs = {}
    for key in ("corpus_dir", "output_dir"):
        if key in data:
            kwargs[key] = data.pop(key)
    for name, cls in _SECTIONS.items():
        if name in data:
            section = data.pop(name)
            if not isinstance(section, dict):
                raise ConfigError(f"[{name}] must be an object")
            kwargs[name] = _build(cls, section, name)
    if data:
        raise ConfigError(f"unknown top-level key(s): {sorted(data)}")
    return WorkbenchConfig(**kwargs)


def config_to_dict(cfg: WorkbenchConfig) -> dict:
    out = {"schema_version": CONFIG_VERSION, "corpus_dir": cfg.corpus_dir, "output_dir": cfg.output_dir}
    for name in _SECTIONS:
        d = asdict(getattr(cfg, name))
        out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
    return out


def dumps_config(cfg: WorkbenchConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"


def load_config(path: str | os.PathLike | None) -> WorkbenchConfig:
    if path is None:
        return WorkbenchConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    return config_from_dict(data)


def _within(rng: tuple[float, float], bounds: tuple[float, float]) -> bool:
    return bounds[0] - 1e-12 <= rng[0] and rng[1] <= bounds[1] + 1e-12


def range_violations(cfg: WorkbenchConfig) -> list[str]:
    """Settings outside the simulation bounds, as readable messages."""
    out = []
    s = cfg.ssm
    if not _within(s.t60_range, T60_BOUNDS):
        out.append(f"t60_range {s.t60_range} outside {T60_BOUNDS}")
    if not _within(s.snr_range, SNR_BOUNDS):
        out.append(f"snr_range {s.snr_range} outside {SNR_BOUNDS}")
    if not _within(s.height_range, HEIGHT_BOUNDS):
        out.append(f"height_range {s.height_range} outside {HEIGHT_BOUNDS}")
    if math.degrees(s.max_undershot) > MAX_UNDERSHOT_DEG + 1e-9:
        out.append(f"max_undershot {math.degrees(s.max_undershot):g} deg exceeds {MAX_UNDERSHOT_DEG:g}")
    for b in cfg.eval.snr_bins:
        if not SNR_BOUNDS[0] <= b <= SNR_BOUNDS[1]:
            out.append(f"evaluation SNR bin {b:g} outside {SNR_BOUNDS}")
    if cfg.dataset.n_speakers < 1:
        out.append("n_speakers must be >= 1")
    if cfg.dataset.utterance_duration <= 0:
        out.append("utterance_duration must be positive")
    if cfg.model.input_channels != 4:
        out.append(f"model input_channels {cfg.model.input_channels} != 4 microphones")
    if cfg.model.n_bins != cfg.stft.n_bins:
        out.append(f"model n_bins {cfg.model.n_bins} != STFT bins {cfg.stft.n_bins}")
    return out


def validate_config(cfg: WorkbenchConfig, override_ranges: bool = False) -> WorkbenchConfig:
    problems = range_violations(cfg)
    # structural mismatches cannot be overridden
    hard = [p for p in problems if "input_channels" in p or "n_bins" in p or "must be" in p]
    if hard or (problems and not override_ranges):
        raise ConfigError("; ".join(problems) + ("" if hard else " (use --override-ranges to allow)"))
    return cfg
