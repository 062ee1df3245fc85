"""On-disk datasets: per-scene WAV files indexed by a JSON-lines manifest.

Each manifest line is one utterance::

    {"schema_version": 1, "scene_id": "...", "split": "train",
     "scene_file": "scenes/00000.json", "mic_wavs": [...M paths...],
     "image_wavs": [...N paths, each an M-channel WAV...],
     "selected_speaker": 0, "n_speakers": 2, "snr_db": 3.1, "seed": 123}

Paths are relative to the manifest's directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .geometry import dumps_scene, loads_scene
from .pipeline import Example
from .signals import MonoSignal, MultichannelSignal, read_wav, write_wav

MANIFEST_VERSION = 1
_REQUIRED = ("scene_id", "split", "scene_file", "mic_wavs", "image_wavs", "selected_speaker",
             "n_speakers", "snr_db", "seed")


@dataclass(frozen=True)
class ManifestRecord:
    scene_id: str
    split: str
    scene_file: str
    mic_wavs: tuple[str, ...]
    image_wavs: tuple[str, ...]
    selected_speaker: int
    n_speakers: int
    snr_db: float
    seed: int

    def to_json(self) -> str:
        d = {"schema_version": MANIFEST_VERSION, "scene_id": self.scene_id, "split": self.split,
             "scene_file": self.scene_file, "mic_wavs": list(self.mic_wavs),
             "image_wavs": list(self.image_wavs), "selected_speaker": self.selected_speaker,
             "n_speakers": self.n_speakers, "snr_db": self.snr_db, "seed": self.seed}
        return json.dumps(d, sort_keys=True)


def parse_record(line: str) -> ManifestRecord:
    try:
        d = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed manifest line: {exc}") from exc
    if d.get("schema_version") != MANIFEST_VERSION:
        raise ConfigError(f"unsupported manifest schema_version {d.get('schema_version')}")
    missing = [k for k in _REQUIRED if k not in d]
    if missing:
        raise ConfigError(f"manifest record lacks {missing}")
    return ManifestRecord(str(d["scene_id"]), str(d["split"]), d["scene_file"], tuple(d["mic_wavs"]),
                          tuple(d["image_wavs"]), int(d["selected_speaker"]), int(d["n_speakers"]),
                          float(d["snr_db"]), int(d["seed"]))


def read_manifest(path: str | os.PathLike, split: str | None = None) -> list[ManifestRecord]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    recs = [parse_record(line) for line in lines if line.strip()]
    return [r for r in recs if split is None or r.split == split]


def write_manifest(path: str | os.PathLike, records: Iterable[ManifestRecord]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("".join(r.to_json() + "\n" for r in records))
    os.replace(tmp, path)


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def store_example(example: Example, scene, root: str | os.PathLike, split: str) -> ManifestRecord:
    """Write scene JSON, one mono WAV per microphone and one M-channel WAV per speaker image."""
    root = Path(root)
    sid = example.scene_id
    (root / "scenes").mkdir(parents=True, exist_ok=True)
    (root / "audio" / sid).mkdir(parents=True, exist_ok=True)
    scene_file = f"scenes/{sid}.json"
    _atomic_text(root / scene_file, dumps_scene(scene))
    fs = example.sample_rate
    mic_wavs = []
    for m, ch in enumerate(example.mics):
        rel = f"audio/{sid}/mic{m}.wav"
        write_wav(root / rel, MonoSignal(ch.astype(np.float32), fs))
        mic_wavs.append(rel)
    image_wavs = []
    for n, img in enumerate(example.images):
        rel = f"audio/{sid}/speaker{n}.wav"
        write_wav(root / rel, MultichannelSignal(img.astype(np.float32), fs))
        image_wavs.append(rel)
    return ManifestRecord(sid, split, scene_file, tuple(mic_wavs), tuple(image_wavs), example.desired,
                          example.n_speakers, float(example.snr_db), int(example.seed))


def load_example(record: ManifestRecord, root: str | os.PathLike) -> Example:
    root = Path(root)
    mics = []
    fs = None
    for rel in record.mic_wavs:
        sig = read_wav(root / rel)
        fs = sig.sample_rate
        mics.append(np.asarray(sig.samples if isinstance(sig, MonoSignal) else sig.channels[0], dtype=float))
    images = []
    for rel in record.image_wavs:
        sig = read_wav(root / rel)
        ch = sig.channels if isinstance(sig, MultichannelSignal) else sig.samples[None, :]
        images.append(np.asarray(ch, dtype=float))
    return Example(record.scene_id, np.stack(mics), np.stack(images), record.selected_speaker,
                   record.snr_db, record.seed, int(fs))


def load_examples(records: Sequence[ManifestRecord], root: str | os.PathLike) -> list[Example]:
    return [load_example(r, root) for r in records]


def load_record_scene(record: ManifestRecord, root: str | os.PathLike):
    return loads_scene((Path(root) / record.scene_file).read_text())
