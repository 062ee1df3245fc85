"""Scene -> room responses -> speech -> microphone mixture, in memory.

Everything here is a deterministic function of the scene seed and the
corpus contents, so rendering in worker processes gives the same bytes as
rendering serially.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .acoustics import RirConfig, scene_rirs
from .errors import SignalError
from .geometry import Scene, SsmConfig, sample_scene
from .rng import RngState, derive_seed, make_rng
from .signals import MonoSignal, UtteranceSpec, assemble_utterance, mix_images, render_microphones

# key separating utterance draws from geometry draws made with the same scene seed
_UTTERANCE_STREAM = 0x5EED
TRAIN_SPLIT, EVAL_SPLIT = 1, 2


@dataclass(frozen=True)
class Example:
    """One rendered utterance with everything training and evaluation need."""
    scene_id: str
    mics: np.ndarray      # (M, T)
    images: np.ndarray    # (N, M, T); mics == images.sum(0)
    desired: int
    snr_db: float
    seed: int
    sample_rate: int = 16000

    @property
    def n_speakers(self) -> int:
        return self.images.shape[0]

    @property
    def length(self) -> int:
        return self.mics.shape[-1]

    def targets(self, ref: int = 0) -> np.ndarray:
        return self.images[:, ref, :]


def draw_speaker_utterances(corpus: Sequence[MonoSignal], n_speakers: int, spec: UtteranceSpec,
                            rng: RngState) -> list[MonoSignal]:
    """One utterance per speaker built from disjoint corpus traces."""
    if not corpus:
        raise SignalError("corpus too small: empty")
    fs = corpus[0].sample_rate
    need = spec.target_duration * fs
    order = iter(rng.permutation(len(corpus)))
    out = []
    for _ in range(n_speakers):
        picked, total = [], 0
        while total < need:
            i = next(order, None)
            if i is None:
                raise SignalError(f"corpus too small: {len(corpus)} traces cannot fill "
                                  f"{n_speakers} utterances of {spec.target_duration} s")
            picked.append(corpus[int(i)])
            total += len(corpus[int(i)].samples)
        out.append(assemble_utterance(picked, spec, rng))
    return out


def render_example(scene: Scene, corpus: Sequence[MonoSignal], spec: UtteranceSpec = UtteranceSpec(),
                   rir_cfg: RirConfig = RirConfig(), scene_id: str = "", ref: int = 0) -> Example:
    rng = make_rng(derive_seed(scene.seed, _UTTERANCE_STREAM))
    utts = draw_speaker_utterances(corpus, scene.n_speakers, spec, rng)
    rirs = scene_rirs(scene, rir_cfg)
    images = render_microphones(utts, rirs)
    mix = mix_images(images, scene.selected_speaker(), scene.snr_db, ref=ref)
    return Example(scene_id, mix.mics, mix.images, mix.desired, scene.snr_db, scene.seed, rir_cfg.sample_rate)


_WORKER_CORPUS: Sequence[MonoSignal] = ()


def _init_worker(corpus):
    global _WORKER_CORPUS
    _WORKER_CORPUS = corpus


def _render_task(args):
    scene, spec, rir_cfg, scene_id, ref = args
    return render_example(scene, _WORKER_CORPUS, spec, rir_cfg, scene_id, ref)


def render_examples(scenes: Sequence[Scene], corpus: Sequence[MonoSignal], spec: UtteranceSpec = UtteranceSpec(),
                    rir_cfg: RirConfig = RirConfig(), scene_ids: Sequence[str] | None = None,
                    ref: int = 0, jobs: int = 1) -> list[Example]:
    """Render many scenes; results are returned in input order for any ``jobs``."""
    ids = list(scene_ids) if scene_ids is not None else [f"{i:05d}" for i in range(len(scenes))]
    tasks = [(s, spec, rir_cfg, i, ref) for s, i in zip(scenes, ids)]
    if jobs <= 1 or len(tasks) <= 1:
        return [render_example(s, corpus, spec, rir_cfg, i, ref) for s, spec, rir_cfg, i, ref in tasks]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(corpus,)) as pool:
        return list(pool.map(_render_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def training_scenes(cfg: SsmConfig, n_speakers: int, count: int, seed: int) -> list[Scene]:
    """Scenes with T60 and SNR drawn from their configured ranges."""
    return [sample_scene(cfg, n_speakers, derive_seed(seed, TRAIN_SPLIT, i)) for i in range(count)]


def evaluation_scenes(cfg: SsmConfig, n_speakers: int, per_bin: int, snr_bins: Sequence[float],
                      seed: int) -> list[Scene]:
    """``per_bin`` scenes pinned at each exact SNR, bin-major order."""
    out = []
    for b, snr in enumerate(snr_bins):
        for i in range(per_bin):
            out.append(sample_scene(cfg, n_speakers, derive_seed(seed, EVAL_SPLIT, b, i), snr_db=float(snr)))
    return out
