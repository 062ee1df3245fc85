"""Shared builders for network tests: small synthetic mixtures and a finite-difference checker."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ssmbeam.beamnn import model as net
from ssmbeam.beamnn.objective import loss_and_gradients
from ssmbeam.beamnn.train import PreparedItem, make_batch, prepare
from ssmbeam.pipeline import Example


def toy_example(seed: int, n_speakers: int = 2, mics: int = 2, length: int = 1024,
                desired: int = 0) -> Example:
    """Sources through short random multichannel filters; the mixture is their sum."""
    rng = np.random.default_rng(seed)
    images = np.empty((n_speakers, mics, length))
    for n in range(n_speakers):
        src = rng.standard_normal(length) * np.hanning(length) ** 0.25
        for m in range(mics):
            h = rng.standard_normal(6) * np.exp(-np.arange(6) / 2)
            images[n, m] = np.convolve(src, h)[:length]
    return Example(f"toy{seed}", images.sum(0), images, desired, 0.0, seed, 16000)


def toy_items(count: int, seed: int = 0, dtype=np.float64, **kw) -> list[PreparedItem]:
    return [prepare(toy_example(seed + k, **kw), dtype=dtype) for k in range(count)]


@dataclass(frozen=True)
class GradCheckReport:
    checked: int
    rejected_at_kinks: int
    failures: list[tuple[str, int, float]]
    max_rel_error: float


def gradient_check(cfg: net.ModelConfig, weights: net.BeamformerWeights, items, samples: int,
                   step: float = 1e-3, tol: float = 1e-4, seed: int = 0, train: bool = True,
                   floor: float = 1e-6) -> GradCheckReport:
    """Central differences on randomly chosen scalar parameters.

    Parameters are drawn uniformly over all scalars.  A sample whose
    +/- perturbation changes which ReLU units are active straddles a
    kink where the loss is not differentiable; such samples are counted
    and redrawn rather than compared.
    """
    batch = make_batch(items, [it.desired for it in items])
    _, grads, _, _ = loss_and_gradients(batch, weights, cfg, train=train)
    _, base_cache, _ = net.forward(batch.features, weights, cfg, train=train)
    base_masks = net.relu_masks(base_cache)
    names = sorted(weights.params)
    sizes = np.array([weights.params[k].size for k in names], dtype=float)
    rng = np.random.default_rng(seed)
    checked = rejected = 0
    failures: list[tuple[str, int, float]] = []
    worst = 0.0
    while checked < samples:
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        idx = int(rng.integers(weights.params[name].size))
        values = []
        kink = False
        for sign in (1.0, -1.0):
            w = weights.copy()
            w.params[name].flat[idx] += sign * step
            values.append(loss_and_gradients(batch, w, cfg, train=train)[0])
            _, cache, _ = net.forward(batch.features, w, cfg, train=train)
            kink |= any(not np.array_equal(a, b) for a, b in zip(base_masks, net.relu_masks(cache)))
        if kink:
            rejected += 1
            continue
        fd = (values[0] - values[1]) / (2 * step)
        an = float(grads[name].flat[idx])
        rel = abs(an - fd) / max(abs(an), abs(fd), floor)
        worst = max(worst, rel)
        if rel > tol:
            failures.append((name, idx, rel))
        checked += 1
    return GradCheckReport(checked, rejected, failures, worst)


def speech_items(count: int = 2, mics: int = 2, duration: float = 0.25, dtype=np.float64) -> list[PreparedItem]:
    """Short reverberant two-talker mixtures rendered from synthetic speech."""
    from dataclasses import replace

    from ssmbeam.acoustics import RirConfig
    from ssmbeam.corpus import synthetic_corpus
    from ssmbeam.geometry import SsmConfig, sample_scene
    from ssmbeam.pipeline import render_example
    from ssmbeam.signals import UtteranceSpec

    corpus = synthetic_corpus(6 * count, 0, duration_range=(1.0, 1.5))
    spec = UtteranceSpec(target_duration=duration)
    rir = RirConfig(max_rir_length=2000)
    out = []
    for s in range(count):
        scene = sample_scene(SsmConfig(), 2, s, t60=0.3, snr_db=0.0)
        ex = render_example(scene, corpus, spec, rir, f"speech{s}")
        ex = replace(ex, mics=ex.mics[:mics], images=ex.images[:, :mics])
        out.append(prepare(ex, dtype=dtype))
    return out
