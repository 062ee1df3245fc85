from __future__ import annotations

import numpy as np
import pytest

from ssmbeam.acoustics import RirConfig
from ssmbeam.corpus import CORPUS_ENV, load_corpus, synthetic_corpus, synthetic_utterance
from ssmbeam.errors import SignalError
from ssmbeam.evaluation import evaluate, method_estimate
from ssmbeam.errors import MetricError
from ssmbeam.geometry import SsmConfig, check_scene, sample_scene
from ssmbeam.manifest import load_example, read_manifest, store_example, write_manifest, parse_record
from ssmbeam.errors import ConfigError
from ssmbeam.metrics import si_sdr
from ssmbeam.pipeline import (
    draw_speaker_utterances,
    evaluation_scenes,
    render_example,
    render_examples,
    training_scenes,
)
from ssmbeam.rng import make_rng
from ssmbeam.signals import MonoSignal, MultichannelSignal, UtteranceSpec, write_wav

SHORT = UtteranceSpec(target_duration=1.0)
RIR = RirConfig(max_rir_length=1200)


@pytest.fixture(scope="module")
def corpus():
    return synthetic_corpus(24, 0, duration_range=(0.6, 1.2))


def test_synthetic_utterance_properties():
    x = synthetic_utterance(2.0, make_rng(0)).samples
    assert len(x) == 32000 and np.max(np.abs(x)) == pytest.approx(0.5)
    frame_energy = np.sum(x[: 32000 // 320 * 320].reshape(-1, 320) ** 2, axis=1)
    # speech-like: a wide spread between loud syllables and pauses
    assert 10 * np.log10(frame_energy.max() / (np.percentile(frame_energy, 10) + 1e-12)) > 20


def test_synthetic_corpus_prefix_stable():
    a = synthetic_corpus(5, 3, duration_range=(0.3, 0.5))
    b = synthetic_corpus(8, 3, duration_range=(0.3, 0.5))
    assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a, b))
    assert not np.array_equal(a[0].samples, synthetic_corpus(1, 4, (0.3, 0.5))[0].samples)


def test_load_corpus_walks_tree(tmp_path, monkeypatch):
    (tmp_path / "spk1" / "ch1").mkdir(parents=True)
    (tmp_path / "spk2").mkdir()
    write_wav(tmp_path / "spk1" / "ch1" / "a.wav", MonoSignal(0.1 * np.ones(800)))
    write_wav(tmp_path / "spk2" / "b.wav", MultichannelSignal(0.1 * np.ones((2, 2400)), 48000))
    write_wav(tmp_path / "spk2" / "silent.wav", MonoSignal(np.zeros(100)))
    monkeypatch.setenv(CORPUS_ENV, str(tmp_path))
    traces = load_corpus()
    assert [len(t.samples) for t in traces] == [800, 800]
    assert all(t.sample_rate == 16000 for t in traces)


def test_load_corpus_errors(tmp_path, monkeypatch):
    monkeypatch.delenv(CORPUS_ENV, raising=False)
    with pytest.raises(SignalError):
        load_corpus()
    with pytest.raises(SignalError):
        load_corpus(tmp_path)


def test_speakers_get_disjoint_traces():
    corpus = [MonoSignal(np.full(1600, float(k + 1))) for k in range(6)]
    spec = UtteranceSpec(target_duration=0.2, fade_range=(0.0, 0.0), gain_range_db=(0.0, 0.0))
    utts = draw_speaker_utterances(corpus, 3, spec, make_rng(1))
    values = [set(np.unique(u.samples)) for u in utts]
    # each speaker needs two traces and no trace is shared
    assert all(len(v) == 2 for v in values)
    assert len(set().union(*values)) == 6


def test_corpus_too_small():
    corpus = [MonoSignal(np.ones(1600)) for _ in range(2)]
    with pytest.raises(SignalError, match="corpus too small"):
        draw_speaker_utterances(corpus, 3, UtteranceSpec(target_duration=0.1), make_rng(0))


def test_render_example_contract(corpus):
    scene = sample_scene(SsmConfig(), 2, 7, t60=0.3, snr_db=5.0)
    ex = render_example(scene, corpus, SHORT, RIR, "x")
    assert ex.mics.shape == (4, 16000) and ex.images.shape == (2, 4, 16000)
    assert np.allclose(ex.mics, ex.images.sum(0))
    assert ex.desired == scene.selected_speaker()
    interf = np.delete(ex.images[:, 0], ex.desired, axis=0).sum(0)
    p_d = np.mean(ex.images[ex.desired, 0] ** 2)
    assert 10 * np.log10(p_d / np.mean(interf ** 2)) == pytest.approx(5.0, abs=1e-6)
    again = render_example(scene, corpus, SHORT, RIR, "x")
    assert np.array_equal(ex.mics, again.mics)


def test_parallel_render_matches_serial(corpus):
    scenes = training_scenes(SsmConfig(), 2, 3, 5)
    serial = render_examples(scenes, corpus, SHORT, RIR)
    parallel = render_examples(scenes, corpus, SHORT, RIR, jobs=2)
    for a, b in zip(serial, parallel):
        assert a.scene_id == b.scene_id and np.array_equal(a.mics, b.mics)


def test_scene_sets_valid_and_seeded():
    train = training_scenes(SsmConfig(), 2, 10, 1)
    assert all(not check_scene(s, SsmConfig()) for s in train)
    assert len({s.seed for s in train}) == 10
    ev = evaluation_scenes(SsmConfig(), 2, 3, (-10.0, 0.0), 1)
    assert [s.snr_db for s in ev] == [-10.0] * 3 + [0.0] * 3
    assert training_scenes(SsmConfig(), 2, 10, 1) == train


def test_manifest_round_trip(tmp_path, corpus):
    scene = sample_scene(SsmConfig(), 2, 3, t60=0.3, snr_db=0.0)
    ex = render_example(scene, corpus, SHORT, RIR, "s3")
    rec = store_example(ex, scene, tmp_path, "eval")
    write_manifest(tmp_path / "manifest.jsonl", [rec])
    [back] = read_manifest(tmp_path / "manifest.jsonl", split="eval")
    assert back == rec and read_manifest(tmp_path / "manifest.jsonl", split="train") == []
    loaded = load_example(back, tmp_path)
    assert np.array_equal(loaded.mics, ex.mics.astype(np.float32))
    assert np.array_equal(loaded.images, ex.images.astype(np.float32))
    assert loaded.desired == ex.desired


def test_manifest_bad_lines():
    with pytest.raises(ConfigError):
        parse_record("{not json")
    with pytest.raises(ConfigError):
        parse_record('{"schema_version": 99}')
    with pytest.raises(ConfigError):
        parse_record('{"schema_version": 1, "scene_id": "a"}')


def test_evaluate_baselines(corpus):
    scenes = evaluation_scenes(SsmConfig(), 2, 2, (0.0,), 9)
    examples = render_examples(scenes, corpus, SHORT, RIR)
    recs = evaluate(examples, with_stoi=False)
    assert [r.method for r in recs] == ["mixed", "mvdr"] * 2
    for ex in examples:
        target = ex.images[ex.desired, 0]
        assert measured_snr_db_of(ex) == pytest.approx(0.0, abs=1e-6)
        mixed = next(r for r in recs if r.scene_id == ex.scene_id and r.method == "mixed")
        assert mixed.si_sdr == pytest.approx(si_sdr(ex.mics[0], target))


def measured_snr_db_of(ex):
    interf = np.delete(ex.images[:, 0], ex.desired, axis=0).sum(0)
    return 10 * np.log10(np.mean(ex.images[ex.desired, 0] ** 2) / np.mean(interf ** 2))


def test_identity_estimate_scores(corpus):
    ex = render_examples(evaluation_scenes(SsmConfig(), 2, 1, (0.0,), 4), corpus, SHORT, RIR)[0]
    target = ex.images[ex.desired, 0]
    assert si_sdr(target, target) >= 60.0


def test_missing_checkpoint(corpus):
    ex = render_examples(evaluation_scenes(SsmConfig(), 2, 1, (0.0,), 4), corpus, SHORT, RIR)[0]
    with pytest.raises(MetricError, match="missing checkpoint"):
        method_estimate("nn+ssm", ex, {})
    with pytest.raises(MetricError):
        evaluate([ex], {}, methods=["nn"], with_stoi=False)
