"""Command-line driver: scenes -> dataset -> train -> eval -> report.

Exit status is 0 on success and otherwise the ``exit_code`` of the raised
error class (see ``ssmbeam.errors``); argparse usage errors exit with 2.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .beamnn.train import TrainState, load_checkpoint, prepare, train
from .config import dumps_config, load_config, validate_config
from .corpus import load_corpus, synthetic_corpus
from .errors import ConfigError, WorkbenchError
from .evaluation import evaluate
from .geometry import check_scene, dumps_scene, loads_scene
from .manifest import load_examples, read_manifest, store_example, write_manifest
from .metrics import METHODS, format_table, record_dict, rows_from_csv, rows_to_csv, summarize
from .pipeline import evaluation_scenes, render_examples, training_scenes

SCENE_INDEX = "index.json"


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "corpus", None):
        cfg = replace(cfg, corpus_dir=args.corpus)
    return validate_config(cfg, override_ranges=args.override_ranges)


# -- subcommands -------------------------------------------------------------------------

def cmd_config(args) -> int:
    text = dumps_config(_config(args))
    if args.out:
        _atomic_write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_scenes(args) -> int:
    cfg = _config(args)
    n = args.n_speakers or cfg.dataset.n_speakers
    ssm = cfg.ssm_for(n)
    seed = cfg.seeds.scenes if args.seed is None else args.seed
    if args.split == "train":
        scenes = training_scenes(ssm, n, args.count, seed)
    else:
        scenes = evaluation_scenes(ssm, n, args.count, cfg.eval.snr_bins, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, scene in enumerate(scenes):
        problems = check_scene(scene, ssm, check_ranges=not args.override_ranges)
        if problems:
            raise ConfigError(f"scene {i} violates constraints: {problems}")
        name = f"{args.split}_n{n}_{i:05d}.json"
        _atomic_write(out / name, dumps_scene(scene))
        names.append(name)
    index = {"schema_version": 1, "split": args.split, "n_speakers": n, "seed": seed, "scenes": names}
    _atomic_write(out / SCENE_INDEX, json.dumps(index, indent=2, sort_keys=True) + "\n")
    _log(f"wrote {len(names)} scenes to {out}")
    return 0


def _corpus(cfg):
    root = cfg.resolved_corpus_dir()
    if root:
        corpus = load_corpus(root)
        _log(f"loaded {len(corpus)} corpus traces from {root}")
    else:
        corpus = synthetic_corpus(cfg.dataset.synthetic_traces, cfg.seeds.corpus)
        _log(f"no corpus directory configured; using {len(corpus)} synthetic speech-like traces")
    return corpus


def cmd_dataset(args) -> int:
    cfg = _config(args)
    scene_dir = Path(args.scenes)
    try:
        index = json.loads((scene_dir / SCENE_INDEX).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scene index in {scene_dir}: {exc}") from exc
    scenes = [loads_scene((scene_dir / name).read_text()) for name in index["scenes"]]
    ids = [Path(name).stem for name in index["scenes"]]
    corpus = _corpus(cfg)
    examples = render_examples(scenes, corpus, cfg.utterance_spec(), cfg.rir, ids,
                               cfg.dataset.ref_mic, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = [store_example(ex, sc, out, index["split"]) for ex, sc in zip(examples, scenes)]
    manifest = out / "manifest.jsonl"
    if args.append and manifest.exists():
        kept = [r for r in read_manifest(manifest) if r.scene_id not in set(ids)]
        records = kept + records
    write_manifest(manifest, records)
    _log(f"wrote {len(examples)} records to {manifest}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    manifest = Path(args.manifest)
    root = manifest.parent
    train_cfg = replace(cfg.train, selector=args.selector)
    if args.epochs is not None:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    if args.max_steps is not None:
        train_cfg = replace(train_cfg, max_steps=args.max_steps)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    model_cfg = cfg.model
    ckpt = Path(args.out)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    state: TrainState | None = None
    if args.resume and ckpt.exists():
        state, model_cfg, saved = load_checkpoint(ckpt)
        train_cfg = replace(saved, epochs=train_cfg.epochs, max_steps=train_cfg.max_steps)
        _log(f"resuming from step {state.step}")
    records = read_manifest(manifest, split="train")
    if args.limit:
        records = records[:args.limit]
    if not records:
        raise ConfigError(f"no training records in {manifest}")
    ref = cfg.dataset.ref_mic
    items = [prepare(ex, cfg.stft, ref, train_cfg.per_bin_norm, train_cfg.dtype)
             for ex in load_examples(records, root)]
    val_items = []
    if args.val_manifest:
        vpath = Path(args.val_manifest)
        val_items = [prepare(ex, cfg.stft, ref, train_cfg.per_bin_norm, train_cfg.dtype)
                     for ex in load_examples(read_manifest(vpath, split="eval")[:args.val_limit], vpath.parent)]
    state = train(items, model_cfg, train_cfg, state, val_items, ckpt, _log, cfg.stft)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss"])
    for i, loss in enumerate(state.loss_history, start=1):
        w.writerow([i, repr(loss)])
    _atomic_write(ckpt.with_suffix(".loss.csv"), buf.getvalue())
    _log(f"checkpoint {ckpt} at step {state.step}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    manifest = Path(args.manifest)
    records = read_manifest(manifest, split="eval")
    if args.limit:
        records = records[:args.limit]
    if not records:
        raise ConfigError(f"no eval records in {manifest}")
    models = {}
    for method, path in (("nn", args.nn), ("nn+ssm", args.nn_ssm)):
        if path:
            state, model_cfg, _ = load_checkpoint(path)
            models[method] = (state.weights, model_cfg)
    examples = load_examples(records, manifest.parent)
    recs = evaluate(examples, models, ref=cfg.dataset.ref_mic, stft_cfg=cfg.stft, with_stoi=cfg.eval.stoi,
                    per_bin=cfg.train.per_bin_norm)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "records.jsonl", "".join(json.dumps(record_dict(r), sort_keys=True) + "\n" for r in recs))
    rows = summarize(recs)
    _atomic_write(out / "results.csv", rows_to_csv(rows))
    _atomic_write(out / "report.txt", format_table(rows))
    sys.stdout.write(format_table(rows))
    return 0


def cmd_report(args) -> int:
    try:
        text = Path(args.csv).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {args.csv}: {exc}") from exc
    table = format_table(rows_from_csv(text))
    if args.out:
        _atomic_write(Path(args.out), table)
    sys.stdout.write(table)
    return 0


# -- parser ----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssmbeam", description="Speaker-selection beamforming workbench.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults built in)")
    common.add_argument("--override-ranges", action="store_true",
                        help="allow parameter ranges outside the simulation bounds")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("config", parents=[common], help="print the effective configuration")
    s.add_argument("--out")
    s.set_defaults(func=cmd_config)

    s = sub.add_parser("scenes", parents=[common], help="sample scene files")
    s.add_argument("--count", type=int, required=True, help="scenes (train) or scenes per SNR bin (eval)")
    s.add_argument("--split", choices=("train", "eval"), default="train")
    s.add_argument("--n-speakers", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scenes)

    s = sub.add_parser("dataset", parents=[common], help="render scenes to WAVs and a manifest")
    s.add_argument("--scenes", required=True, help="directory written by `scenes`")
    s.add_argument("--out", required=True)
    s.add_argument("--corpus", help="speech corpus directory (else $SSMBEAM_CORPUS, else synthetic)")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--append", action="store_true", help="merge into an existing manifest")
    s.set_defaults(func=cmd_dataset)

    s = sub.add_parser("train", parents=[common], help="train the beamformer")
    s.add_argument("--manifest", required=True)
    s.add_argument("--selector", choices=("ssm", "random"), default="ssm")
    s.add_argument("--out", required=True, help="checkpoint path (.npz)")
    s.add_argument("--resume", action="store_true")
    s.add_argument("--epochs", type=int)
    s.add_argument("--max-steps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--limit", type=int, help="use only the first N training records")
    s.add_argument("--val-manifest")
    s.add_argument("--val-limit", type=int, default=20)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="score every method on eval records")
    s.add_argument("--manifest", required=True)
    s.add_argument("--nn", help="checkpoint trained with random targets")
    s.add_argument("--nn-ssm", help="checkpoint trained with SSM targets")
    s.add_argument("--limit", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="format a results CSV as a table")
    s.add_argument("--csv", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args))
    except WorkbenchError as exc:
        _log(f"error ({type(exc).__name__}): {exc}")
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
