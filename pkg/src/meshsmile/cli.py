"""``meshsmile`` command-line entry point.

Exit status: 0 on success, 1 when the gradient check fails, 2 on
configuration or data errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .classifier import MeshSmileNet
from .config import DEFAULTS, RunConfig, describe_defaults
from .errors import ConfigInvalid, MeshSmileError
from .gradsuite import run_suite
from .landmark_io import (
    DatasetManifest,
    load_manifest,
    make_folds,
    read_landmark_csv,
    split_fold,
    write_landmark_file,
)
from .plotting import plot_fold_accuracy, plot_loss, plot_saliency
from .synthetic import generate_dataset
from .training import (
    cross_validate,
    evaluate_fold,
    load_sequences,
    saliency,
    train_fold,
    write_loss_csv,
    write_results_json,
    write_saliency_csv,
)


def _cfg_help(key: str, text: str) -> str:
    return f"{text} (default: config {key} = {json.dumps(DEFAULTS[key][0])})"


def _add_common(p: argparse.ArgumentParser, *, data: bool = True, training: bool = False) -> None:
    p.add_argument("--config", default=None, help="JSON config file (default: none)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; repeatable (default: none)")
    p.add_argument("--seed", type=int, default=None, help=_cfg_help("train.seed", "root seed"))
    if data:
        p.add_argument("--manifest", required=True, help="dataset manifest JSON (required)")
        p.add_argument("--fps", type=float, default=None, help=_cfg_help("data.fps", "resample rate"))
        p.add_argument("--clip-len", type=int, default=None, help=_cfg_help("data.clip_len", "frames per clip"))
        p.add_argument("--folds", type=int, default=None, help=_cfg_help("data.folds", "fold count"))
    if training:
        p.add_argument("--epochs", type=int, default=None, help=_cfg_help("train.epochs", "training epochs"))


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ConfigInvalid(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for flag, key in (("seed", "train.seed"), ("fps", "data.fps"), ("clip_len", "data.clip_len"),
                      ("folds", "data.folds"), ("epochs", "train.epochs")):
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = v
    return out


def _run_config(args) -> RunConfig:
    return RunConfig.load(args.config, _overrides(args))


# -- commands -----------------------------------------------------------------------------

def cmd_import(args) -> int:
    seq = read_landmark_csv(args.csv_path, args.fps, args.video_id)
    write_landmark_file(seq, args.out)
    print(f"wrote {args.out}: {seq.n_frames} frames x {seq.n_landmarks} landmarks at {seq.fps:g} fps")
    return 0


def cmd_gen_synthetic(args) -> int:
    rc = _run_config(args)
    if args.subjects is not None:
        rc.update({"synth.subjects": args.subjects})
    if args.per_class is not None:
        rc.update({"synth.per_class": args.per_class})
    if args.null_mode:
        rc.update({"synth.null_mode": True})
    manifest = generate_dataset(rc["synth.subjects"], rc["synth.per_class"], rc.kinematics_config(),
                                rc["train.seed"], args.out)
    path = Path(args.out) / "manifest.json"
    print(path)
    print(f"{len(manifest)} videos from {len(manifest.subjects)} subjects", file=sys.stderr)
    return 0


def _folds_for(manifest: DatasetManifest, cfg, fold: int):
    if fold < 0:  # train on everything
        return [[], [v.video_id for v in manifest.videos]], 0
    if fold >= cfg.fold_count:
        raise ConfigInvalid(f"--fold {fold} out of range for {cfg.fold_count} folds")
    return make_folds(manifest, cfg.fold_count, cfg.fold_seed(0)), fold


def cmd_train(args) -> int:
    rc = _run_config(args)
    cfg = rc.train_config()
    manifest = load_manifest(args.manifest)
    folds, fold = _folds_for(manifest, cfg, args.fold)
    train_recs, _ = split_fold(manifest, folds, fold)
    seqs = load_sequences(DatasetManifest(train_recs, manifest.root), cfg.fps)
    res = train_fold(manifest, fold, cfg, folds=folds, sequences=seqs,
                     on_epoch=lambda e, l: print(f"epoch {e} loss {l:.6f}", file=sys.stderr)
                     if args.verbose else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.model.save(out / "model.mswt")
    write_loss_csv(res.loss_history, out / "loss.csv")
    plot_loss(res.loss_history, out / "loss.svg")
    print(f"wrote {out / 'model.mswt'} and {out / 'loss.csv'} ({res.steps} steps)")
    return 0


def cmd_cross_validate(args) -> int:
    rc = _run_config(args)
    cfg = rc.train_config()
    manifest = load_manifest(args.manifest)

    def report(r):
        print(f"trial {r.trial} fold {r.fold_index}: accuracy {r.accuracy:.4f}", file=sys.stderr)

    result = cross_validate(manifest, cfg, jobs=args.jobs, on_fold=report)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_results_json(result, out / "results.json")
    for r in result.folds:
        write_loss_csv(r.loss_history, out / f"loss_trial{r.trial}_fold{r.fold_index}.csv")
    plot_fold_accuracy([r.accuracy for r in result.folds], out / "accuracy.svg")
    plot_loss({f"t{r.trial}f{r.fold_index}": list(r.loss_history) for r in result.folds},
              out / "loss.svg")
    print(json.dumps(result.to_json()))
    return 0


def _load_model(path) -> MeshSmileNet:
    if not Path(path).is_file():
        raise ConfigInvalid(f"checkpoint not found: {path}")
    return MeshSmileNet.load(path)


def cmd_eval(args) -> int:
    rc = _run_config(args)
    model = _load_model(args.checkpoint)
    cfg = rc.train_config()
    manifest = load_manifest(args.manifest)
    if args.fold < 0:
        folds, fold = [[v.video_id for v in manifest.videos]], 0
    else:
        folds, fold = _folds_for(manifest, cfg, args.fold)
    cfg = _with_clip(cfg, model)
    res = evaluate_fold(model, manifest, fold, folds=folds, cfg=cfg)
    print(json.dumps({"fold": args.fold, "accuracy": res.accuracy, "n_videos": len(res.scores)}))
    return 0


def _with_clip(cfg, model):
    return replace(cfg, clip_len=model.cfg.clip_len, model=model.cfg)


def cmd_saliency(args) -> int:
    rc = _run_config(args)
    model = _load_model(args.checkpoint)
    cfg = _with_clip(rc.train_config(), model)
    manifest = load_manifest(args.manifest)
    seqs = list(load_sequences(manifest, cfg.fps).values())
    smap = saliency(model, seqs, n_clips=cfg.eval_clips)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_saliency_csv(smap, out / "saliency.csv")
    positions = np.mean([s.coords.mean(axis=0) for s in seqs], axis=0)
    plot_saliency(positions, smap.importance, out / "saliency.svg")
    top = np.argsort(-smap.importance, kind="stable")[:5]
    print(f"wrote {out / 'saliency.csv'} and {out / 'saliency.svg'}; top landmarks {top.tolist()}")
    return 0


def cmd_gradcheck(args) -> int:
    res = run_suite(seed=args.seed, eps=args.eps, tol=args.tol)
    print(res.report)
    for name, err in res.report.per_tensor.items():
        flag = "" if err <= args.tol else "  <-- FAIL"
        print(f"  {name:<40} {err:.3e}{flag}")
    print(f"{res.seconds:.1f}s")
    return 0 if res.passed else 1


# -- parser -------------------------------------------------------------------------------

class _DefaultsFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Append the default only where the help text does not already state it."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "(default" in text or "(required)" in text or action.default is None:
            return text
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    fmt = _DefaultsFormatter
    p = argparse.ArgumentParser(prog="meshsmile", formatter_class=argparse.RawDescriptionHelpFormatter,
                                description="Spontaneous vs posed smile classification from 3D landmarks.",
                                epilog="config keys:\n" + describe_defaults())
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("import", help="convert a landmark CSV to MSLM", formatter_class=fmt)
    s.add_argument("csv_path", help="CSV with header f0_x,f0_y,f0_z,...; one row per frame")
    s.add_argument("--fps", type=float, required=True, help="frame rate of the CSV (required)")
    s.add_argument("--out", required=True, help="output .mslm path (required)")
    s.add_argument("--video-id", default=None, help="video id stored in the file (default: CSV stem)")
    s.set_defaults(func=cmd_import)

    s = sub.add_parser("gen-synthetic", help="write a synthetic dataset and manifest", formatter_class=fmt)
    _add_common(s, data=False)
    s.add_argument("--subjects", type=int, default=None, help=_cfg_help("synth.subjects", "subjects"))
    s.add_argument("--per-class", type=int, default=None, help=_cfg_help("synth.per_class", "videos per subject per label"))
    s.add_argument("--null-mode", action="store_true", help="labels carry no onset information")
    s.add_argument("--out", required=True, help="output directory (required)")
    s.set_defaults(func=cmd_gen_synthetic)

    s = sub.add_parser("train", help="train one model; writes checkpoint and loss CSV", formatter_class=fmt)
    _add_common(s, training=True)
    s.add_argument("--fold", type=int, default=-1, help="held-out fold; -1 trains on every video")
    s.add_argument("--out", required=True, help="output directory (required)")
    s.add_argument("--verbose", action="store_true", help="print per-epoch loss")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("cross-validate", help="subject-disjoint k-fold protocol", formatter_class=fmt)
    _add_common(s, training=True)
    s.add_argument("--jobs", type=int, default=1, help="folds trained in parallel processes")
    s.add_argument("--out", required=True, help="output directory (required)")
    s.set_defaults(func=cmd_cross_validate)

    s = sub.add_parser("eval", help="accuracy of a checkpoint on one fold", formatter_class=fmt)
    _add_common(s)
    s.add_argument("--checkpoint", required=True, help="MSWT checkpoint (required)")
    s.add_argument("--fold", type=int, default=-1, help="test fold; -1 evaluates every video")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("saliency", help="per-landmark gradient importance (CSV + SVG)", formatter_class=fmt)
    _add_common(s)
    s.add_argument("--checkpoint", required=True, help="MSWT checkpoint (required)")
    s.add_argument("--out", required=True, help="output directory (required)")
    s.set_defaults(func=cmd_saliency)

    s = sub.add_parser("gradcheck", help="finite-difference check of the tiny model", formatter_class=fmt)
    s.add_argument("--seed", type=int, default=0, help="seed for weights and inputs")
    s.add_argument("--eps", type=float, default=1e-5, help="central-difference step")
    s.add_argument("--tol", type=float, default=1e-4, help="maximum relative error")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (MeshSmileError, OSError) as exc:
        print(f"meshsmile {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
