"""Batch command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 domain error (message printed verbatim), 2 usage
error. Structured log lines (one JSON object per line) go to stderr; every
run first logs its fully resolved configuration and a hash of it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from dogpain import __version__
from dogpain.container import load_tensors, save_tensors
from dogpain.data import (
    Clip,
    FoldPlan,
    SynthConfig,
    load_detections,
    load_keypoints,
    load_manifest,
    load_video_clips,
    make_splits,
    save_keypoints,
    synth_generate,
    write_synth,
)
from dogpain.data.detections import filter_detections
from dogpain.errors import ContractError, DogPainError
from dogpain.model import TwoStreamConfig, count_params
from dogpain.numerics import set_precision
from dogpain.skeleton import normalize, repair
from dogpain.train import (
    CrossvalReport,
    TrainConfig,
    crossval,
    evaluate,
    fold_seed,
    load_checkpoint,
    pck,
    save_checkpoint,
    train_fold,
)

log = logging.getLogger("dogpain")


class _JsonLines(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload = {"t": round(record.created, 3), "level": record.levelname.lower(), "event": record.getMessage()}
        payload.update(getattr(record, "fields", {}))
        return json.dumps(payload, sort_keys=True, default=str)


def _event(msg: str, **fields) -> None:
    log.info(msg, extra={"fields": fields})


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLines())
    log.handlers[:] = [handler]
    log.setLevel(level.upper())
    log.propagate = False


class _Parser(argparse.ArgumentParser):
    """Usage errors raise instead of exiting so `run` can return exit code 2."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


class _UsageError(Exception):
    pass


def _write_jsonl(path: Path, records: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records), encoding="utf-8")


# ----------------------------------------------------------------- configs


def _model_config(a) -> TwoStreamConfig:
    return TwoStreamConfig(hidden=a.hidden, image_size=a.image_size, standard_lstm_output=a.standard_lstm_output)


def _train_config(a) -> TrainConfig:
    return TrainConfig(
        lr=a.lr,
        batch_size=a.batch_size,
        max_epochs=a.max_epochs,
        patience=a.patience,
        optimizer=a.optimizer,
        deterministic=a.deterministic,
        seed=a.seed,
        workers=a.workers,
    )


# -------------------------------------------------------------- clip sets


def save_clip_set(path, clips: Sequence[Clip]) -> None:
    """Store clips (frames, poses, labels, provenance) in one tensor container."""
    if not clips:
        raise ContractError("no clips to save")
    frames = np.stack([c.frames for c in clips])
    poses = np.stack([c.poses for c in clips])
    meta = {"clips": [{"label": c.label, "subject": c.subject_id, "video": c.video, "start": c.start} for c in clips]}
    save_tensors(path, {"frames": frames, "poses": poses}, kind="clips", meta=meta)


def load_clip_set(path) -> list[Clip]:
    tensors, meta = load_tensors(path, kind="clips")
    try:
        rows = meta["clips"]
        return [
            Clip(tensors["frames"][i], tensors["poses"][i].astype(np.float64), int(r["label"]), r["subject"], r["video"], int(r["start"]))
            for i, r in enumerate(rows)
        ]
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ContractError(f"{path}: malformed clip set ({exc})") from exc


def _clips_from_manifest(manifest, image_size: int, crop: bool) -> list[Clip]:
    clips: list[Clip] = []
    for entry in load_manifest(manifest):
        kept, build_log = load_video_clips(entry, image_size=image_size, crop=crop)
        _event("clips", video=entry.subject_id, kept=len(build_log.kept), dropped=build_log.dropped)
        clips += kept
    return clips


def _load_clips(a) -> list[Clip]:
    if getattr(a, "clips", None):
        return load_clip_set(a.clips)
    if getattr(a, "manifest", None):
        return _clips_from_manifest(a.manifest, a.image_size, not a.no_crop)
    raise _UsageError("one of --clips or --manifest is required")


def _plan_for(a, clips: Sequence[Clip]) -> FoldPlan:
    if getattr(a, "plan", None):
        return FoldPlan.load(a.plan)
    return make_splits({c.subject_id: c.label for c in clips}, seed=a.seed)


# ------------------------------------------------------------- subcommands


def cmd_synth(a) -> None:
    cfg = SynthConfig(
        n_subjects=a.subjects,
        frames_per_video=a.frames,
        image_size=a.synth_size,
        attenuation=a.attenuation,
        head_bob=a.head_bob,
        noise_sigma=a.noise,
        occlusion_rate=a.occlusion,
        seed=a.seed,
    )
    manifest = write_synth(synth_generate(cfg), a.out, cfg)
    _event("wrote", manifest=str(manifest), videos=2 * cfg.n_subjects)


def cmd_repair(a) -> None:
    frames = load_keypoints(a.inp)
    fixed, reports = repair(frames)
    save_keypoints(a.out, fixed)
    totals = {"interpolated": 0, "leg_inferred": 0, "symmetry_filled": 0, "discarded": 0}
    for r in reports:
        d = r.as_dict()
        for k in totals:
            totals[k] += int(d[k]) if not isinstance(d[k], (list, tuple)) else len(d[k])
    sidecar = Path(str(a.out) + ".report.jsonl")
    _write_jsonl(sidecar, [{"frame": f.frame_index, **r.as_dict()} for f, r in zip(fixed, reports)] + [{"total": totals}])
    _event("repaired", frames=len(fixed), **totals)


def cmd_normalize(a) -> None:
    frames = load_keypoints(a.inp)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = ["frame\t" + "\t".join(f"p{i}" for i in range(34))]
    for f in frames:
        vec = normalize(f).pose_vector()
        lines.append(f"{f.frame_index}\t" + "\t".join(repr(float(v)) for v in vec))
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _event("normalized", frames=len(frames))


def cmd_clips(a) -> None:
    clips = _clips_from_manifest(a.manifest, a.image_size, not a.no_crop)
    save_clip_set(a.out, clips)
    _event("wrote", clips=len(clips), path=str(a.out))


def cmd_splits(a) -> None:
    entries = load_manifest(a.manifest, check_paths=False)
    plan = make_splits({e.subject_id: e.y for e in entries}, seed=a.seed)
    plan.save(a.out)
    _event("wrote", test=len(plan.test_subjects), folds=len(plan.folds), path=str(a.out))


def cmd_train(a) -> None:
    from dogpain.plotting import plot_history

    clips = _load_clips(a)
    plan = _plan_for(a, clips)
    if not 0 <= a.fold < len(plan.folds):
        raise ContractError(f"fold {a.fold} outside the plan's {len(plan.folds)} folds")
    train_ids, val_ids = plan.folds[a.fold]
    train = [c for c in clips if c.subject_id in set(train_ids)]
    val = [c for c in clips if c.subject_id in set(val_ids)]
    mcfg, tcfg = _model_config(a), _train_config(a)
    best, history = train_fold(
        train, val, mcfg, tcfg, init_seed=fold_seed(a.seed, a.fold),
        on_epoch=lambda r: _event("epoch", fold=a.fold, **vars(r)),
    )  # fmt: skip
    out = Path(a.out)
    save_checkpoint(out, best)
    _write_jsonl(out.with_suffix(".history.jsonl"), [vars(h) for h in history])
    plot_history({a.fold: history}, out.with_suffix(".history.png"))
    _event("wrote", checkpoint=str(out), best_epoch=best.epoch, params=count_params(mcfg))


def cmd_crossval(a) -> None:
    from dogpain.plotting import plot_crossval, plot_history

    clips = _load_clips(a)
    plan = _plan_for(a, clips)
    folds = [int(f) for f in a.folds.split(",")] if a.folds else None
    report: CrossvalReport = crossval(
        clips, _model_config(a), _train_config(a), plan=plan, folds=folds,
        on_epoch=lambda k, r: _event("epoch", fold=k, **vars(r)),
    )  # fmt: skip
    out = Path(a.out)
    records = report.records()
    _write_jsonl(out / "crossval.jsonl", records)
    (out / "crossval.txt").write_text(report.table() + "\n", encoding="utf-8")
    plot_crossval(records, out / "crossval.png")
    plot_history({f.fold: f.history for f in report.folds}, out / "history.png")
    print(report.table())
    _event("aggregate", **records[-1])


def cmd_eval(a) -> None:
    from dogpain.plotting import plot_confusion

    ckpt = load_checkpoint(a.checkpoint)
    clips = _load_clips(a)
    if a.plan:
        test = set(FoldPlan.load(a.plan).test_subjects)
        clips = [c for c in clips if c.subject_id in test]
    if not clips:
        raise ContractError("no clips to evaluate")
    clip_rep, video_rep, prob = evaluate(ckpt.params, clips, a.workers)
    out = Path(a.out)
    _write_jsonl(
        out / "predictions.jsonl",
        [{"subject": c.subject_id, "video": c.video, "start": c.start, "label": c.label, "prob": float(p)} for c, p in zip(clips, prob)],
    )
    _write_jsonl(out / "metrics.jsonl", [{"level": "clip", **clip_rep.as_dict()}, {"level": "video", **video_rep.as_dict()}])
    plot_confusion(clip_rep, out / "confusion.png")
    print(f"clip: F1 {100 * clip_rep.f1:.1f}  accuracy {100 * clip_rep.accuracy:.1f}")
    print(f"video: F1 {100 * video_rep.f1:.1f}  accuracy {100 * video_rep.accuracy:.1f}")
    _event("eval", clip_f1=clip_rep.f1, clip_accuracy=clip_rep.accuracy, video_f1=video_rep.f1)


def cmd_pck(a) -> None:
    from dogpain.plotting import plot_pck

    pred = {f.frame_index: f for f in load_keypoints(a.pred)}
    truth = load_keypoints(a.truth)
    boxes = {d.frame_index: d.bbox for d in filter_detections(load_detections(a.detections))}
    missing = [f.frame_index for f in truth if f.frame_index not in pred]
    if missing:
        raise ContractError(f"predictions lack frames {missing[:5]}")
    res = pck(
        np.stack([pred[f.frame_index].xy for f in truth]),
        np.stack([f.xy for f in truth]),
        np.stack([f.present for f in truth]),
        [boxes.get(f.frame_index) for f in truth],
        alpha=a.alpha,
    )
    out = Path(a.out)
    _write_jsonl(out / "pck.jsonl", [{"group": g, **v} for g, v in res.as_dict().items()])
    plot_pck(res, out / "pck.png")
    print("\t".join(f"{g} {res.percent(g):.1f}" for g in ("Head", "Spine", "Legs", "Total")))


def cmd_gradcam(a) -> None:
    from dogpain.explain import gradcam, save_saliency
    from dogpain.plotting import plot_saliency

    ckpt = load_checkpoint(a.checkpoint)
    clips = _load_clips(a)
    if not 0 <= a.index < len(clips):
        raise ContractError(f"clip index {a.index} outside 0..{len(clips) - 1}")
    clip = clips[a.index]
    sal = gradcam(ckpt.params, clip, a.class_index)
    stem = f"clip{a.index:04d}"
    paths = save_saliency(sal, a.out, stem)
    plot_saliency(sal.overlays, Path(a.out) / f"{stem}_strip.png", f"{clip.video} start {clip.start}, p(pain)={sal.confidence:.2f}")
    _write_jsonl(
        Path(a.out) / f"{stem}.jsonl",
        [{"frame": t, "peak_row": r, "peak_col": c} for t, (r, c) in enumerate(sal.peaks())],
    )
    _event("gradcam", files=len(paths), confidence=sal.confidence, class_index=a.class_index)


# ------------------------------------------------------------------ parser


def _add_model_flags(p) -> None:
    p.add_argument("--hidden", type=int, default=64, choices=(32, 64, 128))
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--no-crop", action="store_true", help="resize whole frames instead of detector crops")
    p.add_argument("--standard-lstm-output", action="store_true", help="use h = o*tanh(c) instead of tanh(o*c)")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--optimizer", choices=("adam", "sgd-momentum"), default="adam")


def _add_clip_source(p, plan: bool = True) -> None:
    p.add_argument("--manifest", type=Path)
    p.add_argument("--clips", type=Path, help="clip set written by the clips subcommand")
    if plan:
        p.add_argument("--plan", type=Path, help="fold plan written by the splits subcommand")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True)
    common.add_argument("--log-level", default="info", choices=("debug", "info", "warning", "error"))

    parser = _Parser(prog="dogpain", description="Dog pain-indicator pipeline.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic gait dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--subjects", type=int, default=20, help="subjects per class")
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--synth-size", type=int, default=64)
    p.add_argument("--attenuation", type=float, default=0.5)
    p.add_argument("--head-bob", type=float, default=0.2)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--occlusion", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("repair", parents=[common], help="repair a keypoint file")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("normalize", parents=[common], help="normalize a repaired keypoint file to pose vectors")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("clips", parents=[common], help="slice manifest videos into a clip set")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--no-crop", action="store_true")
    p.set_defaults(func=cmd_clips)

    p = sub.add_parser("splits", parents=[common], help="plan subject-wise test set and folds")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_splits)

    p = sub.add_parser("train", parents=[common], help="train one fold")
    _add_clip_source(p)
    _add_model_flags(p)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("crossval", parents=[common], help="five-fold subject-wise cross-validation")
    _add_clip_source(p)
    _add_model_flags(p)
    p.add_argument("--folds", default="", help="comma-separated subset of folds")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    _add_clip_source(p)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--no-crop", action="store_true")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pck", parents=[common], help="PCK of predicted against ground-truth keypoints")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--alpha", type=float, default=0.10)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_pck)

    p = sub.add_parser("gradcam", parents=[common], help="Grad-CAM overlays for one clip")
    _add_clip_source(p, plan=False)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--no-crop", action="store_true")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--class-index", type=int, default=1, choices=(0, 1))
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gradcam)
    return parser


def config_hash(resolved: dict) -> str:
    return hashlib.sha256(json.dumps(resolved, sort_keys=True, default=str).encode()).hexdigest()[:16]


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(sys.argv[1:] if argv is None else argv))
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    _setup_logging(args.log_level)
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    _event("config", config=resolved, config_hash=config_hash(resolved), version=__version__)
    set_precision("float32")
    t0 = time.perf_counter()
    try:
        args.func(args)
    except _UsageError as exc:
        print(f"dogpain {args.command}: {exc}", file=sys.stderr)
        return 2
    except DogPainError as exc:
        print(str(exc), file=sys.stderr)
        _event("failed", error=type(exc).__name__)
        return 1
    _event("done", command=args.command, seconds=round(time.perf_counter() - t0, 3))
    return 0


def main() -> None:
    sys.exit(run())
