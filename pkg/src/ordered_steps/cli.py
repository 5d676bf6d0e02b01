"""Command-line entry point: ``ordered-steps <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error. Diagnostics go to stderr.

File layout produced by ``gen-synth`` and expected by the other commands::

    tasks.txt                 task file
    features/<vid>.feat       feature files
    transcripts/<vid>.txt     timed transcripts
    annotations/<vid>.ann     ground-truth intervals
    train.tsv, test.tsv       manifests (task, features, transcript or '-')
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats
from .core import ConstraintWindows, InfeasibleError, build_step_component_matrix, build_vocabulary
from .evalkit import GroundTruth, corpus_stats, infer, mean_average_precision, recall, uniform_baseline
from .synthetic import SyntheticSpec, generate_synthetic
from .text_constraints import DEFAULT_HALF_WIDTH, DEFAULT_WINDOW, text_windows
from .trainer import TrainConfig, TrainingVideo, train

log = logging.getLogger("ordered_steps")

FEATURE_EXT = ".feat"
TRANSCRIPT_EXT = ".txt"
ANNOTATION_EXT = ".ann"
CONSTRAINT_EXT = ".cons"
PREDICTION_EXT = ".pred"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _granularity(name: str) -> str:
    return name.replace("-", "_")


def _task_lookup(tasks):
    return {t.id: t for t in tasks}


def _windows_from_transcript(path, task, T, window=DEFAULT_WINDOW, half_width=DEFAULT_HALF_WIDTH):
    """Narration windows, or unconstrained steps when the transcript cannot place them."""
    transcript = formats.read_transcript(path)
    try:
        return text_windows(transcript, task, T, window, half_width)
    except ValueError as exc:
        log.warning("%s: %s; steps left unconstrained", path, exc)
        return ConstraintWindows.unconstrained(task.num_steps)


# -- commands -----------------------------------------------------------------


def cmd_gen_synth(args) -> None:
    raw = json.loads(Path(args.spec).read_text(encoding="utf-8")) if args.spec else {}
    if not isinstance(raw, dict):
        raise ValueError("spec file must hold a JSON object")
    known = set(SyntheticSpec.__dataclass_fields__)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"unknown spec fields: {', '.join(unknown)}")
    spec = SyntheticSpec(**raw)
    corpus = generate_synthetic(spec)

    out = Path(args.out)
    for sub in ("features", "transcripts", "annotations"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    formats.write_tasks(out / "tasks.txt", corpus.tasks)
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    rows = {"train": [], "test": []}
    for v in corpus.videos:
        feat = f"features/{v.id}{FEATURE_EXT}"
        words = f"transcripts/{v.id}{TRANSCRIPT_EXT}"
        formats.write_features(out / feat, v.features)
        formats.write_transcript(out / words, v.transcript)
        formats.write_annotation(out / f"annotations/{v.id}{ANNOTATION_EXT}", GroundTruth(tuple(map(tuple, v.gt))))
        rows[v.split].append((v.task_id, feat, words))
    for split, r in rows.items():
        formats.write_manifest(out / f"{split}.tsv", r)
    print(f"wrote {len(corpus.videos)} videos of {len(corpus.tasks)} tasks to {out}", file=sys.stderr)


def cmd_text_constraints(args) -> None:
    tasks = _task_lookup(formats.read_tasks(args.tasks))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for task_id, feat, _ in formats.read_manifest(args.manifest):
        if task_id not in tasks:
            raise ValueError(f"manifest task {task_id!r} not in {args.tasks}")
        T = formats.read_features(feat).T
        stem = feat.name[: -len(FEATURE_EXT)] if feat.name.endswith(FEATURE_EXT) else feat.stem
        windows = _windows_from_transcript(
            Path(args.transcripts) / f"{stem}{TRANSCRIPT_EXT}", tasks[task_id], T, args.window, args.half_width
        )
        target = out / f"{stem}{CONSTRAINT_EXT}"
        formats.write_constraints(target, windows)
        rows.append((task_id, feat.resolve(), target.name))
    formats.write_manifest(out / "manifest.tsv", rows)
    print(f"wrote {len(rows)} constraint files to {out}", file=sys.stderr)


def cmd_train(args) -> None:
    task_list = formats.read_tasks(args.tasks)
    tasks = _task_lookup(task_list)
    videos, windows = [], []
    for task_id, feat, side in formats.read_manifest(args.manifest):
        if task_id not in tasks:
            raise ValueError(f"manifest task {task_id!r} not in {args.tasks}")
        task = tasks[task_id]
        X = formats.read_features(feat)
        videos.append(TrainingVideo(task_id, X, feat.name))
        if side is None or not args.text_constraints:
            windows.append(None)
        elif formats.is_constraint_file(side):
            windows.append(formats.read_constraints(side, task.num_steps))
        else:
            windows.append(_windows_from_transcript(side, task, X.T))
    if not videos:
        raise ValueError("empty manifest")

    config = TrainConfig(
        mode=args.mode,
        init_epochs=args.init_epochs,
        outer_iterations=args.outer,
        inner_epochs=args.inner_epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        use_text_constraints=args.text_constraints,
        granularity=_granularity(args.granularity),
        assignment_mode=_granularity(args.assignment),
        dropout=args.dropout,
        seed=args.seed,
    )
    state, history = train(videos, task_list, windows, config)
    formats.write_model(args.out, state.bank)
    print(f"objective {history[0]:.6g} -> {history[-1]:.6g} over {len(history) - 1} iterations", file=sys.stderr)


def _pick_task(tasks, requested):
    if requested is not None:
        if requested not in tasks:
            raise ValueError(f"task {requested!r} not in the task file")
        return tasks[requested]
    if len(tasks) != 1:
        raise UsageError("the task file holds several tasks; pass --task")
    return next(iter(tasks.values()))


def cmd_infer(args) -> None:
    task_list = formats.read_tasks(args.tasks)
    tasks = _task_lookup(task_list)
    bank = formats.read_model(args.model)
    granularity = _granularity(args.granularity)
    vocab = build_vocabulary(task_list, granularity)
    if len(vocab) != bank.M:
        raise ValueError(
            f"model has {bank.M} classifiers but the task file yields {len(vocab)} {granularity} components"
        )

    def run(task, feat_path, out_path):
        X = formats.read_features(feat_path)
        if X.D != bank.D:
            raise ValueError(f"{feat_path}: feature dimension {X.D} != model dimension {bank.D}")
        A = build_step_component_matrix(task, vocab, granularity)
        formats.write_prediction(out_path, task.id, infer(bank, A, X))

    if args.manifest:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rows = formats.read_manifest(args.manifest)
        for task_id, feat, _ in rows:
            stem = feat.name[: -len(FEATURE_EXT)] if feat.name.endswith(FEATURE_EXT) else feat.stem
            run(_pick_task(tasks, task_id), feat, out / f"{stem}{PREDICTION_EXT}")
        print(f"wrote {len(rows)} predictions to {out}", file=sys.stderr)
    else:
        if not args.features:
            raise UsageError("pass --features or --manifest")
        run(_pick_task(tasks, args.task), args.features, args.out)


def _load_eval_pairs(pred_dir, gt_dir):
    preds = sorted(Path(pred_dir).glob(f"*{PREDICTION_EXT}"))
    if not preds:
        raise ValueError(f"no *{PREDICTION_EXT} files in {pred_dir}")
    out = []
    for p in preds:
        task_id, T, pred = formats.read_prediction(p)
        gt_path = Path(gt_dir) / f"{p.name[: -len(PREDICTION_EXT)]}{ANNOTATION_EXT}"
        if not gt_path.exists():
            raise ValueError(f"no annotation {gt_path} for prediction {p}")
        gt = formats.read_annotation(gt_path, len(pred.times))
        out.append((p.stem, task_id, T, pred, gt))
    return out


def cmd_eval(args) -> None:
    pairs = _load_eval_pairs(args.pred, args.gt)
    by_task: dict = {}
    for item in pairs:
        by_task.setdefault(item[1], []).append(item)
    rows = []

    if args.metric == "recall":

        def both(items):
            preds = {vid: pred for vid, _, _, pred, _ in items}
            gts = {vid: gt for vid, _, _, _, gt in items}
            if any(T == 0 for _, _, T, _, _ in items):
                raise ValueError("uniform baseline needs the video length; prediction lacks scores")
            uni = {vid: uniform_baseline(T, len(pred.times)) for vid, _, T, pred, _ in items}
            return recall(preds, gts, match=args.match), recall(uni, gts, match=args.match)

        for task_id, items in sorted(by_task.items()):
            r, u = both(items)
            rows += [("recall", task_id, r), ("uniform_recall", task_id, u)]
        r, u = both(pairs)
        rows += [("recall", "all", r), ("uniform_recall", "all", u)]
    elif args.metric == "map":
        values = []
        for task_id, items in sorted(by_task.items()):
            if any(pred.scores is None for _, _, _, pred, _ in items):
                raise ValueError("mAP needs score matrices in every prediction file")
            v = mean_average_precision([pred.scores for *_, pred, _ in items], [gt for *_, gt in items])
            values.append(v)
            rows.append(("map", task_id, v))
        rows.append(("map", "all", float(np.mean(values))))
    else:
        groups = sorted(by_task.items()) + [("all", pairs)]
        for task_id, items in groups:
            stats = corpus_stats([gt for *_, gt in items], [T for _, _, T, _, _ in items])
            for key in ("background_fraction", "missing_step_fraction", "order_consistency", "videos"):
                rows.append((key, task_id, stats[key]))

    lines = ["metric\ttask\tvalue\n"] + [f"{m}\t{t}\t{v!r}\n" for m, t, v in rows]
    Path(args.out).write_text("".join(lines), encoding="utf-8")
    for m, t, v in rows:
        if t == "all":
            print(f"{m}\t{v:.4f}", file=sys.stderr)


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ordered-steps", description="Weakly supervised localization of ordered task steps.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("text-constraints", help="narration windows for every manifest video")
    s.add_argument("--tasks", required=True)
    s.add_argument("--transcripts", required=True, help="directory of <video>.txt transcripts")
    s.add_argument("--manifest", required=True, help="manifest naming each video's task and feature file")
    s.add_argument("--out", required=True)
    s.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    s.add_argument("--half-width", type=float, default=DEFAULT_HALF_WIDTH)
    s.set_defaults(func=cmd_text_constraints)

    s = sub.add_parser("train", help="alternating weakly supervised training")
    s.add_argument("--tasks", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=("simple", "majorize"), default="simple")
    s.add_argument("--granularity", choices=("component", "shared-step", "task-step"), default="component")
    s.add_argument("--assignment", choices=("single-frame", "runs"), default="single-frame")
    s.add_argument("--no-text-constraints", dest="text_constraints", action="store_false")
    s.add_argument("--init-epochs", type=int, default=30)
    s.add_argument("--outer", type=int, default=30)
    s.add_argument("--inner-epochs", type=int, default=1)
    s.add_argument("--lr", type=float, default=1e-5)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--dropout", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="ordered step predictions for unseen videos")
    s.add_argument("--model", required=True)
    s.add_argument("--tasks", required=True)
    s.add_argument("--features", help="single feature file")
    s.add_argument("--manifest", help="predict every manifest video; --out is then a directory")
    s.add_argument("--task", help="task id when the task file holds several tasks")
    s.add_argument("--granularity", choices=("component", "shared-step", "task-step"), default="component")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="recall, mAP or annotation statistics as a TSV report")
    s.add_argument("--pred", required=True, help=f"directory of *{PREDICTION_EXT} files")
    s.add_argument("--gt", required=True, help=f"directory of matching *{ANNOTATION_EXT} files")
    s.add_argument("--out", required=True)
    s.add_argument("--metric", choices=("recall", "map", "stats"), default="recall")
    s.add_argument("--match", choices=("any", "first"), default="any", help="which GT intervals count for recall")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gen-synth", help="write a synthetic corpus")
    s.add_argument("--spec", help="JSON object of generator settings (defaults when omitted)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # usage errors exit 1, --help exits 0
        return exc.code if isinstance(exc.code, int) else 1
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 1
    except (formats.FormatError, InfeasibleError, ValueError, TypeError, KeyError, OSError) as exc:
        print(f"{parser.prog}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
