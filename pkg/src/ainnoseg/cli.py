"""Command-line entry point: ``ainnoseg <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or integrity
error, 3 numeric failure. Diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .augment import build_augmented_dataset
from .config import RunConfig, load_run_config
from .errors import ConfigError, ContractError, DataError, IntegrityError, NumericError, ShapeError
from .inference import multiscale_infer
from .metrics import ConfusionMatrix, evaluate
from .reporting import format_eval_report, plot_class_iou, plot_loss_curve, plot_round_scores, write_loss_csv
from .selftrain import SelfTrainer, load_model
from .synth import generate
from .train import train

log = logging.getLogger("ainnoseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "classes", None) is not None:
        cfg.model = replace(cfg.model, num_classes=args.classes)
    if getattr(args, "seed", None) is not None:
        cfg.augment = replace(cfg.augment, seed=args.seed)
        cfg.train = replace(cfg.train, seed=args.seed, augment_cfg=cfg.augment)
        cfg.selftrain = replace(cfg.selftrain, seed=args.seed)
    if getattr(args, "steps", None) is not None:
        cfg.train = replace(cfg.train, steps=args.steps)
    return cfg


# --------------------------------------------------------------------------- #
# commands
# --------------------------------------------------------------------------- #
def cmd_synth(args) -> int:
    samples = generate(args.n, args.seed, args.size, args.classes, prefix=args.prefix)
    io.save_dataset(args.out, samples, with_labels=not args.unlabeled)
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def cmd_config(args) -> int:
    text = (RunConfig.full_scale() if args.full_scale else RunConfig()).to_yaml()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_augment(args) -> int:
    cfg = _run_config(args)
    aug = cfg.augment if args.ratio is None else replace(cfg.augment, mosaic_ratio=args.ratio)
    data = io.load_dataset(args.data, cfg.model.num_classes)
    val = io.load_dataset(args.val, cfg.model.num_classes) if args.val else None
    out = build_augmented_dataset(data, aug, val)
    io.save_dataset(args.out, out)
    print(f"wrote {len(out)} samples ({len(out) - len(data)} mosaics) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    data = io.load_dataset(args.data, cfg.model.num_classes)
    init = load_model(args.init, cfg.model) if args.init else None
    result = train(cfg.model, data, cfg.train, init)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.save_checkpoint(out, result.model.state())
    csv_path = write_loss_csv(out.with_suffix(".loss.csv"), result.losses, result.head_losses)
    png_path = plot_loss_curve(result.losses, out.with_suffix(".loss.png"))
    print(f"checkpoint\t{out}\nloss_table\t{csv_path}\nloss_figure\t{png_path}\nfinal_loss\t{result.losses[-1]:.6f}")
    return EXIT_OK


def _input_images(path: Path) -> list[tuple[str, np.ndarray]]:
    if path.is_file():
        return [(path.stem, io.load_image(path))]
    sub = path / "images" if (path / "images").is_dir() else path
    files = sorted(sub.glob("*.ppm"))
    if not files:
        raise DataError(f"{path}: no .ppm images found")
    return [(f.stem, io.load_image(f)) for f in files]


def cmd_infer(args) -> int:
    cfg = _run_config(args)
    model = load_model(args.checkpoint, cfg.model)
    out = Path(args.out)
    images = _input_images(Path(args.input))
    for sid, img in images:
        labels, probs = multiscale_infer(model, img, cfg.inference)
        io.save_labels(out / "labels" / f"{sid}.pgm", labels)
        if args.probs:
            (out / "probs").mkdir(parents=True, exist_ok=True)
            np.save(out / "probs" / f"{sid}.npy", probs)
    print(f"wrote {len(images)} label maps to {out / 'labels'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    c = cfg.model.num_classes
    preds = io.load_label_dir(args.pred, c)
    gts = io.load_label_dir(args.gt, c)
    if not gts:
        raise DataError(f"{args.gt}: no ground-truth label maps")
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise DataError(f"{args.pred}: no prediction for {', '.join(missing[:5])}")
    cm = ConfusionMatrix(c)
    for sid in sorted(gts):
        if np.any(preds[sid] == 255):
            raise DataError(f"{args.pred}: prediction {sid} contains ignore pixels")
        cm.update(preds[sid], gts[sid])
    result = evaluate(cm)
    report = format_eval_report(result)
    sys.stdout.write(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.tsv").write_text(report)
        plot_class_iou(result, out / "class_iou.png")
    return EXIT_OK


def _inside(child: Path, parent: Path) -> bool:
    child, parent = child.resolve(), parent.resolve()
    return child == parent or parent in child.parents


def cmd_selftrain(args) -> int:
    cfg = _run_config(args)
    st = cfg.selftrain if args.rounds is None else replace(cfg.selftrain, rounds=args.rounds)
    run_dir = Path(args.run_dir)
    # pseudo labels are written under the run directory; never let it overlap real data
    for d in filter(None, (args.data, args.unlabeled, args.held_out)):
        if _inside(Path(d), run_dir) or _inside(run_dir, Path(d)):
            raise ConfigError(f"run directory {run_dir} overlaps data directory {d}")
    c = cfg.model.num_classes
    labeled = io.load_dataset(args.data, c)
    unlabeled = io.load_dataset(args.unlabeled, labeled=False)
    held = io.load_dataset(args.held_out, c) if args.held_out else None
    trainer = SelfTrainer(run_dir, cfg.model, cfg.train, st, cfg.inference, labeled, unlabeled, held)
    state = trainer.run(args.max_steps)
    lines = [f"completed\t{','.join(state.completed)}"]
    if state.teacher_score is not None:
        lines.append(f"teacher_score\t{state.teacher_score:.6f}")
    lines += [f"round_{r}_score\t{s:.6f}" for r, s in state.round_scores]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if state.round_scores:
        (run_dir / "rounds.tsv").write_text(text)
        plot_round_scores(state.round_scores, state.teacher_score, run_dir / "rounds.png")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(args.seed)
    print("check\trel_error\ttolerance\tstatus")
    for r in results:
        print(f"{r.name}\t{r.error:.3e}\t{r.tol:.0e}\t{'pass' if r.passed else 'FAIL'}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# --------------------------------------------------------------------------- #
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ainnoseg", description="Desk-scale segmentation pipeline.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="run configuration (YAML)")
        sp.add_argument("--classes", type=int, help="override model.num_classes")
        return sp

    s = sub.add_parser("synth", help="generate the synthetic shape dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--classes", type=int, default=5)
    s.add_argument("--prefix", default="synth")
    s.add_argument("--unlabeled", action="store_true", help="write images only")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("config", help="print a run configuration template")
    s.add_argument("--full-scale", action="store_true", help="full-scale published settings")
    s.add_argument("--out")
    s.set_defaults(func=cmd_config)

    s = with_config(sub.add_parser("augment", help="append mosaic samples to a dataset"))
    s.add_argument("--data", required=True)
    s.add_argument("--val", help="validation set, pooled when augment.fold_validation is set")
    s.add_argument("--out", required=True)
    s.add_argument("--ratio", type=float)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_augment)

    s = with_config(sub.add_parser("train", help="train from scratch or from --init"))
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="checkpoint path (.aseg)")
    s.add_argument("--init")
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = with_config(sub.add_parser("infer", help="multi-scale inference on an image or directory"))
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--probs", action="store_true", help="also dump fused class probabilities (.npy)")
    s.set_defaults(func=cmd_infer)

    s = with_config(sub.add_parser("eval", help="score predicted label maps against ground truth"))
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out", help="directory for report.tsv and class_iou.png")
    s.set_defaults(func=cmd_eval)

    s = with_config(sub.add_parser("selftrain", help="run or resume teacher/student rounds"))
    s.add_argument("--data", required=True)
    s.add_argument("--unlabeled", required=True)
    s.add_argument("--held-out")
    s.add_argument("--run-dir", required=True)
    s.add_argument("--rounds", type=int)
    s.add_argument("--max-steps", type=int, help="stop after this many steps (resume later)")
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_selftrain)

    s = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ShapeError, IntegrityError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
