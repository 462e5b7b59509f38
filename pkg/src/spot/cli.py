"""Command-line entry point: ``spot <command> [flags]``.

Every command works inside a run directory (``--run-dir``, default
``runs/<preset>-seed<seed>``) and writes the resolved config there as
``config.json``. Layout::

    <run>/data/                 synthetic dataset (gen-data)
    <run>/pretrain.npz          stage-I checkpoint (pretrain)
    <run>/finetune.npz          stage-II checkpoint (finetune)
    <run>/detections.json       test-split detections (infer)
    <run>/report.json, .txt     mAP report (eval)
    <run>/error_propagation.json
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, preset
from .data import generate_synthetic, load_annotations, load_split, prepare
from .decode import dump_detections, load_detections
from .evaluation import dump_report, format_report, map_report
from .experiments import error_propagation_experiment, format_error_table, train_crop_classifier
from .inference import detect_all
from .model import SPOT, load_checkpoint, save_checkpoint
from .pretrain import pretrain
from .semisup import finetune

log = logging.getLogger("spot")


def resolve_config(args) -> RunConfig:
    base = preset(args.preset)
    cfg = load_config(args.config, base) if args.config else base
    cfg.seed = args.seed if args.seed is not None else cfg.seed
    if args.labels_fraction is not None:
        cfg.data.label_fraction = args.labels_fraction
    return cfg.validate()


def run_dir(args, cfg: RunConfig) -> Path:
    path = Path(args.run_dir) if args.run_dir else Path("runs") / f"{cfg.preset}-seed{cfg.seed}"
    path.mkdir(parents=True, exist_ok=True)
    cfg.save(path / "config.json")
    return path


def _data_root(args, run: Path) -> Path:
    root = Path(args.data) if args.data else run / "data"
    if not (root / "manifest.json").exists():
        raise FileNotFoundError(f"dataset not found: {root / 'manifest.json'} (run gen-data first)")
    return root


def _samples(cfg: RunConfig, root: Path):
    split = load_split(root)
    T, K = cfg.train.temporal_length, len(split.classes)
    return (
        split,
        prepare(split.labeled, root, T, K),
        prepare(split.unlabeled, root, T, K, with_targets=False),
        prepare(split.test, root, T, K),
    )


def _model(cfg: RunConfig, samples, K: int) -> SPOT:
    return SPOT(samples[0].features.shape[0], K, cfg.train.temporal_length, cfg.encoder)


def _checkpoint(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{what} checkpoint not found: {path}")
    return path


def cmd_gen_data(args, cfg, run):
    root = Path(args.data) if args.data else run / "data"
    split = generate_synthetic(cfg.data, cfg.seed, root)
    print(f"wrote {len(split.labeled)} labeled, {len(split.unlabeled)} unlabeled, {len(split.test)} test videos to {root}")


def cmd_pretrain(args, cfg, run):
    split, lab, unl, _ = _samples(cfg, _data_root(args, run))
    spot, history = pretrain([s.features for s in lab + unl], cfg, cfg.seed, len(split.classes))
    out = run / "pretrain.npz"
    save_checkpoint(spot, out, {"stage": "pretrain", "seed": cfg.seed})
    (run / "pretrain_log.jsonl").write_text("".join(json.dumps(r) + "\n" for r in history))
    print(f"pretrain L_pre {history[0]['L_pre']:.4f} -> {history[-1]['L_pre']:.4f}; saved {out}")


def cmd_finetune(args, cfg, run):
    split, lab, unl, test = _samples(cfg, _data_root(args, run))
    K = len(split.classes)
    init = None
    if not args.from_scratch:
        path = _checkpoint(Path(args.init) if args.init else run / "pretrain.npz", "pre-training")
        init = load_checkpoint(_model(cfg, lab, K), path)
    model, history = finetune(lab, unl, cfg, cfg.seed, init=init, log_path=run / "finetune_log.jsonl",
                              val=test if args.validate else None)
    out = Path(args.checkpoint) if args.checkpoint else run / "finetune.npz"
    save_checkpoint(model, out, {"stage": "finetune", "seed": cfg.seed, "from_scratch": args.from_scratch})
    print(f"finetune done ({len(history)} epochs); saved {out}")


def _trained(args, cfg, run, lab, K) -> SPOT:
    path = _checkpoint(Path(args.checkpoint) if args.checkpoint else run / "finetune.npz", "fine-tuned")
    return load_checkpoint(_model(cfg, lab, K), path).eval()


def cmd_infer(args, cfg, run):
    split, lab, _, test = _samples(cfg, _data_root(args, run))
    model = _trained(args, cfg, run, lab, len(split.classes))
    out = Path(args.detections) if args.detections else run / "detections.json"
    dump_detections(detect_all(model, test, cfg), split.classes, out)
    print(f"wrote detections for {len(test)} videos to {out}")


def cmd_eval(args, cfg, run):
    if args.annotations:
        records, classes = load_annotations(args.annotations)
    else:
        split = load_split(_data_root(args, run))
        records, classes = split.test, split.classes
    det_path = Path(args.detections) if args.detections else run / "detections.json"
    if not det_path.exists():
        raise FileNotFoundError(f"detections not found: {det_path}")
    dets = load_detections(det_path, classes)
    gts = {r.id: list(r.segments) for r in records}
    report = map_report(dets, gts, cfg.eval)
    dump_report(report, run / "report.json")
    text = format_report(report)
    (run / "report.txt").write_text(text + "\n")
    print(text)


def cmd_error_prop(args, cfg, run):
    split, lab, _, test = _samples(cfg, _data_root(args, run))
    K = len(split.classes)
    model = _trained(args, cfg, run, lab, K)
    clf = train_crop_classifier(lab, K, cfg.seed)
    table = error_propagation_experiment(model, test, cfg, clf)
    table["seed"] = cfg.seed
    (run / "error_propagation.json").write_text(json.dumps(table, indent=2))
    print(format_error_table([table]))
    print("sequential = simplified localize-then-classify skeleton")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "error-prop": cmd_error_prop,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON overrides applied on top of the preset")
    common.add_argument("--preset", choices=["large", "small", "toy"], default="toy")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--labels-fraction", type=float, default=None)
    common.add_argument("--run-dir", default=None)
    common.add_argument("--data", default=None, help="dataset directory (default <run>/data)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="spot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "finetune":
            p.add_argument("--from-scratch", action="store_true", help="random init instead of the pre-trained checkpoint")
            p.add_argument("--init", default=None, help="pre-trained checkpoint (default <run>/pretrain.npz)")
            p.add_argument("--validate", action="store_true", help="log test mAP every epoch")
        if name in ("finetune", "infer", "error-prop"):
            p.add_argument("--checkpoint", default=None, help="fine-tuned checkpoint (default <run>/finetune.npz)")
        if name in ("infer", "eval"):
            p.add_argument("--detections", default=None)
        if name == "eval":
            p.add_argument("--annotations", default=None, help="ground-truth JSON (default: the dataset's test split)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        run = run_dir(args, cfg)
        COMMANDS[args.command](args, cfg, run)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"spot {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
