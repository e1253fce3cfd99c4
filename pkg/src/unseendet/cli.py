"""Command-line entry point: ``unseendet <subcommand> ...``.

Exit codes: 0 success, 2 validation error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .errors import ValidationError

log = logging.getLogger("unseendet")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which already matches EXIT_VALIDATION
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (any subset of keys)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. budget.response_time_s=120 (repeatable)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="unseendet", description="Unseen-class detector training on ShapesWorld.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate seen-class sets and unseen test sets")
    g.add_argument("--unseen", nargs="*", help="unseen classes to build test sets for (default: config)")

    sub.add_parser("train-baselines", parents=[common], help="train the strong and weak baselines").add_argument(
        "--force", action="store_true", help="retrain even when up-to-date checkpoints exist")

    r = sub.add_parser("request-unseen", parents=[common], help="train a detector for an unseen class")
    r.add_argument("name", help="unseen class id or alias")
    r.add_argument("--images", help="directory of image-level labelled images (default: synthetic)")
    r.add_argument("--budget-s", type=float, help="fine-tuning response time in seconds (overrides budget.*)")
    r.add_argument("--k", type=int, help="number of nearest neighbours")
    r.add_argument("--alpha", type=float, help="weight of visual similarity")
    r.add_argument("--mode", choices=pipeline.MODES)
    r.add_argument("--force", action="store_true", help="recompute even if this run already exists")

    a = sub.add_parser("alpha-sweep", parents=[common], help="mAP for a grid of alpha values")
    a.add_argument("name")
    a.add_argument("--alphas", type=float, nargs="+", default=list(pipeline.DEFAULT_ALPHAS))
    a.add_argument("--images")
    a.add_argument("--out", help="CSV path (a PNG is written next to it)")

    e = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint on a detection manifest")
    e.add_argument("checkpoint")
    e.add_argument("test_dir", help="directory holding meta.json and annotations.jsonl")
    e.add_argument("--classes", nargs="+")
    e.add_argument("--out", help="directory for eval.csv and detections.jsonl")

    rep = sub.add_parser("report", parents=[common], help="budget curve, similarity and ladder CSVs plus figures")
    rep.add_argument("runs", nargs="*", help="run ids (default: every completed run)")
    rep.add_argument("--out", help="output directory (default: <run_dir>/report)")

    s = sub.add_parser("splits", parents=[common], help="random 5-class and 20-class unseen splits")
    s.add_argument("--sizes", type=int, nargs="+", default=[5, 20])
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    return p


def _request_overrides(args):
    extra = []
    if args.budget_s is not None:
        extra += [f"budget.response_time_s={args.budget_s}", "budget.scale=1"]
    if args.k is not None:
        extra.append(f"k={args.k}")
    if args.alpha is not None:
        extra.append(f"alpha={args.alpha}")
    if args.mode is not None:
        extra.append(f"mode={json.dumps(args.mode)}")
    return extra


def run(args) -> int:
    overrides = list(args.overrides)
    if args.command == "request-unseen":
        overrides += _request_overrides(args)
    cfg = pipeline.load_config(args.config, overrides)

    if args.command == "gen-data":
        for name, h in pipeline.gen_data(cfg, args.unseen).items():
            print(f"{name}\t{h}")
    elif args.command == "train-baselines":
        strong, weak = pipeline.train_baselines(cfg, force=args.force)
        print(f"strong\t{strong}\nweak\t{weak}")
    elif args.command == "request-unseen":
        rec = pipeline.request_unseen(cfg, args.name, images=args.images, force=args.force)
        print(f"run\t{rec.run_id}\nmode\t{rec.mode}\nsource\t{rec.source}\nepochs\t{rec.budget['epochs']}")
        print(f"finetune_s\t{rec.timings.get('finetune', 0.0):.2f}\nmAP\t{rec.mAP:.6f}")
    elif args.command == "alpha-sweep":
        path, rows = pipeline.alpha_sweep(cfg, args.name, args.alphas, args.images, args.out)
        print("alpha,mAP")
        for a, m in rows:
            print(f"{a},{m:.6f}")
        print(f"# written to {path}", file=sys.stderr)
    elif args.command == "evaluate":
        rep = pipeline.evaluate_checkpoint(cfg, args.checkpoint, args.test_dir, args.classes, args.out)
        print("class,AP,num_GT,TP,FP")
        for c, r in rep.per_class.items():
            print(f"{c},{r.ap:.6f},{r.num_gt},{r.tp},{r.fp}")
        print(f"mAP,{rep.mAP:.6f},,,")
    elif args.command == "report":
        for name, path in pipeline.report(cfg, args.runs or None, args.out).items():
            print(f"{name}\t{path}")
    elif args.command == "splits":
        path, result = pipeline.splits(cfg, tuple(args.sizes), args.seed, args.out)
        for name, classes in result.items():
            print(f"{name}\t{' '.join(classes)}")
        print(f"# written to {path}", file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # anything else is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
