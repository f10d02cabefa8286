"""Batch command-line entry point: ``srx synth|train|eval|retrieve|gradcheck``.

Exit codes: 0 success, 1 gradient check failure, 2 usage error,
3 invalid input or configuration, 4 I/O or file-format failure,
5 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .data_io import SynthDims, load_dataset, synth_dataset
from .errors import FormatError, NumericalError, SrxError
from .gradcheck import REGISTRY, format_summary, run_suite
from .matching import parse_pairing
from .metrics import format_text
from .train import RunConfig, evaluate_checkpoint, retrieve, train

log = logging.getLogger("srx")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4
EXIT_NUMERICAL = 5


def _configure_logging():
    level = os.environ.get("SRX_LOG", "WARNING").upper()
    if level.isdigit():
        level = int(level)
    elif not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _run_config(args) -> RunConfig:
    overrides = {
        "seed": args.seed,
        "margin": args.margin,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "pairing": parse_pairing(args.pairing) if args.pairing else None,
        "mining": args.mining,
        "features_mode": args.features_mode,
        "lr": args.lr,
        "optimizer": args.optimizer,
        "d_model": args.d_model,
        "heads": args.heads,
        "gcn_layers": args.gcn_layers,
    }
    return RunConfig.load(args.config, **overrides)


def cmd_synth(args) -> int:
    dims = SynthDims(feature_dim=args.feature_dim, word_dim=args.word_dim, signal=args.signal, noise=args.noise)
    manifest = synth_dataset(args.out, args.seed, args.clips, dims)
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    dataset = load_dataset(args.manifest)
    result = train(cfg, dataset, out_dir=args.out, resume=args.resume, stop_after=args.stop_after)
    last = f"{result.history[-1]:.6f}" if result.history else "n/a"
    print(f"epochs {result.epoch}  final loss {last}  checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    dataset = load_dataset(args.manifest)
    rep, _ = evaluate_checkpoint(args.checkpoint, dataset, args.out)
    print(format_text(rep), end="")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    dataset = load_dataset(args.manifest)
    _, sim = evaluate_checkpoint(args.checkpoint, dataset)
    for clip_id, score in retrieve(sim, args.caption, args.k):
        print(f"{clip_id}\t{score!r}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    names = args.only or None
    if names:
        unknown = [n for n in names if n not in REGISTRY]
        if unknown:
            print(f"error: unknown check(s) {unknown}", file=sys.stderr)
            return EXIT_VALIDATION
    seeds = range(args.seed, args.seed + args.seeds)
    results, elapsed = run_suite(seeds, names, args.tolerance, corrupt=args.corrupt)
    print(format_summary(results, elapsed))
    failed = sorted({r.name for r in results if not r.passed})
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file of run settings; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--pairing", help="e.g. event=spatial,actions=temporal,entities=object")
    p.add_argument("--mining", choices=("hardest", "sum"))
    p.add_argument("--features-mode", choices=("2d", "2d3d-seq", "2d3d-feat", "2d-3d-roi"))
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--d-model", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--gcn-layers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srx", description="Role-aware text-to-video retrieval.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clips", type=int, default=32)
    p.add_argument("--out", required=True)
    p.add_argument("--feature-dim", type=int, default=SynthDims.feature_dim)
    p.add_argument("--word-dim", type=int, default=SynthDims.word_dim)
    p.add_argument("--signal", type=float, default=SynthDims.signal,
                   help="weight of caption content in the clip features (0 gives pure noise)")
    p.add_argument("--noise", type=float, default=SynthDims.noise)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-after", type=int, help="stop once this many epochs are done")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score every caption against every clip")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--out", help="directory for report.txt, report.kv and scores.npy")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("retrieve", help="top-k clips for one caption")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("caption")
    p.add_argument("-k", type=int, default=5)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--only", nargs="+", metavar="NAME")
    p.add_argument("--list", action="store_true", help="print the registered checks and exit")
    p.add_argument("--corrupt", metavar="OP", help="scale OP's backward rule (negative control)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "list", False):
        print("\n".join(REGISTRY))
        return EXIT_OK
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OSError, json.JSONDecodeError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SrxError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
