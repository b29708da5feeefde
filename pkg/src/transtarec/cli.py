"""Command-line interface: ``transtarec {train,eval,recommend,gen-synthetic,inspect}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

import numpy as np

from . import __version__
from .data import FORMATS, PATTERNS, Task, chronological_split, decompose_time, generate_synthetic, parse_dataset, parse_iso, write_tsv
from .errors import TransTARecError, VocabMismatch
from .evaluation import DEFAULT_KS, EvalConfig, align_split, compare, evaluate, write_report_csv
from .model import HyperParams, rank_candidates
from .persistence import ModelArchive, load, save
from .training import TrainConfig, train

log = logging.getLogger("transtarec")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def _nonneg_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _fraction(text: str) -> float:
    value = _positive_float(text)
    if value >= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {value}")
    return value


def _ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError("every k must be >= 1")
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise argparse.ArgumentTypeError(f"k values must be strictly increasing, got {text!r}")
    return ks


def _iso(text: str):
    try:
        return parse_iso(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an ISO-8601 timestamp, got {text!r}")


def _rank_mode(text: str) -> str:
    mode = text.replace("-", "_")
    if mode not in ("inner", "neg_l2"):
        raise argparse.ArgumentTypeError(f"expected inner or neg-l2, got {text!r}")
    return mode


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="transtarec", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", help="train a model on a check-in file", formatter_class=fmt)
    p.add_argument("--data", required=True, help="check-in file")
    p.add_argument("--format", choices=FORMATS, default="generic_tsv", help="input layout")
    p.add_argument("--train-fraction", type=_fraction, default=0.8, help="per-user chronological training share")
    p.add_argument("--dim", type=_positive_int, default=100, help="embedding dimension d")
    p.add_argument("--margin", type=_nonneg_float, default=1.0, help="ranking margin gamma")
    p.add_argument("--soft-c", type=_nonneg_float, default=1.0, help="weight C of the orthogonality penalty")
    p.add_argument("--epsilon", type=_positive_float, default=0.001, help="orthogonality slack epsilon")
    p.add_argument("--lr", type=_positive_float, default=0.01, help="SGD learning rate (conventional default)")
    p.add_argument("--epochs", type=_positive_int, default=50, help="training epochs (conventional default)")
    p.add_argument("--neg", type=_positive_int, default=1, help="negatives per positive (conventional default)")
    p.add_argument("--batch", type=_positive_int, default=64, help="mini-batch size (conventional default)")
    p.add_argument("--init-scale", type=_nonneg_float, default=0.01, help="fusion-layer init noise (conventional default)")
    p.add_argument("--seed", type=int, default=42, help="random seed")
    p.add_argument("--rank-mode", type=_rank_mode, default="inner", help="default ranking stored in the model: inner or neg-l2")
    p.add_argument("--baseline", action="store_true", help="train the time-blind translation ablation")
    p.add_argument("--no-clamp", action="store_true", help="do not clamp user/POI embeddings to the unit ball")
    p.add_argument("--out", default="model.transtarec", help="output model archive")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Top@k of one model, or a comparison of two", formatter_class=fmt)
    p.add_argument("--model", action="append", required=True, help="model archive; give twice to compare")
    p.add_argument("--data", required=True, help="check-in file the model was trained on")
    p.add_argument("--format", choices=FORMATS, default="generic_tsv", help="input layout")
    p.add_argument("--train-fraction", type=_fraction, default=0.8, help="per-user chronological training share")
    p.add_argument("--task", choices=("next", "timespec", "timespec-gap"), default="next", help="evaluation task")
    p.add_argument("--gap-hours", type=_nonneg_float, default=5.0, help="minimum gap for timespec-gap")
    p.add_argument("--k", type=_ks, default=None,
                   help=f"comma-separated cutoffs (default {','.join(map(str, DEFAULT_KS))}, capped at the POI count)")
    p.add_argument("--rank-mode", type=_rank_mode, default=None, help="inner or neg-l2 (default: the model's, normally inner)")
    p.add_argument("--skip-unknown", action="store_true", help="drop visits whose user/POI the model never saw")
    p.add_argument("--report", default=None, help="also write a CSV report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("recommend", help="rank POIs for one query", formatter_class=fmt)
    p.add_argument("--model", required=True, help="model archive")
    p.add_argument("--user", required=True, help="user id")
    p.add_argument("--prev-poi", required=True, help="previously visited POI id")
    p.add_argument("--prev-time", type=_iso, required=True, help="time of the previous visit (ISO-8601)")
    p.add_argument("--next-time", type=_iso, required=True, help="time of the visit to predict (ISO-8601)")
    p.add_argument("--top", type=_positive_int, default=10, help="number of POIs to print")
    p.add_argument("--watch", default=None, help="comma-separated POI ids whose ranks to report")
    p.add_argument("--rank-mode", type=_rank_mode, default=None, help="inner or neg-l2 (default: the model's)")
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("gen-synthetic", help="write a synthetic check-in corpus", formatter_class=fmt)
    p.add_argument("--users", type=_positive_int, required=True, help="number of users")
    p.add_argument("--pois", type=int, required=True, help="number of POIs (>= 4)")
    p.add_argument("--records", type=int, default=100, help="check-ins per user (>= 2)")
    p.add_argument("--pattern", choices=PATTERNS, default="time_dependent", help="successor structure")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", required=True, help="output generic_tsv file")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("inspect", help="summarise a model archive", formatter_class=fmt)
    p.add_argument("--model", required=True, help="model archive")
    p.set_defaults(func=cmd_inspect)
    return parser


def _progress(stats) -> None:
    print(stats, file=sys.stderr, flush=True)


def cmd_train(args: argparse.Namespace) -> int:
    corpus = parse_dataset(args.data, args.format)
    split = chronological_split(corpus, args.train_fraction)
    train_corpus = split.train.compact()
    hyper = HyperParams(
        dim=args.dim,
        margin=args.margin,
        soft_c=args.soft_c,
        epsilon=args.epsilon,
        rank_mode=args.rank_mode,
        baseline_mode=args.baseline,
    )
    config = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        neg_samples=args.neg,
        batch_size=args.batch,
        seed=args.seed,
        clamp_entities=not args.no_clamp,
        init_scale=args.init_scale,
    )
    print(
        f"training on {train_corpus.n_users} users, {train_corpus.n_pois} POIs, "
        f"{train_corpus.n_records} check-ins ({split.dropped_users} users dropped, {corpus.malformed} malformed lines)",
        file=sys.stderr,
    )
    result = train(train_corpus, hyper, config, progress=_progress)
    archive = ModelArchive(hyper, train_corpus.users, train_corpus.pois, result.params,
                           seed=args.seed, epochs=args.epochs, final_loss=result.final_loss)
    save(archive, args.out)
    print(f"saved {args.out}", file=sys.stderr)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    corpus = parse_dataset(args.data, args.format)
    split = chronological_split(corpus, args.train_fraction)
    task = Task(args.task.replace("-", "_"), args.gap_hours)
    named = []
    for path in args.model:
        archive = load(path)
        aligned = align_split(split, archive.users, archive.pois, args.skip_unknown)
        ks = args.k
        if ks is None:
            ks = tuple(k for k in DEFAULT_KS if k <= len(archive.pois)) or (len(archive.pois),)
        config = EvalConfig(
            ks=ks,
            task=task,
            rank_mode=args.rank_mode or archive.hyper.rank_mode,
            baseline_mode=archive.hyper.baseline_mode,
        )
        report = evaluate(archive.params, aligned, config)
        named.append((path, report))
        print(report.to_text(path))
        print()
    if len(named) == 2:
        print(compare(named).to_text())
    if args.report:
        write_report_csv(args.report, named)
    return 0


def _lookup(ids: Sequence[str], name: str, kind: str) -> int:
    try:
        return ids.index(name)
    except ValueError:
        raise VocabMismatch(f"unknown {kind} {name!r}") from None


def cmd_recommend(args: argparse.Namespace) -> int:
    archive = load(args.model)
    user = _lookup(archive.users, args.user, "user")
    prev_poi = _lookup(archive.pois, args.prev_poi, "POI")
    watch = [_lookup(archive.pois, w, "POI") for w in args.watch.split(",")] if args.watch else []
    t_i = decompose_time(*args.prev_time)
    t_j = decompose_time(*args.next_time)
    mode = args.rank_mode or archive.hyper.rank_mode
    ranking = rank_candidates(archive.params, user, t_i, prev_poi, t_j, rank_mode=mode,
                              baseline_mode=archive.hyper.baseline_mode)
    label = "score" if mode == "inner" else "distance"
    print(f"# user {args.user}  prev {args.prev_poi} at {t_i}  next at {t_j}  rank-mode {mode}")
    print(f"rank\tpoi\t{label}")
    for r, (poi, score) in enumerate(ranking[: args.top], 1):
        print(f"{r}\t{archive.pois[poi]}\t{score:.6f}")
    if watch:
        position = {poi: r for r, (poi, _) in enumerate(ranking, 1)}
        print("watch\tpoi\trank")
        for w in watch:
            print(f"watch\t{archive.pois[w]}\t{position[w]}")
    return 0


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    corpus = generate_synthetic(args.users, args.pois, args.pattern, args.seed, args.records)
    write_tsv(corpus, args.out)
    print(f"wrote {corpus.n_records} check-ins to {args.out}", file=sys.stderr)
    return 0


def _norm_stats(table: np.ndarray) -> str:
    norms = np.linalg.norm(table, axis=1)
    return f"min {norms.min():.6f}  mean {norms.mean():.6f}  max {norms.max():.6f}"


def cmd_inspect(args: argparse.Namespace) -> int:
    archive = load(args.model)
    h = archive.hyper
    print(f"format_version: {archive.format_version}")
    print(f"dim: {h.dim}")
    print(f"margin: {h.margin}")
    print(f"soft_c: {h.soft_c}")
    print(f"epsilon: {h.epsilon}")
    print(f"rank_mode: {h.rank_mode}")
    print(f"baseline_mode: {int(h.baseline_mode)}")
    print(f"seed: {archive.seed}")
    print(f"epochs: {archive.epochs}")
    print(f"final_loss: {archive.final_loss}")
    print(f"n_users: {len(archive.users)}")
    print(f"n_pois: {len(archive.pois)}")
    for name, arr in archive.params.tensors().items():
        print(f"shape {name}: {'x'.join(str(s) for s in arr.shape)}")
    print(f"user_norms: {_norm_stats(archive.params.user_emb)}")
    print(f"poi_norms: {_norm_stats(archive.params.poi_emb)}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "gen-synthetic":
        if args.pois < 4:
            parser.error("argument --pois: must be >= 4")
        if args.records < 2:
            parser.error("argument --records: must be >= 2")
    if args.command == "eval" and len(args.model) > 2:
        parser.error("argument --model: give it once, or twice to compare")
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TransTARecError, OSError) as exc:
        print(f"transtarec {args.command}: error: {exc}", file=sys.stderr)
        return 1
