"""Command line entry point: gen-data | train | caption | bench | report.

SWIFTER_SEED overrides the default seed (42) for every subcommand.
"""

import argparse
import os
import sys

import numpy as np

from .backbone import SwiftConfig
from .bench import MODES, bench_decode, emit_report, parse_report_csv
from .checkpoint import load_checkpoint
from .data import gen_shape_world, load_dataset, make_sample, save_dataset
from .decoding import beam_search, greedy_decode
from .model import FusionConfig, FusionModel, SwifterModel
from .training import TrainingConfig, train_loop
from .vocab import Vocabulary


def _default_seed() -> int:
    return int(os.environ.get("SWIFTER_SEED", "42"))


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swifter", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic shape-world dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=64)
    g.add_argument("--seed", type=int, default=None)

    t = sub.add_parser("train", help="train on a generated dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path (.swft)")
    t.add_argument("--log", default=None, help="metrics CSV path")
    t.add_argument("--steps", type=int, default=500)
    t.add_argument("--batch", type=int, default=16)
    t.add_argument("--lr", type=float, default=3e-4)
    t.add_argument("--mode", choices=["xe", "scst"], default="xe")
    t.add_argument("--optimizer", choices=["sgd", "adam"], default="adam")
    t.add_argument("--scst-samples", type=int, default=5)
    t.add_argument("--init", default=None, help="warm-start checkpoint")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--max-len", type=int, default=16)
    t.add_argument("--min-freq", type=int, default=1)
    t.add_argument("--hidden", type=int, default=96)
    t.add_argument("--layers", type=int, default=2)

    c = sub.add_parser("caption", help="decode a caption for one sample")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--data", default=None, help="dataset dir for --sample")
    c.add_argument("--sample", type=int, default=None,
                   help="sample index; without --data the shape-world sample "
                        "with this index is regenerated under the seed")
    c.add_argument("--tensor", default=None, help=".npy image tensor (3x32x32, normalized)")
    c.add_argument("--beam", type=int, default=0, help="beam size; 0 = greedy")
    c.add_argument("--max-len", type=int, default=16)
    c.add_argument("--seed", type=int, default=None)

    b = sub.add_parser("bench", help="measure decode scaling")
    b.add_argument("--mode", choices=["recurrent", "stateless", "both"], default="both")
    b.add_argument("--lens", type=_ints, default=[8, 16, 32, 64])
    b.add_argument("--batch", type=_ints, default=[1])
    b.add_argument("--out", required=True, help="CSV path")
    b.add_argument("--svg", default=None, help="also render an SVG chart")
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--hidden", type=int, default=96)
    b.add_argument("--layers", type=int, default=3)
    b.add_argument("--ff", type=int, default=384)
    b.add_argument("--heads", type=int, default=4)
    b.add_argument("--vocab", type=int, default=10000)
    b.add_argument("--n-visual", type=int, default=16)
    b.add_argument("--budget-gflops", type=float, default=100.0)

    r = sub.add_parser("report", help="render a bench CSV as an SVG chart")
    r.add_argument("--in", dest="src", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--metric", choices=["wall_ns", "flops", "peak_state_bytes"],
                   default="wall_ns")
    r.add_argument("--loglog", action="store_true")
    return p


def cmd_gen_data(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    samples = gen_shape_world(args.count, seed)
    save_dataset(samples, args.out, seed)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    samples = load_dataset(args.data)
    if args.init:
        model, extra = load_checkpoint(args.init)
        vocab = Vocabulary(extra["vocab"], extra.get("min_freq", 1))
    else:
        vocab = Vocabulary.build([s.caption for s in samples], min_freq=args.min_freq)
        fusion_cfg = FusionConfig(
            vocab_size=len(vocab),
            n_layers=args.layers,
            hidden=args.hidden,
            ff_size=4 * args.hidden,
            max_len=args.max_len,
        )
        model = SwifterModel.init(fusion_cfg, SwiftConfig(), seed=seed)
    cfg = TrainingConfig(
        steps=args.steps,
        lr=args.lr,
        batch=args.batch,
        seed=seed,
        mode=args.mode,
        scst_samples=args.scst_samples,
        optimizer=args.optimizer,
        max_len=args.max_len,
    )
    metrics = train_loop(model, samples, vocab, cfg, log_path=args.log, ckpt_path=args.out)
    vocab.save(args.out + ".vocab")
    last = metrics[-1]
    print(f"finished {len(metrics)} steps, final loss {last['loss']:.6f}")
    return 0


def cmd_caption(args) -> int:
    model, extra = load_checkpoint(args.ckpt)
    if "vocab" not in extra:
        print("checkpoint carries no vocabulary", file=sys.stderr)
        return 2
    vocab = Vocabulary(extra["vocab"], extra.get("min_freq", 1))
    if args.tensor is not None:
        image = np.load(args.tensor)
    elif args.data is not None and args.sample is not None:
        image = load_dataset(args.data)[args.sample].image
    elif args.sample is not None:
        seed = args.seed if args.seed is not None else _default_seed()
        image = make_sample(seed, args.sample).image
    else:
        print("caption needs --tensor or --sample", file=sys.stderr)
        return 2
    feats = model.features(np.asarray(image, dtype=np.float64))
    if args.beam > 0:
        best = beam_search(model.fusion, feats.data, args.beam, args.max_len)[0]
        ids = best.words
    else:
        ids = greedy_decode(model.fusion, feats.data, args.max_len).words
    print(vocab.decode(ids))
    return 0


def cmd_bench(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    cfg = FusionConfig(
        vocab_size=args.vocab,
        n_layers=args.layers,
        hidden=args.hidden,
        ff_size=args.ff,
        heads=args.heads,
        d_m=args.hidden,
    )
    fusion = FusionModel(cfg, np.random.default_rng(seed))
    modes = list(MODES) if args.mode == "both" else [args.mode]
    report = bench_decode(
        fusion,
        modes,
        args.lens,
        args.batch,
        repeats=args.repeats,
        n_visual=args.n_visual,
        seed=seed,
        budget_gflops=args.budget_gflops,
    )
    emit_report(report, "csv", args.out)
    if args.svg:
        emit_report(report, "svg", args.svg)
    print(f"wrote {len(report.rows)} rows to {args.out}")
    return 0


def cmd_report(args) -> int:
    report = parse_report_csv(args.src)
    emit_report(report, "svg", args.out, metric=args.metric, loglog=args.loglog)
    print(f"wrote {args.out}")
    return 0


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "caption": cmd_caption,
    "bench": cmd_bench,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    return _HANDLERS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
