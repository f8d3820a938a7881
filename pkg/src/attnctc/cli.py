"""Command-line entry point: dataset generation, training, decoding,
the ablation ladder, gradient checking, and transcript scoring.

Every option can come from a JSON config file (keys named like the long
flags, underscores for dashes); explicit flags override file values.
Transcript files are one utterance per line, "uttid<TAB>text".
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .data import gen_splits, load_dataset, save_dataset, toy_task_spec
from .decoding import cer, greedy_decode, wer
from .checkpoint import load_checkpoint
from .model import Model
from .training import (
    MODES,
    TrainConfig,
    ablate,
    format_ablation_table,
    grad_check,
    make_model_config,
    train,
)

log = logging.getLogger("attnctc")


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill flags the user left unset from the JSON config file, if any."""
    path = getattr(args, "config", None)
    if not path:
        return args
    with open(path, encoding="utf-8") as fh:
        overrides = json.load(fh)
    for key, value in overrides.items():
        if not hasattr(args, key):
            raise SystemExit(f"config key {key!r} is not an option of this command")
        if getattr(args, key) is None:
            setattr(args, key, value)
    return args


def _defaults(args: argparse.Namespace, **defaults) -> argparse.Namespace:
    for key, value in defaults.items():
        if getattr(args, key) is None:
            setattr(args, key, value)
    return args


def _read_transcripts(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            uttid, _, text = line.partition("\t")
            out[uttid] = text
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    _defaults(args, seed=1234, sigma=0.3, n_train=2000, n_dev=200, n_test=200)
    spec = toy_task_spec(seed=args.seed, sigma=args.sigma)
    tr, dv, te = gen_splits(spec, args.n_train, args.n_dev, args.n_test)
    save_dataset(args.out, spec, {"train": tr, "dev": dv, "test": te})
    print(f"wrote {args.n_train}/{args.n_dev}/{args.n_test} utterances to {args.out}")
    return 0


def cmd_train(args) -> int:
    _defaults(args, mode="+coma", tau=3, n=32, cells=32, lr=0.05, epochs=14,
              batch_size=16, patience=2, clip_norm=5.0, seed=0)
    cs, splits = load_dataset(args.data, splits=("train", "dev"))
    train_pairs = [(f, t) for _, f, t in splits["train"]]
    dev_pairs = [(f, t) for _, f, t in splits["dev"]]
    cfg = make_model_config(args.mode, in_dim=train_pairs[0][0].dim, K=len(cs),
                            n=args.n, tau=args.tau, cells=args.cells)
    model = Model(cfg, np.random.default_rng(args.seed))
    tc = TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                     patience=args.patience, clip_norm=args.clip_norm,
                     seed=args.seed, checkpoint_path=args.out)
    res = train(model, train_pairs, dev_pairs, cs, tc, metrics_path=args.metrics)
    print(f"best dev CER {res.best_dev_cer:.4f} at epoch {res.best_epoch}; "
          f"checkpoint {args.out}")
    return 0


def cmd_decode(args) -> int:
    _defaults(args, split="test")
    model, cs = load_checkpoint(args.model)
    _, splits = load_dataset(args.data, splits=(args.split,))
    lines = []
    for uttid, feats, _ in splits[args.split]:
        hyp = greedy_decode(model.lattice(feats, blank_id=cs.blank_id), cs)
        lines.append(f"{uttid}\t{hyp.text}")
    body = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(body)
    else:
        sys.stdout.write(body)
    return 0


def cmd_score(args) -> int:
    refs = _read_transcripts(args.refs)
    hyps = _read_transcripts(args.hyps)
    if set(refs) != set(hyps):
        missing = set(refs) ^ set(hyps)
        raise SystemExit(f"utterance ids differ between files: {sorted(missing)[:5]} ...")
    ids = sorted(refs)
    ref_texts = [refs[i] for i in ids]
    hyp_texts = [hyps[i] for i in ids]
    print(f"utterances {len(ids)}")
    print(f"CER {100 * cer(ref_texts, hyp_texts):.2f}%")
    print(f"WER {100 * wer(ref_texts, hyp_texts):.2f}%")
    return 0


def cmd_ablate(args) -> int:
    _defaults(args, tau=3, n=32, cells=32, lr=0.05, epochs=14, batch_size=16,
              patience=2, seed=11, modes=",".join(MODES))
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    cs, splits = load_dataset(args.data, splits=("train", "dev", "test"))
    pairs = {k: [(f, t) for _, f, t in v] for k, v in splits.items()}
    tc = TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                     patience=args.patience, seed=args.seed)
    rows = ablate(pairs["train"], pairs["dev"], pairs["test"], cs, tc,
                  modes=modes, model_kw=dict(n=args.n, tau=args.tau, cells=args.cells))
    table = format_ablation_table(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
    print(table)
    return 0


def cmd_grad_check(args) -> int:
    _defaults(args, seed=0, tau=2, n=8, K=5, T=6, tol=1e-4)
    modes = list(MODES) if args.mode is None or args.mode == "all" else [args.mode]
    failed = False
    for mode in modes:
        report = grad_check(mode, seed=args.seed, n=args.n, K=args.K,
                            tau=args.tau, T=args.T, tol=args.tol)
        print(report.format())
        failed |= not report.passed
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_config_flag(p):
    p.add_argument("--config", help="JSON file of option values; flags win")
    p.add_argument("--seed", type=int, help="rng seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnctc",
        description="window-attention CTC models on synthetic tasks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the standard synthetic task")
    _add_config_flag(p)
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--sigma", type=float, help="emission noise (default 0.3)")
    p.add_argument("--n-train", type=int, dest="n_train")
    p.add_argument("--n-dev", type=int, dest="n_dev")
    p.add_argument("--n-test", type=int, dest="n_test")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model and keep the best-dev checkpoint")
    _add_config_flag(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="per-epoch TSV log path")
    p.add_argument("--mode", choices=MODES, help="attention mode (default +coma)")
    p.add_argument("--tau", type=int, help="attention half-window")
    p.add_argument("--n", type=int, help="attention width / encoder projection")
    p.add_argument("--cells", type=int, help="encoder LSTM cells per direction")
    p.add_argument("--lr", type=float, help="step size")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--patience", type=int, help="epochs without dev gain before decay")
    p.add_argument("--clip-norm", type=float, dest="clip_norm")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="greedy-decode a split with a checkpoint")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", help="split name (default test)")
    p.add_argument("--out", help="transcript file (default stdout)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("score", help="CER/WER between two transcript files")
    p.add_argument("--refs", required=True)
    p.add_argument("--hyps", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("ablate", help="train the mode ladder and print the table")
    _add_config_flag(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--modes", help="comma list (default all six)")
    p.add_argument("--tau", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--cells", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--patience", type=int)
    p.add_argument("--out", help="also write the table here")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grad-check", help="finite-difference check of every parameter")
    _add_config_flag(p)
    p.add_argument("--mode", help="one mode, or 'all' (default all)")
    p.add_argument("--tau", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--tol", type=float)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    args = _merge_config(args)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
