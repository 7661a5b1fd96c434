"""Command-line front end.

    tmmkit train --config cfg.json --out-dir out
    tmmkit eval --config cfg.json --checkpoint out/checkpoint.tmm \
                --mask-kind iid --mask-param 0,0.25,0.5 --out-dir out
    tmmkit feature-deletion --config cfg.json --checkpoint out/checkpoint.tmm \
                --deletions 0,25,50 --repeats 10 --out-dir out
    tmmkit sample --checkpoint out/checkpoint.tmm --label 0 --count 16 --out-dir out
    tmmkit oracle --suites all

Exit codes: 0 success, 1 runtime failure (oracle: any suite failed),
2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .benchmarks import (
    EVAL_COLUMNS,
    FEATURE_DELETION_COLUMNS,
    ConfigError,
    eval_grid,
    feature_deletion_benchmark,
    load_config,
    parse_mask_specs,
    prepare_data,
    train_from_config,
)
from .data_io import write_csv
from .sampling import sample_batch, save_samples_csv, save_samples_pgm
from .serialize import load_network, save_network, save_network_json
from .suites import ALL_SUITES, run_suites


def _build_parser():
    parser = argparse.ArgumentParser(prog="tmmkit",
                                     description="train, evaluate, sample, and verify "
                                                 "tensorial mixture classifiers")
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a model from a config file")
    tr.add_argument("--config", required=True)
    tr.add_argument("--out-dir", required=True)
    tr.add_argument("--seed", type=int, default=None, help="override train.seed")

    ev = sub.add_parser("eval", help="accuracy grid under corruption masks")
    ev.add_argument("--config", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--out-dir", required=True)
    ev.add_argument("--mask-kind", default="iid",
                    choices=["iid", "rectangles", "feature_deletion"])
    ev.add_argument("--mask-param", default="",
                    help="comma list: probabilities / NxW rectangles / deletion counts")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--threads", type=int, default=1)

    fd = sub.add_parser("feature-deletion", help="two-class deletion benchmark")
    fd.add_argument("--config", required=True)
    fd.add_argument("--checkpoint", default=None,
                    help="reuse a trained model; trains from the config when omitted")
    fd.add_argument("--out-dir", required=True)
    fd.add_argument("--deletions", default="0,25,50,75,100,125,150")
    fd.add_argument("--repeats", type=int, default=10)
    fd.add_argument("--seed", type=int, default=0)
    fd.add_argument("--threads", type=int, default=1)

    sm = sub.add_parser("sample", help="draw class-conditional samples")
    sm.add_argument("--checkpoint", required=True)
    sm.add_argument("--out-dir", required=True)
    sm.add_argument("--label", type=int, default=0)
    sm.add_argument("--count", type=int, default=16)
    sm.add_argument("--patch", default=None, help="ph,pw for image montages")
    sm.add_argument("--seed", type=int, default=0)

    orc = sub.add_parser("oracle", help="run the brute-force verification suites")
    orc.add_argument("--suites", default="all",
                     help=f"'all' or comma list of {','.join(ALL_SUITES)}")
    orc.add_argument("--seed", type=int, default=0)
    orc.add_argument("--checkpoint", default=None,
                     help="also run the simplex suite against this checkpoint")
    return parser


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    os.makedirs(args.out_dir, exist_ok=True)

    def on_checkpoint(iteration, net):
        save_network(os.path.join(args.out_dir, f"checkpoint-{iteration}.tmm"), net)

    net, trace, _ = train_from_config(cfg, seed_override=args.seed,
                                      on_checkpoint=on_checkpoint)
    save_network(os.path.join(args.out_dir, "checkpoint.tmm"), net)
    save_network_json(os.path.join(args.out_dir, "checkpoint.json"), net)
    write_csv(os.path.join(args.out_dir, "trace.csv"),
              ["iteration", "loss", "discriminative", "generative"], trace)
    print(f"trained {len(trace)} iterations -> {args.out_dir}/checkpoint.tmm")
    return 0


def _cmd_eval(args) -> int:
    cfg = load_config(args.config)
    net = load_network(args.checkpoint)
    data = prepare_data(cfg)
    specs = parse_mask_specs(args.mask_kind, args.mask_param)
    rows = eval_grid(net, data, specs, seed=args.seed, threads=args.threads)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "eval.csv")
    write_csv(out, EVAL_COLUMNS, rows)
    for row in rows:
        print(",".join(str(v) for v in row))
    print(f"wrote {out}")
    return 0


def _cmd_feature_deletion(args) -> int:
    cfg = load_config(args.config)
    data = prepare_data(cfg)
    if data.n_classes != 2:
        raise ConfigError("data: the feature-deletion benchmark needs exactly two classes")
    if args.checkpoint:
        net = load_network(args.checkpoint)
    else:
        net, _, data = train_from_config(cfg)
    deletions = [int(tok) for tok in args.deletions.split(",") if tok.strip()]
    rows = feature_deletion_benchmark(net, data, deletions, repeats=args.repeats,
                                      seed=args.seed, threads=args.threads)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "feature_deletion.csv")
    write_csv(out, FEATURE_DELETION_COLUMNS, rows)
    for row in rows:
        print(f"n={row[0]}: {row[1]:.4f}")
    print(f"wrote {out}")
    return 0


def _cmd_sample(args) -> int:
    net = load_network(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    samples = sample_batch(net, args.label, args.count, rng)
    os.makedirs(args.out_dir, exist_ok=True)
    if net.grid_shape is not None:
        if args.patch:
            ph, pw = (int(v) for v in args.patch.split(","))
        else:
            side = int(round(np.sqrt(net.patch_dim)))
            if side * side != net.patch_dim:
                raise ValueError("cannot infer the patch extents; pass --patch ph,pw")
            ph = pw = side
        out = os.path.join(args.out_dir, f"samples-class{args.label}.pgm")
        save_samples_pgm(out, samples, net.grid_shape, (ph, pw))
    else:
        out = os.path.join(args.out_dir, f"samples-class{args.label}.csv")
        save_samples_csv(out, samples)
    print(f"wrote {out}")
    return 0


def _cmd_oracle(args) -> int:
    names = None if args.suites == "all" else [s.strip() for s in args.suites.split(",")]
    networks = None
    if args.checkpoint:
        networks = [load_network(args.checkpoint)]
    results = run_suites(names, seed=args.seed, networks=networks)
    failed = False
    for res in results:
        print(json.dumps({
            "suite": res.name,
            "passed": res.passed,
            "max_rel_err": res.max_rel_err,
            "detail": res.detail,
            "seconds": round(res.seconds, 3),
        }))
        failed = failed or not res.passed
    return 1 if failed else 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "eval": _cmd_eval,
        "feature-deletion": _cmd_feature_deletion,
        "sample": _cmd_sample,
        "oracle": _cmd_oracle,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure -> exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
