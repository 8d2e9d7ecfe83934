"""Command-line entry point: ``simseg <subcommand> ...``."""

import argparse
import os
import sys

import numpy as np

from .config import ConfigError, TrainConfig, load_config, parse_config
from .container import save_tensor
from .pseudo import save_thresholds
from .synth import (SOURCE, TARGET, Dataset, SceneSpec, generate_domain, load_dataset,
                    load_images, save_dataset)
from . import train as tr


def _config(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.set:
        cfg = parse_config("\n".join(args.set), base=cfg)
    return cfg


def cmd_gen_data(args):
    base = SceneSpec()
    spec = base.with_shift(hue=base.hue * args.shift, brightness=base.brightness * args.shift,
                           target_noise=base.target_noise * args.shift)
    src = generate_domain(spec, SOURCE, args.seed, args.count)
    tgt = generate_domain(spec, TARGET, args.seed, args.count)
    ev = generate_domain(spec, TARGET, args.seed, args.eval_count, first_index=args.count)
    save_dataset(os.path.join(args.out, "source"), src)
    # target training images and their ground truth live in separate trees
    save_dataset(os.path.join(args.out, "target"), tgt, with_labels=False)
    save_dataset(os.path.join(args.out, "target_gt"), tgt)
    save_dataset(os.path.join(args.out, "eval"), ev)
    print(f"wrote {args.count} source, {args.count} target, {args.eval_count} eval images to {args.out}")


def _load_train_data(cfg):
    source = load_dataset(os.path.join(cfg.data_dir, "source"))
    target = load_images(os.path.join(cfg.data_dir, "target"))
    eval_dir = os.path.join(cfg.data_dir, "eval")
    ev = load_dataset(eval_dir) if os.path.exists(os.path.join(eval_dir, "manifest.csv")) else None
    return source, target, ev


def _report(rep):
    per_class = " ".join("nan" if np.isnan(v) else f"{100 * v:.2f}" for v in rep.iou)
    print(f"iteration {rep.iteration}  mIoU {100 * rep.miou:.2f}  per-class [{per_class}]")


def cmd_train_step1(args):
    cfg = _config(args)
    source, target, ev = _load_train_data(cfg)
    res = tr.train(cfg, source, target.images, None, ev)
    out = os.path.join(cfg.out_dir, "step1")
    tr.write_run(out, res, cfg)
    print(f"step 1 finished: {out}")
    if ev is not None:
        _report(tr.evaluate(res.model, ev, cfg))


def cmd_pseudo_label(args):
    model, _ = tr.load_checkpoint(args.checkpoint)
    target = load_images(args.data)
    pseudo, thresholds = tr.make_pseudo_labels(model, target.images)
    save_dataset(args.out, Dataset(target.images, pseudo, TARGET))
    save_thresholds(os.path.join(args.out, "thresholds.csv"), thresholds)
    labelled = np.mean([np.mean(p != 255) for p in pseudo])
    print(f"thresholds {np.round(thresholds, 4).tolist()}; {100 * labelled:.1f}% of pixels labelled")


def cmd_train_step2(args):
    cfg = _config(args)
    source, target, ev = _load_train_data(cfg)
    pseudo = load_dataset(args.pseudo).labels
    res = tr.train(cfg, source, target.images, pseudo, ev)
    out = os.path.join(cfg.out_dir, "step2")
    tr.write_run(out, res, cfg)
    print(f"step 2 finished: {out}")
    if ev is not None:
        _report(tr.evaluate(res.model, ev, cfg))


def cmd_eval(args):
    model, cfg = tr.load_checkpoint(args.checkpoint)
    rep = tr.evaluate(model, load_dataset(args.data), cfg)
    _report(rep)
    if args.out:
        with open(args.out, "w") as f:
            f.write("class_id,iou\n")
            for k, v in enumerate(rep.iou):
                f.write(f"{k},{v!r}\n")
            f.write(f"mean,{rep.miou!r}\n")


def cmd_ablate(args):
    cfg = _config(args)
    source = load_dataset(os.path.join(cfg.data_dir, "source"))
    target = load_dataset(os.path.join(cfg.data_dir, "target_gt"))
    ev = load_dataset(os.path.join(cfg.data_dir, "eval"))
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = tuple(args.rows.split(",")) if args.rows else tr.ABLATION_ROWS
    table = tr.run_ablation(cfg, source, target, ev, seeds, rows, cfg.out_dir)
    for row, m in tr.mean_by_row(table).items():
        print(f"{row:12s} {m:7.2f}")


def cmd_grad_check(args):
    from .gradcheck import run_suite

    ok = True
    for name, (err, tol, n, rejected) in run_suite(args.count, args.seed).items():
        passed = err <= tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name:14s} max rel err {err:.3e} "
              f"(tol {tol:g}, {n} configs, {rejected} near-kink rejected)")
    return 0 if ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="simseg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
        return sp

    g = sub.add_parser("gen-data", help="generate source/target/eval datasets")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--eval-count", type=int, default=50)
    g.add_argument("--shift", type=float, default=1.0,
                   help="scale of the target appearance shift (0 = none, 1 = default)")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    with_config(sub.add_parser("train-step1", help="train without pseudo labels")).set_defaults(
        fn=cmd_train_step1)

    pl = sub.add_parser("pseudo-label", help="threshold a step-1 model's target predictions")
    pl.add_argument("--checkpoint", required=True)
    pl.add_argument("--data", required=True, help="target image directory")
    pl.add_argument("--out", required=True)
    pl.set_defaults(fn=cmd_pseudo_label)

    s2 = with_config(sub.add_parser("train-step2", help="retrain with pseudo labels"))
    s2.add_argument("--pseudo", required=True, help="directory written by pseudo-label")
    s2.set_defaults(fn=cmd_train_step2)

    e = sub.add_parser("eval", help="mIoU of a checkpoint on a labelled set")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    a = with_config(sub.add_parser("ablate", help="run the ablation table"))
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--rows", help="comma-separated subset of " + ",".join(tr.ABLATION_ROWS))
    a.set_defaults(fn=cmd_ablate)

    gc = sub.add_parser("grad-check", help="finite-difference gradient suite")
    gc.add_argument("--count", type=int, default=100)
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(fn=cmd_grad_check)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args) or 0
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
