"""``deep-rpcl`` command line: gen | train | eval | cluster | compare."""

import argparse
import csv
import json
import logging
import os
import sys
import traceback

import numpy as np

from . import datagen, embed_net, evalkit
from .config import COMMANDS, ConfigError, parse_config
from .numeric_core import Rng
from .rpcl_cluster import fit_rpcl

log = logging.getLogger("deep_rpcl")


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_report(report, out_dir, config_echo=None):
    """``metrics.json`` plus one CSV per curve (``<name>.csv``) and ``config.echo``."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    path = os.path.join(out_dir, "metrics.json")
    with open(path, "w") as fh:
        json.dump({k: float(v) if isinstance(v, (float, np.floating)) else v for k, v in report.scalars.items()},
                  fh, indent=2)
        fh.write("\n")
    written.append(path)
    for name, (header, rows) in report.curves.items():
        path = os.path.join(out_dir, f"{name}.csv")
        _write_csv(path, header, rows)
        written.append(path)
    if config_echo is not None:
        path = os.path.join(out_dir, "config.echo")
        with open(path, "w") as fh:
            fh.write(config_echo)
        written.append(path)
    return written


def generate(cfg, rng):
    """Train (low-resolution), held-out HR and held-out LR sets sharing identities."""
    means = datagen.draw_class_means(cfg.n_classes, cfg.dim, rng.spawn("means"), cfg.min_angle)
    clean = datagen.sample_clusters(means, cfg.per_class, cfg.spread, rng.spawn("train"), cfg.normalize)
    train = datagen.degrade_lr(clean, cfg.noise_sigma, rng.spawn("train-lr"))
    test_hr = datagen.sample_clusters(means, cfg.test_per_class, cfg.spread, rng.spawn("test"), cfg.normalize)
    test_lr = datagen.degrade_lr(test_hr, cfg.noise_sigma, rng.spawn("test-lr"))
    return train, test_hr, test_lr


def train_model(cfg, data, variant=None):
    rng = Rng(cfg.seed)
    sizes = [data.dim] + list(cfg.hidden) + [cfg.embed_dim]
    model = embed_net.init_model(sizes, rng.spawn("init").seed, data.class_count, cfg.activation)
    tcfg = cfg.train_config()
    tcfg.seed = rng.spawn("train").seed
    lcfg = cfg.margin_config(variant)
    model, history = embed_net.train_embedding(
        data, model, tcfg, lcfg, cfg.center_state(data.class_count, cfg.embed_dim))
    return model, history, tcfg, lcfg


def evaluate(cfg, model, data, gallery=None):
    if data.dim != model.layers[0].W.shape[0]:
        raise ValueError(f"dimension mismatch: dataset has {data.dim} columns, "
                         f"checkpoint expects {model.layers[0].W.shape[0]}")
    rng = Rng(cfg.seed).spawn("eval")
    E = embed_net.embed(model, data.features)
    protocol = datagen.make_pairs(data, cfg.n_pos, cfg.n_neg, rng.spawn("pairs"))
    pos, neg = evalkit.pair_scores(E, protocol)
    acc, thr = evalkit.threshold_accuracy(pos, neg)
    report = evalkit.EvalReport()
    report.scalars["verification_accuracy"] = acc
    report.scalars["verification_threshold"] = thr
    if len(pos) >= 2 and len(neg) >= 2:
        report.scalars["fisher"] = evalkit.fisher_criterion(pos, neg)
    if len(pos) and len(neg):
        fpr, tpr = evalkit.roc_curve(pos, neg)
        report.curves["roc"] = (["fpr", "tpr"], list(zip(fpr, tpr)))
    if model.head.n_classes == data.class_count:
        for k, v in evalkit.angle_statistics(E, data.labels, model.head.W).items():
            report.scalars[f"angle_{k}"] = v
    if gallery is not None:
        gp = datagen.make_gallery_probe(gallery, data)
        G = embed_net.embed(model, gp.gallery_features)
        rates = evalkit.cmc_curve(G, gp.gallery_ids, E, gp.probe_ids, cfg.max_k or None)
        report.scalars["rank1"] = float(rates[0])
        report.curves["cmc"] = (["k", "rate"], [(k + 1, r) for k, r in enumerate(rates)])
    return report


def cmd_gen(cfg):
    train, test_hr, test_lr = generate(cfg, Rng(cfg.seed).spawn("gen"))
    os.makedirs(cfg.out, exist_ok=True)
    for name, ds in (("train", train), ("test_hr", test_hr), ("test_lr", test_lr)):
        datagen.save_set(os.path.join(cfg.out, f"{name}.txt"), ds)
    _echo(cfg)


def cmd_train(cfg):
    data = datagen.load_set(cfg.data)
    model, history, tcfg, lcfg = train_model(cfg, data)
    os.makedirs(cfg.out, exist_ok=True)
    embed_net.save_checkpoint(os.path.join(cfg.out, "checkpoint.json"), model, tcfg, lcfg)
    _write_csv(os.path.join(cfg.out, "loss_history.csv"), ["epoch", "loss"], list(enumerate(history)))
    _echo(cfg)


def cmd_eval(cfg):
    model, _, _ = embed_net.load_checkpoint(cfg.checkpoint)
    data = datagen.load_set(cfg.data)
    gallery = datagen.load_set(cfg.gallery) if cfg.gallery else None
    write_report(evaluate(cfg, model, data, gallery), cfg.out, cfg.echo())


def cmd_cluster(cfg):
    data = datagen.load_set(cfg.data)
    cs = fit_rpcl(data, cfg.k_init, cfg.rpcl_params(), Rng(cfg.seed).spawn("cluster"))
    os.makedirs(cfg.out, exist_ok=True)
    d = cs.centers.shape[1]
    rows = [[k, int(cs.active[k]), int(cs.wins[k])] + list(cs.centers[k]) for k in range(len(cs.active))]
    _write_csv(os.path.join(cfg.out, "centers.csv"), ["index", "active", "wins"] + [f"c{j}" for j in range(d)], rows)
    report = evalkit.EvalReport({"k_init": cfg.k_init, "n_active": cs.n_active})
    write_report(report, cfg.out, cfg.echo())


COMPARE_METRICS = ("angle_intra", "angle_inter", "angle_w-w", "angle_w-c", "fisher",
                   "verification_accuracy", "rank1", "final_loss")


def compare(cfg):
    """Train and evaluate two variants on identical data and seeds."""
    train, test_hr, test_lr = generate(cfg, Rng(cfg.seed).spawn("gen"))
    variants = [v.strip() for v in cfg.variants.split(",")]
    results = {}
    for v in variants:
        model, history, _, _ = train_model(cfg, train, v)
        report = evaluate(cfg, model, test_lr, test_hr)
        report.scalars["final_loss"] = history[-1] if history else float("nan")
        results[v] = report.scalars
    return variants, results


def cmd_compare(cfg):
    variants, results = compare(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    rows = [[m] + [results[v].get(m, float("nan")) for v in variants] for m in COMPARE_METRICS]
    _write_csv(os.path.join(cfg.out, "compare.csv"), ["metric"] + variants, rows)
    _echo(cfg)


def _echo(cfg):
    with open(os.path.join(cfg.out, "config.echo"), "w") as fh:
        fh.write(cfg.echo())


HANDLERS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "cluster": cmd_cluster, "compare": cmd_compare}


def _origin_module(exc):
    name = "cli"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("deep_rpcl."):
            name = mod.split(".", 1)[1]
    return name


def build_parser():
    p = argparse.ArgumentParser(prog="deep-rpcl", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key = value file, optionally with [command] sections")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = parse_config(args.command, args.config, args.overrides, args.seed, args.out)
    except (ConfigError, OSError) as exc:
        print(f"deep-rpcl: config: {exc}", file=sys.stderr)
        return 2
    try:
        HANDLERS[cfg.command](cfg)
    except (ValueError, OSError, FloatingPointError, KeyError) as exc:
        print(f"deep-rpcl {cfg.command}: {_origin_module(exc)}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
