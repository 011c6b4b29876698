"""Command-line entry point: data generation, training, evaluation, the
ablation matrix, and distillation hyperparameter sweeps."""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys

import numpy as np

from . import __version__
from . import datagen, trainer
from .config import load_config


def _out_root():
    return os.environ.get("MODREC_OUT", "runs")


def _timestamp():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _write_manifest(out_dir, cfg, outputs, started, finished):
    manifest = {
        "config": {k: v for k, v in sorted(cfg.to_flat().items())},
        "seed": cfg.seed,
        "version": __version__,
        "started": started,
        "finished": finished,
        "outputs": sorted(outputs),
    }
    path = os.path.join(out_dir, "run_manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _resolve_data(cfg):
    """Generate or load (catalog, dataset) according to data.source."""
    d = cfg.data
    if d.source == "synthetic":
        return datagen.generate_synthetic(
            n_items=d.n_items, n_users=d.n_users, n_clusters=d.n_clusters,
            n_v=d.n_v, n_t=d.n_t, d_v=d.d_v, d_t=d.d_t, seed=cfg.seed,
            p_intra=d.p_intra, n_pref=d.n_pref, item_noise=d.item_noise,
            row_noise=d.row_noise, cold_frac=d.cold_frac,
            p_cold_last=d.p_cold_last, max_len=d.max_len,
        )
    return datagen.load_dataset(d.source, max_len=d.max_len)


def _progress(epoch, recall10, last_total):
    print(f"epoch {epoch}: val recall@10 {recall10:.4f}, last loss {last_total:.4f}")


def cmd_gen(args):
    cfg = load_config(args.config, args.set)
    out_dir = args.out or os.path.join(_out_root(), "catalog")
    started = _timestamp()
    catalog, dataset = _resolve_data(cfg)
    datagen.save_catalog(out_dir, catalog, dataset.sequences)
    outputs = ["manifest.json", "visual.f64", "textual.f64", "interactions.csv"]
    _write_manifest(out_dir, cfg, outputs, started, _timestamp())
    print(f"wrote catalog with {catalog.n_items} items, {dataset.n_users} users to {out_dir}")
    return 0


def _train_one(cfg, catalog, dataset, out_dir, quiet=False):
    result = trainer.train(cfg, catalog, dataset,
                           progress=None if quiet else _progress)
    os.makedirs(out_dir, exist_ok=True)
    trainer.save_checkpoint(os.path.join(out_dir, "checkpoint.npz"), result.model)
    trainer.write_metrics_json(os.path.join(out_dir, "metrics.json"), result.test_metrics)
    trainer.write_loss_csv(os.path.join(out_dir, "losscurve.csv"), result.loss_log)
    trainer.write_popularity_csv(
        os.path.join(out_dir, "popularity.csv"), result.test_metrics, cfg.eval.ks
    )
    return result, ["checkpoint.npz", "metrics.json", "losscurve.csv", "popularity.csv"]


def cmd_train(args):
    cfg = load_config(args.config, args.set)
    out_dir = args.out or os.path.join(_out_root(), "train")
    if args.dry_run:
        print(json.dumps(cfg.to_flat(), indent=2, sort_keys=True))
        return 0
    started = _timestamp()
    catalog, dataset = _resolve_data(cfg)
    os.makedirs(out_dir, exist_ok=True)
    result, outputs = _train_one(cfg, catalog, dataset, out_dir)
    _write_manifest(out_dir, cfg, outputs, started, _timestamp())
    key = trainer.ensemble_key(result.model)
    print(f"best epoch {result.best_epoch}; "
          f"test metrics ({key}): {result.test_metrics['branches'][key]}")
    return 0


def cmd_eval(args):
    cfg = load_config(args.config, args.set)
    out_dir = args.out or os.path.join(_out_root(), "eval")
    started = _timestamp()
    catalog, dataset = _resolve_data(cfg)
    model = trainer.build_model(cfg, catalog)
    trainer.load_checkpoint(args.checkpoint, model)
    report = trainer.evaluate(
        model, catalog, dataset, split=args.split, ks=cfg.eval.ks,
        n_groups=cfg.eval.groups,
    )
    os.makedirs(out_dir, exist_ok=True)
    trainer.write_metrics_json(os.path.join(out_dir, "metrics.json"), report)
    trainer.write_popularity_csv(os.path.join(out_dir, "popularity.csv"), report, cfg.eval.ks)
    _write_manifest(out_dir, cfg, ["metrics.json", "popularity.csv"], started, _timestamp())
    print(json.dumps(report["branches"], indent=2, sort_keys=True))
    return 0


def cmd_ablate(args):
    cfg = load_config(args.config, args.set)
    out_dir = args.out or os.path.join(_out_root(), "ablation")
    if args.dry_run:
        print("variants:", ", ".join(trainer.ABLATION_VARIANTS))
        return 0
    started = _timestamp()
    catalog, dataset = _resolve_data(cfg)
    rows = trainer.run_ablation_matrix(
        cfg, catalog, dataset,
        progress=lambda v, row: print(f"{v}: {row}"),
    )
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "ablation.csv")
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    _write_manifest(out_dir, cfg, ["ablation.csv"], started, _timestamp())
    return 0


def cmd_sweep(args):
    cfg = load_config(args.config, args.set)
    out_dir = args.out or os.path.join(_out_root(), "sweep")
    t_values = [float(x) for x in args.T_values.split(",")]
    a_values = [float(x) for x in args.alpha_values.split(",")]
    cells = [("none", None, None)]
    cells += [("T", t, cfg.distill.alpha) for t in t_values]
    cells += [("alpha", cfg.distill.T, a) for a in a_values]
    if args.dry_run:
        for axis, t, a in cells:
            print(f"{axis}: T={t} alpha={a}")
        return 0
    started = _timestamp()
    catalog, dataset = _resolve_data(cfg)
    rows = []
    for axis, t, a in cells:
        cell_cfg = cfg.copy()
        if axis == "none":
            cell_cfg.distill.enabled = False
        else:
            cell_cfg.distill.T = t
            cell_cfg.distill.alpha = a
        result = trainer.train(cell_cfg, catalog, dataset)
        key = trainer.ensemble_key(result.model)
        metrics = result.test_metrics["branches"][key]
        k = cfg.eval.ks[0]
        row = {"axis": axis, "T": t if t is not None else "",
               "alpha": a if a is not None else "",
               f"recall@{k}": metrics[f"recall@{k}"],
               f"ndcg@{k}": metrics[f"ndcg@{k}"]}
        rows.append(row)
        print(row)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "sweep.csv")
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    _write_manifest(out_dir, cfg, ["sweep.csv"], started, _timestamp())
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="modrec",
        description="Multi-modal sequential recommender: train, evaluate, ablate, sweep.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dry_run=True):
        p.add_argument("--config", default=None, help="config file (key = value lines)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. --set model.d=64")
        p.add_argument("--out", default=None, help="output directory")
        if dry_run:
            p.add_argument("--dry-run", action="store_true",
                           help="validate config and print the plan without running")

    p = sub.add_parser("gen", help="generate a synthetic catalog directory")
    common(p, dry_run=False)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one model")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p, dry_run=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("val", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the full ablation matrix")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="sweep distillation temperature and ramp length")
    common(p)
    p.add_argument("--T-values", default="0.1,0.2,0.3,0.4,0.5,0.6", dest="T_values")
    p.add_argument("--alpha-values", default="10,20,30,40,50,60", dest="alpha_values")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
