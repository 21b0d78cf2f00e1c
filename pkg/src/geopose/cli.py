"""Command-line entry point: gen-data, train, eval, infer, ablate.

Exit codes: 0 success, 1 runtime failure, 2 usage/IO error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import AblationConfig, ConfigError, ExperimentConfig
from .data import DatasetError, get_model, load_dataset, save_dataset, split_samples
from .geometry import barycenter, estimate_normals
from .metrics import write_report
from .model import PoseNet, TrainingDiverged, evaluate, evaluate_oracle, train
from .params import CheckpointError, ParamStore
from .ply import PlyParseError, read_ply


class UsageError(RuntimeError):
    pass


def _load_config(path, seed=None):
    if path is None:
        cfg = ExperimentConfig()
    else:
        if not os.path.exists(path):
            raise UsageError(f"config not found: {path}")
        cfg = ExperimentConfig.load(path)
    if seed is not None:
        cfg.seed = seed
        cfg.scene.seed = seed
    cfg.validate()
    return cfg


def cmd_gen_data(args):
    cfg = _load_config(args.config, args.seed)
    model = get_model(cfg.model)
    n = cfg.scene.samples
    train_count = (n * 4) // 5
    save_dataset(args.out, model, cfg.scene, train_count, n - train_count)
    print(f"wrote {n} samples ({train_count} train) to {args.out}")
    return 0


def _train_one(cfg, data_dir, out_dir):
    manifest, samples = load_dataset(data_dir)
    if manifest["model"] != cfg.model:
        raise UsageError(f"dataset model {manifest['model']!r} != config model {cfg.model!r}")
    train_samples = split_samples(manifest, samples, "train")
    val_samples = split_samples(manifest, samples, "val")
    os.makedirs(out_dir, exist_ok=True)
    net, history = train(cfg, train_samples, log_path=os.path.join(out_dir, "loss.csv"))
    ckpt_tmp = os.path.join(out_dir, "checkpoint.gpck.tmp")
    net.params.save(ckpt_tmp)
    os.replace(ckpt_tmp, os.path.join(out_dir, "checkpoint.gpck"))
    cfg.save(os.path.join(out_dir, "config.json"))
    model = get_model(cfg.model)
    report = evaluate(net, val_samples, model)
    write_report(report, out_dir)
    return net, history, report


def cmd_train(args):
    cfg = _load_config(args.config, args.seed)
    _, history, report = _train_one(cfg, args.data, args.out)
    final = history[-1] if history else float("nan")
    print(f"trained {cfg.train.steps} steps, final loss {final:.6f}, "
          f"val ADD(-S)-0.1d {report.primary_01d_accuracy:.3f}")
    return 0


def cmd_eval(args):
    manifest, samples = load_dataset(args.data)
    chosen = split_samples(manifest, samples, args.split)
    model = get_model(manifest["model"])
    if args.oracle:
        report = evaluate_oracle(chosen, model)
    else:
        if args.checkpoint is None or not os.path.exists(args.checkpoint):
            raise UsageError(f"checkpoint not found: {args.checkpoint}")
        cfg_path = os.path.join(os.path.dirname(args.checkpoint) or ".", "config.json")
        cfg = _load_config(cfg_path if os.path.exists(cfg_path) else args.config)
        cfg.model = manifest["model"]
        net = PoseNet(cfg)
        net.params.load(args.checkpoint)
        report = evaluate(net, chosen, model)
    write_report(report, args.out)
    print(f"{args.split}: n={report.count} ADD(-S)-0.1d={report.primary_01d_accuracy:.3f} "
          f"ADD-S AUC={report.adds_auc:.3f}")
    return 0


def cmd_infer(args):
    if not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    cloud, normals = read_ply(args.cloud)
    if normals is None:
        normals, _ = estimate_normals(cloud, 16, np.zeros(3))
    cfg_path = os.path.join(os.path.dirname(args.checkpoint) or ".", "config.json")
    cfg = _load_config(cfg_path if os.path.exists(cfg_path) else args.config)
    net = PoseNet(cfg)
    net.params.load(args.checkpoint)
    q, t_hat = net.forward(cloud, normals, bary=barycenter(cloud))
    print(json.dumps({"q": [float(v) for v in q.data], "t": [float(v) for v in t_hat.data]}))
    return 0


ABLATION_GRID = [("plainconv", "off"), ("gcn", "off"), ("plainconv", "on"), ("gcn", "on")]


def cmd_ablate(args):
    cfg = _load_config(args.config, args.seed)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for gcn_block, geo in ABLATION_GRID:
        cell = ExperimentConfig.from_json(cfg.to_json())
        cell.ablation = AblationConfig(gcn_block=gcn_block, geometry_aware=geo)
        cell_dir = os.path.join(args.out, f"{gcn_block}_{geo}")
        _, _, report = _train_one(cell, args.data, cell_dir)
        rows.append((gcn_block, geo, report.primary_01d_accuracy))
        print(f"{gcn_block:9s} geo={geo:3s} ADD(-S)-0.1d={report.primary_01d_accuracy:.3f}")
    table = ["gcn_block,geometry_aware,add_01d_accuracy"]
    table += [f"{g},{a},{acc!r}" for g, a, acc in rows]
    tmp = os.path.join(args.out, "ablation.csv.tmp")
    with open(tmp, "w") as f:
        f.write("\n".join(table) + "\n")
    os.replace(tmp, os.path.join(args.out, "ablation.csv"))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="geopose",
                                 description="6D object pose from point clouds")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint")
    e.add_argument("--config")
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="val", choices=["train", "val"])
    e.add_argument("--out", required=True)
    e.add_argument("--oracle", action="store_true",
                   help="score ground truth as the prediction")
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("infer", help="predict the pose of one PLY cloud")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--config")
    i.add_argument("cloud")
    i.set_defaults(fn=cmd_infer)

    a = sub.add_parser("ablate", help="train the 2x2 ablation grid")
    a.add_argument("--config")
    a.add_argument("--seed", type=int)
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(fn=cmd_ablate)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, ConfigError, CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DatasetError, PlyParseError, TrainingDiverged) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
