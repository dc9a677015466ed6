"""Command-line front end.

Subcommands: train, eval, ablate, gradcheck, flops, dump-defaults, synth.
Exit codes are stable API: 0 ok, 2 config error, 3 geometry/divisibility
error, 4 checkpoint error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import ablate as ablate_mod
from . import config as cfgmod
from . import gradcheck as gradcheck_mod
from . import tensorfile
from .data import load_dataset, save_dataset, synth_generate
from .errors import CheckpointError, ConfigError, GeometryError
from .evaluation import RetrievalProtocol, distance_matrix, evaluate
from .flops import count_flops
from .model import ModelConfig, ToyBackbone, extract_features
from .pyramid import PyramidConfig
from .tensor import Tensor, no_grad
from .train import train_run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GEOMETRY = 3
EXIT_CHECKPOINT = 4


def _add_common(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--out", default="runs/latest", help="output directory")


def _resolve_config(args):
    overrides = {}
    if args.config:
        overrides.update(cfgmod.parse_file(args.config))
    overrides.update(cfgmod.parse_sets(args.set))
    if args.seed is not None:
        overrides["seed"] = args.seed
    return cfgmod.resolve(overrides)


def _build_model(cfg, num_classes):
    return ToyBackbone(
        ModelConfig(
            num_classes=num_classes,
            pyramid=cfgmod.pyramid_config(cfg),
            image_height=cfg["data.image_height"],
            image_width=cfg["data.image_width"],
            seed=cfg["seed"],
        )
    )


def cmd_train(args):
    cfg = _resolve_config(args)
    dataset = load_dataset(args.data) if args.data else None
    report, _, _ = train_run(cfg, args.out, dataset=dataset)
    print(json.dumps(report.to_json_dict(), sort_keys=True))
    return EXIT_OK


def _dump_attention(model, images, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for n in range(min(len(images.data), 4)):
        gates = {}
        with no_grad():
            model.forward(Tensor(images.data[n : n + 1]), train=False, gate_sink=gates)
        for (stage, level), g in gates.items():
            base = os.path.join(out_dir, f"sample{n}_stage{stage}_level{level}")
            gate = g[0] if g.ndim > 1 and g.shape[0] == 1 else g
            tensorfile.write_tensor(base + ".tsr", gate)
            img = gate if gate.ndim == 2 else gate.reshape(1, -1)
            tensorfile.write_pgm(base + ".pgm", img)


def cmd_eval(args):
    cfg = _resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    proto = RetrievalProtocol(metric=cfg["eval.metric"])
    if args.query_emb:
        q, q_ids, q_cams = tensorfile.load_embedding_dump(args.query_emb, args.query_index)
        g, g_ids, g_cams = tensorfile.load_embedding_dump(args.gallery_emb, args.gallery_index)
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint or embedding dumps")
        dataset = (
            load_dataset(args.data) if args.data
            else synth_generate(cfgmod.data_spec(cfg), cfg["seed"])
        )
        model = _build_model(cfg, dataset.num_classes)
        model.load(args.checkpoint)
        q_t = extract_features(dataset.query.images, model, cfg["eval.flip_average"])
        g_t = extract_features(dataset.gallery.images, model, cfg["eval.flip_average"])
        q, g = q_t.data, g_t.data
        q_ids, q_cams = dataset.query.ids, dataset.query.cams
        g_ids, g_cams = dataset.gallery.ids, dataset.gallery.cams
        if args.dump_embeddings:
            for name, emb, ids, cams in (
                ("query", q, q_ids, q_cams),
                ("gallery", g, g_ids, g_cams),
            ):
                tensorfile.write_tensor(os.path.join(args.out, f"{name}_emb.tsr"), emb)
                tensorfile.write_index(
                    os.path.join(args.out, f"{name}_emb.index.txt"),
                    [(f"row{i}", ids[i], cams[i]) for i in range(len(ids))],
                )
        if args.dump_attention:
            _dump_attention(model, Tensor(dataset.query.images), args.dump_attention)
    dist = distance_matrix(q, g, cfg["eval.metric"])
    report = evaluate(dist, q_ids, g_ids, q_cams, g_cams, proto)
    out_path = os.path.join(args.out, "eval_report.json")
    with open(out_path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
    print(json.dumps(report.to_json_dict(), sort_keys=True))
    return EXIT_OK


def cmd_ablate(args):
    cfg = _resolve_config(args)
    levels = [int(v) for v in args.levels.split(",")] if args.levels else ablate_mod.DEFAULT_LEVELS
    radixes = [int(v) for v in args.radixes.split(",")] if args.radixes else ablate_mod.DEFAULT_RADIXES
    modes = args.modes.split(",") if args.modes else ablate_mod.DEFAULT_MODES
    rows = ablate_mod.run_sweep(
        cfg, args.out, levels=levels, radixes=radixes, modes=modes,
        workers=cfg["ablate.workers"],
    )
    print(json.dumps(rows, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args):
    cfg = _resolve_config(args)
    seeds = tuple(range(cfg["seed"], cfg["seed"] + 3))
    report = gradcheck_mod.run_all(seeds=seeds)
    worst_name, worst = max(report.items(), key=lambda kv: kv[1])
    payload = {
        "ops": {k: v for k, v in sorted(report.items())},
        "threshold": 1e-4,
        "worst_op": worst_name,
        "worst_error": worst,
    }
    print(json.dumps(payload, sort_keys=True))
    if worst >= 1e-4:
        print(f"gradcheck FAILED: {worst_name} relative error {worst:.3e}",
              file=sys.stderr)
        return 1
    return EXIT_OK


def cmd_flops(args):
    cfg = _resolve_config(args)
    model = _build_model(cfg, cfg["data.train_identities"])
    report = count_flops(model)
    base_cfg = dict(cfg)
    base_cfg["pyramid.levels"] = 0
    baseline = count_flops(_build_model(base_cfg, cfg["data.train_identities"]))
    overhead = report.total_macs - baseline.total_macs
    payload = report.as_dict()
    payload["pyramid_overhead"] = {
        "baseline_l0_macs": baseline.total_macs,
        "overhead_macs": overhead,
        "overhead_frac": overhead / baseline.total_macs,
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out and args.out != "runs/latest":
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "flops.json"), "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_dump_defaults(_args):
    sys.stdout.write(cfgmod.dump_defaults())
    return EXIT_OK


def cmd_synth(args):
    cfg = _resolve_config(args)
    ds = synth_generate(cfgmod.data_spec(cfg), cfg["seed"])
    save_dataset(ds, args.out)
    sizes = {s: len(getattr(ds, s).ids) for s in ("train", "query", "gallery")}
    print(json.dumps({"out": args.out, "sizes": sizes}, sort_keys=True))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="attnpyr",
        description="Multi-scale gating pyramids for metric-learning retrieval",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on the synthetic benchmark")
    _add_common(p)
    p.add_argument("--data", help="pre-generated dataset directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="retrieval evaluation of a checkpoint or dumps")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint directory from train")
    p.add_argument("--data", help="pre-generated dataset directory")
    p.add_argument("--query-emb", help="query embedding dump (tensor file)")
    p.add_argument("--query-index", help="index file for the query dump")
    p.add_argument("--gallery-emb", help="gallery embedding dump (tensor file)")
    p.add_argument("--gallery-index", help="index file for the gallery dump")
    p.add_argument("--dump-embeddings", action="store_true")
    p.add_argument("--dump-attention", metavar="DIR",
                   help="dump per-stage/level gates (tensor + PGM)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="levels x radix x split/stacked sweep")
    _add_common(p)
    p.add_argument("--levels", help="comma list, default 0,1,2,3")
    p.add_argument("--radixes", help="comma list, default 1,2,4,8")
    p.add_argument("--modes", help="comma list, default split,stacked")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    _add_common(p)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("flops", help="analytic MAC report incl. pyramid overhead")
    _add_common(p)
    p.set_defaults(fn=cmd_flops)

    p = sub.add_parser("dump-defaults", help="print the config key table")
    p.set_defaults(fn=cmd_dump_defaults)

    p = sub.add_parser("synth", help="generate the synthetic dataset to disk")
    _add_common(p)
    p.set_defaults(fn=cmd_synth)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except GeometryError as e:
        print(f"geometry error: {e}", file=sys.stderr)
        return EXIT_GEOMETRY
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
