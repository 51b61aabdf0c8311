"""Command-line surface: generate / pretrain / probe / evaluate /
theory-sweep / export-embeddings.

Exit codes: 0 success, 2 usage or config error, 3 runtime numerical failure.
Every artifact embeds or is accompanied by the resolved config hash, and all
randomness is derived from the config seeds (Philox streams, see `seeding`),
so re-running a command with identical inputs reproduces identical bytes.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import dataforge, theory
from .contrastive import LabelKey
from .encoder import (
    EncoderNet,
    ProjectionHead,
    load_checkpoint,
    save_checkpoint,
    save_probe_checkpoint,
)
from .errors import ConfigError, EmptyLossError, NonFiniteError, SurroconError
from .seeding import child_seed
from .trainloop import pretrain, probe_and_evaluate, train_probe

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _write_json(path, payload):
    Path(path).write_bytes((json.dumps(payload, indent=2, sort_keys=True) + "\n").encode())


def _load_dataset(manifest, cfg):
    ds = dataforge.load_manifest(manifest)
    return dataforge.split_by_eye(ds, cfg["split.test_fraction"], cfg["split.seed"])


def _check_dims(encoder, ds):
    if encoder.input_dim != ds.input_dim:
        raise ConfigError(f"checkpoint input_dim {encoder.input_dim} vs data input_dim {ds.input_dim}")


def cmd_generate(args):
    overrides = {}
    if args.seed is not None:
        overrides["generator.seed"] = args.seed
    cfg = cfgmod.load_config(args.config, overrides)
    gen_cfg = cfgmod.generator_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = dataforge.generate(gen_cfg, cfg["generator.seed"])
    manifest, sidecar = dataforge.save_manifest(ds, out / "data.manifest")
    ds_hash = dataforge.dataset_hash(manifest)
    _write_json(
        out / "meta.json",
        {
            "config_hash": cfgmod.config_hash(cfg),
            "dataset_hash": ds_hash,
            "n_samples": len(ds),
            "n_eyes": len(ds.eyes()),
            "input_dim": ds.input_dim,
            "files": [manifest.name, sidecar.name],
        },
    )
    print(ds_hash)
    return EXIT_OK


def cmd_pretrain(args):
    overrides = {}
    if args.label_key is not None:
        overrides["train.label_key"] = args.label_key
    if args.seed is not None:
        overrides["train.seed"] = args.seed
    cfg = cfgmod.load_config(args.config, overrides)
    ds = _load_dataset(args.data, cfg)
    if cfg["generator.input_dim"] != ds.input_dim:
        cfg["generator.input_dim"] = ds.input_dim  # data wins; hash reflects actual dims
    train_cfg = cfgmod.train_config(cfg)
    encoder = EncoderNet(
        ds.input_dim, cfg["encoder.hidden_dims"], cfg["encoder.repr_dim"], child_seed(train_cfg.seed, "enc-init")
    )
    head = ProjectionHead(
        encoder.repr_dim, cfg["encoder.proj_hidden"], cfg["encoder.proj_dim"], child_seed(train_cfg.seed, "head-init")
    )
    record = pretrain(ds, encoder, head, train_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    chash = cfgmod.config_hash(cfg)
    dhash = dataforge.dataset_hash(args.data)
    ckpt = out / "encoder.ckpt"
    save_checkpoint(ckpt, encoder, head, meta={"stage": "pretrain", "config_hash": chash, "dataset_hash": dhash})
    record.config_hash = chash
    record.dataset_hash = dhash
    record.checkpoint = ckpt.name
    _write_json(out / "run_pretrain.json", record.to_json_dict())
    print(
        f"pretrain done: {len(record.epoch_losses)} epochs, "
        f"final loss {record.epoch_losses[-1]:.6f}, {record.wall_time_s:.1f}s",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_probe(args):
    cfg = cfgmod.load_config(args.config, {})
    if args.slots is not None:
        cfg["probe.slots"] = cfgmod._parse_value("probe.slots", args.slots)
    if args.seed is not None:
        cfg["probe.seed"] = args.seed
    encoder, _head, _meta = load_checkpoint(args.checkpoint)
    ds = _load_dataset(args.data, cfg)
    _check_dims(encoder, ds)
    probe_cfg = cfgmod.probe_config(cfg)
    before = encoder.checksum()
    record, probe = train_probe(ds, encoder, probe_cfg)
    assert encoder.checksum() == before
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    chash = cfgmod.config_hash(cfg)
    dhash = dataforge.dataset_hash(args.data)
    save_probe_checkpoint(out / "probe.ckpt", probe, meta={"config_hash": chash, "dataset_hash": dhash})
    record.config_hash = chash
    record.dataset_hash = dhash
    record.checkpoint = "probe.ckpt"
    _write_json(out / "run_probe.json", record.to_json_dict())
    return EXIT_OK


def cmd_evaluate(args):
    cfg = cfgmod.load_config(args.config, {})
    if args.slots is not None:
        cfg["probe.slots"] = cfgmod._parse_value("probe.slots", args.slots)
    encoder, _head, _meta = load_checkpoint(args.checkpoint)
    ds = _load_dataset(args.data, cfg)
    _check_dims(encoder, ds)
    probe_cfg = cfgmod.probe_config(cfg)
    if args.seeds < 1:
        raise ConfigError(f"--seeds must be >= 1, got {args.seeds}")
    seeds = [child_seed(probe_cfg.seed, "multi", i) for i in range(args.seeds)]
    report, _records = probe_and_evaluate(
        ds, encoder, probe_cfg, cfg["eval.n_per_class"], cfg["eval.seed"], seeds=seeds
    )
    payload = report.to_json_dict()
    payload["config_hash"] = cfgmod.config_hash(cfg)
    payload["dataset_hash"] = dataforge.dataset_hash(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", payload)
    avg = report.averages
    print(f"auroc {avg['auroc']:.4f} specificity {avg['specificity']:.4f} sensitivity {avg['sensitivity']:.4f}")
    return EXIT_OK


def cmd_theory_sweep(args):
    cfg = cfgmod.load_config(args.config, {})
    gen_cfg = cfgmod.generator_config(cfg)
    model = theory.model_from_generator(gen_cfg, cfg["generator.seed"])
    embed = theory.unit_rows if cfg["theory.embedding"] == "unit" else (lambda x: x)
    rows = theory.sweep_surrogate_fidelity(
        model, cfg["theory.noise_grid"], cfg["theory.n"], cfg["theory.seed"], k=cfg["theory.k"], embed=embed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_bytes(theory.sweep_to_csv(rows).encode())
    _write_json(out / "meta.json", {"config_hash": cfgmod.config_hash(cfg), "rows": len(rows)})
    return EXIT_OK


def cmd_export_embeddings(args):
    cfg = cfgmod.load_config(args.config, {})
    encoder, head, _meta = load_checkpoint(args.checkpoint)
    ds = _load_dataset(args.data, cfg)
    _check_dims(encoder, ds)
    test = ds.subset(dataforge.SPLIT_TEST)
    feats = np.stack([s.features.data for s in test])
    reps = encoder.encode_values(feats)
    if args.space == "proj":
        if head is None:
            raise ConfigError("checkpoint has no projection head; use --space repr")
        import surrocon.numcore as nc

        coords = head.project(nc.leaf(reps.data)).value.data
    else:
        coords = reps.data
    dim = coords.shape[1]
    header = ",".join([f"e{i}" for i in range(dim)] + [f"b{j}" for j in range(dataforge.N_BIOMARKER_SLOTS)])
    lines = [header]
    for row, s in zip(coords, test):
        lines.append(",".join([repr(float(v)) for v in row] + [str(int(b)) for b in s.biomarkers]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "embeddings.csv").write_bytes(("\n".join(lines) + "\n").encode())
    _write_json(
        out / "meta.json",
        {
            "config_hash": cfgmod.config_hash(cfg),
            "dataset_hash": dataforge.dataset_hash(args.data),
            "space": args.space,
            "rows": len(test),
        },
    )
    return EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(prog="surrocon", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset manifest + feature sidecar")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("pretrain", help="contrastive pretraining on a surrogate label")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--label-key", choices=("eye", "bcva", "cst", "unique"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("probe", help="train a linear probe on a frozen encoder")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--slots")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("evaluate", help="probe + balanced-test metrics (optionally across seeds)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--slots")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("theory-sweep", help="surrogate-fidelity sweep CSV")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_theory_sweep)

    p = sub.add_parser("export-embeddings", help="test-set embeddings + biomarker slots as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--space", choices=("repr", "proj"), default="repr")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_embeddings)
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.fn(args)
    except (NonFiniteError, EmptyLossError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SurroconError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
