"""Command-line entry point: ``tzsl {gen-synthetic,train,eval,diagnose}``.

Each command reads an optional JSON config (``--config``) and applies flag
overrides on top. Exit codes: 0 success, 1 config validation, 2 I/O or
missing input, 3 numeric failure.
"""
import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import embedding_store as es
from ._io import atomic_write_text, dumps_json
from .errors import ArgumentError, DimensionError, NumericError, ParseError, ZSLError
from .evaluation import diagnose, evaluate
from .losses import LossWeights
from .projection import load_checkpoint, save_checkpoint
from .trainer import PRESETS, TrainConfig, train_inductive, train_transductive

log = logging.getLogger("tzsl")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ArgumentError):
    pass


class InputError(ZSLError):
    pass


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def _merge(cfg, args, keys):
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _out_dir(cfg):
    return Path(cfg.get("out_dir") or ".")


def _input_path(cfg, key):
    path = cfg.get(key)
    if not path:
        raise ConfigError(f"missing required input '{key}'")
    if not Path(path).exists():
        raise InputError(f"{key} not found: {path}")
    return path


def _load_data(cfg):
    table = es.load_semantics(_input_path(cfg, "semantics"))
    data = es.load_embeddings(_input_path(cfg, "embeddings"), table)
    return data, table


def _synthetic_spec(cfg):
    doc = dict(cfg.get("synthetic") or {})
    if "seed" in cfg:
        doc["seed"] = cfg["seed"]
    known = {f.name for f in fields(es.SyntheticSpec)}
    bad = set(doc) - known
    if bad:
        raise ConfigError(f"unknown synthetic keys: {sorted(bad)}")
    return es.SyntheticSpec(**doc)


def _train_config(cfg):
    doc = dict(cfg.get("train") or {})
    if "seed" in cfg:
        doc["seed"] = cfg["seed"]
    weights = doc.pop("weights", {}) or {}
    preset = cfg.get("preset")
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        p = PRESETS[preset]
        weights = {**weights, "alpha1": p["alpha1"], "alpha2": p["alpha2"], "alpha3": p["alpha3"]}
        doc.setdefault("lr", p["lr"])
    doc["weights"] = LossWeights(**weights)
    return TrainConfig.from_dict(doc)


def cmd_gen_synthetic(cfg):
    spec = _synthetic_spec(cfg)
    data, table = es.make_synthetic(spec)
    out = _out_dir(cfg)
    emb = out / cfg.get("embeddings_name", "embeddings.csv")
    sem = out / cfg.get("semantics_name", "semantics.csv")
    es.save_semantics(sem, table)
    es.save_embeddings(emb, data)
    counts = {s: sum(1 for x in data.splits if x == s) for s in es.SPLITS}
    print(f"wrote {len(data)} instances ({', '.join(f'{k}={v}' for k, v in counts.items())}) "
          f"and {table.num_classes} classes (S={table.num_seen}, U={table.num_unseen}) to {out}")
    return EXIT_OK


def cmd_train(cfg):
    tcfg = _train_config(cfg)
    stage = cfg.get("stage", "both")
    if stage not in ("inductive", "transductive", "both"):
        raise ConfigError(f"stage must be inductive, transductive or both, got {stage!r}")
    data, table = _load_data(cfg)
    out = _out_dir(cfg)
    if stage == "transductive":
        init = cfg.get("init")
        if not init or not Path(init).exists():
            raise InputError(f"--stage transductive needs an existing --init checkpoint, got {init!r}")
        net, _ = load_checkpoint(init)
        net, tlog = train_transductive(net, data, table, tcfg)
    else:
        net, tlog = train_inductive(data, table, tcfg)
        if stage == "both":
            save_checkpoint(out / "inductive.json", net)
            net, tlog_t = train_transductive(net, data, table, tcfg)
            tlog.extend(tlog_t)
    ckpt = Path(cfg.get("checkpoint") or out / "checkpoint.json")
    save_checkpoint(ckpt, net)
    tlog.save(out / "train_log.csv")
    report = evaluate(data, table, net, tcfg.mode, cfg.get("aggregation", "per-class-mean"))
    atomic_write_text(out / "train_metrics.json", report.to_json())
    atomic_write_text(out / "train_config.json", dumps_json(
        {"stage": stage, "train": tcfg.to_dict()}))
    print(f"[{stage}] {report.summary()} -> {ckpt}")
    return EXIT_OK


def _load_net_for(cfg, data, table):
    path = cfg.get("checkpoint")
    if not path or not Path(path).exists():
        raise InputError(f"checkpoint not found: {path!r}")
    net, _ = load_checkpoint(path)
    if net.direction == "S2F":
        want = (table.semantic_dim, net.dims[1], data.feature_dim)
    else:
        want = (data.feature_dim, net.dims[1], table.semantic_dim)
    if net.dims != want:
        raise DimensionError(f"checkpoint dims {net.dims} do not fit the data (expected {want})")
    return net


def cmd_eval(cfg):
    data, table = _load_data(cfg)
    net = _load_net_for(cfg, data, table)
    mode = cfg.get("mode", "gzsl")
    report = evaluate(data, table, net, mode, cfg.get("aggregation", "per-class-mean"),
                      int(cfg.get("k", 1)))
    path = Path(cfg.get("report") or _out_dir(cfg) / f"report_{mode}.json")
    report.save(path)
    print(report.summary())
    return EXIT_OK


def cmd_diagnose(cfg):
    data, table = _load_data(cfg)
    net = _load_net_for(cfg, data, table)
    k_max = cfg.get("k_max")
    out = diagnose(data, table, net, None if k_max is None else int(k_max), cfg.get("mode", "gzsl"))
    path = Path(cfg.get("report") or _out_dir(cfg) / "diagnostics.json")
    atomic_write_text(path, dumps_json(out))
    print(f"nk_skewness(k=1)={out['nk_skewness']['1']:.4f} -> {path}")
    return EXIT_OK


COMMANDS = {"gen-synthetic": cmd_gen_synthetic, "train": cmd_train,
            "eval": cmd_eval, "diagnose": cmd_diagnose}


def build_parser():
    parser = argparse.ArgumentParser(prog="tzsl", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("-v", "--verbose", action="store_true")
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--embeddings")
    data.add_argument("--semantics")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", parents=[common], help="write a synthetic benchmark")
    g.add_argument("--num-seen", dest="num_seen_classes", type=int)
    g.add_argument("--num-unseen", dest="num_unseen_classes", type=int)
    g.add_argument("--feature-dim", type=int)
    g.add_argument("--semantic-dim", type=int)
    g.add_argument("--instances-per-class", type=int)
    g.add_argument("--cluster-spread", type=float)
    g.add_argument("--semantic-noise", type=float)
    g.add_argument("--mode", choices=["clusters", "pointsets"])

    t = sub.add_parser("train", parents=[common, data], help="train a projection net")
    t.add_argument("--stage", choices=["inductive", "transductive", "both"])
    t.add_argument("--init", help="checkpoint to start the transductive stage from")
    t.add_argument("--preset", choices=sorted(PRESETS))
    t.add_argument("--checkpoint", help="output checkpoint path")
    t.add_argument("--mode", choices=["zsl", "gzsl"])
    t.add_argument("--direction", choices=["S2F", "F2S"])
    t.add_argument("--lr", type=float)
    t.add_argument("--inductive-epochs", type=int)
    t.add_argument("--transductive-epochs", type=int)
    t.add_argument("--hidden-dim", type=int)
    t.add_argument("--activation", choices=["tanh", "relu"])

    e = sub.add_parser("eval", parents=[common, data], help="evaluate a checkpoint")
    e.add_argument("--checkpoint")
    e.add_argument("--mode", choices=["zsl", "gzsl"])
    e.add_argument("--aggregation", choices=["per-class-mean", "overall"])
    e.add_argument("--report")

    d = sub.add_parser("diagnose", parents=[common, data], help="hubness diagnostics")
    d.add_argument("--checkpoint")
    d.add_argument("--mode", choices=["zsl", "gzsl"])
    d.add_argument("--k-max", type=int)
    d.add_argument("--report")
    return parser


_SPEC_FLAGS = ("num_seen_classes", "num_unseen_classes", "feature_dim", "semantic_dim",
               "instances_per_class", "cluster_spread", "semantic_noise")
_TRAIN_FLAGS = ("mode", "direction", "lr", "inductive_epochs", "transductive_epochs",
                "hidden_dim", "activation")


def resolve_config(args):
    cfg = _load_config(args.config)
    _merge(cfg, args, ("seed", "out_dir", "embeddings", "semantics", "stage", "init",
                       "preset", "checkpoint", "aggregation", "report", "k_max"))
    if args.command == "gen-synthetic":
        syn = dict(cfg.get("synthetic") or {})
        _merge(syn, args, _SPEC_FLAGS)
        if getattr(args, "mode", None):
            syn["mode"] = args.mode
        cfg["synthetic"] = syn
    elif args.command == "train":
        train = dict(cfg.get("train") or {})
        _merge(train, args, _TRAIN_FLAGS)
        cfg["train"] = train
    elif getattr(args, "mode", None):
        cfg["mode"] = args.mode
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except NumericError as exc:
        where = f" (epoch {exc.epoch})" if exc.epoch is not None else ""
        print(f"error: numeric failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArgumentError, TypeError, ValueError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
