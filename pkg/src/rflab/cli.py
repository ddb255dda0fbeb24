"""Command-line entry point: ``rflab <command> ...``.

Every command writes ``run.json`` (arguments, seeds, versions) next to its
outputs. Failures print a single JSON line ``{"error": ..., "message": ...}``
on stderr and exit with status 2.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .complexity import analyze
from .datasets import load_dataset, write_dataset
from .dsp import build_feature_tensor, read_capture, write_feature_tensor
from .engine import load_params, save_params
from .errors import ConfigurationError, RflabError
from .evalkit import confusion, export_features, features_csv, report, write_report
from .models import MbedAtn, ModelGraph, build_mbed_atn
from .sim import ChannelModel, EmitterProfile, HopConfig, desk_channels, desk_profiles, make_scenarios, worker_count
from .trainer import TrainConfig, predict, train_stage1, train_stage2

MODES = {"plain": "plain", "aa": "anti_aliased", "anti_aliased": "anti_aliased"}


class CliError(RflabError):
    pass


# ---------------------------------------------------------------- helpers

def _read_json(path, what):
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what}: file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{what}: {p}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _build(cls, data, what, path):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{what} in {path}: expected an object, got {type(data).__name__}")
    fields = set(cls.__dataclass_fields__)
    for key in data:
        if key not in fields:
            raise ConfigurationError(f"{what} in {path}: unknown field {key!r}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{what} in {path}: {exc}") from None


def load_profiles(spec):
    """``desk`` / ``desk:N`` or a JSON file holding a list of profile objects."""
    if spec.startswith("desk"):
        return desk_profiles(int(spec.split(":")[1]) if ":" in spec else 5)
    data = _read_json(spec, "profiles")
    if not isinstance(data, list) or len(data) < 2:
        raise ConfigurationError(f"profiles in {spec}: expected a list of at least two objects")
    return [_build(EmitterProfile, d, f"profiles[{i}]", spec) for i, d in enumerate(data)]


def load_hops(spec):
    if spec == "default":
        return HopConfig()
    return _build(HopConfig, _read_json(spec, "hops"), "hops", spec)


def load_channels(spec):
    if spec == "desk":
        return desk_channels()
    data = _read_json(spec, "channels")
    if not isinstance(data, dict) or set(data) != {"train", "test"}:
        raise ConfigurationError(f"channels in {spec}: expected an object with keys 'train' and 'test'")
    return {k: _build(ChannelModel, v, f"channels.{k}", spec) for k, v in data.items()}


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_run(out_dir, args, extra=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = {
        "command": args.command,
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "rflab_version": __version__, "numpy_version": np.__version__, "python": platform.python_version(),
        "threads": worker_count(),
    }
    if extra:
        run.update(extra)
    (out / "run.json").write_text(json.dumps(run, indent=1, sort_keys=True, default=str))
    return out / "run.json"


def save_checkpoint(out_dir, net, name="model.mbat"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "graph.json").write_text(net.graph.to_json())
    save_params(out / name, net.state_dict())
    return out / name


def load_checkpoint(ckpt_dir, dtype=np.float32, name="model.mbat"):
    ckpt = Path(ckpt_dir)
    for f in ("graph.json", name):
        if not (ckpt / f).exists():
            raise CliError(f"checkpoint: missing {ckpt / f}")
    graph = ModelGraph.from_dict(_read_json(ckpt / "graph.json", "graph"))
    net = MbedAtn(graph, dtype=dtype)
    net.load_state_dict(load_params(ckpt / name))
    return net


def _load_ds(path):
    if not Path(path).exists():
        raise CliError(f"dataset: manifest not found: {path}")
    return load_dataset(path)


# ---------------------------------------------------------------- commands

def cmd_simulate(args):
    profiles = load_profiles(args.profiles)
    hops = load_hops(args.hops)
    channels = load_channels(args.channels)
    n_ttd = args.n_ttd if args.n_ttd is not None else args.n
    ds = make_scenarios(profiles, hops, channels, args.n, n_ttd, args.m, mode=MODES[args.mode], seed=args.seed,
                        factor=args.factor, kind=args.kind)
    manifest = write_dataset(ds, args.out)
    write_run(args.out, args, {"seeds": {"master": args.seed, "hop_seed": hops.hop_seed},
                               "manifest_sha256": _sha256(manifest)})
    print(f"wrote {len(ds)} examples to {manifest}")


def cmd_features(args):
    descriptor = _read_json(args.descriptor, "descriptor") if args.descriptor else None
    series = read_capture(args.capture, descriptor)
    ft = build_feature_tensor(series, args.m, MODES[args.mode])
    write_feature_tensor(args.out, ft)
    write_run(Path(args.out).parent, args, {"samples": len(series)})
    print(f"wrote {ft.shape[0]}x{ft.M} tensor to {args.out}")


def cmd_train(args):
    if args.model != "mbed-atn":
        raise CliError(f"model: unsupported {args.model!r}")
    cfg = TrainConfig.from_dict(_read_json(args.config, "config")) if args.config else TrainConfig()
    stage = args.stage or cfg.stage
    ds = _load_ds(args.dataset)
    tts = ds.scenario_set("tts")
    train, val = tts.split("train"), tts.split("val")
    dtype = np.dtype(cfg.dtype)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"config": cfg.to_dict(), "seeds": {"train": cfg.seed}, "dataset_sha256": _sha256(args.dataset)}
    t0 = time.perf_counter()
    if stage in ("one", "both"):
        graph = build_mbed_atn(ds.info["M"], args.scale, ds.num_classes, in_rows=ds.X.shape[1])
        net = MbedAtn(graph, seed=cfg.seed, dtype=dtype)
        rec1 = train_stage1(net, train, val, cfg)
        (out / "runrecord_stage1.csv").write_text(rec1.to_csv())
        (out / "runrecord_stage1.json").write_text(rec1.to_json())
        save_checkpoint(out, net, "stage1.mbat")
        extra["stage1"] = rec1.summary()
    else:
        if not args.init:
            raise CliError("train --stage two needs --init <stage-one checkpoint dir>")
        net = load_checkpoint(args.init, dtype, "stage1.mbat")
    if stage in ("two", "both"):
        rec2 = train_stage2(net, train, val, cfg)
        (out / "runrecord_stage2.csv").write_text(rec2.to_csv())
        (out / "runrecord_stage2.json").write_text(rec2.to_json())
        extra["stage2"] = rec2.summary()
    save_checkpoint(out, net)
    extra["seconds"] = time.perf_counter() - t0
    extra["checksums"] = {"mbed": net.checksum("mbed"), "atn": net.checksum("atn")}
    write_run(out, args, extra)
    print(f"trained stage {stage} in {extra['seconds']:.1f}s; checkpoint in {out}")


def _eval_set(ds, scenario):
    part = ds.scenario_set(scenario)
    if scenario == "tts":
        part = part.split("test")
    if len(part) == 0:
        raise CliError(f"dataset has no {scenario.upper()} evaluation examples")
    return part


def cmd_eval(args):
    ds = _load_ds(args.dataset)
    net = load_checkpoint(args.checkpoint)
    stage = "one" if args.stage == "one" else "two"
    part = _eval_set(ds, args.scenario)
    preds = predict(net, part.X, stage)
    cm = confusion(preds, part.y, ds.num_classes)
    rep = report(cm, args.scenario, "mbed-atn", ds.info.get("M", part.X.shape[2]), ds.info.get("mode", "unknown"),
                 {"examples": len(part), "stage": stage})
    path, csv_path = write_report(args.report, rep, cm)
    write_run(path.parent, args, {"report": str(path)})
    print(f"{args.scenario.upper()} tpr={rep['tpr']:.3f} fpr={rep['fpr']:.3f} top1={rep['top1']:.3f}")


def cmd_complexity(args):
    if args.model != "mbed-atn":
        raise CliError(f"model: unsupported {args.model!r}")
    rep = analyze(build_mbed_atn(args.m, args.scale, args.classes), args.batch)
    print(rep.table())
    if args.json:
        Path(args.json).parent.mkdir(parents=True, exist_ok=True)
        Path(args.json).write_text(rep.to_json())
    write_run(args.out, args, {"params": rep.params, "flops": rep.flops})


def cmd_export(args):
    ds = _load_ds(args.dataset)
    net = load_checkpoint(args.checkpoint)
    feats, labels = export_features(net, ds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(features_csv(feats, labels, ds.ids))
    write_run(out.parent, args, {"rows": len(labels), "width": feats.shape[1]})
    print(f"wrote {len(labels)} feature rows to {out}")


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="rflab", description="RF fingerprinting experiments.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a labeled synthetic dataset")
    s.add_argument("--profiles", default="desk", help="JSON list of emitter profiles, or desk[:N]")
    s.add_argument("--hops", default="default", help="JSON hop config, or 'default'")
    s.add_argument("--channels", default="desk", help="JSON {train, test} channel models, or 'desk'")
    s.add_argument("--n", type=int, required=True, help="TTS examples per emitter")
    s.add_argument("--n-ttd", type=int, default=None, help="TTD examples per emitter (default: --n)")
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--mode", choices=["plain", "aa"], default="aa")
    s.add_argument("--kind", choices=["tensor", "iq"], default="tensor")
    s.add_argument("--factor", type=int, default=40)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("features", help="feature tensor from a recorded capture")
    s.add_argument("--capture", required=True)
    s.add_argument("--descriptor", default=None, help="JSON capture descriptor (default: <capture>.json)")
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--mode", choices=["plain", "aa"], default="aa")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", help="two-stage training")
    s.add_argument("--dataset", required=True)
    s.add_argument("--model", default="mbed-atn")
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--stage", choices=["one", "two", "both"], default=None)
    s.add_argument("--config", default=None, help="JSON TrainConfig")
    s.add_argument("--init", default=None, help="stage-one checkpoint dir (for --stage two)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="KPI report on TTS or TTD examples")
    s.add_argument("--dataset", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--scenario", choices=["tts", "ttd"], required=True)
    s.add_argument("--stage", choices=["one", "two"], default="two")
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("complexity", help="parameter, FLOP and memory report")
    s.add_argument("--model", default="mbed-atn")
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--batch", type=int, default=1)
    s.add_argument("--classes", type=int, default=10)
    s.add_argument("--json", default=None)
    s.add_argument("--out", default=".", help="directory for run.json")
    s.set_defaults(func=cmd_complexity)

    s = sub.add_parser("export-features", help="embedding vectors as CSV")
    s.add_argument("--dataset", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (RflabError, OSError, KeyError) as exc:
        msg = str(exc) if not isinstance(exc, KeyError) else f"missing field {exc}"
        print(json.dumps({"error": type(exc).__name__, "message": msg}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
