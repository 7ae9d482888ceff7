"""Command line driver: encode, train each stage, evaluate, export kernels.

Every command reads a JSON run config, writes its artifacts under the output
directory and a line-delimited JSON report to ``reports/<command>.jsonl``.
Reports carry no timings, so reruns with the same seed are byte-identical;
timings go to ``logs/<command>.log``.

Layout of the output directory::

    encode.json                 encoding manifest
    state.json                  epoch counters, convergence and R-STDP history
    weights/init/layerN.txt     initial weights, written by ``encode``
    weights/layerN.txt          trained weights
    features/layerN/feature_XXX.txt
    reports/<command>.jsonl
    logs/<command>.log
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from .data import ImageTransform, cache_dataset, load_mnist
from .encoding import default_dog_bank, generate_inhibition_kernel
from .layers import PoolSpec
from .pipeline import (
    SpikingNetwork,
    StageInputs,
    TrainState,
    adaptive_rl_rates,
    derive_seed,
    evaluate,
    step_schedule,
    train_rl_epochs,
    train_unsupervised,
    tutorial_config,
)
from .textio import atomic_write_text, tensor_to_text, text_to_tensor

log = logging.getLogger("onespike")

_POS_INT = {"type": "integer", "minimum": 1}
_NULL_INT = {"type": ["integer", "null"], "minimum": 1}

_LAYER = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kernel_size": _POS_INT,
        "threshold": {"type": ["number", "null"]},
        "k": _POS_INT,
        "inhibition_radius": {"type": "integer", "minimum": 0},
        "a_plus": {"type": "number"},
        "a_minus": {"type": "number"},
        "lower_bound": {"type": "number"},
        "upper_bound": {"type": "number"},
        "use_stabilizer": {"type": "boolean"},
        "punish": {
            "type": "object",
            "additionalProperties": False,
            "required": ["a_plus", "a_minus"],
            "properties": {"a_plus": {"type": "number"}, "a_minus": {"type": "number"}},
        },
        "pool": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "required": ["window"],
            "properties": {
                "window": _POS_INT,
                "stride": _POS_INT,
                "padding": {"type": "integer", "minimum": 0},
            },
        },
        "weight_mean": {"type": "number"},
        "weight_std": {"type": "number", "minimum": 0},
    },
}

RUN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["data"],
    "properties": {
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["directory"],
            "properties": {
                "directory": {"type": "string"},
                "train_limit": _NULL_INT,
                "test_limit": _NULL_INT,
            },
        },
        "encoding": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kernel_size": _POS_INT,
                "threshold": {"type": "number"},
                "norm_radius": _POS_INT,
                "inhibition_factors": {
                    "type": ["array", "null"],
                    "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "minItems": 1,
                },
            },
        },
        "network": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t_max": _POS_INT,
                "features": {"type": "array", "items": _POS_INT, "minItems": 3, "maxItems": 3},
                "n_classes": {"type": "integer", "minimum": 2},
                "input_size": {"type": "array", "items": _POS_INT, "minItems": 2, "maxItems": 2},
                "layers": {"type": ["array", "null"], "items": _LAYER, "minItems": 3, "maxItems": 3},
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "layer1_epochs": {"type": "integer", "minimum": 0},
                "layer2_epochs": {"type": "integer", "minimum": 0},
                "rl_epochs": {"type": "integer", "minimum": 0},
                "lr_growth": {
                    "type": ["object", "null"],
                    "additionalProperties": False,
                    "required": ["every", "factor", "max_rate"],
                    "properties": {
                        "every": _POS_INT,
                        "factor": {"type": "number", "minimum": 1},
                        "max_rate": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "adaptive_rl": {"type": "boolean"},
                "restore_best": {"type": "boolean"},
            },
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "cache": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["memory", "disk"]},
                "directory": {"type": ["string", "null"]},
            },
        },
        "output": {"type": "string"},
    },
}

DEFAULTS = {
    "data": {"train_limit": None, "test_limit": None},
    "encoding": {"kernel_size": 7, "threshold": 50.0, "norm_radius": 8, "inhibition_factors": None},
    "network": {
        "t_max": 15,
        "features": [30, 250, 200],
        "n_classes": 10,
        "input_size": [28, 28],
        "layers": None,
    },
    "schedule": {
        "layer1_epochs": 2,
        "layer2_epochs": 4,
        "rl_epochs": 50,
        "lr_growth": None,
        "adaptive_rl": True,
        "restore_best": True,
    },
    "seed": 0,
    "cache": {"mode": "memory", "directory": None},
    "output": "run",
}


class ConfigError(ValueError):
    pass


class PreconditionError(RuntimeError):
    """A phase ran before the artifact it depends on exists."""

    def __init__(self, artifact, hint):
        super().__init__(f"missing artifact {artifact}: {hint}")
        self.artifact = artifact


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_run_config(path, seed=None, cache=None, out=None):
    """Validate the JSON file at ``path``, fill defaults, apply flag overrides."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    try:
        jsonschema.validate(raw, RUN_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = seed
    if cache is not None:
        cfg["cache"]["mode"] = cache
    if out is not None:
        cfg["output"] = str(out)
    return cfg


def network_config(cfg):
    net = cfg["network"]
    base = tutorial_config(
        t_max=net["t_max"],
        features=tuple(net["features"]),
        n_classes=net["n_classes"],
        input_size=tuple(net["input_size"]),
    )
    if not net["layers"]:
        return base
    layers = []
    for spec, over in zip(base.layers, net["layers"]):
        rule_keys = {"a_plus", "a_minus", "lower_bound", "upper_bound", "use_stabilizer"}
        rule = dataclasses.replace(spec.rule, **{k: v for k, v in over.items() if k in rule_keys})
        fields = {k: v for k, v in over.items() if k not in rule_keys | {"pool", "punish"}}
        if "punish" in over:
            # same bounds and stabilizer as the reward rule
            fields["punish_rule"] = dataclasses.replace(rule, **over["punish"])
        if "pool" in over:
            p = over["pool"]
            fields["pool"] = None if p is None else PoolSpec.make(p["window"], p.get("stride"), p.get("padding", 0))
        layers.append(dataclasses.replace(spec, rule=rule, **fields))
    return dataclasses.replace(base, layers=tuple(layers))


def image_transform(cfg):
    enc = cfg["encoding"]
    kernel = None
    if enc["inhibition_factors"]:
        kernel = tuple(map(tuple, generate_inhibition_kernel(enc["inhibition_factors"])))
    bank = default_dog_bank(enc["kernel_size"], enc["kernel_size"] // 2, enc["threshold"])
    return ImageTransform(bank, enc["norm_radius"], cfg["network"]["t_max"], inhibition_kernel=kernel)


class Run:
    """Paths and shared helpers of one output directory."""

    def __init__(self, cfg, command):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg["output"])
        self.records = []
        self.net_config = network_config(cfg)
        self.transform = image_transform(cfg)
        if self.net_config.layers[0].in_features != len(self.transform.bank.kernels):
            raise ConfigError("the first layer must take one input feature per filter kernel")

    # artifacts

    def init_path(self, layer):
        return self.out / "weights" / "init" / f"layer{layer}.txt"

    def trained_path(self, layer):
        return self.out / "weights" / f"layer{layer}.txt"

    def require(self, path, hint):
        if not path.exists():
            raise PreconditionError(path, hint)
        return path

    def read_state(self):
        path = self.require(self.out / "state.json", "run 'encode' first")
        return json.loads(path.read_text())

    def write_state(self, state):
        atomic_write_text(self.out / "state.json", json.dumps(state, indent=1, sort_keys=True))

    def record(self, **fields):
        self.records.append(fields)

    def flush(self):
        text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)
        atomic_write_text(self.out / "reports" / f"{self.command}.jsonl", text)

    # data and weights

    def dataset(self, split):
        limit = self.cfg["data"][f"{split}_limit"]
        images, labels = load_mnist(self.cfg["data"]["directory"], split, limit)
        shape = tuple(self.cfg["network"]["input_size"])
        if images.shape[1:] != shape:
            raise ConfigError(f"{split} images are {images.shape[1:]}, network expects {shape}")
        cache = self.cfg["cache"]
        directory = None
        if cache["mode"] == "disk":
            root = Path(cache["directory"]) if cache["directory"] else self.out / "cache"
            directory = root / split
        return cache_dataset(images, self.transform, cache["mode"], directory), labels

    def network(self, trained=(1, 2, 3), require=()):
        net = SpikingNetwork(self.net_config)
        sources = {}
        for i, layer in enumerate(net.layers, start=1):
            path = self.trained_path(i)
            if i in require:
                self.require(path, f"train layer {i} first")
            if i not in trained or not path.exists():
                path = self.require(self.init_path(i), "run 'encode' first")
                sources[f"layer{i}"] = "init"
            else:
                sources[f"layer{i}"] = "trained"
            layer.set_weight(text_to_tensor(path))
        return net, sources

    def save_weights(self, path, weight):
        tensor_to_text(weight, path)
        return hashlib.sha256(path.read_bytes()).hexdigest()

    def rng(self, phase):
        return np.random.default_rng(derive_seed(self.cfg["seed"], phase))


def _near_bounds(weight, lower, upper, margin=0.1):
    return float(np.mean((weight <= lower + margin) | (weight >= upper - margin)))


def cmd_encode(run):
    seed = run.cfg["seed"]
    manifest = {"fingerprint": run.transform.fingerprint, "seed": seed, "splits": {}}
    for split in ("train", "test"):
        data, labels = run.dataset(split)
        spikes = 0
        for i in range(len(data)):
            spikes += int(np.count_nonzero(data.latencies(i) >= 0))
        manifest["splits"][split] = {"samples": len(data)}
        run.record(
            record="encode", split=split, samples=len(data),
            mean_input_spikes=spikes / len(data), fingerprint=run.transform.fingerprint,
        )
        log.info("encoded %d %s samples", len(data), split)
    net = SpikingNetwork(run.net_config, random_state=derive_seed(seed, "init"))
    for i, layer in enumerate(net.layers, start=1):
        digest = run.save_weights(run.init_path(i), layer.weight)
        run.trained_path(i).unlink(missing_ok=True)
        run.record(record="weights", stage="init", layer=i, sha256=digest)
    atomic_write_text(run.out / "encode.json", json.dumps(manifest, indent=1, sort_keys=True))
    state = dataclasses.asdict(TrainState())
    state.pop("best_weights")
    state["seed"] = seed
    run.write_state(state)


def _invalidate_above(run, state, layer):
    for j in range(layer + 1, 4):
        if run.trained_path(j).exists():
            log.info("removing stale %s", run.trained_path(j))
            run.trained_path(j).unlink()
    if layer < 2:
        state["epochs"]["layer2"] = 0
        state["convergence"]["layer2"] = []
    state["epochs"]["rl"] = 0
    state["rl_history"] = []
    state["best_accuracy"] = state["best_epoch"] = None


def cmd_train_layer(run, layer):
    state = run.read_state()
    require = (1,) if layer == 2 else ()
    net, sources = run.network(trained=range(1, layer), require=require)
    data, _ = run.dataset("train")
    sched = run.cfg["schedule"]
    epochs = sched[f"layer{layer}_epochs"]
    growth = sched["lr_growth"]
    hook = step_schedule(growth["every"], growth["factor"], growth["max_rate"]) if growth else None
    stage = StageInputs(net, data, layer) if layer > 1 else None
    rng = run.rng(f"layer{layer}")
    name = f"layer{layer}"
    state["epochs"][name] = 0
    state["convergence"][name] = []
    spec = run.net_config.layers[layer - 1]
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        (c,) = train_unsupervised(net, data, layer, 1, rng, hook, stage_inputs=stage)
        w = net.layers[layer - 1].weight
        state["epochs"][name] = epoch
        state["convergence"][name].append(c)
        run.record(
            record="epoch", phase=name, epoch=epoch, convergence=c,
            near_bounds=_near_bounds(w, spec.rule.lower_bound, spec.rule.upper_bound),
        )
        log.info("%s epoch %d: C=%.6f (%.1fs)", name, epoch, c, time.perf_counter() - t0)
    digest = run.save_weights(run.trained_path(layer), net.layers[layer - 1].weight)
    _invalidate_above(run, state, layer)
    run.write_state(state)
    run.record(record="summary", phase=name, epochs=epochs, sha256=digest, inputs=sources)


def cmd_train_rl(run):
    state = run.read_state()
    net, sources = run.network(trained=(1, 2), require=(1, 2))
    data, labels = run.dataset("train")
    sched = run.cfg["schedule"]
    t0 = time.perf_counter()
    stage = StageInputs(net, data, 3)
    log.info("decision-layer inputs ready (%.1fs)", time.perf_counter() - t0)
    hook = adaptive_rl_rates(net.rules[2], net.punish_rule) if sched["adaptive_rl"] else None
    ts = TrainState()

    def on_epoch(epoch, tally):
        run.record(record="epoch", phase="rl", epoch=epoch, **tally.as_dict())
        log.info("rl epoch %d: %s (%.1fs)", epoch, tally.as_dict(), time.perf_counter() - t0)

    train_rl_epochs(
        net, data, labels, sched["rl_epochs"], rng=run.rng("rl"), rl_hook=hook, state=ts,
        stage_inputs=stage, restore_best=sched["restore_best"], on_epoch=on_epoch,
    )
    digest = run.save_weights(run.trained_path(3), net.layers[2].weight)
    state["epochs"]["rl"] = ts.epochs["rl"]
    state["rl_history"] = ts.rl_history
    state["best_accuracy"] = ts.best_accuracy
    state["best_epoch"] = ts.best_epoch
    run.write_state(state)
    run.record(
        record="summary", phase="rl", epochs=ts.epochs["rl"], best_epoch=ts.best_epoch,
        best_train_accuracy=ts.best_accuracy, sha256=digest, inputs=sources,
    )


def cmd_eval(run, split):
    run.read_state()
    net, sources = run.network()
    data, labels = run.dataset(split)
    t0 = time.perf_counter()
    tally = evaluate(net, data, labels)
    log.info("evaluated %d %s samples (%.1fs)", tally.total, split, time.perf_counter() - t0)
    run.record(record="eval", split=split, weights=sources, **tally.as_dict())


def cmd_export_features(run):
    net, sources = run.network()
    for i, layer in enumerate(net.layers, start=1):
        directory = run.out / "features" / f"layer{i}"
        for f in range(layer.out_features):
            tensor_to_text(layer.weight[f], directory / f"feature_{f:03d}.txt")
        run.record(
            record="export", layer=i, features=layer.out_features,
            weights=sources[f"layer{i}"], directory=f"features/layer{i}",
        )


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run config")
    common.add_argument("--seed", type=int, help="root seed, overrides the config")
    common.add_argument("--cache", choices=["memory", "disk"], help="where encoded samples are cached")
    common.add_argument("--out", help="output directory, overrides the config")
    common.add_argument("--device-threads", type=int, help="cap on BLAS/OpenMP threads")

    parser = argparse.ArgumentParser(prog="onespike", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("encode", parents=[common], help="encode datasets and write initial weights")
    p = sub.add_parser("train-layer", parents=[common], help="unsupervised STDP on layer 1 or 2")
    p.add_argument("--layer", type=int, choices=[1, 2], required=True)
    sub.add_parser("train-rl", parents=[common], help="R-STDP on the decision layer")
    p = sub.add_parser("eval", parents=[common], help="tally decisions on a split")
    p.add_argument("--split", choices=["train", "test"], default="test")
    sub.add_parser("export-features", parents=[common], help="write every kernel as a text tensor")
    return parser


def _report_name(args):
    if args.command == "train-layer":
        return f"train-layer{args.layer}"
    if args.command == "eval":
        return f"eval-{args.split}"
    return args.command


def _dispatch(run, args):
    if args.command == "encode":
        cmd_encode(run)
    elif args.command == "train-layer":
        cmd_train_layer(run, args.layer)
    elif args.command == "train-rl":
        cmd_train_rl(run)
    elif args.command == "eval":
        cmd_eval(run, args.split)
    else:
        cmd_export_features(run)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must fit in an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        cfg = load_run_config(args.config, seed=args.seed, cache=args.cache, out=args.out)
        run = Run(cfg, _report_name(args))
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    run.out.mkdir(parents=True, exist_ok=True)
    (run.out / "logs").mkdir(exist_ok=True)
    handler = logging.FileHandler(run.out / "logs" / f"{run.command}.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    try:
        t0 = time.perf_counter()
        with threadpool_limits(limits=args.device_threads):
            _dispatch(run, args)
        run.flush()
        log.info("%s finished in %.1fs", run.command, time.perf_counter() - t0)
        return 0
    except PreconditionError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        log.exception("%s failed", run.command)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        log.removeHandler(handler)
        handler.close()


if __name__ == "__main__":
    sys.exit(main())
