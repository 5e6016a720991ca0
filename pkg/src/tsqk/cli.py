"""Command-line orchestration: generate / train / eval / probe / qmp.

One TOML config file drives every command; scalar fields may be
overridden on the command line with ``--set section.key=value`` (flags
take precedence over the file).  All outputs are deterministic given
(config, seed); manifests carry the config hash and versions, with the
wall-clock timestamp isolated in its own field.

Exit codes: 0 success, 1 runtime/training failure, 2 configuration or
input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__, ansatz, data, kernel, qccnet, qmp, svm, timeprobe
from .errors import (CapacityError, ConfigError, DegenerateKernelError,
                     IngestionError, TrainingError, UsageError)

_SCHEMA = {
    "run": {
        "seed": int,
        "output_dir": str,
        "threads": int,
    },
    "dataset": {
        "source": str,          # moons2circles | sincos | gunpoint_like | ucr
        "n_train": int,
        "n_test": int,
        "p": int,
        "noise_std": float,
        "t_hi": float,          # sincos grid end
        "train_path": str,
        "test_path": str,
        "decimate": int,
    },
    "ansatz": {
        "n_qubits": int,
        "embedding": str,
        "embed_layers": int,
        "sel_layers": int,
        "walsh_locality": int,
    },
    "train": {
        "iterations": int,
        "batch_size": int,
        "lambda": float,
        "learning_rate": float,
        "adam_beta1": float,
        "adam_beta2": float,
        "adam_eps": float,
        "restarts": int,
        "inner_tol": float,
        "inner_max_iter": int,
        "eval_split": float,
        "select_on_test": bool,
        "time_mode": str,
        "fixed_time": float,
        "feature_lo": float,
        "feature_hi": float,
    },
    "svm": {
        "c": float,
        "prediction": str,      # combined | vote
    },
    "probe": {
        "delta_lo": float,
        "delta_hi": float,
        "steps": int,
    },
    "qmp": {
        "device": str,          # line | heavyhex127 | layout
        "line_width": int,
        "layout_path": str,
        "buffer": int,
        "shots": int,
        "flip_prob": float,
        "time_index": int,
        "max_elements": int,
    },
}

_DEFAULTS = {
    "run": {"seed": 0, "output_dir": "tsqk_out", "threads": 1},
    "dataset": {"source": "moons2circles", "n_train": 100, "n_test": 100,
                "p": 10, "noise_std": 0.05, "t_hi": math.pi,
                "train_path": "", "test_path": "", "decimate": 1},
    "ansatz": {"n_qubits": 3, "embedding": "qaoa", "embed_layers": 3,
               "sel_layers": 3, "walsh_locality": 0},  # 0 = min(n_qubits, 2)
    "train": {"iterations": 250, "batch_size": 4, "lambda": 0.1,
              "learning_rate": 0.05, "adam_beta1": 0.9, "adam_beta2": 0.999,
              "adam_eps": 1e-8, "restarts": 10, "inner_tol": 1e-8,
              "inner_max_iter": 10_000, "eval_split": 0.25,
              "select_on_test": False, "time_mode": "actual",
              "fixed_time": 1.0, "feature_lo": 0.0, "feature_hi": math.pi},
    "svm": {"c": 100.0, "prediction": "combined"},
    "probe": {"delta_lo": 0.0, "delta_hi": 2.0, "steps": 201},
    "qmp": {"device": "heavyhex127", "line_width": 127, "layout_path": "",
            "buffer": 1, "shots": 8192, "flip_prob": 0.0, "time_index": 0,
            "max_elements": 35},
}


def _coerce(section, key, value):
    want = _SCHEMA[section][key]
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key}: expected a boolean, got {value!r}")
        return value
    if want is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
        return int(value)
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
        return float(value)
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(f"{section}.{key}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{section}.{key}: unsupported type")


def validate_config(raw: dict) -> dict:
    """Merge the file over defaults, rejecting unknown keys by location."""
    cfg = {sec: dict(vals) for sec, vals in _DEFAULTS.items()}
    for section, values in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table of keys")
        for key, value in values.items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            cfg[section][key] = _coerce(section, key, value)
    return cfg


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}")
    return validate_config(raw)


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply --set section.key=value pairs (string values are parsed)."""
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        dotted, text = item.split("=", 1)
        section, key = dotted.split(".", 1)
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"unknown config key {dotted}")
        want = _SCHEMA[section][key]
        if want is bool:
            if text.lower() not in ("true", "false"):
                raise ConfigError(f"{dotted}: expected true/false, got {text!r}")
            value = text.lower() == "true"
        elif want is str:
            value = text
        else:
            try:
                value = want(text)
            except ValueError:
                raise ConfigError(f"{dotted}: cannot parse {text!r}")
        cfg[section][key] = value
    return cfg


def canonical_config(cfg: dict) -> dict:
    """Config with result-neutral execution details stripped (output
    location, worker count); this is what gets hashed and recorded."""
    out = {sec: dict(vals) for sec, vals in cfg.items()}
    out["run"].pop("output_dir", None)
    out["run"].pop("threads", None)
    return out


def config_hash(cfg: dict) -> str:
    blob = json.dumps(canonical_config(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(outdir, cfg, command):
    manifest = {
        "command": command,
        "config": canonical_config(cfg),
        "config_hash": config_hash(cfg),
        "seed": cfg["run"]["seed"],
        "versions": {"tsqk": __version__, "numpy": np.__version__},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    _write_json(os.path.join(outdir, f"{command}_manifest.json"), manifest)


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


# ---------------------------------------------------------------------------
# dataset and model plumbing

def build_datasets(cfg: dict):
    """(train, test) datasets for the configured source."""
    d = cfg["dataset"]
    seed = cfg["run"]["seed"]
    source = d["source"]
    if source == "moons2circles":
        train = data.gen_moons2circles(d["n_train"], d["p"], d["noise_std"], seed)
        test = data.gen_moons2circles(d["n_test"], d["p"], d["noise_std"], seed + 1)
    elif source == "sincos":
        train = data.gen_sincos(d["p"], seed, t_hi=d["t_hi"])
        test = data.gen_sincos(d["p"], seed, t_hi=d["t_hi"])
    elif source == "gunpoint_like":
        train = data.gen_gunpoint_like(d["n_train"], d["p"], seed)
        test = data.gen_gunpoint_like(d["n_test"], d["p"], seed + 1)
    elif source == "ucr":
        if not d["train_path"] or not d["test_path"]:
            raise ConfigError("dataset.train_path and dataset.test_path are "
                              "required for source = 'ucr'")
        train, test = data.load_ucr(d["train_path"], d["test_path"])
    else:
        raise ConfigError(f"unknown dataset.source {source!r}")
    if d["decimate"] > 1:
        train = data.decimate(train, d["decimate"])
        test = data.decimate(test, d["decimate"])
    return train, test


def spec_from_config(cfg: dict, n_features: int) -> ansatz.AnsatzSpec:
    a = cfg["ansatz"]
    return ansatz.AnsatzSpec(
        n_qubits=a["n_qubits"],
        n_features=n_features,
        embedding=a["embedding"],
        embed_layers=a["embed_layers"],
        sel_layers=a["sel_layers"],
        walsh_locality=a["walsh_locality"] if a["walsh_locality"] > 0 else None,
    )


def train_config_from(cfg: dict) -> qccnet.TrainConfig:
    t = cfg["train"]
    return qccnet.TrainConfig(
        iterations=t["iterations"],
        batch_size=t["batch_size"],
        lam=t["lambda"],
        learning_rate=t["learning_rate"],
        adam_beta1=t["adam_beta1"],
        adam_beta2=t["adam_beta2"],
        adam_eps=t["adam_eps"],
        restarts=t["restarts"],
        seed=cfg["run"]["seed"],
        inner_tol=t["inner_tol"],
        inner_max_iter=t["inner_max_iter"],
        eval_fraction=t["eval_split"],
        time_mode=t["time_mode"],
        fixed_time=t["fixed_time"],
    )


def save_model(path, tshk: kernel.TrainedTSHK, cfg: dict, best_restart: int):
    _write_json(path, {
        "model": tshk.to_dict(),
        "config_hash": config_hash(cfg),
        "seed": cfg["run"]["seed"],
        "best_restart": best_restart,
    })


def load_model(path) -> kernel.TrainedTSHK:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"model file not found: {path}")
    return kernel.TrainedTSHK.from_dict(payload["model"])


# ---------------------------------------------------------------------------
# commands

def cmd_generate(cfg: dict) -> int:
    outdir = cfg["run"]["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    train, test = build_datasets(cfg)
    data.save_dataset_csv(train, os.path.join(outdir, "train.csv"))
    data.save_dataset_csv(test, os.path.join(outdir, "test.csv"))
    data.save_manifest(train, os.path.join(outdir, "train_manifest.json"))
    data.save_manifest(test, os.path.join(outdir, "test_manifest.json"))
    _write_manifest(outdir, cfg, "generate")
    print(f"wrote {train.n}-instance train and {test.n}-instance test sets "
          f"to {outdir}")
    return 0


def cmd_train(cfg: dict) -> int:
    outdir = cfg["run"]["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    train_ds, test_ds = build_datasets(cfg)
    spec = spec_from_config(cfg, train_ds.d)
    config = train_config_from(cfg)
    eval_ds = test_ds if cfg["train"]["select_on_test"] else None
    result = qccnet.train(
        train_ds, spec, config, eval_dataset=eval_ds,
        feature_range=(cfg["train"]["feature_lo"], cfg["train"]["feature_hi"]),
        threads=cfg["run"]["threads"],
    )
    save_model(os.path.join(outdir, "model.json"), result.tshk, cfg,
               result.best_restart)
    _write_csv(os.path.join(outdir, "loss_trace.csv"),
               ["restart", "iteration", "loss", "loss_per_batch_sq"],
               result.trace)
    _write_csv(os.path.join(outdir, "restarts.csv"),
               ["restart", "eval_loss", "final_train_loss", "status"],
               [(s.index, s.eval_loss, s.final_train_loss, s.status)
                for s in result.restarts])
    _write_manifest(outdir, cfg, "train")
    print(f"trained {config.restarts} restart(s); best restart "
          f"{result.best_restart}; model written to {outdir}/model.json")
    return 0


def _fit_combined_svm(tshk, train_ds, c_bound):
    stack, combined = kernel.model_gram(tshk, train_ds.instances)
    model = svm.svm_fit(combined, train_ds.labels(), c_bound)
    return stack, combined, model


def cmd_eval(cfg: dict, model_path) -> int:
    outdir = cfg["run"]["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    tshk = load_model(model_path)
    train_ds, test_ds = build_datasets(cfg)
    if train_ds.p != len(tshk.times) or train_ds.d != tshk.spec.n_features:
        raise ConfigError(
            f"model expects (p={len(tshk.times)}, d={tshk.spec.n_features}) but "
            f"dataset has (p={train_ds.p}, d={train_ds.d})")

    c_bound = cfg["svm"]["c"]
    train_stack, train_combined, model = _fit_combined_svm(tshk, train_ds, c_bound)
    cross_stack, cross_combined = kernel.cross_gram(tshk, train_ds.instances,
                                                    test_ds.instances)
    y_test = test_ds.labels()
    decisions = np.array([svm.decide(model, row) for row in cross_combined])

    if cfg["svm"]["prediction"] == "vote":
        per_time_models = [
            svm.svm_fit(train_stack.mats[l], train_ds.labels(), c_bound)
            for l in range(train_stack.p)
        ]
        y_pred = np.array([
            svm.per_time_vote(per_time_models,
                              [cross_stack[l, m] for l in range(train_stack.p)],
                              tshk.eta_star.eta)
            for m in range(test_ds.n)
        ])
    elif cfg["svm"]["prediction"] == "combined":
        y_pred = np.where(decisions >= 0, 1, -1)
    else:
        raise ConfigError(f"unknown svm.prediction {cfg['svm']['prediction']!r}")

    report = svm.metrics(y_test, y_pred, decisions)
    report.alignment_train = svm.kernel_alignment(train_combined, train_ds.labels())
    _, test_combined = kernel.cross_gram(tshk, test_ds.instances, test_ds.instances)
    report.alignment_test = svm.kernel_alignment(test_combined, y_test)

    _write_json(os.path.join(outdir, "metrics.json"), report.to_dict())
    _write_csv(os.path.join(outdir, "decisions.csv"),
               ["instance", "label", "decision", "prediction"],
               [(m, int(y_test[m]), decisions[m], int(y_pred[m]))
                for m in range(test_ds.n)])
    _write_csv(os.path.join(outdir, "weights.csv"), ["time", "eta"],
               list(zip(tshk.times, tshk.eta_star.eta)))
    _write_manifest(outdir, cfg, "eval")
    print(f"f1={report.f1:.4f} balanced_accuracy={report.balanced_accuracy:.4f} "
          f"roc_auc={report.roc_auc:.4f}")
    return 0


def cmd_probe(cfg: dict, model_path) -> int:
    outdir = cfg["run"]["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    tshk = load_model(model_path)
    p = cfg["probe"]
    deltas = np.linspace(p["delta_lo"], p["delta_hi"], p["steps"])
    result = timeprobe.probe(tshk.spec, tshk.theta_star.beta,
                             tshk.theta_star.gamma, deltas,
                             train_times=tshk.evolution_times)
    _write_csv(os.path.join(outdir, "probe.csv"), ["delta", "overlap"],
               list(zip(result.deltas, result.values)))
    _write_csv(os.path.join(outdir, "probe_markers.csv"), ["time", "overlap"],
               list(zip(result.marker_times, result.marker_values)))
    _write_manifest(outdir, cfg, "probe")
    print(f"probe written: {len(deltas)} points on "
          f"[{p['delta_lo']}, {p['delta_hi']}]")
    return 0


def _qmp_layout(cfg: dict, circuits) -> qmp.QmpLayout:
    q = cfg["qmp"]
    if q["layout_path"]:
        return qmp.load_layout(q["layout_path"])
    if q["device"] == "heavyhex127":
        return qmp.reference_heavy_hex_layout(buffer=q["buffer"])
    if q["device"] == "line":
        return qmp.pack(circuits, q["line_width"], q["buffer"])
    raise ConfigError(f"unknown qmp.device {q['device']!r}")


def cmd_qmp(cfg: dict, model_path) -> int:
    outdir = cfg["run"]["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    tshk = load_model(model_path)
    train_ds, test_ds = build_datasets(cfg)
    q = cfg["qmp"]
    l_idx = q["time_index"]
    if not 0 <= l_idx < train_ds.p:
        raise ConfigError(f"qmp.time_index {l_idx} outside p={train_ds.p}")

    scaled = data.scale_instances(train_ds.instances, tshk.feature_scaling)
    t_val = float(tshk.evolution_times[l_idx])
    pairs = [(i, j) for i in range(train_ds.n) for j in range(i + 1, train_ds.n)]
    pairs = pairs[:q["max_elements"]]
    circuits = [
        qmp.Circuit(list(ansatz.build_kernel_circuit(
            tshk.spec, scaled[i].values[l_idx], scaled[j].values[l_idx],
            tshk.theta_star, t_val)), tshk.spec.n_qubits)
        for i, j in pairs
    ]

    layout = _qmp_layout(cfg, circuits)
    for _, qubits in layout.assignments:
        if list(qubits) != list(range(min(qubits), min(qubits) + len(qubits))):
            raise ConfigError(
                "qmp extraction needs contiguous ascending qubit windows")
    reduction = qmp.trf(layout)
    shots, seed = q["shots"], cfg["run"]["seed"]
    serial_counts = qmp.run_serial(circuits, shots, seed)

    fidelities = []
    gram_errors = []
    zeros_key = "0" * tshk.spec.n_qubits
    rounds = 0
    # rounds reuse the layout windows but keep global circuit ids, so each
    # circuit's packed sample comes from the same sub-seed as its serial run
    for lo in range(0, len(circuits), reduction):
        block_ids = list(range(lo, min(lo + reduction, len(circuits))))
        block_layout = qmp.QmpLayout(
            layout.device_width,
            [(gid, layout.assignments[k][1]) for k, gid in enumerate(block_ids)],
            buffer=layout.buffer, edges=layout.edges)
        joint = qmp.run_packed(block_layout, circuits, shots, seed,
                               flip_prob=q["flip_prob"])
        for gid, qubits in block_layout.assignments:
            marg = qmp.partial_measurement(joint, least=min(qubits),
                                           n=tshk.spec.n_qubits)
            serial = serial_counts[gid]
            ideal = {k: v / serial.shots for k, v in serial.items()}
            fidelities.append(qmp.result_fidelity(marg, ideal,
                                                  2**tshk.spec.n_qubits))
            gram_errors.append(abs(marg.get(zeros_key) / shots
                                   - serial.get(zeros_key) / shots))
        rounds += 1

    serial_calls = qmp.serial_call_count(train_ds.n, test_ds.n, train_ds.p)
    packed_calls = qmp.packed_call_count(serial_calls, reduction)
    payload = {
        "trf": reduction,
        "device_width": layout.device_width,
        "active_qubits": layout.active_qubits,
        "buffer": layout.buffer,
        "shots": shots,
        "flip_prob": q["flip_prob"],
        "sampled_elements": len(circuits),
        "joint_runs": rounds,
        "per_circuit_fidelity": fidelities,
        "min_fidelity": min(fidelities),
        "mean_fidelity": float(np.mean(fidelities)),
        "max_gram_element_error": max(gram_errors),
        "pipeline_calls": {
            "n_train": train_ds.n,
            "n_test": test_ds.n,
            "p": train_ds.p,
            "serial": serial_calls,
            "packed": packed_calls,
        },
    }
    _write_json(os.path.join(outdir, "qmp_report.json"), payload)
    _write_manifest(outdir, cfg, "qmp")
    print(f"TRF={reduction} serial_calls={serial_calls} packed_calls={packed_calls} "
          f"min_fidelity={min(fidelities):.6f}")
    return 0


# ---------------------------------------------------------------------------
# entry point

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsqk",
        description="time-series quantum kernel pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_model in (("generate", False), ("train", False),
                              ("eval", True), ("probe", True), ("qmp", True)):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="TOML config file")
        cmd.add_argument("--set", action="append", default=[], metavar="SEC.KEY=V",
                         help="override a scalar config field")
        cmd.add_argument("--output", help="override run.output_dir")
        cmd.add_argument("--threads", type=int, help="override run.threads")
        if needs_model:
            cmd.add_argument("--model", required=True, help="trained model JSON")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, args.set)
        if args.output:
            cfg["run"]["output_dir"] = args.output
        if args.threads is not None:
            cfg["run"]["threads"] = args.threads
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.model)
        if args.command == "probe":
            return cmd_probe(cfg, args.model)
        if args.command == "qmp":
            return cmd_qmp(cfg, args.model)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, IngestionError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, DegenerateKernelError, CapacityError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
