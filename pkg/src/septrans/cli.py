"""Batch command-line surface: train, attack, inspect, verify.

Runs are described by a JSON config file (see README for the schema); flags
override file values.  Exit codes: 0 success, 1 usage/config error, 2 data
error (missing or malformed files), 3 verification failure.
"""

from __future__ import annotations

import argparse
import datetime
import json
import math
import sys

import numpy as np

from .attacks import AttackConfig
from .data import (
    CheckpointError,
    Dataset,
    IdxFormatError,
    load_checkpoint,
    load_idx,
    save_checkpoint,
    synthetic_gaussians,
)
from .network import SepMlp, build_mlp
from .penalties import PenaltyConfig
from .training import TrainConfig, evaluate, run_seeds, structural_compression
from .transform import param_count
from .verify import FAULT_MODES, run_all

USAGE_ERROR = 1
DATA_ERROR = 2
VERIFY_ERROR = 3


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; this surface reserves 2 for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="septrans", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model per the run config")
    p_train.add_argument("--config", required=True, help="JSON run config")
    p_train.add_argument("--seed", type=int, help="override: train this single seed")
    p_train.add_argument("--epochs", type=int, help="override epoch count")
    p_train.add_argument("--attack", choices=["fgsm", "pgd", "none"], help="override attack kind")
    p_train.add_argument("--eps", type=float, help="override attack budget")
    p_train.add_argument("--steps", type=int, help="override attack iteration count")
    p_train.add_argument("--step-size", type=float, help="override attack step size")
    p_train.add_argument("--checkpoint", help="override checkpoint output path")
    p_train.add_argument("--report", help="override report output path")
    p_train.add_argument("--no-timestamp", action="store_true", help="omit timestamps from reports")
    p_train.add_argument(
        "--dump-config", action="store_true", help="print the normalized config and exit"
    )

    p_attack = sub.add_parser("attack", help="evaluate a checkpoint under attack")
    p_attack.add_argument("--checkpoint", required=True)
    p_attack.add_argument("--config", required=True, help="run config providing the dataset")
    p_attack.add_argument("--attack", choices=["fgsm", "pgd"], default="fgsm")
    p_attack.add_argument("--eps", type=float, default=0.015)
    p_attack.add_argument("--steps", type=int, default=10)
    p_attack.add_argument("--step-size", type=float, default=0.0078)
    p_attack.add_argument("--perturbation-out", help="write per-sample perturbation norms here")
    p_attack.add_argument("--no-timestamp", action="store_true")

    p_inspect = sub.add_parser("inspect", help="describe a checkpointed model")
    p_inspect.add_argument("--checkpoint", required=True)

    p_verify = sub.add_parser("verify", help="run the property suite")
    p_verify.add_argument("--trials", type=int, default=100)
    p_verify.add_argument("--seed", type=int, default=2024)
    p_verify.add_argument("--inject-fault", choices=list(FAULT_MODES), help="test hook: force a failure")
    return parser


# ---------------------------------------------------------------------------
# run config handling

_TRAIN_DEFAULTS = {
    "epochs": 10,
    "batch_size": 32,
    "lr": 1e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "adam_eps": 1e-8,
    "frob_weight": 0.0,
    "cond_weight": 0.0,
    "sparse_weight": 0.0,
    "det_smooth": 1e-4,
    "sparse_smooth": 1e-6,
    "p": 1.0,
    "attack": None,
    "prune_threshold": 0.0,
    "seeds": [0],
}


def load_run_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return normalize_config(doc)


def normalize_config(doc: dict) -> dict:
    for section in ("dataset", "model"):
        if section not in doc or not isinstance(doc[section], dict):
            raise ConfigError(f"config needs a {section!r} section")
    dataset = dict(doc["dataset"])
    kind = dataset.get("kind")
    if kind == "synthetic":
        out_ds = {
            "kind": "synthetic",
            "classes": int(dataset.get("classes", 2)),
            "per_class": int(dataset.get("per_class", 100)),
            "shape": [int(s) for s in dataset.get("shape", [4, 4])],
            "separation": float(dataset.get("separation", 0.6)),
            "noise_std": float(dataset.get("noise_std", 0.05)),
            "seed": int(dataset.get("seed", 0)),
        }
    elif kind == "idx":
        if "images" not in dataset or "labels" not in dataset:
            raise ConfigError("idx dataset needs 'images' and 'labels' paths")
        out_ds = {
            "kind": "idx",
            "images": str(dataset["images"]),
            "labels": str(dataset["labels"]),
            "shape": None if dataset.get("shape") is None else [int(s) for s in dataset["shape"]],
            "num_classes": int(dataset.get("num_classes", 10)),
        }
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")

    model = dict(doc["model"])
    layers = model.get("layers")
    if not isinstance(layers, list) or not layers:
        raise ConfigError("model needs a non-empty 'layers' list")
    out_layers = []
    for i, layer in enumerate(layers):
        factors = layer.get("factors")
        if not isinstance(factors, list) or not factors:
            raise ConfigError(f"model layer {i} needs a non-empty 'factors' list")
        out_layers.append(
            {
                "factors": [[int(k), int(j)] for k, j in factors],
                "bias": bool(layer.get("bias", True)),
                "activation": str(
                    layer.get("activation", "none" if i == len(layers) - 1 else "relu")
                ),
            }
        )
    out_model = {"num_classes": int(model.get("num_classes", 2)), "layers": out_layers}

    train = {**_TRAIN_DEFAULTS, **doc.get("train", {})}
    attack_doc = train.get("attack")
    if attack_doc is not None:
        attack_doc = {
            "kind": str(attack_doc.get("kind", "pgd")),
            "eps": float(attack_doc.get("eps", 0.031)),
            "steps": int(attack_doc.get("steps", 10)),
            "step_size": float(attack_doc.get("step_size", 0.0078)),
            "lo": float(attack_doc.get("lo", 0.0)),
            "hi": float(attack_doc.get("hi", 1.0)),
        }
    out_train = {
        "epochs": int(train["epochs"]),
        "batch_size": int(train["batch_size"]),
        "lr": float(train["lr"]),
        "beta1": float(train["beta1"]),
        "beta2": float(train["beta2"]),
        "adam_eps": float(train["adam_eps"]),
        "frob_weight": float(train["frob_weight"]),
        "cond_weight": float(train["cond_weight"]),
        "sparse_weight": float(train["sparse_weight"]),
        "det_smooth": float(train["det_smooth"]),
        "sparse_smooth": float(train["sparse_smooth"]),
        "p": float(train["p"]),
        "attack": attack_doc,
        "prune_threshold": float(train["prune_threshold"]),
        "seeds": [int(s) for s in train["seeds"]],
    }
    if not out_train["seeds"]:
        raise ConfigError("train.seeds must not be empty")

    outputs = doc.get("outputs", {})
    out_outputs = {
        "checkpoint": outputs.get("checkpoint", "model.ckpt.json"),
        "report": outputs.get("report", "report.txt"),
    }
    return {"dataset": out_ds, "model": out_model, "train": out_train, "outputs": out_outputs}


def build_dataset(ds: dict) -> Dataset:
    if ds["kind"] == "synthetic":
        return synthetic_gaussians(
            classes=ds["classes"],
            per_class=ds["per_class"],
            shape=tuple(ds["shape"]),
            separation=ds["separation"],
            seed=ds["seed"],
            noise_std=ds["noise_std"],
        )
    return load_idx(
        ds["images"],
        ds["labels"],
        shape=None if ds["shape"] is None else tuple(ds["shape"]),
        num_classes=ds["num_classes"],
    )


def build_model(model_doc: dict, seed: int) -> SepMlp:
    shapes = [[(k, j) for k, j in layer["factors"]] for layer in model_doc["layers"]]
    biases = [layer["bias"] for layer in model_doc["layers"]]
    model = build_mlp(shapes, model_doc["num_classes"], seed=seed, bias=biases)
    acts = [layer["activation"] for layer in model_doc["layers"]]
    return SepMlp(model.layers, acts, model_doc["num_classes"])


def make_train_config(train_doc: dict, seed: int) -> TrainConfig:
    attack_doc = train_doc["attack"]
    attack_cfg = None
    if attack_doc is not None:
        attack_cfg = AttackConfig(
            kind=attack_doc["kind"],
            eps=attack_doc["eps"],
            steps=attack_doc["steps"],
            step_size=attack_doc["step_size"],
            lo=attack_doc["lo"],
            hi=attack_doc["hi"],
        )
    penalties = PenaltyConfig(
        frob_weight=train_doc["frob_weight"],
        cond_weight=train_doc["cond_weight"],
        sparse_weight=train_doc["sparse_weight"],
        det_smooth=train_doc["det_smooth"],
        sparse_smooth=train_doc["sparse_smooth"],
        p=train_doc["p"],
    )
    return TrainConfig(
        epochs=train_doc["epochs"],
        batch_size=train_doc["batch_size"],
        penalties=penalties,
        attack=attack_cfg,
        lr=train_doc["lr"],
        beta1=train_doc["beta1"],
        beta2=train_doc["beta2"],
        adam_eps=train_doc["adam_eps"],
        seed=seed,
        prune_threshold=train_doc["prune_threshold"],
    )


# ---------------------------------------------------------------------------
# subcommands

def _timestamp_lines(no_timestamp: bool) -> list[str]:
    if no_timestamp:
        return []
    return [f"# generated: {datetime.datetime.now(datetime.timezone.utc).isoformat()}"]


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _attack_line(attack_doc) -> str:
    if attack_doc is None:
        return "none"
    return (
        f"{attack_doc['kind']} eps={_fmt(attack_doc['eps'])} steps={attack_doc['steps']} "
        f"step_size={_fmt(attack_doc['step_size'])}"
    )


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg["train"]["seeds"] = [args.seed]
    if args.epochs is not None:
        cfg["train"]["epochs"] = args.epochs
    if args.attack is not None:
        if args.attack == "none":
            cfg["train"]["attack"] = None
        else:
            base = cfg["train"]["attack"] or {
                "kind": args.attack,
                "eps": 0.031,
                "steps": 10,
                "step_size": 0.0078,
                "lo": 0.0,
                "hi": 1.0,
            }
            base["kind"] = args.attack
            cfg["train"]["attack"] = base
    for key, val in (("eps", args.eps), ("steps", args.steps), ("step_size", args.step_size)):
        if val is not None:
            if cfg["train"]["attack"] is None:
                raise ConfigError(f"--{key.replace('_', '-')} given but no attack configured")
            cfg["train"]["attack"][key] = val
    if args.checkpoint is not None:
        cfg["outputs"]["checkpoint"] = args.checkpoint
    if args.report is not None:
        cfg["outputs"]["report"] = args.report

    if args.dump_config:
        print(json.dumps(cfg, indent=2, sort_keys=True))
        return 0

    dataset = build_dataset(cfg["dataset"])
    seeds = cfg["train"]["seeds"]
    sweep = run_seeds(
        lambda s: build_model(cfg["model"], s),
        dataset,
        make_train_config(cfg["train"], seeds[0]),
        seeds,
    )

    ckpt_path = cfg["outputs"]["checkpoint"]
    for seed, model, report in zip(sweep.seeds, sweep.models, sweep.reports):
        path = ckpt_path if len(seeds) == 1 else _seed_path(ckpt_path, seed)
        metrics = {
            "final_na": report.final_na,
            "final_ra": report.final_ra,
            "cr_structural": report.structural_cr,
            "cr_pruned": _json_float(report.pruned_cr),
            "layer_conditions": [_json_float(k) for k in report.layer_conditions],
        }
        save_checkpoint(model, path, report=metrics, config=cfg)

    lines = ["# septrans training report"]
    lines += _timestamp_lines(args.no_timestamp)
    lines += [
        "",
        "[run]",
        f"seeds = {','.join(str(s) for s in sweep.seeds)}",
        f"epochs = {cfg['train']['epochs']}",
        f"batch_size = {cfg['train']['batch_size']}",
        f"attack = {_attack_line(cfg['train']['attack'])}",
        f"frob_weight = {_fmt(cfg['train']['frob_weight'])}",
        f"cond_weight = {_fmt(cfg['train']['cond_weight'])}",
        f"sparse_weight = {_fmt(cfg['train']['sparse_weight'])}",
        f"prune_threshold = {_fmt(cfg['train']['prune_threshold'])}",
    ]
    for seed, report in zip(sweep.seeds, sweep.reports):
        lines += ["", f"[epochs seed={seed}]"]
        lines.append("epoch  total_loss  data_loss   frob        logdet      sparse      na      ra")
        for i, ep in enumerate(report.epochs, start=1):
            ra = "   -" if ep.ra is None else f"{ep.ra:7.2f}"
            lines.append(
                f"{i:<6d} {ep.total_loss:<11.6f} {ep.data_loss:<11.6f} {ep.frob:<11.6f} "
                f"{ep.logdet:<11.6f} {ep.sparse:<11.6f} {ep.na:7.2f} {ra}"
            )
    lines += ["", "[results]"]
    for seed, report in zip(sweep.seeds, sweep.reports):
        prefix = f"seed{seed}_" if len(seeds) > 1 else ""
        lines.append(f"{prefix}final_na = {_fmt(report.final_na)}")
        lines.append(f"{prefix}final_ra = {_fmt(report.final_ra)}")
        lines.append(f"{prefix}cr_structural = {_fmt(report.structural_cr)}")
        lines.append(f"{prefix}cr_pruned = {_fmt(report.pruned_cr)}")
        for li, kappa in enumerate(report.layer_conditions, start=1):
            lines.append(f"{prefix}kappa_layer_{li} = {_fmt(kappa)}")
    if len(seeds) > 1:
        lines.append(f"na_variance = {_fmt(sweep.na_variance)}")
        lines.append(f"ra_variance = {_fmt(sweep.ra_variance)}")
    text = "\n".join(lines) + "\n"
    with open(cfg["outputs"]["report"], "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    return 0


def _seed_path(path: str, seed: int) -> str:
    if "." in path.rsplit("/", 1)[-1]:
        stem, ext = path.rsplit(".", 1)
        return f"{stem}.seed{seed}.{ext}"
    return f"{path}.seed{seed}"


def _json_float(v: float):
    # JSON has no inf; checkpoints carry it as a string marker
    return v if math.isfinite(v) else repr(v)


def cmd_attack(args) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = load_run_config(args.config)
    dataset = build_dataset(cfg["dataset"])
    attack_cfg = AttackConfig(
        kind=args.attack,
        eps=args.eps,
        steps=args.steps,
        step_size=args.step_size,
    )
    na = evaluate(model, dataset)
    ra = evaluate(model, dataset, attack_cfg)
    lines = ["# septrans attack report"]
    lines += _timestamp_lines(args.no_timestamp)
    lines += [
        f"# attack = {args.attack} eps={_fmt(args.eps)} steps={args.steps} "
        f"step_size={_fmt(args.step_size)}",
        "",
        "[results]",
        f"na = {_fmt(na)}",
        f"ra = {_fmt(ra)}",
    ]
    print("\n".join(lines))
    if args.perturbation_out:
        from .attacks import attack as run_attack

        norms = []
        for x, y in dataset:
            adv = run_attack(model, x, y, attack_cfg)
            norms.append(float(np.max(np.abs(adv - x))))
        with open(args.perturbation_out, "w", encoding="utf-8") as fh:
            fh.write("# per-sample linf perturbation norms\n")
            for n in norms:
                fh.write(f"{n!r}\n")
            fh.write(f"# max = {max(norms)!r}\n" if norms else "# empty dataset\n")
    return 0


def cmd_inspect(args) -> int:
    model = load_checkpoint(args.checkpoint)
    lines = ["# septrans model inspection", ""]
    total_sep = 0
    total_dense = 0
    from .training import condition_report

    kappas = condition_report(model)
    for li, (layer, act) in enumerate(zip(model.layers, model.activations), start=1):
        counts = param_count(layer)
        total_sep += counts.separable
        total_dense += counts.dense
        lines.append(f"[layer {li}]")
        lines.append(f"activation = {act}")
        lines.append(
            "factors = " + " ".join(f"{f.shape[0]}x{f.shape[1]}" for f in layer.factors)
        )
        lines.append(f"bias = {'none' if layer.bias is None else layer.bias.size}")
        lines.append(f"params_separable = {counts.separable}")
        lines.append(f"params_dense = {counts.dense}")
        lines.append(f"kappa = {_fmt(kappas[li - 1])}")
        for ti, f in enumerate(layer.factors, start=1):
            zeros, bins, counts_hist = _magnitude_histogram(f)
            lines.append(f"factor{ti}_zeros = {zeros}")
            lines.append(
                f"factor{ti}_hist = "
                + " ".join(f"{lo:.2e}:{c}" for lo, c in zip(bins, counts_hist))
            )
        lines.append("")
    lines.append("[results]")
    lines.append(f"params_separable = {total_sep}")
    lines.append(f"params_dense = {total_dense}")
    lines.append(f"cr_structural = {_fmt(structural_compression(model))}")
    print("\n".join(lines))
    return 0


def _magnitude_histogram(f: np.ndarray, n_bins: int = 16):
    """Zero count plus counts over log-spaced magnitude bins of the nonzeros."""
    mags = np.abs(f.ravel())
    nonzero = mags[mags > 0]
    zeros = int(mags.size - nonzero.size)
    if nonzero.size == 0:
        return zeros, np.zeros(n_bins), [0] * n_bins
    lo, hi = float(np.min(nonzero)), float(np.max(nonzero))
    if lo == hi:
        hi = lo * (1 + 1e-9) + 1e-300
    edges = np.logspace(np.log10(lo), np.log10(hi), n_bins + 1)
    edges[-1] = np.nextafter(edges[-1], np.inf)
    counts, _ = np.histogram(nonzero, bins=edges)
    return zeros, edges[:-1], [int(c) for c in counts]


def cmd_verify(args) -> int:
    if args.trials < 1:
        print("septrans verify: --trials must be positive", file=sys.stderr)
        return USAGE_ERROR
    results = run_all(trials=args.trials, seed=args.seed, fault=args.inject_fault)
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: {r.detail}")
    if failed:
        print(f"{len(failed)} of {len(results)} properties failed", file=sys.stderr)
        return VERIFY_ERROR
    print(f"all {len(results)} properties passed")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "train":
            return cmd_train(args)
        if args.command == "attack":
            return cmd_attack(args)
        if args.command == "inspect":
            return cmd_inspect(args)
        return cmd_verify(args)
    except ConfigError as exc:
        print(f"septrans {args.command}: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (IdxFormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"septrans {args.command}: {exc}", file=sys.stderr)
        return DATA_ERROR
    except ValueError as exc:
        print(f"septrans {args.command}: {exc}", file=sys.stderr)
        return USAGE_ERROR


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
