"""``journey-risk`` command line.

    journey-risk <generate|describe|train|evaluate|impute|gradcheck|report>
                 [--config FILE] [--key value ...] [paths ...]

Every key can come from a JSON config file or from a flag of the same name
(``--batch_size`` or ``--batch-size``); flags win over ``JR_SEED``, which
wins over the config file, which wins over defaults.  Exit status: 0 on
success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import METHODS, BaselineEncoder, evaluate_baseline, fit_baseline, knn_impute, mean_impute
from .datagen import GenConfig, describe, describe_markdown, generate
from .evaluation import evaluate_model
from .journey_data import atomic_write_text, fit_normalizer, load_dataset, save_dataset, split_dataset
from .numerics import finite_diff_grad, relative_error
from .prediction import backward_batch, forward_batch, init_params, load_checkpoint, save_checkpoint
from .training import TrainConfig, format_mean_std, population_std, train

log = logging.getLogger("journey_risk")

MODEL_METHODS = {"ours": "full", "ours_r-": "no_recurrent"}
METHOD_LABELS = {"ours": "Ours", "ours_r-": "Ours_r-", "mean": "Mean", "knn": "KNN", "simple": "Simple"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bool(s):
    if isinstance(s, bool):
        return s
    if s.lower() in ("1", "true", "yes"):
        return True
    if s.lower() in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {s}")


def _opt_float(s):
    return None if s in (None, "none", "None", "null") else float(s)


def _keys_from_dataclass(cls) -> dict:
    out = {}
    for f in fields(cls):
        default = f.default
        kind = {bool: _bool, int: int, float: float, str: str}.get(type(default), _opt_float)
        out[f.name] = (kind, default)
    return out


TRAIN_KEYS = _keys_from_dataclass(TrainConfig) | {
    "data": (str, None),
    "out": (str, None),
    "method": (str, "ours"),
    "knn_k": (int, 5),
}
GEN_KEYS = _keys_from_dataclass(GenConfig) | {"out": (str, None)}
GRADCHECK_KEYS = {
    "n": (int, 5),
    "t": (int, 7),
    "g": (int, 8),
    "seed": (int, 1),
    "eps": (float, 1e-5),
    "variant": (str, "full"),
    "tol": (float, 1e-4),
}
EVAL_KEYS = {"checkpoint": (str, None), "data": (str, None), "out": (str, None)}
IMPUTE_KEYS = {"data": (str, None), "method": (str, "mean"), "k": (int, 5), "out": (str, None), "reference": (str, None)}
DESCRIBE_KEYS = {"out": (str, None)}
REPORT_KEYS = {"out": (str, None)}

COMMAND_KEYS = {
    "generate": GEN_KEYS,
    "describe": DESCRIBE_KEYS,
    "train": TRAIN_KEYS,
    "evaluate": EVAL_KEYS,
    "impute": IMPUTE_KEYS,
    "gradcheck": GRADCHECK_KEYS,
    "report": REPORT_KEYS,
}
POSITIONAL = {"describe": "data", "report": "dirs"}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="journey-risk", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"journey-risk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, keys in COMMAND_KEYS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON file of key/value settings")
        for key in keys:
            flags = [f"--{key}"] + ([f"--{key.replace('_', '-')}"] if "_" in key else [])
            p.add_argument(*flags, dest=key, default=argparse.SUPPRESS, metavar=key.upper())
        if name == "describe":
            p.add_argument("paths", nargs="*")
        if name == "report":
            p.add_argument("paths", nargs="+")
    return parser


def resolve(command: str, ns: argparse.Namespace) -> dict:
    """Merge defaults < config file < JR_SEED < flags and coerce types."""
    keys = COMMAND_KEYS[command]
    resolved = {k: default for k, (_, default) in keys.items()}
    if ns.config:
        path = Path(ns.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg = json.loads(path.read_text())
        cfg.pop("artifact_version", None)
        cfg.pop("command", None)
        unknown = set(cfg) - set(keys)
        if unknown:
            raise UsageError(f"unknown keys in {path}: {sorted(unknown)}")
        resolved.update(cfg)
    if "seed" in keys and os.environ.get("JR_SEED"):
        resolved["seed"] = os.environ["JR_SEED"]
    for key in keys:
        if hasattr(ns, key):
            resolved[key] = getattr(ns, key)
    for key, (kind, _) in keys.items():
        value = resolved[key]
        if value is not None and not (kind is _opt_float and value is None):
            try:
                resolved[key] = kind(value)
            except (TypeError, ValueError):
                raise UsageError(f"invalid value for --{key}: {value!r}") from None
    return resolved


def _require(opts: dict, *keys):
    missing = [k for k in keys if not opts.get(k)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join(f"--{k}" for k in missing))


def _setup_file_log(path: Path) -> logging.Handler:
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger("journey_risk").addHandler(handler)
    return handler


def cmd_generate(opts: dict) -> int:
    _require(opts, "out")
    cfg = GenConfig(**{k: opts[k] for k in _keys_from_dataclass(GenConfig)})
    ds = generate(cfg)
    save_dataset(ds, opts["out"])
    summary = describe(ds)
    print(f"wrote {ds.P} journeys to {opts['out']} (prevalence {summary['prevalence']:.3f}, "
          f"missing {summary['overall_missing_pct']:.1f}%)")
    return 0


def cmd_describe(opts: dict, paths: list[str]) -> int:
    if len(paths) != 1:
        raise UsageError("describe takes exactly one dataset path")
    summary = describe(load_dataset(paths[0]))
    md = describe_markdown(summary)
    if opts["out"]:
        out = Path(opts["out"])
        atomic_write_text(out / "summary.md", md)
        atomic_write_text(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    print(md, end="")
    return 0


def cmd_train(opts: dict) -> int:
    _require(opts, "data", "out")
    method = opts["method"]
    if method not in MODEL_METHODS and method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {sorted(MODEL_METHODS) + list(METHODS)}")
    cfg_keys = {f.name for f in fields(TrainConfig)}
    cfg = TrainConfig(**{k: opts[k] for k in cfg_keys})
    if method in MODEL_METHODS:
        cfg = replace(cfg, variant=MODEL_METHODS[method])
    elif cfg.variant != "full":
        log.warning("variant is ignored for baseline method %s", method)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    handler = _setup_file_log(out / "log.txt")
    try:
        resolved = dict(opts) | cfg.to_dict() | {"artifact_version": __version__}
        atomic_write_text(out / "config.json", json.dumps(resolved, indent=2, sort_keys=True) + "\n")
        ds = load_dataset(opts["data"])
        tr, va, te = split_dataset(ds, seed=cfg.seed)
        log.info("split %d/%d/%d journeys (seed %d), method %s", tr.P, va.P, te.P, cfg.seed, method)
        if method in MODEL_METHODS:
            params, hist = train(tr, va, cfg)
            ev = evaluate_model(params, te)
        else:
            params, hist = fit_baseline(method, tr, va, cfg, opts["knn_k"])
            ev = evaluate_baseline(params, te)
        params.meta["method"] = method
        save_checkpoint(params, out / "checkpoint.json")
        atomic_write_text(out / "history.csv", hist.to_csv())
        ev.write(out / "scores.csv", out / "metrics.json")
        label = METHOD_LABELS[method]
        report = (
            f"# {label} (seed {cfg.seed})\n\n"
            f"Best epoch {hist.best_epoch + 1} of {len(hist.train_loss)}.\n\n"
            "| Method | AUROC | AUPRC |\n|---|---|---|\n"
            f"| {label} | {ev.auroc:.4f} | {ev.auprc:.4f} |\n"
        )
        atomic_write_text(out / "report.md", report)
        log.info("test auroc=%.4f auprc=%.4f", ev.auroc, ev.auprc)
        print(ev.metrics_json())
    finally:
        logging.getLogger("journey_risk").removeHandler(handler)
        handler.close()
    return 0


def cmd_evaluate(opts: dict) -> int:
    _require(opts, "checkpoint", "data")
    params = load_checkpoint(opts["checkpoint"])
    ds = load_dataset(opts["data"])
    ev = evaluate_model(params, ds)
    if opts["out"]:
        out = Path(opts["out"])
        ev.write(out / "scores.csv", out / "metrics.json")
    print(ev.metrics_json())
    return 0


def cmd_impute(opts: dict) -> int:
    _require(opts, "data", "out")
    if opts["method"] not in ("mean", "knn"):
        raise UsageError("impute --method must be 'mean' or 'knn'")
    ds = load_dataset(opts["data"])
    ref = load_dataset(opts["reference"]) if opts["reference"] else ds
    stats = fit_normalizer(ref)
    if opts["method"] == "mean":
        imputed = mean_impute(stats, ds)
    else:
        imputed = knn_impute(ref, ds, opts["k"], stats)
    save_dataset(imputed.dataset, opts["out"], imputed.extra_fields())
    n = int(sum(m.sum() for m in imputed.imputed))
    print(f"imputed {n} cells in {ds.P} journeys -> {opts['out']}")
    return 0


def gradcheck(n: int = 5, t: int = 7, g: int = 8, seed: int = 1, eps: float = 1e-5, variant: str = "full") -> dict:
    """Max relative error between backprop and central differences, per tensor.

    Uses one random journey with ~30% zero-filled cells and unequal class
    weights on a positive label.  Parameters get small random offsets on top
    of the initializer so no pre-activation sits exactly on the ReLU kink
    (zero biases plus zero-filled cells would put many there).
    """
    p = init_params(n, g, seed, variant)
    rng = np.random.default_rng(seed)
    p = p.with_tensors({k: v + rng.normal(0.0, 0.1, size=v.shape) for k, v in p.tensors.items()})
    X = rng.uniform(0.2, 1.0, size=(n, t)) * (rng.uniform(size=(n, t)) > 0.3)
    X = X[None]
    lengths = np.array([t])
    labels = np.array([1])
    weights = (0.7, 1.9)
    from .prediction import weighted_cross_entropy

    grads = backward_batch(forward_batch(X, lengths, p), labels, weights)
    errors = {}
    for name in p.names:
        def loss(theta, name=name):
            q = p.with_tensors(p.tensors | {name: theta})
            return weighted_cross_entropy(forward_batch(X, lengths, q).probs, labels, weights)

        numeric = finite_diff_grad(loss, p.tensors[name], eps)
        errors[name] = relative_error(grads[name], numeric)
    return errors


def cmd_gradcheck(opts: dict) -> int:
    errors = gradcheck(opts["n"], opts["t"], opts["g"], opts["seed"], opts["eps"], opts["variant"])
    width = max(len(k) for k in errors)
    ok = True
    for name, err in errors.items():
        flag = "ok" if err < opts["tol"] else "FAIL"
        ok &= err < opts["tol"]
        print(f"{name:<{width}}  max_rel_err={err:.3e}  {flag}")
    return 0 if ok else 2


def collect_reports(dirs) -> tuple[list[str], dict]:
    """Group experiment directories by method label, preserving first-seen order."""
    groups: dict[str, list[dict]] = {}
    for d in dirs:
        d = Path(d)
        metrics_file, config_file = d / "metrics.json", d / "config.json"
        for f in (metrics_file, config_file):
            if not f.exists():
                raise FileNotFoundError(f"not a completed experiment directory (missing {f})")
        metrics = json.loads(metrics_file.read_text())
        method = json.loads(config_file.read_text()).get("method", "ours")
        groups.setdefault(METHOD_LABELS.get(method, method), []).append(metrics)
    return list(groups), groups


def report_table(dirs, digits: int = 3) -> tuple[str, str]:
    """Markdown and CSV ``mean(std)`` tables over experiment directories."""
    order, groups = collect_reports(dirs)
    md = ["| Method | AUROC | AUPRC | Runs |", "|---|---|---|---|"]
    csv_lines = ["method,auroc_mean,auroc_std,auprc_mean,auprc_std,runs"]
    for label in order:
        runs = groups[label]
        roc = np.array([m["auroc"] for m in runs])
        prc = np.array([m["auprc"] for m in runs])
        md.append(
            f"| {label} | {format_mean_std(roc, digits, digits)} | {format_mean_std(prc, digits, digits)} | {len(runs)} |"
        )
        csv_lines.append(
            f"{label},{roc.mean():.17g},{population_std(roc):.17g},{prc.mean():.17g},{population_std(prc):.17g},{len(runs)}"
        )
    return "\n".join(md) + "\n", "\n".join(csv_lines) + "\n"


def cmd_report(opts: dict, paths: list[str]) -> int:
    md, csv_text = report_table(paths)
    if opts["out"]:
        out = Path(opts["out"])
        atomic_write_text(out / "report.md", md)
        atomic_write_text(out / "report.csv", csv_text)
    print(md, end="")
    return 0


def run(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        opts = resolve(ns.command, ns)
        handlers = {
            "generate": cmd_generate,
            "train": cmd_train,
            "evaluate": cmd_evaluate,
            "impute": cmd_impute,
            "gradcheck": cmd_gradcheck,
        }
        if ns.command in handlers:
            return handlers[ns.command](opts)
        if ns.command == "describe":
            return cmd_describe(opts, ns.paths)
        return cmd_report(opts, ns.paths)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
