"""Command-line interface: ``ddl train | eval | sweep | synth``.

Settings come from flags, then from an optional flat ``key = value`` config
file (``--config``), then from built-in defaults; flags win.  Exit codes:
0 success, 2 configuration error, 3 data or file error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .classifiers import ConvergenceError
from .data_io import (
    DataError,
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    load_delimited,
    load_idx,
    save_delimited,
    split,
)
from .inference import MemoryBudgetError, PredictOptions, evaluate
from .losses import KINDS
from .model_io import ModelFormatError, load_model, save_model
from .trainer import TrainConfig, TrainingError, train, train_baseline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

TRACE_COLUMNS = ["iter", "objective", "rep_cost", "cls_cost", "log_prior_terms"]
SWEEP_COLUMNS = ["K", "T", "loss", "method", "error_rate", "runtime_ms"]
SWEEP_BEST_COLUMNS = ["loss", "method", "K", "T", "error_rate"]
CSV_SCHEMA_VERSION = 1

MODEL_FILE = "model.ddl"
MANIFEST_FILE = "manifest.json"
TRACE_FILE = "trace.csv"
METRICS_FILE = "metrics.csv"

log = logging.getLogger("ddl")


class ConfigError(ValueError):
    pass


# name -> (type, default); None means "required or derived"
TRAIN_KEYS = {
    "data": (str, None),
    "labels": (str, None),
    "format": (str, None),
    "label_column": (int, 0),
    "delimiter": (str, ","),
    "k": (int, None),
    "t": (int, 3),
    "loss": (str, "logistic"),
    "q_max": (int, 20),
    "p_max": (int, 100),
    "stop_rel_change": (float, 1e-4),
    "ridge": (float, None),
    "init": (str, "gaussian"),
    "seed": (int, 0),
    "baseline": (bool, False),
    "semi_supervised_mask": (str, None),
    "center": (bool, False),
    "n_jobs": (int, 1),
    "out_dir": (str, "."),
}
EVAL_KEYS = {
    "model": (str, None),
    "data": (str, None),
    "labels": (str, None),
    "format": (str, None),
    "label_column": (int, 0),
    "delimiter": (str, ","),
    "mode": (str, "fast"),
    "robust": (bool, False),
    "e_budget": (int, 0),
    "t_test": (int, None),
    "test_sigma": (float, 1.0),
    "center": (bool, False),
    "dataset_name": (str, None),
    "n_jobs": (int, 1),
    "out_dir": (str, "."),
}
SWEEP_KEYS = {
    "data": (str, None),
    "labels": (str, None),
    "format": (str, None),
    "label_column": (int, 0),
    "delimiter": (str, ","),
    "test_data": (str, None),
    "test_labels": (str, None),
    "test_fraction": (float, 0.3),
    "k_grid": (str, None),
    "t_grid": (str, None),
    "losses": (str, "square,exp,logistic,hinge"),
    "q_max": (int, 20),
    "p_max": (int, 100),
    "init": (str, "gaussian"),
    "seed": (int, 0),
    "mode": (str, "fast"),
    "center": (bool, False),
    "n_jobs": (int, 1),
    "out_dir": (str, "."),
}
SYNTH_KEYS = {
    "d": (int, 30),
    "k_true": (int, 40),
    "classes": (int, 3),
    "n": (int, 600),
    "t_true": (int, 3),
    "noise": (float, 0.05),
    "label_noise": (float, 0.0),
    "margin": (float, 0.2),
    "seed": (int, 0),
    "out_dir": (str, "."),
}


def _parse_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def read_config_file(path) -> dict:
    """Flat ``key = value`` pairs; ``#`` starts a comment; keys may use ``-`` or ``_``."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_").lower()] = value
    return out


def resolve(args, keys: dict) -> dict:
    """Merge flags, config file and defaults into one typed settings dict."""
    from_file = read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(from_file) - set(keys))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    out = {}
    for key, (typ, default) in keys.items():
        flag = getattr(args, key, None)
        if typ is bool and flag is False:
            flag = None  # store_true flags only override when given
        value = flag if flag is not None else from_file.get(key, default)
        if value is not None:
            try:
                value = _parse_bool(value) if typ is bool else typ(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{key}: cannot read {value!r} as {typ.__name__}") from None
        out[key] = value
    return out


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _format(cfg):
    fmt = cfg.get("format")
    if fmt is None:
        fmt = "idx" if cfg.get("labels") else "csv"
    if fmt not in ("idx", "csv"):
        raise ConfigError(f"--format must be idx or csv, got {fmt!r}")
    return fmt


def load_dataset(cfg, data_key="data", labels_key="labels") -> Dataset:
    path = cfg.get(data_key)
    if not path:
        raise ConfigError(f"--{data_key.replace('_', '-')} is required")
    if _format(cfg) == "idx":
        if not cfg.get(labels_key):
            raise ConfigError("IDX data needs --labels")
        data = load_idx(path, cfg[labels_key])
    else:
        data = load_delimited(path, cfg["delimiter"], cfg["label_column"])
    return data.centered() if cfg.get("center") else data


def _input_files(cfg, *keys):
    return [cfg[k] for k in keys if cfg.get(k)]


def _float(v) -> str:
    return repr(float(v))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _trace_rows(model):
    parts = model.objective_parts
    return [[q, _float(model.objective_trace[q]), _float(parts[q, 0]), _float(parts[q, 2]),
             _float(parts[q, 1] + parts[q, 3])] for q in range(len(model.objective_trace))]


def _read_mask(path, N):
    try:
        with open(path, encoding="utf-8") as fh:
            vals = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read mask file: {exc}") from None
    if len(vals) != N:
        raise DataError(f"mask file has {len(vals)} entries for {N} samples")
    try:
        return np.array([_parse_bool(v) for v in vals])
    except ConfigError as exc:
        raise DataError(f"mask file: {exc}") from None


def _train_config(cfg, K) -> TrainConfig:
    if cfg["loss"] not in KINDS:
        raise ConfigError(f"--loss must be one of {', '.join(KINDS)}, got {cfg['loss']!r}")
    try:
        return TrainConfig(K=K, T=cfg["t"], loss=cfg["loss"], q_max=cfg["q_max"],
                           p_max=cfg["p_max"], stop_rel_change=cfg.get("stop_rel_change", 1e-4),
                           ridge=cfg.get("ridge"), init=cfg["init"], seed=cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def run_train(cfg: dict) -> dict:
    """Train and write model, trace and manifest; returns the manifest."""
    if cfg["k"] is None:
        raise ConfigError("--k is required")
    tcfg = _train_config(cfg, cfg["k"])
    data = load_dataset(cfg)
    mask = None
    if cfg.get("semi_supervised_mask"):
        if cfg["baseline"]:
            raise ConfigError("--semi-supervised-mask cannot be combined with --baseline")
        mask = _read_mask(cfg["semi_supervised_mask"], data.n_samples)
    L = data.label_matrix()
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    if cfg["baseline"]:
        model = train_baseline(data.samples, L, tcfg, n_jobs=cfg["n_jobs"])
    else:
        model = train(data.samples, L, tcfg, semi_supervised_mask=mask, n_jobs=cfg["n_jobs"])
    seconds = time.perf_counter() - t0
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    model_path = os.path.join(out, MODEL_FILE)
    trace_path = os.path.join(out, TRACE_FILE)
    save_model(model, model_path)
    write_csv(trace_path, TRACE_COLUMNS, _trace_rows(model))
    inputs = _input_files(cfg, "data", "labels", "semi_supervised_mask")
    manifest = {
        "tool": "ddl",
        "tool_version": __version__,
        "command": "train",
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "config": {k: v for k, v in cfg.items() if k != "out_dir"},
        "train_config": tcfg.to_dict(),
        "seed": cfg["seed"],
        "inputs": {os.path.abspath(p): _sha256(p) for p in inputs},
        "outputs": {os.path.abspath(p): _sha256(p) for p in (model_path, trace_path)},
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "train_seconds": seconds,
    }
    with open(os.path.join(out, MANIFEST_FILE), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {model_path} (best iteration {model.best_iteration}, "
          f"objective {model.objective_trace[model.best_iteration]:.6g})")
    return manifest


def config_from_manifest(path, out_dir=None) -> dict:
    """Settings of a recorded training run, after checking the input digests."""
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    cfg = dict(manifest["config"])
    for p, digest in manifest["inputs"].items():
        if not os.path.exists(p):
            raise DataError(f"manifest input {p} is missing")
        if _sha256(p) != digest:
            raise DataError(f"manifest input {p} changed since the recorded run")
    cfg["out_dir"] = out_dir or os.path.dirname(os.path.abspath(path))
    return cfg


def cmd_train(args) -> int:
    if args.manifest:
        cfg = config_from_manifest(args.manifest, args.out_dir)
    else:
        cfg = resolve(args, TRAIN_KEYS)
        for key in ("data", "labels", "semi_supervised_mask"):
            if cfg.get(key):
                cfg[key] = os.path.abspath(cfg[key])
    run_train(cfg)
    return EXIT_OK


def _predict_options(cfg) -> PredictOptions:
    try:
        return PredictOptions(cfg["mode"], cfg.get("robust", False), cfg.get("t_test"),
                              cfg.get("e_budget", 0), sigma=cfg.get("test_sigma", 1.0))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_eval(args) -> int:
    cfg = resolve(args, EVAL_KEYS)
    if not cfg["model"]:
        raise ConfigError("--model is required")
    opts = _predict_options(cfg)
    model = load_model(cfg["model"])
    data = load_dataset(cfg)
    if data.n_features != model.n_features:
        raise DataError(f"dataset has {data.n_features} features, model expects {model.n_features}")
    if data.labels.max() >= model.n_classes:
        raise DataError(f"dataset has labels beyond the model's {model.n_classes} classes")
    metrics = evaluate(model, data.samples, data.labels, opts, n_jobs=cfg["n_jobs"])
    name = cfg["dataset_name"] or os.path.basename(cfg["data"])
    os.makedirs(cfg["out_dir"], exist_ok=True)
    path = os.path.join(cfg["out_dir"], METRICS_FILE)
    write_csv(path, metrics.csv_header(), [metrics.csv_row(name, opts, model)])
    print(f"error rate {metrics.error_rate:.4f} on {data.n_samples} samples -> {path}")
    return EXIT_OK


def _int_grid(text, name):
    if not text:
        raise ConfigError(f"{name} is required for a sweep")
    try:
        vals = [int(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{name} must be a comma-separated list of integers") from None
    if not vals:
        raise ConfigError(f"{name} is empty")
    return vals


def run_sweep(cfg) -> tuple[list, list]:
    """Train and test DDL and baseline over the (K, T, loss) grid."""
    Ks = _int_grid(cfg["k_grid"], "k_grid")
    Ts = _int_grid(cfg["t_grid"], "t_grid")
    losses = [s.strip() for s in cfg["losses"].split(",") if s.strip()]
    data = load_dataset(cfg)
    if cfg.get("test_data"):
        test = load_dataset(cfg, "test_data", "test_labels")
        train_set = data
    else:
        train_set, test = split(data, cfg["test_fraction"], cfg["seed"], stratified=True)
    opts = _predict_options(cfg)
    rows = []
    L = train_set.label_matrix()
    for loss in losses:
        for K in Ks:
            for T in Ts:
                tcfg = _train_config(dict(cfg, t=T, loss=loss), K)
                for method in ("baseline", "ddl"):
                    t0 = time.perf_counter()
                    if method == "ddl":
                        model = train(train_set.samples, L, tcfg, n_jobs=cfg["n_jobs"])
                    else:
                        model = train_baseline(train_set.samples, L, tcfg, n_jobs=cfg["n_jobs"])
                    err = evaluate(model, test.samples, test.labels, opts).error_rate
                    ms = 1e3 * (time.perf_counter() - t0)
                    rows.append([K, T, tcfg.loss.name, method, _float(err), f"{ms:.3f}"])
                    log.info("K=%d T=%d %s %s: error %.4f", K, T, loss, method, err)
    best = []
    for loss in dict.fromkeys(r[2] for r in rows):
        for method in ("baseline", "ddl"):
            cand = [r for r in rows if r[2] == loss and r[3] == method]
            r = min(cand, key=lambda r: (float(r[4]), r[0], r[1]))
            best.append([loss, method, r[0], r[1], r[4]])
    return rows, best


def cmd_sweep(args) -> int:
    cfg = resolve(args, SWEEP_KEYS)
    rows, best = run_sweep(cfg)
    os.makedirs(cfg["out_dir"], exist_ok=True)
    write_csv(os.path.join(cfg["out_dir"], "sweep.csv"), SWEEP_COLUMNS, rows)
    write_csv(os.path.join(cfg["out_dir"], "sweep_best.csv"), SWEEP_BEST_COLUMNS, best)
    for loss, method, K, T, err in best:
        print(f"{loss:>8} {method:>8}: minimum error {float(err):.4f} at K={K}, T={T}")
    return EXIT_OK


def _write_matrix(path, M):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(M):
            w.writerow([format(v, ".17g") for v in row])


def run_synth(cfg) -> dict:
    try:
        spec = SyntheticSpec(d=cfg["d"], K_true=cfg["k_true"], C=cfg["classes"], N=cfg["n"],
                             T_true=cfg["t_true"], noise_std=cfg["noise"],
                             label_noise_rate=cfg["label_noise"], seed=cfg["seed"],
                             margin=cfg["margin"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    data, truth = generate_synthetic(spec)
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    paths = {
        "samples": os.path.join(out, "samples.csv"),
        "dictionary": os.path.join(out, "truth_dictionary.csv"),
        "codes": os.path.join(out, "truth_codes.csv"),
        "weights": os.path.join(out, "truth_weights.csv"),
        "clean_labels": os.path.join(out, "truth_labels.csv"),
        "spec": os.path.join(out, "synth_spec.json"),
    }
    save_delimited(data, paths["samples"])
    _write_matrix(paths["dictionary"], truth.dictionary)
    _write_matrix(paths["codes"], truth.codes)
    _write_matrix(paths["weights"], truth.classifiers.weights)
    with open(paths["clean_labels"], "w", encoding="utf-8") as fh:
        fh.write("clean_label,flipped\n")
        for c, f in zip(truth.clean_labels, truth.flipped):
            fh.write(f"{int(c)},{int(f)}\n")
    with open(paths["spec"], "w", encoding="utf-8") as fh:
        json.dump({"spec": vars(spec), "tool_version": __version__,
                   "flipped": int(truth.flipped.sum())}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {data.n_samples} samples ({int(truth.flipped.sum())} flipped labels) to {out}")
    return paths


def cmd_synth(args) -> int:
    run_synth(resolve(args, SYNTH_KEYS))
    return EXIT_OK


def _common(p, keys):
    p.add_argument("--config", help="flat key = value settings file; flags override it")
    p.add_argument("--out-dir", dest="out_dir")
    if "n_jobs" in keys:
        p.add_argument("--n-jobs", dest="n_jobs", type=int, help="worker threads")


def _data_flags(p):
    p.add_argument("--data", help="samples: IDX image file or delimited table")
    p.add_argument("--labels", help="IDX label file")
    p.add_argument("--format", choices=["idx", "csv"])
    p.add_argument("--label-column", dest="label_column", type=int)
    p.add_argument("--delimiter")
    p.add_argument("--center", action="store_true", help="subtract the mean sample")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ddl {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="learn a model")
    _common(p, TRAIN_KEYS)
    _data_flags(p)
    p.add_argument("--k", type=int, help="number of atoms")
    p.add_argument("--t", type=int, help="sparsity budget")
    p.add_argument("--loss", choices=list(KINDS))
    p.add_argument("--q-max", dest="q_max", type=int)
    p.add_argument("--p-max", dest="p_max", type=int)
    p.add_argument("--stop-rel-change", dest="stop_rel_change", type=float)
    p.add_argument("--ridge", type=float)
    p.add_argument("--init", choices=["samples", "gaussian"])
    p.add_argument("--seed", type=int)
    p.add_argument("--baseline", action="store_true", help="decoupled KSVD + classifiers")
    p.add_argument("--semi-supervised-mask", dest="semi_supervised_mask",
                   help="file with one 0/1 per sample, 1 = labeled")
    p.add_argument("--manifest", help="rerun the training recorded in this manifest")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="test a model")
    _common(p, EVAL_KEYS)
    _data_flags(p)
    p.add_argument("--model")
    p.add_argument("--mode", choices=["fast", "full"])
    p.add_argument("--robust", action="store_true", help="code over [D | I]")
    p.add_argument("--e-budget", dest="e_budget", type=int)
    p.add_argument("--t-test", dest="t_test", type=int)
    p.add_argument("--test-sigma", dest="test_sigma", type=float,
                   help="noise level assumed by --mode full")
    p.add_argument("--dataset-name", dest="dataset_name")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="error over a (K, T, loss) grid, DDL and baseline")
    _common(p, SWEEP_KEYS)
    _data_flags(p)
    p.add_argument("--test-data", dest="test_data")
    p.add_argument("--test-labels", dest="test_labels")
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--k-grid", dest="k_grid", help="e.g. 50,100,200")
    p.add_argument("--t-grid", dest="t_grid", help="e.g. 1,2,3")
    p.add_argument("--losses")
    p.add_argument("--q-max", dest="q_max", type=int)
    p.add_argument("--p-max", dest="p_max", type=int)
    p.add_argument("--init", choices=["samples", "gaussian"])
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=["fast", "full"])
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="write a planted synthetic dataset")
    _common(p, SYNTH_KEYS)
    p.add_argument("--d", type=int)
    p.add_argument("--k-true", dest="k_true", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--t-true", dest="t_true", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--label-noise", dest="label_noise", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, MemoryBudgetError) as exc:
        print(f"ddl: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ModelFormatError, OSError) as exc:
        print(f"ddl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"ddl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining validation errors come from inconsistent settings or inputs
        print(f"ddl: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
