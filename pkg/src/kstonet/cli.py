"""Command-line interface: simulate | train | predict | interval | experiment."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import traceback
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import config as cfgmod
from .data import (GENERATORS, Dataset, Standardization, fit_standardization, load_csv, save_csv)
from .errors import ConfigError, InputError
from .experiments import EXPERIMENTS, run_experiment
from .model import load_models, save_models
from .trainer import iro_train, predict, predict_mean, write_trace_csv
from .uq import interval, write_interval_csv


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _kv(pairs: Optional[Sequence[str]]) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = _parse_value(v)
    return out


# ----------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    if args.generator not in GENERATORS:
        raise ConfigError(f"unknown generator {args.generator!r}; choose from {sorted(GENERATORS)}")
    params = _kv(args.param)
    if args.n is not None:
        params["n"] = args.n
    if args.p is not None:
        params["p"] = args.p
    ds = GENERATORS[args.generator](seed=args.seed, **params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(out, ds)
    return 0


def _load_data(eff: dict) -> tuple[Dataset, Optional[Dataset]]:
    d = eff["data"]
    task = d["task"] or eff["net"]["task"]
    if d["generator"] is not None:
        name = d["generator"]
        if name not in GENERATORS:
            raise ConfigError(f"unknown generator {name!r}")
        params = dict(d["params"])
        seed = params.pop("seed", eff["seed"])
        n = int(params.pop("n", 500))
        n_test = int(d["n_test"])
        if name == "knn":
            ds = GENERATORS[name](n=n, n_test=n_test, seed=seed, **params)
        else:
            ds = GENERATORS[name](n=n + n_test, seed=seed, **params)
        train = ds.subset(slice(0, n))
        test = ds.subset(slice(n, None)) if n_test else None
    elif d["train_csv"] is not None:
        train = load_csv(d["train_csv"], d["label"], d["features"], task)
        test = load_csv(d["test_csv"], d["label"], train.feature_names, task) if d["test_csv"] else None
    else:
        raise ConfigError("data: set a generator or train_csv")
    return train, test


def _standardizer(meta: dict) -> Optional[Standardization]:
    rec = meta.get("standardization")
    if rec is None:
        return None
    return Standardization(np.asarray(rec["mean"]), np.asarray(rec["scale"]))


def cmd_train(args) -> int:
    doc = cfgmod.read_document(args.config) if args.config else {}
    eff = cfgmod.resolve(doc, {"seed": args.seed, "threads": args.threads, "out": args.out})
    net = cfgmod.net_config(eff)
    tcfg = cfgmod.train_config(eff)
    out = Path(eff["out"])
    cfgmod.write_effective(eff, out)
    train, test = _load_data(eff)
    rec = None
    if eff["data"]["standardize"]:
        rec = fit_standardization(train.X)
        train = Dataset(rec.apply(train.X), train.y, train.feature_names, None, train.task, train.meta)
        if test is not None:
            test = Dataset(rec.apply(test.X), test.y, test.feature_names, None, test.task, test.meta)
    models, traces = iro_train(train, net, tcfg, test)
    keep = eff["train"]["save_snapshots"]
    keep = max(tcfg.average_last_k, 1) if keep is None else int(keep)
    snaps = models if keep == 0 else models[-keep:]
    meta = {"feature_names": list(train.feature_names)}
    if rec is not None:
        meta["standardization"] = {"mean": rec.mean.tolist(), "scale": rec.scale.tolist()}
    snaps = [type(m)(m.svr_layer, m.dense_layers, m.config, {**m.meta, **meta}) for m in snaps]
    save_models(out / "model.npz", snaps)
    write_trace_csv(out / "trace.csv", traces)
    summary = {"epochs": len(traces), "snapshots_saved": len(snaps),
               "final_train_metric": traces[-1].train_metric if traces else None,
               "final_test_metric": traces[-1].test_metric if traces else None}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    return 0


def _read_inputs(path, models, label: Optional[str]) -> tuple[np.ndarray, Optional[np.ndarray]]:
    names = models[-1].meta.get("feature_names")
    with open(path, newline="", encoding="utf-8") as fh:
        header = [h.strip() for h in next(csv.reader(fh))]
    has_label = label is not None and label in header
    if has_label:
        ds = load_csv(path, label, names)
        X, y = ds.X, ds.y
    else:
        cols = names if names else header
        missing = [c for c in cols if c not in header]
        if missing:
            raise InputError(f"{path}: columns {missing} missing")
        raw = np.genfromtxt(path, delimiter=",", names=True, dtype=np.float64, encoding="utf-8")
        X = np.column_stack([np.atleast_1d(raw[c]) for c in cols])
        y = None
    rec = _standardizer(models[-1].meta)
    if rec is not None:
        X = rec.apply(X)
    return X, y


def cmd_predict(args) -> int:
    models = load_models(args.model)
    X, _ = _read_inputs(args.input, models, args.label)
    k = min(args.k, len(models))
    pred = predict(models, X, k)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("point_id", "prediction"))
        for i, v in enumerate(pred):
            w.writerow((i, repr(float(v))))
    return 0


def cmd_interval(args) -> int:
    models = load_models(args.model)
    Xtr, ytr = _read_inputs(args.train, models, args.label)
    if ytr is None:
        raise InputError(f"{args.train}: label column {args.label!r} required")
    Xte, _ = _read_inputs(args.test, models, args.label)
    k = min(args.k, len(models))
    iv = interval(models, Xtr, ytr, Xte, args.level, k)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_interval_csv(out, iv)
    return 0


def cmd_experiment(args) -> int:
    doc = cfgmod.read_document(args.config) if args.config else {}
    summary = run_experiment(args.name, args.out, doc, seed=args.seed, threads=args.threads)
    print(json.dumps(summary, sort_keys=True))
    return 0


# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kstonet", description="Kernel-expanded stochastic networks")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a simulated dataset to CSV")
    s.add_argument("generator", choices=sorted(GENERATORS))
    s.add_argument("--n", type=int)
    s.add_argument("--p", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--param", action="append", metavar="KEY=VALUE")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train a model from a configuration file")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--threads", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="predict with saved snapshots")
    pr.add_argument("--model", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--label", default="y")
    pr.add_argument("-k", type=int, default=1, help="average the last k snapshots")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    iv = sub.add_parser("interval", help="prediction intervals for test inputs")
    iv.add_argument("--model", required=True)
    iv.add_argument("--train", required=True)
    iv.add_argument("--test", required=True)
    iv.add_argument("--label", default="y")
    iv.add_argument("--level", type=float, default=0.95)
    iv.add_argument("-k", type=int, default=1)
    iv.add_argument("--out", required=True)
    iv.set_defaults(func=cmd_interval)

    e = sub.add_parser("experiment", help="run a named experiment")
    e.add_argument("name", choices=sorted(EXPERIMENTS))
    e.add_argument("--config")
    e.add_argument("--seed", type=int)
    e.add_argument("--threads", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_experiment)
    return p


def _origin_module(exc: BaseException) -> str:
    mod = "cli"
    for frame in traceback.extract_tb(exc.__traceback__):
        parts = Path(frame.filename).parts
        if "kstonet" in parts:
            mod = Path(frame.filename).stem
    return mod


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # report every failure as one JSON line
        record = {"stage": args.command, "module": _origin_module(exc),
                  "message": f"{type(exc).__name__}: {exc}".replace("\n", " ")}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
