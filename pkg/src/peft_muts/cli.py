"""Command-line entry point: ``peft-muts <command> [options]``.

Every command accepts ``--config FILE.json`` whose keys are the long option
names (dashes or underscores); explicit flags win over file values and
unknown keys are rejected.  Each run writes ``resolved_config.json`` next to
its outputs.  Exit codes: 0 ok, 2 usage, 3 data, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .autodiff import Rng, default_seed
from .backbone import BackboneSpec, build_backbone, load_weights, save_weights
from .errors import CheckpointError, ContractError, DataError, DimensionError, NumericError, SpecError
from .peft import ModelConfig, build_model, count_params
from .training import TrainConfig, evaluate, finetune
from .training.finetune import choose_probe, read_trace_csv, write_trace_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


# -- helpers ------------------------------------------------------------------

def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _outdir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _resolve_spec(value):
    if value in (None, "default"):
        return BackboneSpec.default()
    if value == "small":
        return BackboneSpec.small()
    if isinstance(value, dict):
        return BackboneSpec.from_dict(value)
    raise UsageError(f"unknown backbone spec {value!r} (use default, small, or a JSON object in --config)")


def _spec_sidecar(ckpt):
    return Path(str(ckpt) + ".json")


def _load_backbone(arg, spec_value):
    """``arg`` is a checkpoint path or ``random``; the spec comes from the sidecar when present."""
    if arg in (None, "random"):
        return None, _resolve_spec(spec_value)
    path = Path(arg)
    if not path.exists():
        raise DataError(f"backbone checkpoint {path} not found")
    side = _spec_sidecar(path)
    spec = BackboneSpec.from_dict(json.loads(side.read_text())["backbone"]) if side.exists() else _resolve_spec(spec_value)
    return load_weights(path, spec, frozen=True), spec


def _load_data(path):
    from .dataio import load_prepared

    if path is None:
        raise UsageError("--data is required")
    if not Path(path).exists():
        raise DataError(f"prepared dataset {path} not found")
    return load_prepared(path)


def _train_config(a):
    return TrainConfig(lr=a.lr, weight_decay=a.weight_decay, lr_decay=a.lr_decay, epochs=a.epochs,
                       batch_size=a.batch_size, seed=a.seed, dtype=a.dtype)


def _probe(prep, seed):
    pool = prep.test if len(prep.test) else prep.train
    return pool.x[choose_probe(len(pool), seed)]


# -- commands -----------------------------------------------------------------

def cmd_prepare(a):
    from .dataio import (
        FewShotConfig, RunToFailureUnit, detect_onset_rms3sigma, gen_synthetic, parse_cmapss, parse_xjtu, prepare,
        save_prepared,
    )

    fs = FewShotConfig(a.p1, a.p2, a.p3, a.seed, keep_health=not a.strict_health)
    sensors = a.sensors.split(",") if isinstance(a.sensors, str) else a.sensors
    sensors = [int(s) for s in sensors] if sensors else None
    test_units = None
    knee = a.knee
    if a.dataset == "synthetic":
        units = gen_synthetic(a.units, a.n_vars, (a.min_length, a.max_length), noise=a.noise, seed=a.seed)
        knee = None
        source = "synthetic"
    elif a.input is None:
        raise UsageError(f"--input is required for --dataset {a.dataset}")
    elif a.dataset == "cmapss":
        kw = {"sensors": sensors} if sensors else {}
        units = parse_cmapss(a.input, **kw)
        if a.test_input:
            test_units = parse_cmapss(a.test_input, **kw)
        source = str(a.input)
    else:
        root = Path(a.input)
        if not root.exists():
            raise DataError(f"{root} does not exist")
        dirs = sorted(d for d in root.iterdir() if d.is_dir()) or [root]
        units = []
        for i, d in enumerate(dirs):
            u = parse_xjtu(d, unit_id=i)
            onset = detect_onset_rms3sigma(u, window=a.rms_window)
            units.append(RunToFailureUnit(u.unit_id, u.series, min(onset, u.length), d.name))
        knee = None
        source = str(root)
    prep = prepare(units, a.window, a.step, fs, knee=knee, test_units=test_units, source=source)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_prepared(out, prep)
    return {"out": str(out), "train": len(prep.train), "test": len(prep.test)}


def cmd_pretrain_proxy(a):
    from .dataio import load_prepared, synthetic_pool
    from .training.pretrain import PretrainConfig, pretrain_proxy

    spec = _resolve_spec(a.backbone_spec)
    if a.data:
        prep = load_prepared(a.data)
        pool = prep.train.x.reshape(-1, prep.train.x.shape[-1])
    else:
        pool = synthetic_pool(a.pool_size, a.window, seed=a.seed)
    cfg = PretrainConfig(epochs=a.epochs, batch_size=a.batch_size, lr=a.lr, mask_ratio=a.mask_ratio, seed=a.seed)
    bb = build_backbone(spec, Rng(a.seed).child("backbone"))
    bb, losses = pretrain_proxy(bb, pool, cfg)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_weights(bb, out)
    _dump_json(_spec_sidecar(out), {"backbone": spec.to_dict(), "losses": losses, "pretrain": cfg.to_dict()})
    return {"out": str(out), "loss_first": losses[0], "loss_last": losses[-1]}


def _variant_config(a, n_vars, window, spec, meta, zero):
    if a.arm == "peft":
        return ModelConfig(n_vars, window, "peft", meta, zero, a.ranks, spec.to_dict())
    return ModelConfig(n_vars, window, a.arm, False, zero, None, spec.to_dict())


def _run_finetune(a, prep, pretrained, spec, pretrain, meta, zero, out):
    _, n_vars, window = prep.train.x.shape
    mcfg = _variant_config(a, n_vars, window, spec, meta, zero)
    bb = pretrained.copy() if (pretrain and pretrained is not None) else None
    model = build_model(mcfg, bb, Rng(a.seed).child("model"))
    model, trace = finetune(model, prep.train.x, prep.train.y, _train_config(a), probe_x=_probe(prep, a.seed),
                            arm=_arm_label(a.arm, pretrain and pretrained is not None, meta, zero))
    model.save(out / "model.pmts")
    _dump_json(out / "model.json", mcfg.to_dict())
    trace.write_csv(out / "trace.csv")
    report = {"params": count_params(model), "final_loss": trace.loss_mean[-1] if trace.loss_mean else None}
    if len(prep.test):
        report["test"] = evaluate(model, prep.test.x, prep.test.y).to_dict()
    _dump_json(out / "metrics.json", report)
    return report


def _arm_label(arm, pretrain, meta, zero):
    if arm != "peft":
        return arm
    return "peft" + ("" if pretrain else "-nopretrain") + ("" if meta else "-nometa") + ("" if zero else "-kaiming")


def cmd_finetune(a):
    prep = _load_data(a.data)
    if a.test:
        prep.test = _load_data(a.test).test
    pretrained, spec = _load_backbone(a.backbone, a.backbone_spec)
    out = _outdir(a.out)
    return _run_finetune(a, prep, pretrained, spec, not a.no_pretrain, not a.no_meta, not a.no_zero_init, out)


def cmd_evaluate(a):
    from .peft import load_model

    prep = _load_data(a.data)
    mdir = Path(a.model)
    if not (mdir / "model.json").exists():
        raise DataError(f"{mdir} has no model.json (run finetune first)")
    mcfg = ModelConfig.from_dict(json.loads((mdir / "model.json").read_text()))
    model = load_model(mdir / "model.pmts", mcfg)
    ws = prep.test if a.split == "test" else prep.train
    report = evaluate(model, ws.x, ws.y).to_dict()
    if a.out:
        _outdir(a.out)
        _dump_json(Path(a.out) / "metrics.json", report)
    return report


def cmd_ablate(a):
    prep = _load_data(a.data)
    pretrained, spec = _load_backbone(a.backbone, a.backbone_spec)
    out = _outdir(a.out)
    rows = []
    for pretrain in (True, False):
        for meta in (True, False):
            for zero in (True, False):
                name = _arm_label("peft", pretrain, meta, zero)
                rep = _run_finetune(a, prep, pretrained, spec, pretrain, meta, zero, _outdir(out / name))
                row = {"variant": name, "pretrain": pretrain, "meta_variable": meta, "zero_init": zero}
                row.update({k: rep.get("test", {}).get(k) for k in ("mae", "rmse", "mape", "smape")})
                rows.append(row)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return {"variants": len(rows)}


def cmd_stability(a):
    from .training.stability import stability_experiment

    prep = _load_data(a.data)
    pretrained, spec = _load_backbone(a.backbone, a.backbone_spec)
    if pretrained is None:
        pretrained = build_backbone(spec, Rng(a.seed).child("backbone")).freeze()
    seeds = [a.seed + i for i in range(a.seeds)]
    traces, summary = stability_experiment(prep.train.x, prep.train.y, _probe(prep, a.seed), pretrained, seeds,
                                           _train_config(a), probe_epoch=a.probe_epoch, ranks=a.ranks)
    out = _outdir(a.out)
    write_trace_csv(out / "traces.csv", [t for runs in traces.values() for t in runs])
    _dump_json(out / "summary.json", summary)
    return summary["comparison"]


def cmd_variance_check(a):
    from .training.variance import VarianceLawParams, batch_exponent_note, variance_law_mc, variance_ratio, write_csv

    out = _outdir(a.out)
    rows = []
    for sz in a.sigma_z:
        for sp in a.sigma_phi:
            p = VarianceLawParams(sigma_z=sz, sigma_y=a.sigma_y, sigma_phi=sp, d=a.d, batch=a.batch_size,
                                  eta=a.eta, trials=a.trials, seed=a.seed)
            rows.append(variance_law_mc(p))
    write_csv(out / "variance.csv", rows)
    zero = next((r for r in rows if r["sigma_phi"] == 0.0), None)
    ratios = [variance_ratio(VarianceLawParams(sigma_z=sz, sigma_y=a.sigma_y, sigma_phi=sp, d=a.d,
                                               batch=a.batch_size, eta=a.eta, trials=a.trials, seed=a.seed))
              for sz in a.sigma_z for sp in a.sigma_phi if sp > 0]
    report = {
        "rows": rows,
        "ratios": [{k: r[k] for k in ("measured", "predicted", "exact")} | {"sigma_z": r["random"]["sigma_z"],
                   "sigma_phi": r["random"]["sigma_phi"]} for r in ratios],
        "batch_exponent": batch_exponent_note(zero) if zero else None,
    }
    _dump_json(out / "variance.json", report)
    return {"batch_exponent": report["batch_exponent"]}


def _load_report_input(path):
    path = Path(path)
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        metrics = data.get("test", data)
        if not isinstance(metrics, dict) or "mae" not in metrics:
            raise DataError(f"{path}: not a metrics report")
        return "metrics", metrics
    if path.suffix == ".csv":
        return "trace", read_trace_csv(path)
    raise DataError(f"{path}: expected a metrics .json or trace .csv")


def cmd_report(a):
    loaded = [_load_report_input(p) for p in a.inputs]
    kinds = {k for k, _ in loaded}
    if len(kinds) != 1:
        raise DataError("report inputs mix metrics files and trace files")
    out = _outdir(a.out)
    if kinds == {"metrics"}:
        keys = ("mae", "rmse", "mape", "smape")
        vals = np.array([[m[k] for k in keys] for _, m in loaded], dtype=np.float64)
        summary = {k: {"mean": float(vals[:, i].mean()), "std": float(vals[:, i].std()), "n": len(vals)}
                   for i, k in enumerate(keys)}
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "mean", "std", "n"])
            for k in keys:
                w.writerow([k, repr(summary[k]["mean"]), repr(summary[k]["std"]), summary[k]["n"]])
        return summary
    rows = [r for _, rs in loaded for r in rs]
    series = {}
    for r in rows:
        series.setdefault(r["arm"], {}).setdefault(int(r["epoch"]), []).append(r)
    with open(out / "plot_data.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm", "epoch", "loss_mean", "loss_std", "sigma_z_norm_mean", "sigma_z_norm_std", "runs"])
        for arm in sorted(series):
            for ep in sorted(series[arm]):
                loss = np.array([float(r["loss_mean"]) for r in series[arm][ep]])
                sig = np.array([float(r["sigma_z_norm"]) for r in series[arm][ep]])
                w.writerow([arm, ep, repr(float(loss.mean())), repr(float(loss.std())),
                            repr(float(sig.mean())), repr(float(sig.std())), len(loss)])
    return {"arms": sorted(series)}


# -- argument parsing ---------------------------------------------------------

def _ranks(s):
    return tuple(int(v) for v in s.split(",")) if isinstance(s, str) else s


def _floats(s):
    return [float(v) for v in s.split(",")] if isinstance(s, str) else list(s)


def _train_flags(p, epochs=300):
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--lr-decay", type=float, default=0.99)
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")


def _model_flags(p):
    p.add_argument("--data")
    p.add_argument("--backbone", default="random", help="checkpoint path or 'random'")
    p.add_argument("--backbone-spec", default="default", help="default or small (ignored when the checkpoint has a sidecar)")
    p.add_argument("--ranks", type=_ranks, default=None, help="comma-separated per-block ranks")
    p.add_argument("--out", required=False)


def build_parser():
    ap = argparse.ArgumentParser(prog="peft-muts", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file of option values")
        p.add_argument("--seed", type=int, default=None, help="default: $PMTS_SEED or 0")
        p.set_defaults(func=fn)
        return p

    p = add("prepare", cmd_prepare)
    p.add_argument("--dataset", choices=("cmapss", "xjtu", "synthetic"), default="synthetic")
    p.add_argument("--input")
    p.add_argument("--test-input")
    p.add_argument("--out")
    for k in ("--p1", "--p2", "--p3"):
        p.add_argument(k, type=float, default=1.0)
    p.add_argument("--strict-health", action="store_true", help="health samples also face the p3 draw")
    p.add_argument("--window", type=int, default=30)
    p.add_argument("--step", type=int, default=15)
    p.add_argument("--knee", type=float, default=120.0)
    p.add_argument("--sensors")
    p.add_argument("--rms-window", type=int, default=1024)
    p.add_argument("--units", type=int, default=20)
    p.add_argument("--n-vars", type=int, default=3)
    p.add_argument("--min-length", type=int, default=150)
    p.add_argument("--max-length", type=int, default=250)
    p.add_argument("--noise", type=float, default=0.02)

    p = add("pretrain-proxy", cmd_pretrain_proxy)
    p.add_argument("--out")
    p.add_argument("--data", help="prepared dataset whose training channels form the pool")
    p.add_argument("--backbone-spec", default="default")
    p.add_argument("--pool-size", type=int, default=512)
    p.add_argument("--window", type=int, default=32)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--mask-ratio", type=float, default=0.25)

    p = add("finetune", cmd_finetune)
    _model_flags(p)
    _train_flags(p)
    p.add_argument("--arm", choices=("peft", "linear", "full"), default="peft")
    p.add_argument("--test", help="prepared dataset whose test split is evaluated")
    p.add_argument("--no-pretrain", action="store_true")
    p.add_argument("--no-meta", action="store_true")
    p.add_argument("--no-zero-init", action="store_true")

    p = add("evaluate", cmd_evaluate)
    p.add_argument("--model", required=False)
    p.add_argument("--data")
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.add_argument("--out")

    p = add("ablate", cmd_ablate)
    _model_flags(p)
    _train_flags(p)
    p.set_defaults(arm="peft")

    p = add("stability", cmd_stability)
    _model_flags(p)
    _train_flags(p, epochs=50)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--probe-epoch", type=int, default=10)

    p = add("variance-check", cmd_variance_check)
    p.add_argument("--out")
    p.add_argument("--sigma-z", type=_floats, default=[1.0])
    p.add_argument("--sigma-phi", type=_floats, default=[0.0, 0.5, 1.0])
    p.add_argument("--sigma-y", type=float, default=1.0)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--eta", type=float, default=0.01)
    p.add_argument("--trials", type=int, default=100_000)

    p = add("report", cmd_report)
    p.add_argument("inputs", nargs="*")
    p.add_argument("--out")
    return ap


REQUIRED = {
    "prepare": ("out",), "pretrain-proxy": ("out",), "finetune": ("data", "out"), "evaluate": ("model", "data"),
    "ablate": ("data", "out"), "stability": ("data", "out"), "variance-check": ("out",), "report": ("inputs", "out"),
}


def _subparser(ap, name):
    for act in ap._subparsers._group_actions:
        return act.choices[name]


def parse_args(argv):
    """Parse ``argv``, layering flags over ``--config`` values."""
    ap = build_parser()
    a = ap.parse_args(argv)
    if a.config:
        path = Path(a.config)
        try:
            cfg = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError(f"config {path} must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        sp = _subparser(ap, a.command)
        known = {act.dest for act in sp._actions} - {"help", "config", "func"}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise UsageError(f"unknown config keys for {a.command}: {', '.join(unknown)}")
        sp.set_defaults(**cfg)
        a = ap.parse_args(argv)
        for k in ("ranks",):
            if k in cfg and getattr(a, k) is not None:
                setattr(a, k, _ranks(getattr(a, k)))
        for k in ("sigma_z", "sigma_phi"):
            if hasattr(a, k):
                setattr(a, k, _floats(getattr(a, k)))
    if a.seed is None:
        a.seed = default_seed(0)
    missing = [k for k in REQUIRED[a.command] if not getattr(a, k, None)]
    if missing:
        raise UsageError(f"{a.command}: missing required option(s) {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return a


def _snapshot(a):
    out = {k: v for k, v in vars(a).items() if k not in ("func",)}
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in out.items()}


def _snapshot_dir(a):
    out = Path(a.out) if getattr(a, "out", None) else None
    if out is None:
        return None
    if a.command in ("prepare", "pretrain-proxy"):
        return out.parent
    return out


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        a = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"peft-muts: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            result = a.func(a)
        snap = _snapshot_dir(a)
        if snap is not None:
            snap.mkdir(parents=True, exist_ok=True)
            name = "resolved_config.json" if a.command not in ("prepare", "pretrain-proxy") else \
                f"{Path(a.out).name}.resolved_config.json"
            _dump_json(snap / name, _snapshot(a))
    except UsageError as exc:
        print(f"peft-muts: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SpecError as exc:
        print(f"peft-muts: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"peft-muts: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, ContractError, DimensionError, OSError) as exc:
        print(f"peft-muts: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps(result, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
