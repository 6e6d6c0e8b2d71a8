"""Command-line interface.

Subcommands: train, eval, synth, align, features, split, grad-check, count,
export-viz. Exit codes: 0 success, 1 usage or configuration problems, 2 data
format problems, 3 numeric failures. Every failure prints one line to stderr
of the form ``error[<kind>]: <message>``.

All emitted files are deterministic for fixed inputs: JSON is canonical
(sorted keys), floats print with round-trippable repr, and wall-clock timings
live in their own timing.json so reports stay byte-stable across reruns.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace

import numpy as np

from . import tensor as tz
from .config import ModelConfig, model_config_from_dict
from .data import (
    EpochSet,
    SynthSpec,
    euclidean_align,
    load_epochs,
    make_split,
    rpsd_features,
    save_epochs,
    synth_generate,
    synth_spec_from_dict,
)
from .errors import ConfigError, DataFormatError, LidsnError, NumericError, ShapeError
from .gradcheck import clear_input_draw, grad_check
from .network import ForwardTrace, Model, saliency
from .params import count_params_flops, load_snapshot, save_snapshot
from .rng import RngStream
from .tensor import BatchNormState, Tensor
from .training import (
    TrainConfig,
    run_fold,
    thread_budget,
    train_config_from_dict,
    weighted_cross_entropy,
)
from .viz import format_cell, matrix_csv, save_heatmap, write_csv

_FEATURE_KEYS = ("outer_window_s", "outer_overlap", "inner_window_s", "inner_overlap")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _finite_or_none(x: float):
    return float(x) if np.isfinite(x) else None


# ---------------------------------------------------------------------------
# run config resolution


def _expect(value, kind, name):
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"{name} must be {kind.__name__}, got {value!r}")
    return value


def parse_feature_args(raw: dict) -> dict:
    unknown = sorted(set(raw) - set(_FEATURE_KEYS))
    if unknown:
        raise ConfigError(f"unknown feature_args keys: {', '.join(unknown)}")
    out = {
        "outer_window_s": 20.0,
        "outer_overlap": 0.8,
        "inner_window_s": 2.0,
        "inner_overlap": 0.75,
    }
    for key in _FEATURE_KEYS:
        if key in raw:
            out[key] = _expect(raw[key], float, f"feature_args.{key}")
    return out


def resolve_run_config(raw: dict, n_channels: int, n_samples: int, n_classes: int) -> dict:
    """Fill defaults and validate a run config against the data geometry.

    The result is a plain dict that serializes canonically and resolves to
    itself, so --print-config output can be fed back as a config file.
    """
    known = {"model", "train", "protocol", "align", "features", "feature_args",
             "n_folds", "train_fraction", "seeds"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown run config keys: {', '.join(unknown)}")
    model = model_config_from_dict(
        _expect(raw.get("model", {}), dict, "model"),
        n_channels=n_channels, n_samples=n_samples, n_classes=n_classes,
    )
    train = train_config_from_dict(_expect(raw.get("train", {}), dict, "train"))
    protocol = _expect(raw.get("protocol", "CO"), str, "protocol")
    if protocol not in ("CO", "CV", "LOSO"):
        raise ConfigError(f"protocol must be CO, CV, or LOSO, got {protocol!r}")
    align = _expect(raw.get("align", False), bool, "align")
    features = _expect(raw.get("features", False), bool, "features")
    feature_args = parse_feature_args(_expect(raw.get("feature_args", {}), dict, "feature_args"))
    n_folds = _expect(raw.get("n_folds", 5), int, "n_folds")
    if n_folds < 2:
        raise ConfigError(f"n_folds must be >= 2, got {n_folds}")
    train_fraction = _expect(raw.get("train_fraction", 0.8), float, "train_fraction")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    seeds = _expect(raw.get("seeds", [0]), list, "seeds")
    if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError("seeds must be a non-empty list of integers")
    return {
        "align": align,
        "feature_args": feature_args,
        "features": features,
        "model": asdict(model),
        "n_folds": n_folds,
        "protocol": protocol,
        "seeds": list(seeds),
        "train": asdict(train),
        "train_fraction": train_fraction,
    }


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return raw


def _prepare(data_path, config_path):
    """Load epochs, apply the feature stage if configured, resolve the config."""
    raw = _load_json(config_path) if config_path else {}
    epochs = load_epochs(data_path)
    features = raw.get("features", False)
    if not isinstance(features, bool):
        raise ConfigError(f"features must be bool, got {features!r}")
    if features:
        fargs = parse_feature_args(_expect(raw.get("feature_args", {}), dict, "feature_args"))
        epochs = rpsd_features(epochs, **fargs)
    resolved = resolve_run_config(raw, epochs.n_channels, epochs.n_samples, epochs.n_classes)
    return epochs, resolved


def _write_text(path, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    epochs, resolved = _prepare(args.data, args.config)
    if args.print_config:
        sys.stdout.write(canonical_json(resolved))
        return 0
    model_cfg = ModelConfig(**resolved["model"]).validate()
    base_train = TrainConfig(**resolved["train"]).validate()
    plan = make_split(epochs, resolved["protocol"], n_folds=resolved["n_folds"],
                      train_fraction=resolved["train_fraction"])
    params, flops = count_params_flops(model_cfg)
    jobs = [
        (seed, fold, tr, te)
        for seed in resolved["seeds"]
        for fold, (tr, te) in enumerate(plan.folds)
    ]

    def work(job):
        seed, fold, tr, te = job
        t0 = time.perf_counter()
        out = run_fold(epochs, tr, te, model_cfg, replace(base_train, seed=seed),
                       fold, align=resolved["align"])
        return out, time.perf_counter() - t0

    workers = min(thread_budget(), len(jobs))
    if workers == 1:
        results = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, jobs))

    os.makedirs(args.out, exist_ok=True)
    rows = []
    for (seed, fold, _, _), (fo, wall) in zip(jobs, results):
        if len(jobs) == 1:
            job_dir = args.out
        else:
            job_dir = os.path.join(args.out, f"seed{seed}_fold{fold}")
            os.makedirs(job_dir, exist_ok=True)
        oc = fo.outcome
        report = {
            "config": resolved,
            "seed": seed,
            "fold": fold,
            "n_train": fo.n_train,
            "n_val": fo.n_val,
            "n_test": fo.n_test,
            "epochs_run": oc.epochs_run,
            "best_epoch": oc.best_epoch,
            "best_val_loss": _finite_or_none(oc.best_val_loss),
            "final_train_acc": oc.final_train_acc,
            "test": fo.metrics,
            "params": params,
            "flops": flops,
        }
        _write_text(os.path.join(job_dir, "report.json"), canonical_json(report))
        curve_rows = [
            [r["epoch"], r["train_loss"], r.get("val_loss", ""), r.get("val_acc", "")]
            for r in oc.curves
        ]
        write_csv(os.path.join(job_dir, "curves.csv"),
                  ["epoch", "train_loss", "val_loss", "val_acc"], curve_rows)
        save_snapshot(os.path.join(job_dir, "model.bin"), oc.model.params)
        _write_text(os.path.join(job_dir, "timing.json"),
                    canonical_json({"wall_seconds": wall}))
        rows.append({
            "seed": seed,
            "fold": fold,
            "accuracy": fo.metrics["accuracy"],
            "macro_f1": fo.metrics["macro_f1"],
            "best_epoch": oc.best_epoch,
            "epochs_run": oc.epochs_run,
        })
        print(f"seed={seed} fold={fold} acc={format_cell(fo.metrics['accuracy'])} "
              f"macro_f1={format_cell(fo.metrics['macro_f1'])}")
    accs = np.array([r["accuracy"] for r in rows])
    f1s = np.array([r["macro_f1"] for r in rows])
    summary = {
        "config": resolved,
        "jobs": rows,
        "mean_accuracy": float(accs.mean()),
        "std_accuracy": float(accs.std(ddof=1)) if accs.size > 1 else 0.0,
        "mean_macro_f1": float(f1s.mean()),
        "std_macro_f1": float(f1s.std(ddof=1)) if f1s.size > 1 else 0.0,
    }
    _write_text(os.path.join(args.out, "summary.json"), canonical_json(summary))
    print(f"mean_acc={format_cell(summary['mean_accuracy'])} "
          f"std_acc={format_cell(summary['std_accuracy'])}")
    return 0


# ---------------------------------------------------------------------------
# eval / export-viz


def _restore_model(args) -> tuple:
    epochs, resolved = _prepare(args.data, args.config)
    if resolved["align"]:
        epochs = euclidean_align(epochs)
    cfg = ModelConfig(**resolved["model"]).validate()
    model = Model.build(cfg, seed=0)
    model.params.load_values(load_snapshot(args.model), dtype=cfg.np_dtype)
    return epochs, resolved, model


def cmd_eval(args) -> int:
    from .training import evaluate_model

    epochs, _, model = _restore_model(args)
    x = epochs.data.astype(model.cfg.np_dtype)
    metrics = evaluate_model(model, x, epochs.labels)
    print(f"acc={format_cell(metrics['accuracy'])} "
          f"macro_f1={format_cell(metrics['macro_f1'])}")
    conf = np.asarray(metrics["confusion"])
    header = ["true"] + [f"pred{j}" for j in range(conf.shape[1])]
    rows = [[i] + [int(v) for v in conf[i]] for i in range(conf.shape[0])]
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_csv(os.path.join(args.out, "confusion.csv"), header, rows)
    else:
        print(",".join(header))
        for row in rows:
            print(",".join(format_cell(v) for v in row))
    return 0


def cmd_export_viz(args) -> int:
    epochs, _, model = _restore_model(args)
    if not 0 <= args.trial < epochs.n_trials:
        raise ConfigError(f"trial {args.trial} out of range [0, {epochs.n_trials})")
    x = epochs.data[args.trial : args.trial + 1].astype(model.cfg.np_dtype)
    trace = ForwardTrace()
    model.forward(x, trace=trace)
    os.makedirs(args.out, exist_ok=True)
    written = []

    def emit(stem: str, matrix: np.ndarray, row_label: str = "row"):
        matrix_csv(os.path.join(args.out, stem + ".csv"), matrix, row_label=row_label)
        save_heatmap(os.path.join(args.out, stem + ".svg"), matrix)
        written.extend([stem + ".csv", stem + ".svg"])

    def emit_stack(prefix: str, per_layer: list, importance: bool):
        for layer, arr in enumerate(per_layer):
            if importance:
                emit(f"{prefix}_layer{layer}", arr[0], row_label="head")
            else:
                for head in range(arr.shape[1]):
                    emit(f"{prefix}_layer{layer}_head{head}", arr[0, head])

    emit_stack("sacm", trace.spatial_attention, importance=False)
    emit_stack("tcam", trace.temporal_attention, importance=False)
    emit_stack("omega", trace.channel_importance, importance=True)
    emit_stack("sacm_rev", trace.spatial_attention_rev, importance=False)
    emit_stack("tcam_rev", trace.temporal_attention_rev, importance=False)
    emit_stack("omega_rev", trace.channel_importance_rev, importance=True)
    if trace.patch_weights is not None:
        emit("alpha", trace.patch_weights)
    emit("saliency", saliency(epochs.data[args.trial].astype(model.cfg.np_dtype), model))
    print(f"wrote {len(written)} files to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# data utilities


def cmd_synth(args) -> int:
    spec = SynthSpec()
    if args.config:
        spec = synth_spec_from_dict(_load_json(args.config))
    epochs = synth_generate(spec, args.seed)
    save_epochs(args.out, epochs)
    print(f"wrote {args.out} trials={epochs.n_trials} channels={epochs.n_channels} "
          f"samples={epochs.n_samples} classes={epochs.n_classes}")
    return 0


def cmd_align(args) -> int:
    epochs = euclidean_align(load_epochs(args.data))
    save_epochs(args.out, epochs)
    print(f"wrote {args.out} trials={epochs.n_trials}")
    return 0


def cmd_features(args) -> int:
    epochs = rpsd_features(
        load_epochs(args.data),
        outer_window_s=args.outer_window,
        outer_overlap=args.outer_overlap,
        inner_window_s=args.inner_window,
        inner_overlap=args.inner_overlap,
    )
    save_epochs(args.out, epochs)
    print(f"wrote {args.out} rows={epochs.n_trials} channels={epochs.n_channels} "
          f"width={epochs.n_samples}")
    return 0


def cmd_split(args) -> int:
    epochs = load_epochs(args.data)
    plan = make_split(epochs, args.protocol, n_folds=args.n_folds,
                      train_fraction=args.train_fraction)
    payload = {
        "protocol": plan.protocol,
        "folds": [
            {"train": [int(i) for i in tr], "test": [int(i) for i in te]}
            for tr, te in plan.folds
        ],
    }
    text = canonical_json(payload)
    if args.out:
        _write_text(args.out, text)
        print(f"wrote {args.out} folds={len(plan.folds)}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_count(args) -> int:
    if args.data:
        epochs = load_epochs(args.data)
        geometry = (epochs.n_channels, epochs.n_samples, epochs.n_classes)
    elif None not in (args.channels, args.samples, args.classes):
        geometry = (args.channels, args.samples, args.classes)
    else:
        raise ConfigError("count needs --data or all of --channels/--samples/--classes")
    raw = _load_json(args.config) if args.config else {}
    model_raw = raw.get("model", {})
    cfg = model_config_from_dict(
        model_raw, n_channels=geometry[0], n_samples=geometry[1], n_classes=geometry[2]
    )
    params, flops = count_params_flops(cfg)
    print(f"params={params} flops={flops}")
    return 0


# ---------------------------------------------------------------------------
# grad-check battery


def _battery(seed: int):
    """(name, fn, inputs) triples covering every differentiable primitive."""
    rng = RngStream(seed, stream=4)

    def t(*shape):
        return Tensor(rng.normal(0.0, 1.0, shape), requires_grad=True)

    def away_from_kinks(x: Tensor) -> Tensor:
        d = x.data.copy()
        d += 0.2 * np.sign(d) + (d == 0) * 0.2
        return Tensor(d, requires_grad=True)

    labels = np.array([0, 2, 1, 0])
    ce_w = np.array([1.0, 0.5, 1.5])
    drop_seed = seed + 17

    def run_dropout(ts):
        mask_rng = RngStream(drop_seed, stream=2)
        return tz.reduce_sum(tz.dropout(ts[0], 0.4, mask_rng, training=True))

    def run_batchnorm(ts):
        state = BatchNormState(3, np.float64)
        return tz.reduce_sum(
            tz.mul(tz.batchnorm(ts[0], ts[1], ts[2], state, True, 0.1, 1e-5), ts[3])
        )

    items = [
        ("add", lambda ts: tz.reduce_sum(tz.add(ts[0], ts[1])), [t(3, 4), t(4)]),
        ("sub", lambda ts: tz.reduce_sum(tz.sub(ts[0], ts[1])), [t(3, 4), t(3, 4)]),
        ("mul", lambda ts: tz.reduce_sum(tz.mul(ts[0], ts[1])), [t(3, 4), t(3, 1)]),
        ("scale", lambda ts: tz.reduce_sum(tz.scale(ts[0], -1.7)), [t(3, 4)]),
        ("matmul", lambda ts: tz.reduce_sum(tz.matmul(ts[0], ts[1])), [t(2, 3, 4), t(4, 5)]),
        ("relu", lambda ts: tz.reduce_sum(tz.relu(ts[0])), [away_from_kinks(t(3, 4))]),
        ("gelu", lambda ts: tz.reduce_sum(tz.gelu(ts[0])), [t(3, 4)]),
        ("cosine", lambda ts: tz.reduce_sum(tz.mul(tz.cosine(ts[0]), ts[1])), [t(3, 4), t(3, 4)]),
        ("softmax", lambda ts: tz.reduce_sum(tz.mul(tz.softmax(ts[0], axis=-1), ts[1])),
         [t(3, 5), t(3, 5)]),
        ("l2norm", lambda ts: tz.reduce_sum(tz.l2norm(ts[0], axis=-1)), [t(3, 4)]),
        ("layernorm", lambda ts: tz.reduce_sum(tz.mul(tz.layernorm(ts[0], ts[1], ts[2], 1e-5), ts[3])),
         [t(3, 5), t(5), t(5), t(3, 5)]),
        ("batchnorm", run_batchnorm, [t(4, 3), t(3), t(3), t(4, 3)]),
        ("conv1d", lambda ts: tz.reduce_sum(tz.conv1d(ts[0], ts[1], ts[2], stride=2)),
         [t(2, 3, 8), t(4, 3, 3), t(4)]),
        ("conv1d_pointwise", lambda ts: tz.reduce_sum(tz.conv1d_pointwise(ts[0], ts[1], ts[2])),
         [t(2, 3, 5), t(4, 3), t(4)]),
        ("conv1d_depthwise", lambda ts: tz.reduce_sum(tz.conv1d_depthwise(ts[0], ts[1], ts[2])),
         [t(2, 3, 8), t(3, 3), t(3)]),
        ("avgpool1d", lambda ts: tz.reduce_sum(tz.avgpool1d(ts[0], 3, 2)), [t(2, 3, 9)]),
        ("reduce_mean", lambda ts: tz.reduce_sum(tz.mul(tz.reduce_mean(ts[0], axis=1), ts[1])),
         [t(3, 4, 2), t(3, 2)]),
        ("reshape_swap_concat",
         lambda ts: tz.reduce_sum(
             tz.concat([tz.reshape(ts[0], (3, 4)), tz.swapaxes(ts[1], 0, 1)], axis=-1)
         ),
         [t(4, 3), t(5, 3)]),
        ("select", lambda ts: tz.select(ts[0], (1, 2)), [t(3, 4)]),
        ("dropout", run_dropout, [t(4, 5)]),
        ("weighted_cross_entropy",
         lambda ts: weighted_cross_entropy(ts[0], labels, ce_w), [t(4, 3)]),
    ]
    return items


def _composite_config() -> ModelConfig:
    return ModelConfig(
        n_channels=3, n_samples=40, n_classes=2, embed_dim=8, spatial_maps=2,
        n_heads=2, temporal_depth=2, spatial_depth=1, dropout=0.0, ffn_expansion=2,
        kernel_len=5, pool_window=10, pool_stride=10, spatial_conv_stride=4,
        spatial_pool_window=5, spatial_pool_stride=5, integration_mode="bidir",
        classifier_hidden=8,
    ).validate()


def cmd_grad_check(args) -> int:
    worst_overall = 0.0
    failures = []
    for name, fn, inputs in _battery(args.seed):
        err = grad_check(fn, inputs)
        worst_overall = max(worst_overall, err)
        status = "ok" if err < 1e-6 else "FAIL"
        if err >= 1e-6:
            failures.append(f"{name} ({err:.3e})")
        print(f"{name} max_rel_err={err:.3e} {status}")

    cfg = _composite_config()
    model = Model.build(cfg, seed=args.seed)
    data_rng = RngStream(args.seed, stream=5)
    # zero-init biases park the ReLUs exactly on their kink, where central
    # differences are invalid; jitter to a generic point before probing
    for name in model.params.tensors:
        t = model.params[name]
        model.params.replace(name, t.data + data_rng.normal(0.0, 0.1, t.shape))
    x = Tensor(clear_input_draw(model, 2, data_rng), requires_grad=True)
    labels = np.array([0, 1])
    weights = np.ones(cfg.n_classes)
    param_list = list(model.params.tensors.values())

    def run_model(ts):
        xt = ts[0]
        for name, candidate in zip(model.params.tensors, ts[1:]):
            model.params.tensors[name] = candidate
        logits = model.forward(xt)
        return weighted_cross_entropy(logits, labels, weights)

    err = grad_check(run_model, [x] + param_list,
                     max_coords_per_input=args.max_coords,
                     coord_rng=RngStream(args.seed, stream=6))
    worst_overall = max(worst_overall, err)
    status = "ok" if err < 1e-4 else "FAIL"
    if err >= 1e-4:
        failures.append(f"full_network ({err:.3e})")
    print(f"full_network max_rel_err={err:.3e} {status}")
    print(f"overall={worst_overall:.3e}")
    if failures:
        raise NumericError(f"gradient check failed: {', '.join(failures)}")
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(1, f"error[usage]: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lidsn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train across protocol folds and seeds")
    p.add_argument("--data", required=True, help="EEGB input file")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--print-config", action="store_true",
                   help="print the resolved config and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a snapshot on a data file")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="model.bin snapshot")
    p.add_argument("--config", help="run config JSON (model section)")
    p.add_argument("--out", help="directory for confusion.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate synthetic epochs")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="synth spec JSON")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("align", help="per-subject covariance whitening")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("features", help="relative band-power features")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--outer-window", type=float, default=20.0)
    p.add_argument("--outer-overlap", type=float, default=0.8)
    p.add_argument("--inner-window", type=float, default=2.0)
    p.add_argument("--inner-overlap", type=float, default=0.75)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("split", help="print or save protocol fold indices")
    p.add_argument("--data", required=True)
    p.add_argument("--protocol", required=True, choices=("CO", "CV", "LOSO"))
    p.add_argument("--n-folds", type=int, default=5)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("grad-check", help="finite-difference gradient battery")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-coords", type=int, default=3,
                   help="coordinates checked per input in the full-network pass")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("count", help="parameter and FLOP totals")
    p.add_argument("--data", help="EEGB file supplying the geometry")
    p.add_argument("--channels", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--config", help="run config JSON (model section)")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("export-viz", help="attention maps and saliency for one trial")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--config", help="run config JSON (model section)")
    p.add_argument("--out", required=True)
    p.add_argument("--trial", type=int, default=0)
    p.set_defaults(func=cmd_export_viz)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataFormatError as exc:
        print(f"error[{exc.kind}]: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ShapeError) as exc:
        kind = "config" if isinstance(exc, ConfigError) else "shape"
        print(f"error[{kind}]: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
