"""Optimization, metrics, and protocol-level experiment runs."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .config import ModelConfig
from .data import EpochSet, euclidean_align, make_split
from .errors import ConfigError, NumericError, ShapeError
from .network import Model
from .params import ParamSet, round_through_f32
from .rng import RngStream
from .tensor import Tape, Tensor, _record, backward

SHUFFLE_STREAM = 1
DROPOUT_STREAM = 2


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    patience: int = 20
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    class_weight_mode: str = "inverse"
    val_fraction: float = 0.1

    def validate(self) -> "TrainConfig":
        if not (self.lr > 0):
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 1 <= self.patience <= self.epochs:
            raise ConfigError(
                f"patience must lie in [1, epochs]; got {self.patience} vs {self.epochs}"
            )
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {b}")
        if not (self.eps > 0):
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.class_weight_mode not in ("inverse", "uniform"):
            raise ConfigError(
                f"class_weight_mode must be 'inverse' or 'uniform', got {self.class_weight_mode!r}"
            )
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        return self


def train_config_from_dict(raw: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown training config keys: {', '.join(unknown)}")
    return TrainConfig(**raw).validate()


def class_weights(labels: np.ndarray, n_classes: int, mode: str = "inverse") -> np.ndarray:
    """Per-class loss weights: n_total / (K * n_k) for 'inverse', ones for 'uniform'."""
    labels = np.asarray(labels)
    if mode == "uniform":
        return np.ones(n_classes)
    if mode != "inverse":
        raise ConfigError(f"unknown class weight mode {mode!r}")
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    if np.any(counts == 0):
        missing = int(np.where(counts == 0)[0][0])
        raise ConfigError(f"class {missing} has no training examples")
    return labels.size / (n_classes * counts)


def weighted_cross_entropy(logits: Tensor, labels: np.ndarray, weights: np.ndarray) -> Tensor:
    """Mean weighted cross entropy over the batch, as one recorded op.

    loss = -(1/B) sum_i w[y_i] * log softmax(logits_i)[y_i]
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be [B, K], got {logits.data.shape}")
    b, k = logits.data.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ConfigError(f"labels must lie in [0, {k})")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (k,):
        raise ShapeError(f"weights shape {weights.shape} does not match {k} classes")
    z = logits.data.astype(np.float64)
    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    lse = m + np.log(ez.sum(axis=1, keepdims=True))
    logp = z - lse
    w_i = weights[labels]
    loss = -(w_i * logp[np.arange(b), labels]).sum() / b
    probs = ez / ez.sum(axis=1, keepdims=True)

    def backward_fn(g):
        grad = probs.copy()
        grad[np.arange(b), labels] -= 1.0
        grad *= (w_i / b)[:, None]
        return (g * grad.astype(logits.data.dtype),)

    return _record("weighted_cross_entropy", np.asarray(loss, dtype=logits.data.dtype),
                   (logits,), backward_fn)


class Adam:
    """Adam with bias correction and decoupled weight decay.

    Updates only parameters that received a gradient this step; a non-finite
    gradient aborts the step with the offending parameter named.
    """

    def __init__(self, params: ParamSet, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self._m = {name: np.zeros_like(t.data) for name, t in params.tensors.items()}
        self._v = {name: np.zeros_like(t.data) for name, t in params.tensors.items()}
        self._t = {name: 0 for name in params.tensors}

    def step(self, grads: dict) -> None:
        c = self.cfg
        for name, tensor in self.params.tensors.items():
            g = grads.get(tensor)
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name}")
            self._t[name] += 1
            t = self._t[name]
            m = self._m[name] = c.beta1 * self._m[name] + (1.0 - c.beta1) * g
            v = self._v[name] = c.beta2 * self._v[name] + (1.0 - c.beta2) * g * g
            m_hat = m / (1.0 - c.beta1 ** t)
            v_hat = v / (1.0 - c.beta2 ** t)
            update = m_hat / (np.sqrt(v_hat) + c.eps)
            if c.weight_decay:
                update = update + c.weight_decay * tensor.data
            tensor.data = tensor.data - c.lr * update


# ---------------------------------------------------------------------------
# metrics


def confusion_matrix(labels: np.ndarray, predictions: np.ndarray, n_classes: int) -> np.ndarray:
    """Counts with true class on rows, predicted class on columns."""
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    for y, p in zip(np.asarray(labels, dtype=np.int64), np.asarray(predictions, dtype=np.int64)):
        conf[y, p] += 1
    return conf


def metrics_from_confusion(conf: np.ndarray) -> dict:
    """Accuracy, per-class precision/recall/F1 (0/0 counts as 0), macro F1."""
    conf = np.asarray(conf, dtype=np.int64)
    k = conf.shape[0]
    total = conf.sum()
    acc = float(np.trace(conf) / total) if total else 0.0
    precision, recall, f1 = [], [], []
    for c in range(k):
        tp = conf[c, c]
        fp = conf[:, c].sum() - tp
        fn = conf[c, :].sum() - tp
        p = float(tp / (tp + fp)) if (tp + fp) else 0.0
        r = float(tp / (tp + fn)) if (tp + fn) else 0.0
        f = float(2.0 * p * r / (p + r)) if (p + r) else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(f)
    out = {
        "accuracy": acc,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "macro_f1": float(np.mean(f1)),
        "confusion": conf.tolist(),
    }
    if k == 2:
        out["f1_positive"] = f1[1]
    return out


def evaluate_model(model: Model, x: np.ndarray, labels: np.ndarray,
                   weights: np.ndarray | None = None, batch: int = 256) -> dict:
    """Eval-mode metrics, plus mean weighted CE loss when weights are given."""
    logits = model.logits_np(x, batch_size=batch)
    preds = logits.argmax(axis=1)
    out = metrics_from_confusion(confusion_matrix(labels, preds, model.cfg.n_classes))
    if weights is not None:
        z = logits.astype(np.float64)
        m = z.max(axis=1, keepdims=True)
        lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
        logp = z - lse
        w_i = np.asarray(weights)[labels]
        out["loss"] = float(-(w_i * logp[np.arange(len(labels)), labels]).mean())
    return out


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainOutcome:
    model: Model
    best_values: dict
    curves: list
    epochs_run: int
    best_epoch: int
    best_val_loss: float
    final_train_acc: float


def _batches(order: np.ndarray, batch_size: int):
    # the final short batch is kept; a size-1 remainder hits batchnorm's
    # train-mode minimum and raises, which callers avoid by sizing batches
    for start in range(0, order.size, batch_size):
        yield order[start : start + batch_size]


def train_model(model_cfg: ModelConfig, train_cfg: TrainConfig,
                x_train: np.ndarray, y_train: np.ndarray,
                x_val: np.ndarray, y_val: np.ndarray) -> TrainOutcome:
    """Fit a model with Adam, early stopping on validation loss.

    The snapshot with the lowest validation loss (parameters and batch-norm
    running statistics) is restored at the end, rounded through float32 so a
    reloaded on-disk snapshot reproduces final_train_acc exactly. With an
    empty validation set early stopping is disabled and the final epoch wins.
    """
    model_cfg.validate()
    train_cfg.validate()
    model = Model.build(model_cfg, seed=train_cfg.seed)
    weights = class_weights(y_train, model_cfg.n_classes, train_cfg.class_weight_mode)
    shuffle = RngStream(train_cfg.seed, SHUFFLE_STREAM)
    drop_rng = RngStream(train_cfg.seed, DROPOUT_STREAM)
    opt = Adam(model.params, train_cfg)
    has_val = len(y_val) > 0
    best_val = np.inf
    best_epoch = 0
    best_params = model.params.clone()
    bad_epochs = 0
    curves = []
    epochs_run = 0
    n = len(y_train)
    if n == 0:
        raise ConfigError("training set is empty")
    for epoch in range(1, train_cfg.epochs + 1):
        epochs_run = epoch
        order = shuffle.permutation(n)
        loss_sum = 0.0
        correct = 0
        seen = 0
        for batch in _batches(order, train_cfg.batch_size):
            with Tape() as tape:
                logits = model.forward(x_train[batch], rng=drop_rng, training=True)
                loss = weighted_cross_entropy(logits, y_train[batch], weights)
                grads = backward(loss, tape)
            opt.step(grads)
            loss_sum += float(loss.data) * batch.size
            correct += int((logits.data.argmax(axis=1) == y_train[batch]).sum())
            seen += batch.size
        train_loss = loss_sum / seen
        train_acc = correct / seen
        row = {"epoch": epoch, "train_loss": train_loss, "train_acc": train_acc}
        if has_val:
            val = evaluate_model(model, x_val, y_val, weights)
            row["val_loss"] = val["loss"]
            row["val_acc"] = val["accuracy"]
            if val["loss"] < best_val:
                best_val = val["loss"]
                best_epoch = epoch
                best_params = model.params.clone()
                bad_epochs = 0
            else:
                bad_epochs += 1
        curves.append(row)
        if has_val and bad_epochs >= train_cfg.patience:
            break
    if not has_val:
        best_epoch = epochs_run
        best_val = float("nan")
        best_params = model.params
    model.params = round_through_f32(best_params)
    final = evaluate_model(model, x_train, y_train)
    return TrainOutcome(model, model.params.value_dict(), curves, epochs_run,
                        best_epoch, float(best_val), final["accuracy"])


def validation_tail(train_idx: np.ndarray, subjects: np.ndarray,
                    fraction: float = 0.1) -> tuple:
    """Carve a validation tail from each subject's training trials.

    Each subject contributes its last max(1, floor(fraction * n)) training
    trials when it has at least two; single-trial subjects contribute none.
    Returns (fit_idx, val_idx) partitioning train_idx.
    """
    train_idx = np.asarray(train_idx, dtype=np.int64)
    val_parts = []
    for s in np.unique(subjects[train_idx]):
        rows = train_idx[subjects[train_idx] == s]
        if rows.size < 2:
            continue
        n_val = max(1, int(np.floor(fraction * rows.size)))
        val_parts.append(rows[rows.size - n_val :])
    if not val_parts:
        return train_idx, np.array([], dtype=np.int64)
    val_idx = np.concatenate(val_parts)
    mask = np.isin(train_idx, val_idx, invert=True)
    return train_idx[mask], val_idx


# ---------------------------------------------------------------------------
# protocol runner


@dataclass
class FoldOutcome:
    fold: int
    outcome: TrainOutcome
    metrics: dict
    n_train: int
    n_val: int
    n_test: int


def thread_budget() -> int:
    raw = os.environ.get("LIDSN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"LIDSN_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"LIDSN_THREADS must be >= 1, got {n}")
    return n


def run_fold(epochs_set: EpochSet, train_idx: np.ndarray, test_idx: np.ndarray,
             model_cfg: ModelConfig, train_cfg: TrainConfig, fold: int,
             align: bool = False) -> FoldOutcome:
    data = epochs_set
    if align:
        data = euclidean_align(epochs_set, fit_indices=train_idx)
    fit_idx, val_idx = validation_tail(train_idx, data.subjects, train_cfg.val_fraction)
    x = data.data.astype(model_cfg.np_dtype)
    outcome = train_model(
        model_cfg, train_cfg,
        x[fit_idx], data.labels[fit_idx],
        x[val_idx], data.labels[val_idx],
    )
    metrics = evaluate_model(outcome.model, x[test_idx], data.labels[test_idx])
    return FoldOutcome(fold, outcome, metrics, fit_idx.size, val_idx.size, test_idx.size)


def run_protocol(epochs_set: EpochSet, protocol: str, model_cfg: ModelConfig,
                 train_cfg: TrainConfig, align: bool = False, n_folds: int = 5,
                 train_fraction: float = 0.8, threads: int | None = None) -> dict:
    """Train and evaluate across every fold of a protocol split.

    Folds run in a thread pool sized by LIDSN_THREADS (or the threads
    argument); results are reduced in fold order, so the output does not
    depend on scheduling. Aggregates are mean and sample std (ddof=1, zero
    for a single fold).
    """
    plan = make_split(epochs_set, protocol, n_folds=n_folds, train_fraction=train_fraction)
    workers = thread_budget() if threads is None else max(1, threads)
    jobs = [(k, tr, te) for k, (tr, te) in enumerate(plan.folds)]

    def work(job):
        k, tr, te = job
        return run_fold(epochs_set, tr, te, model_cfg, train_cfg, k, align=align)

    if workers == 1 or len(jobs) == 1:
        fold_outcomes = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            fold_outcomes = list(pool.map(work, jobs))

    accs = np.array([f.metrics["accuracy"] for f in fold_outcomes])
    f1s = np.array([f.metrics["macro_f1"] for f in fold_outcomes])

    def spread(arr):
        return float(arr.std(ddof=1)) if arr.size > 1 else 0.0

    return {
        "protocol": protocol,
        "folds": fold_outcomes,
        "mean_accuracy": float(accs.mean()),
        "std_accuracy": spread(accs),
        "mean_macro_f1": float(f1s.mean()),
        "std_macro_f1": spread(f1s),
    }
