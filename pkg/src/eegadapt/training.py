"""Deterministic mini-batch training: cross entropy, optimizers, metrics,
and finite-difference gradient verification.

Losses are computed in double precision. Serial runs with a fixed seed are
bitwise reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DomainError,
    GradientCheckError,
    NumericError,
)
from .nnops import softmax_last

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "LabeledSet",
    "MetricsReport",
    "EpochStats",
    "TrainResult",
    "cross_entropy",
    "cross_entropy_batch",
    "AdamW",
    "Sgd",
    "train_loop",
    "predict",
    "evaluate",
    "metrics_from_confusion",
    "format_metrics_report",
    "gradient_check",
    "GradCheckReport",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    optimizer: str = "adamw"
    seed: int = 0
    freeze_bfm: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigurationError("learning_rate and weight_decay must be >= 0")
        if self.optimizer not in ("adamw", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class LabeledSet:
    """A split as dense arrays: x (N, C, T), y (N,), one subject per row."""

    x: np.ndarray
    y: np.ndarray
    subjects: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if self.x.shape[0] != self.y.shape[0]:
            raise ConfigurationError(
                f"{self.x.shape[0]} samples but {self.y.shape[0]} labels"
            )
        if not self.subjects:
            self.subjects = [""] * self.y.shape[0]
        if len(self.subjects) != self.y.shape[0]:
            raise ConfigurationError("subjects do not align with labels")

    def __len__(self) -> int:
        return int(self.y.shape[0])


def cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Categorical cross entropy of one sample.

    Returns (-log softmax(logits)[label], softmax(logits) - onehot(label)),
    computed with max subtraction for stability.
    """
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    k = logits.shape[0]
    if not 0 <= label < k:
        raise DomainError(f"label {label} out of range for {k} classes")
    shifted = logits - logits.max()
    log_z = np.log(np.sum(np.exp(shifted)))
    loss = log_z - shifted[label]
    grad = np.exp(shifted - log_z)
    grad[label] -= 1.0
    return float(loss), grad


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray):
    """Mean cross entropy over a batch and the gradient of that mean.

    Returns (loss, dlogits) with dlogits already divided by the batch size.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise DomainError(f"labels out of range for {k} classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1))
    losses = log_z - shifted[np.arange(n), labels]
    grad = np.exp(shifted - log_z[:, None])
    grad[np.arange(n), labels] -= 1.0
    return float(losses.mean()), grad / n


class AdamW:
    """Adam with decoupled weight decay and optional cosine learning-rate decay."""

    def __init__(self, arrays, lr: float, weight_decay: float = 0.01,
                 betas=(0.9, 0.999), eps: float = 1e-8,
                 total_steps: int | None = None):
        self.arrays = list(arrays)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.total_steps = total_steps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in self.arrays}
        self.v = {name: np.zeros_like(p) for name, p in self.arrays}

    def _lr_t(self) -> float:
        if not self.total_steps:
            return self.lr
        frac = min(self.t, self.total_steps) / self.total_steps
        return self.lr * 0.5 * (1.0 + np.cos(np.pi * frac))

    def step(self, grads: dict[str, np.ndarray]) -> None:
        lr_t = self._lr_t()
        self.t += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.arrays:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p -= lr_t * (update + self.weight_decay * p)


class Sgd:
    """Plain gradient descent with the same decoupled decay convention."""

    def __init__(self, arrays, lr: float, weight_decay: float = 0.0,
                 total_steps: int | None = None):
        self.arrays = list(arrays)
        self.lr = lr
        self.weight_decay = weight_decay
        self.total_steps = total_steps
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        lr_t = self.lr
        if self.total_steps:
            frac = min(self.t, self.total_steps) / self.total_steps
            lr_t = self.lr * 0.5 * (1.0 + np.cos(np.pi * frac))
        self.t += 1
        for name, p in self.arrays:
            p -= lr_t * (grads[name] + self.weight_decay * p)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainResult:
    epochs: list[EpochStats]
    best_epoch: int
    best_val_accuracy: float


def _trainable_arrays(model, freeze_bfm: bool):
    """Every parameter, minus the encoder body when it is frozen.

    The classification head always trains; freezing only pins the encoder
    backbone for ablations.
    """
    arrays = []
    for name, p in model.named_arrays():
        if freeze_bfm and name.startswith("encoder.") and not name.startswith("encoder.head_"):
            continue
        arrays.append((name, p))
    return arrays


def _eval_pass(model, data: LabeledSet, batch_size: int):
    """Forward the whole split in chunks; returns (mean loss, preds, probs)."""
    n = len(data)
    losses = np.empty(n)
    preds = np.empty(n, dtype=np.int64)
    probs = np.empty((n, model.num_classes))
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        logits, _, _ = model.forward_batch(data.x[start:stop])
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.sum(np.exp(shifted), axis=1))
        idx = np.arange(stop - start)
        losses[start:stop] = log_z - shifted[idx, data.y[start:stop]]
        preds[start:stop] = np.argmax(logits, axis=1)
        probs[start:stop] = softmax_last(logits)
    return float(losses.mean()), preds, probs


def predict(model, data: LabeledSet, batch_size: int = 64):
    """Argmax predictions and softmax probabilities for a split."""
    _, preds, probs = _eval_pass(model, data, batch_size)
    return preds, probs


def train_loop(model, train_set: LabeledSet, val_set: LabeledSet,
               cfg: TrainConfig) -> TrainResult:
    """Seeded epoch loop returning the best-validation-accuracy parameters.

    The training set is reshuffled each epoch with the run's generator;
    model selection keeps the earliest epoch on accuracy ties. The model is
    left holding the selected parameters.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigurationError("train and validation splits must be nonempty")
    for split_name, split in (("train", train_set), ("val", val_set)):
        if split.y.max(initial=0) >= model.num_classes or split.y.min(initial=0) < 0:
            raise ConfigurationError(
                f"{split_name} split has labels outside 0..{model.num_classes - 1}"
            )

    rng = np.random.default_rng(cfg.seed)
    arrays = _trainable_arrays(model, cfg.freeze_bfm)
    steps_per_epoch = -(-len(train_set) // cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    if cfg.optimizer == "adamw":
        opt = AdamW(arrays, lr=cfg.learning_rate, weight_decay=cfg.weight_decay,
                    total_steps=total_steps)
    else:
        opt = Sgd(arrays, lr=cfg.learning_rate, weight_decay=cfg.weight_decay,
                  total_steps=total_steps)

    stats: list[EpochStats] = []
    best_epoch = -1
    best_val_acc = -1.0
    best_params: dict[str, np.ndarray] | None = None

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        loss_sum = 0.0
        hit_sum = 0
        for step in range(steps_per_epoch):
            idx = order[step * cfg.batch_size : (step + 1) * cfg.batch_size]
            xb, yb = train_set.x[idx], train_set.y[idx]
            logits, _, cache = model.forward_batch(xb, keep_cache=True)
            loss, dlogits = cross_entropy_batch(logits, yb)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {step}")
            grads = model.backward_batch(cache, dlogits)
            opt.step(grads)
            loss_sum += loss * len(idx)
            hit_sum += int(np.sum(np.argmax(logits, axis=1) == yb))
        train_loss = loss_sum / len(train_set)
        train_acc = hit_sum / len(train_set)

        val_loss, val_preds, _ = _eval_pass(model, val_set, cfg.batch_size)
        val_acc = float(np.mean(val_preds == val_set.y))
        stats.append(EpochStats(epoch, train_loss, train_acc, val_loss, val_acc))
        logger.debug("epoch %d train_loss=%.4f train_acc=%.4f val_acc=%.4f",
                     epoch, train_loss, train_acc, val_acc)
        if val_acc > best_val_acc:
            best_val_acc = val_acc
            best_epoch = epoch
            best_params = {name: p.copy() for name, p in model.named_arrays()}

    for name, p in model.named_arrays():
        np.copyto(p, best_params[name])
    return TrainResult(epochs=stats, best_epoch=best_epoch,
                       best_val_accuracy=best_val_acc)


@dataclass(frozen=True)
class MetricsReport:
    """Accuracy plus support-weighted precision/recall/F1 and the confusion
    matrix (rows true, columns predicted)."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray
    averaging: str = "weighted"

    @property
    def num_samples(self) -> int:
        return int(self.confusion.sum())


def metrics_from_confusion(confusion: np.ndarray) -> MetricsReport:
    """Derive the report from a K x K confusion matrix of counts."""
    conf = np.asarray(confusion, dtype=np.int64)
    total = conf.sum()
    if total == 0:
        raise DomainError("confusion matrix is empty")
    support = conf.sum(axis=1).astype(np.float64)
    predicted = conf.sum(axis=0).astype(np.float64)
    diag = np.diag(conf).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision_c = np.where(predicted > 0, diag / predicted, 0.0)
        recall_c = np.where(support > 0, diag / support, 0.0)
        denom = precision_c + recall_c
        f1_c = np.where(denom > 0, 2.0 * precision_c * recall_c / denom, 0.0)
    weights = support / total
    return MetricsReport(
        accuracy=float(diag.sum() / total),
        precision=float(np.sum(weights * precision_c)),
        recall=float(np.sum(weights * recall_c)),
        f1=float(np.sum(weights * f1_c)),
        confusion=conf,
    )


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray,
                     num_classes: int) -> np.ndarray:
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (np.asarray(y_true, dtype=np.int64),
                     np.asarray(y_pred, dtype=np.int64)), 1)
    return conf


def evaluate(model, data: LabeledSet, batch_size: int = 64) -> MetricsReport:
    """Argmax predictions over a split, summarized as a MetricsReport."""
    if len(data) == 0:
        raise ConfigurationError("cannot evaluate an empty split")
    _, preds, _ = _eval_pass(model, data, batch_size)
    conf = confusion_matrix(data.y, preds, model.num_classes)
    return metrics_from_confusion(conf)


def format_metrics_report(report: MetricsReport, header_lines=()) -> str:
    """Render a report as the structured text document the CLI emits."""
    lines = list(header_lines)
    lines.append("metrics-report v1")
    lines.append(f"samples = {report.num_samples}")
    lines.append(f"averaging = {report.averaging}")
    lines.append(f"accuracy = {report.accuracy!r}")
    lines.append(f"precision = {report.precision!r}")
    lines.append(f"recall = {report.recall!r}")
    lines.append(f"f1 = {report.f1!r}")
    lines.append("confusion (rows true, cols predicted):")
    for row in report.confusion:
        lines.append("  " + " ".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


@dataclass
class GradCheckReport:
    coordinates_checked: int
    max_rel_error: float
    worst: tuple[str, int, float, float]
    failures: list[tuple[str, int, float, float, float]]


def gradient_check(model, x: np.ndarray, label: int,
                   num_coordinates: int = 200, h: float = 1e-5,
                   tolerance: float = 1e-4, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    Perturbs a random subset of parameter coordinates (at least
    ``num_coordinates`` spread over all arrays) on the cross-entropy loss of
    one sample. Relative error uses max(|analytic|, |numeric|, 1e-4) as the
    denominator so near-zero gradients are judged absolutely. Raises
    GradientCheckError when the tolerance is exceeded.
    """
    arrays = model.named_arrays()
    sizes = np.array([p.size for _, p in arrays])
    total = int(sizes.sum()) if arrays else 0
    if total == 0:
        return GradCheckReport(coordinates_checked=0, max_rel_error=0.0,
                               worst=("", -1, 0.0, 0.0), failures=[])

    x = np.asarray(x, dtype=np.float64)
    xb = x[None]
    logits, _, cache = model.forward_batch(xb, keep_cache=True)
    _, dlogits = cross_entropy_batch(logits, np.array([label]))
    grads = model.backward_batch(cache, dlogits)

    def loss_only() -> float:
        lg, _, _ = model.forward_batch(xb)
        loss, _ = cross_entropy_batch(lg, np.array([label]))
        return loss

    rng = np.random.default_rng(seed)
    count = min(num_coordinates, total)
    flat_choices = rng.choice(total, size=count, replace=False)
    bounds = np.cumsum(sizes)

    failures = []
    worst = ("", -1, 0.0, 0.0)
    max_rel = 0.0
    for flat_index in np.sort(flat_choices):
        array_idx = int(np.searchsorted(bounds, flat_index, side="right"))
        offset = int(flat_index - (bounds[array_idx - 1] if array_idx else 0))
        name, p = arrays[array_idx]
        view = p.reshape(-1)
        original = view[offset]
        view[offset] = original + h
        loss_plus = loss_only()
        view[offset] = original - h
        loss_minus = loss_only()
        view[offset] = original
        numeric = (loss_plus - loss_minus) / (2.0 * h)
        analytic = float(grads[name].reshape(-1)[offset])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-4)
        if rel > max_rel:
            max_rel = rel
            worst = (name, offset, analytic, numeric)
        if rel > tolerance:
            failures.append((name, offset, analytic, numeric, rel))

    report = GradCheckReport(
        coordinates_checked=count,
        max_rel_error=max_rel,
        worst=worst,
        failures=failures,
    )
    if failures:
        sample = ", ".join(f"{n}[{i}]" for n, i, *_ in failures[:5])
        raise GradientCheckError(
            f"{len(failures)} coordinate(s) exceed tolerance {tolerance} "
            f"(max rel error {max_rel:.3e}): {sample}"
        )
    return report
