"""Minibatch AdaGrad training of window classifiers."""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from clinevent.errors import ConfigError, ShapeError, TrainingError
from clinevent.features import PAD_INDEX, UNK_INDEX, VocabularySet, WindowInstance
from clinevent.network import (
    EMBEDDING_PARAMS,
    NORM_TARGETS,
    Mode,
    ModelBundle,
    backward,
    constrain,
    forward,
    forward_batch,
    init_model,
    sample_mask,
)
from clinevent.textproc import TaggerModel
from clinevent.validator import ConfigValidator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 100
    l2: float = 1e-4
    epochs: int = 10
    window: int = 4
    keep_prob: float = 0.5
    max_norm: float = 3.0
    norm_targets: tuple[str, ...] = ("mlp", "softmax")
    adagrad_eps: float = 1e-6
    seed: int = 13
    patience: int = 3
    kernel_width: int = 2
    filters: int = 300
    hidden: int = 50
    token_dim: int = 300
    pos_dim: int = 32
    shape_dim: int = 16
    init_scale: float = 0.05
    class_weight: str = "none"
    anchor: str = "first"
    unk_rate: float = 0.0

    def __post_init__(self) -> None:
        checks = [
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.l2 >= 0, "l2 must be >= 0"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.window >= 1, "window must be >= 1"),
            (0 < self.keep_prob <= 1, "keep_prob must be in (0, 1]"),
            (self.max_norm >= 0, "max_norm must be >= 0"),
            (self.adagrad_eps > 0, "adagrad_eps must be > 0"),
            (self.patience >= 1, "patience must be >= 1"),
            (1 <= self.kernel_width <= 2 * self.window + 1, "kernel_width must fit the window"),
            (self.class_weight in ("none", "balanced"), "class_weight must be none or balanced"),
            (self.anchor in ("first", "last"), "anchor must be first or last"),
            (0 <= self.unk_rate < 1, "unk_rate must be in [0, 1)"),
            (set(self.norm_targets) <= set(NORM_TARGETS), f"norm_targets must be among {', '.join(NORM_TARGETS)}"),
        ]
        problems = [message for ok, message in checks if not ok]
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def sequence_length(self) -> int:
        return 2 * self.window + 1

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            msg = f"unknown config keys: {', '.join(unknown)}"
            raise ConfigError(msg)
        values = dict(values)
        if isinstance(values.get("norm_targets"), str):
            values["norm_targets"] = tuple(part for part in values["norm_targets"].split(",") if part)
        return cls(**values)

    def as_mapping(self) -> dict[str, Any]:
        """Config snapshot in the key-value file's vocabulary."""
        values = asdict(self)
        values["norm_targets"] = ",".join(self.norm_targets)
        return values


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> TrainConfig:
    """Read a ``key = value`` config file, apply overrides and validate the result."""
    validator = ConfigValidator()
    values = dict(validator.load(Path(path))) if path is not None else {}
    values.update(overrides or {})
    is_valid, errors = validator.validate_data(values)
    if not is_valid:
        raise ConfigError("; ".join(errors))
    return TrainConfig.from_mapping(values)


@dataclass
class AdaGradState:
    """Per-parameter sums of squared gradients."""

    accumulators: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, params: Mapping[str, np.ndarray]) -> AdaGradState:
        return cls({name: np.zeros_like(value) for name, value in params.items()})


def adagrad_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdaGradState,
    learning_rate: float,
    eps: float = 1e-6,
) -> tuple[Mapping[str, np.ndarray], AdaGradState]:
    """In-place update: G += g^2; p -= lr * g / (sqrt(G) + eps)."""
    for name, grad in grads.items():
        param = params[name]
        accumulator = state.accumulators.setdefault(name, np.zeros_like(param))
        if grad.shape != param.shape or accumulator.shape != param.shape:
            msg = f"{name}: gradient {grad.shape} does not match parameter {param.shape}"
            raise ShapeError(msg)
        accumulator += grad * grad
        param -= learning_rate * grad / (np.sqrt(accumulator) + eps)
    return params, state


def l2_penalty(theta: Iterable[np.ndarray], l2: float) -> float:
    """(l2/2) times the squared norm of all of ``theta``."""
    if not l2:
        return 0.0
    return 0.5 * l2 * sum(float(np.sum(value * value)) for value in theta)


def nll_loss(
    probs: np.ndarray,
    gold: np.ndarray,
    theta: Iterable[np.ndarray] = (),
    l2: float = 0.0,
    weights: np.ndarray | None = None,
) -> float:
    """-(1/m) sum_k w_k log p_k(y_k) + (l2/2) ||theta||^2."""
    probs = np.atleast_2d(probs)
    gold = np.atleast_1d(gold)
    picked = np.maximum(probs[np.arange(len(gold)), gold], 1e-12)
    losses = -np.log(picked)
    if weights is not None:
        losses = losses * weights
    return float(losses.mean()) + l2_penalty(theta, l2)


def _instance_weights(gold: np.ndarray, class_weights: np.ndarray | None) -> np.ndarray | None:
    return None if class_weights is None else class_weights[gold]


def batch_objective(
    model: ModelBundle,
    rows: np.ndarray,
    gold: np.ndarray,
    masks: np.ndarray,
    l2: float,
    class_weights: np.ndarray | None = None,
) -> float:
    """Minibatch objective: mean NLL of the gold labels plus the L2 term."""
    probs = forward_batch(model, rows, Mode.TRAIN, masks).probs
    return nll_loss(probs, gold, model.regularized().values(), l2, _instance_weights(gold, class_weights))


def batch_gradients(
    model: ModelBundle,
    rows: np.ndarray,
    gold: np.ndarray,
    masks: np.ndarray,
    l2: float,
    class_weights: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """The minibatch objective and its gradient for every parameter."""
    weights = _instance_weights(gold, class_weights)
    cache = forward_batch(model, rows, Mode.TRAIN, masks)
    params = model.parameters()
    loss = nll_loss(cache.probs, gold, model.regularized().values(), l2, weights)
    grads = backward(model, cache, gold, weights).to_dense(model)
    scale = 1.0 / len(gold)
    for name, grad in grads.items():
        grad *= scale
        if l2:
            grad += l2 * params[name]
        if name in EMBEDDING_PARAMS:
            grad[PAD_INDEX] = 0.0
    return loss, grads


def epoch_permutation(seed: int, epoch: int, size: int) -> np.ndarray:
    """Instance order of one epoch, a pure function of (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(size)


def balanced_class_weights(gold: np.ndarray, classes: int) -> np.ndarray:
    """n / (present classes * n_c); absent classes get weight 0."""
    counts = np.bincount(gold, minlength=classes).astype(np.float64)
    present = np.count_nonzero(counts)
    return np.divide(len(gold), present * counts, out=np.zeros(classes), where=counts > 0)


def _replace_unknown(rows: np.ndarray, rng: np.random.Generator, rate: float) -> np.ndarray:
    rows = rows.copy()
    tokens = rows[..., 0]
    drop = (rng.random(tokens.shape) < rate) & (tokens != PAD_INDEX)
    tokens[drop] = UNK_INDEX
    return rows


@dataclass
class TrainResult:
    model: ModelBundle
    losses: list[float]
    dev_scores: list[float] = field(default_factory=list)
    epochs_run: int = 0
    best_epoch: int | None = None


def _restore(model: ModelBundle, best: ModelBundle) -> None:
    params = model.parameters()
    for name, value in best.parameters().items():
        params[name][...] = value


def train(
    model: ModelBundle,
    instances: Sequence[WindowInstance],
    config: TrainConfig,
    dev_score: Callable[[ModelBundle], float] | None = None,
    on_step: Callable[[ModelBundle], None] | None = None,
) -> TrainResult:
    """Train ``model`` in place on labeled windows and return the loss log.

    With ``dev_score``, training stops after ``patience`` epochs without a
    dev improvement and the best epoch's weights are restored. Weights are
    rounded to 32-bit values at the end so saved models reload bit-exactly.
    """
    if not instances:
        msg = "training set is empty"
        raise TrainingError(msg)
    classes = len(model.labels)
    gold = np.array([-1 if instance.label is None else instance.label for instance in instances], dtype=np.int64)
    bad = np.flatnonzero((gold < 0) | (gold >= classes))
    if bad.size:
        msg = f"instance {int(bad[0])} has label {int(gold[bad[0]])} outside the {classes} classes of {model.hyper.task}"
        raise TrainingError(msg)
    shapes = {instance.rows.shape for instance in instances}
    if shapes != {(model.hyper.sequence_length, 3)}:
        msg = f"window shapes {sorted(shapes)} do not match the model's sequence length {model.hyper.sequence_length}"
        raise TrainingError(msg)

    rows = np.stack([instance.rows for instance in instances])
    class_weights = balanced_class_weights(gold, classes) if config.class_weight == "balanced" else None
    filters = model.conv.filters.shape[0]
    state = AdaGradState.zeros(model.parameters())
    result = TrainResult(model=model, losses=[])
    best: ModelBundle | None = None
    best_score = -np.inf
    stale = 0

    for epoch in range(config.epochs):
        order = epoch_permutation(config.seed, epoch, len(instances))
        rng = np.random.default_rng([config.seed, epoch, 1])
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            masks = sample_mask(rng, (len(batch), filters), model.hyper.keep_prob)
            batch_rows = rows[batch]
            if config.unk_rate > 0:
                batch_rows = _replace_unknown(batch_rows, rng, config.unk_rate)
            loss, grads = batch_gradients(model, batch_rows, gold[batch], masks, config.l2, class_weights)
            adagrad_step(model.parameters(), grads, state, config.learning_rate, config.adagrad_eps)
            constrain(model)
            total += loss * len(batch)
            if on_step is not None:
                on_step(model)
        result.losses.append(total / len(instances))
        result.epochs_run = epoch + 1

        if dev_score is None:
            logger.info("%s epoch %d: loss %.5f", model.hyper.task, epoch + 1, result.losses[-1])
            continue
        score = float(dev_score(model))
        result.dev_scores.append(score)
        logger.info("%s epoch %d: loss %.5f, dev %.4f", model.hyper.task, epoch + 1, result.losses[-1], score)
        if score > best_score:
            best_score, best, stale = score, model.copy(), 0
            result.best_epoch = epoch + 1
        else:
            stale += 1
            if stale >= config.patience:
                logger.info("early stop after epoch %d; best dev %.4f at epoch %d", epoch + 1, best_score, result.best_epoch)
                break

    if best is not None:
        _restore(model, best)
    model.quantize()
    return result


def predict(model: ModelBundle, window: WindowInstance) -> tuple[str, np.ndarray]:
    """Most probable label (lowest index on ties) and the class probabilities."""
    probs = forward(model, window, Mode.TEST).probs[0]
    return model.labels[int(np.argmax(probs))], probs


def predict_indices(model: ModelBundle, windows: Sequence[WindowInstance], batch_size: int = 512) -> np.ndarray:
    """Class index per window, batched TEST-mode forward passes."""
    if not windows:
        return np.zeros(0, dtype=np.int64)
    rows = np.stack([window.rows for window in windows])
    out = [
        forward_batch(model, rows[start : start + batch_size], Mode.TEST).probs.argmax(axis=1)
        for start in range(0, len(rows), batch_size)
    ]
    return np.concatenate(out)


def build_model(
    config: TrainConfig,
    vocabularies: VocabularySet,
    labels: Sequence[str],
    task: str,
    tagger: TaggerModel | None = None,
    pretrained: list[str] | None = None,
) -> ModelBundle:
    """A freshly initialized model with the config's shapes and seed."""
    return init_model(
        vocabularies,
        tuple(labels),
        task,
        window=config.window,
        kernel_width=config.kernel_width,
        filters=config.filters,
        hidden=config.hidden,
        dims=(config.token_dim, config.pos_dim, config.shape_dim),
        keep_prob=config.keep_prob,
        max_norm=config.max_norm,
        norm_targets=config.norm_targets,
        anchor=config.anchor,
        init_scale=config.init_scale,
        seed=config.seed,
        tagger=tagger,
        pretrained=pretrained,
    )
