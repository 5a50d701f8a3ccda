"""
Trainer Module

Learns per-task thresholds on a frozen parent network with a triangular
surrogate gradient and Adam, and trains the weight-based baselines
(parent, fine-tuned child, pruned child) the thresholds are compared to.
"""

import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from .errors import DatasetError, NumericError, ConfigError
from .nn_core import (
    LayerParams, NetworkSpec, Weights,
    init_network, layer_forward, layer_backward, check_finite, relu_forward,
)
from .threshold_mask import (
    ThresholdSet, classifier_for, masked_forward, measure_sparsity,
)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SurrogateSpec:
    """Triangular hat g(u) = max(0, 1 - |u|/w) / w standing in for the step derivative."""

    kind: str = "triangular"
    width: float = 1.0

    def __post_init__(self):
        if self.kind != "triangular":
            raise ConfigError(f"unsupported surrogate '{self.kind}'")
        if not self.width > 0:
            raise ConfigError(f"surrogate width must be > 0, got {self.width}")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by threshold and weight training."""

    epochs: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 100
    beta: float = 1e-6
    seed: int = 0
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)
    threshold_init: float = 1e-2
    threshold_floor: float = 1e-4
    surrogate_through_y: bool = True
    train_head: bool = True
    progress: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not (self.learning_rate > 0 and self.threshold_init > 0 and self.threshold_floor > 0):
            raise ConfigError("learning_rate, threshold_init and threshold_floor must be > 0")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if isinstance(self.surrogate, dict):
            object.__setattr__(self, "surrogate", SurrogateSpec(**self.surrogate))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class AdamState:
    """Adam moments for a flat list of parameter arrays."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])

    @classmethod
    def for_thresholds(cls, thresholds: ThresholdSet) -> "AdamState":
        return cls.zeros_like(_threshold_arrays(thresholds))


@dataclass(frozen=True)
class LossReport:
    total: float
    l_ce: float
    l_t: float
    accuracy: float


@dataclass(frozen=True)
class EpochReport:
    task: str
    epoch: int
    loss: float
    l_ce: float
    l_t: float
    accuracy: float
    mean_sparsity: float


@dataclass
class TaskGradients:
    thresholds: List[np.ndarray]
    head: Optional[LayerParams] = None


def threshold_reg(thresholds: ThresholdSet) -> Tuple[float, List[np.ndarray]]:
    """
    Exponential threshold regularizer.

    Returns:
        (sum of exp(t) over every threshold, exp(t) per tensor as gradient)
    """
    grads = [np.exp(t) for t in thresholds.tensors]
    return float(sum(float(g.sum()) for g in grads)), grads


def surrogate_grad(u, spec: SurrogateSpec = SurrogateSpec()):
    """Surrogate step derivative at u = y - t; accepts scalars or arrays."""
    w = spec.width
    g = np.maximum(0.0, 1.0 - np.abs(u) / w) / w
    return float(g) if np.ndim(g) == 0 else g


def surrogate_ramp(u, spec: SurrogateSpec = SurrogateSpec()):
    """Antiderivative of surrogate_grad going 0 -> 1 over [-w, w]."""
    w = spec.width
    u = np.asarray(u, dtype=np.float64)
    ramp = np.where(
        u <= 0.0,
        (np.clip(u, -w, 0.0) + w) ** 2 / (2 * w * w),
        1.0 - (w - np.clip(u, 0.0, w)) ** 2 / (2 * w * w),
    )
    return float(ramp) if ramp.ndim == 0 else ramp


def _softmax_xent(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(log_probs[np.arange(n), labels].mean())
    d_logits = np.exp(log_probs)
    d_logits[np.arange(n), labels] -= 1.0
    return loss, d_logits / n


def _check_batch(inputs, labels, n_classes: int) -> Tuple[np.ndarray, np.ndarray]:
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if inputs.shape[0] == 0 or labels.shape[0] != inputs.shape[0]:
        raise DatasetError(f"batch has {inputs.shape[0]} inputs and {labels.shape[0]} labels")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise DatasetError(f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
    return inputs, labels


def loss_and_grads(spec: NetworkSpec, weights: Weights, thresholds: ThresholdSet,
                   inputs: np.ndarray, labels: np.ndarray, config: TrainConfig,
                   relaxed: bool = False) -> Tuple[LossReport, TaskGradients]:
    """
    Loss L = L_CE + beta * L_t and its gradient w.r.t. thresholds (and head).

    Parent weights are read, never written. Per neuron the backward pass uses
    da/dt = -y g(y - t) and da/dy = m + y g(y - t).

    Args:
        spec: Network description
        weights: Frozen parent weights
        thresholds: Current task thresholds (and optional head)
        inputs: Batch of inputs
        labels: Integer class labels
        config: Training configuration
        relaxed: Replace the step by its ramp antiderivative in the forward pass

    Returns:
        (LossReport, TaskGradients)
    """
    head_layer, head_params = classifier_for(spec, weights, thresholds)
    inputs, labels = _check_batch(inputs, labels, head_layer.c_out)

    layer_inputs, preacts, gates = [], [], []
    h = inputs
    for i, (layer, t) in enumerate(zip(spec.hidden_layers, thresholds.tensors)):
        y = layer_forward(layer, weights.layers[i], h, index=i)
        check_finite(y, i)
        if relaxed:
            gate = surrogate_ramp(y - t, config.surrogate)
        else:
            gate = (y >= t).astype(np.float64)
        layer_inputs.append(h)
        preacts.append(y)
        gates.append(gate)
        h = y * gate

    last = len(spec.layers) - 1
    logits = layer_forward(head_layer, head_params, h, index=last)
    check_finite(logits, last)
    l_ce, d_logits = _softmax_xent(logits, labels)
    l_t, reg_grads = threshold_reg(thresholds)
    total = l_ce + config.beta * l_t
    if not math.isfinite(total):
        raise NumericError(f"loss is not finite ({total})")
    accuracy = float(np.mean(np.argmax(logits, axis=1) == labels))

    train_head = thresholds.head is not None and config.train_head
    dh, head_grad = layer_backward(head_layer, head_params, h, d_logits, need_params=train_head)

    t_grads: List[np.ndarray] = [None] * len(preacts)
    for i in reversed(range(len(preacts))):
        y, gate, t = preacts[i], gates[i], thresholds.tensors[i]
        g = surrogate_grad(y - t, config.surrogate)
        t_grads[i] = -(dh * y * g).sum(axis=0) + config.beta * reg_grads[i]
        if i == 0:
            break
        dy = dh * (gate + y * g) if config.surrogate_through_y else dh * gate
        dh, _ = layer_backward(spec.hidden_layers[i], weights.layers[i], layer_inputs[i], dy, need_params=False)

    return LossReport(total, l_ce, l_t, accuracy), TaskGradients(t_grads, head_grad)


def _threshold_arrays(thresholds: ThresholdSet) -> List[np.ndarray]:
    arrays = list(thresholds.tensors)
    if thresholds.head is not None:
        arrays.append(thresholds.head.weight)
        if thresholds.head.bias is not None:
            arrays.append(thresholds.head.bias)
    return arrays


def _adam_update(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
                 state: AdamState, lr: float) -> List[np.ndarray]:
    """One bias-corrected Adam step; returns new arrays and advances state."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    step_size = lr / bc1
    updated = []
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        denom = np.sqrt(state.v[k]) / math.sqrt(bc2) + state.eps
        updated.append(p - step_size * state.m[k] / denom)
    return updated


def adam_step(thresholds: ThresholdSet, grads: TaskGradients, state: AdamState,
              config: TrainConfig) -> Tuple[ThresholdSet, AdamState]:
    """
    Adam update of thresholds (and head), then clamp t to threshold_floor.

    Args:
        thresholds: Current thresholds, left untouched
        grads: Gradients from loss_and_grads
        state: Adam moments, advanced in place
        config: Supplies learning_rate and threshold_floor

    Returns:
        (new ThresholdSet, state)
    """
    params = _threshold_arrays(thresholds)
    flat_grads = list(grads.thresholds)
    if thresholds.head is not None:
        head = grads.head
        flat_grads.append(head.weight if head is not None else np.zeros_like(thresholds.head.weight))
        if thresholds.head.bias is not None:
            flat_grads.append(head.bias if head is not None else np.zeros_like(thresholds.head.bias))
    updated = _adam_update(params, flat_grads, state, config.learning_rate)

    n_t = len(thresholds.tensors)
    tensors = [np.maximum(t, config.threshold_floor) for t in updated[:n_t]]
    head = None
    if thresholds.head is not None:
        bias = updated[n_t + 1] if thresholds.head.bias is not None else None
        head = LayerParams(updated[n_t], bias)
    return ThresholdSet(thresholds.task_id, tensors, head), state


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def evaluate_thresholds(spec: NetworkSpec, weights: Weights, thresholds: ThresholdSet,
                        inputs: np.ndarray, labels: np.ndarray, config: TrainConfig,
                        batch_size: int = 500) -> LossReport:
    """Loss report of a threshold set over a whole dataset."""
    logits = np.concatenate([
        masked_forward(spec, weights, thresholds, inputs[s:s + batch_size]).logits
        for s in range(0, inputs.shape[0], batch_size)
    ])
    l_ce, _ = _softmax_xent(logits, np.asarray(labels))
    l_t, _ = threshold_reg(thresholds)
    accuracy = float(np.mean(np.argmax(logits, axis=1) == labels))
    return LossReport(l_ce + config.beta * l_t, l_ce, l_t, accuracy)


def train_thresholds(spec: NetworkSpec, weights: Weights, inputs: np.ndarray, labels: np.ndarray,
                     config: TrainConfig, task_id: str = "child",
                     head: LayerParams = None) -> Tuple[ThresholdSet, List[EpochReport]]:
    """
    Learn a ThresholdSet for one task with the parent weights frozen.

    Thresholds start at config.threshold_init; the shuffle order comes from
    config.seed.

    Args:
        spec: Network description
        weights: Trained parent weights (never modified)
        inputs: Task inputs
        labels: Task labels
        config: Training configuration
        task_id: Name stored in the ThresholdSet
        head: Optional task classifier trained jointly

    Returns:
        (final ThresholdSet, one EpochReport per epoch)

    Raises:
        NumericError: If the loss turns NaN
    """
    n_classes = head.weight.shape[0] if head is not None else spec.classifier_classes
    inputs, labels = _check_batch(inputs, labels, n_classes)
    thresholds = ThresholdSet.constant(spec, task_id, config.threshold_init)
    thresholds.head = None if head is None else head.copy()
    state = AdamState.for_thresholds(thresholds)
    rng = np.random.default_rng(config.seed)
    history: List[EpochReport] = []

    logger.info(f"Training thresholds for task '{task_id}': {thresholds.n_thresholds} thresholds, "
                f"{inputs.shape[0]} samples, {config.epochs} epochs")
    epochs = tqdm(range(1, config.epochs + 1), desc=f"thresholds[{task_id}]",
                  disable=not config.progress, leave=False)
    for epoch in epochs:
        for idx in _batches(inputs.shape[0], config.batch_size, rng):
            _, grads = loss_and_grads(spec, weights, thresholds, inputs[idx], labels[idx], config)
            thresholds, state = adam_step(thresholds, grads, state, config)
        report = evaluate_thresholds(spec, weights, thresholds, inputs, labels, config)
        if not math.isfinite(report.total):
            raise NumericError(f"task '{task_id}' diverged at epoch {epoch}")
        sparsity = measure_sparsity(spec, weights, thresholds, inputs).mean
        history.append(EpochReport(task_id, epoch, report.total, report.l_ce, report.l_t,
                                   report.accuracy, sparsity))
        logger.info(f"[{task_id}] epoch {epoch}: loss={report.total:.4f} acc={report.accuracy:.4f} "
                    f"sparsity={sparsity:.4f}")
    return thresholds, history


def _relu_loss_and_grads(spec: NetworkSpec, weights: Weights, inputs: np.ndarray,
                         labels: np.ndarray) -> Tuple[LossReport, List[LayerParams]]:
    """Cross-entropy and full weight gradients of a plain ReLU network."""
    layer_inputs, preacts = [], []
    h = inputs
    for i, (layer, params) in enumerate(zip(spec.layers, weights.layers)):
        y = layer_forward(layer, params, h, index=i)
        check_finite(y, i)
        layer_inputs.append(h)
        preacts.append(y)
        h = np.maximum(y, 0.0)
    logits = preacts[-1]
    l_ce, d = _softmax_xent(logits, labels)
    if not math.isfinite(l_ce):
        raise NumericError(f"loss is not finite ({l_ce})")
    accuracy = float(np.mean(np.argmax(logits, axis=1) == labels))

    grads: List[LayerParams] = [None] * len(spec.layers)
    for i in reversed(range(len(spec.layers))):
        if i < len(spec.layers) - 1:
            d = d * (preacts[i] > 0)
        d_in, grads[i] = layer_backward(spec.layers[i], weights.layers[i], layer_inputs[i], d)
        d = d_in
    return LossReport(l_ce, l_ce, 0.0, accuracy), grads


def _flatten(weights: Weights) -> List[np.ndarray]:
    arrays = []
    for p in weights.layers:
        arrays.append(p.weight)
        if p.bias is not None:
            arrays.append(p.bias)
    return arrays


def _unflatten(template: Weights, arrays: Sequence[np.ndarray]) -> Weights:
    layers, k = [], 0
    for p in template.layers:
        weight = arrays[k]
        k += 1
        bias = None
        if p.bias is not None:
            bias = arrays[k]
            k += 1
        layers.append(LayerParams(weight, bias))
    return Weights(layers)


def _train_weights(spec: NetworkSpec, weights: Weights, inputs: np.ndarray, labels: np.ndarray,
                   config: TrainConfig, task_id: str,
                   masks: List[Optional[np.ndarray]] = None) -> Tuple[Weights, List[EpochReport]]:
    """Adam over every weight of a ReLU network; masked weights stay zero."""
    inputs, labels = _check_batch(inputs, labels, spec.classifier_classes)
    weights = weights.copy()
    if masks is not None:
        weights = Weights([LayerParams(p.weight * m, p.bias) for p, m in zip(weights.layers, masks)])
    state = AdamState.zeros_like(_flatten(weights))
    rng = np.random.default_rng(config.seed)
    history: List[EpochReport] = []

    epochs = tqdm(range(1, config.epochs + 1), desc=f"weights[{task_id}]",
                  disable=not config.progress, leave=False)
    for epoch in epochs:
        for idx in _batches(inputs.shape[0], config.batch_size, rng):
            _, grads = _relu_loss_and_grads(spec, weights, inputs[idx], labels[idx])
            if masks is not None:
                grads = [LayerParams(g.weight * m, g.bias) for g, m in zip(grads, masks)]
            flat_grads = _flatten(Weights(grads))
            weights = _unflatten(weights, _adam_update(_flatten(weights), flat_grads, state,
                                                       config.learning_rate))
            if masks is not None:
                weights = Weights([LayerParams(p.weight * m, p.bias) for p, m in zip(weights.layers, masks)])
        logits, acts = relu_forward(spec, weights, inputs)
        l_ce, _ = _softmax_xent(logits, labels)
        if not math.isfinite(l_ce):
            raise NumericError(f"{task_id} weight training diverged at epoch {epoch}")
        accuracy = float(np.mean(np.argmax(logits, axis=1) == labels))
        sparsity = float(np.mean([np.mean(a == 0) for a in acts])) if acts else 0.0
        history.append(EpochReport(task_id, epoch, l_ce, l_ce, 0.0, accuracy, sparsity))
        logger.info(f"[{task_id}] epoch {epoch}: loss={l_ce:.4f} acc={accuracy:.4f}")
    return weights, history


def train_parent(spec: NetworkSpec, inputs: np.ndarray, labels: np.ndarray,
                 config: TrainConfig, task_id: str = "parent") -> Tuple[Weights, List[EpochReport]]:
    """Train a parent network from a seeded initialization."""
    logger.info(f"Training parent network '{spec.name or 'unnamed'}' on {inputs.shape[0]} samples")
    return _train_weights(spec, init_network(spec, config.seed), inputs, labels, config, task_id)


def train_finetuned(spec: NetworkSpec, weights: Weights, inputs: np.ndarray, labels: np.ndarray,
                    config: TrainConfig, task_id: str = "finetuned") -> Tuple[Weights, List[EpochReport]]:
    """Fine-tune every weight of a copy of the parent (with a task-sized classifier)."""
    weights.check(spec)
    return _train_weights(spec, weights, inputs, labels, config, task_id)


def prune_masks(weights: Weights, prune_fraction: float) -> List[np.ndarray]:
    """
    Magnitude masks zeroing ceil(prune_fraction * n) weights per layer.

    Ties are broken by a stable sort on flat index.
    """
    if not 0.0 <= prune_fraction < 1.0:
        raise ConfigError(f"prune_fraction must lie in [0, 1), got {prune_fraction}")
    masks = []
    for p in weights.layers:
        n = p.weight.size
        n_zero = math.ceil(round(prune_fraction * n, 9))
        mask = np.ones(n)
        order = np.argsort(np.abs(p.weight).ravel(), kind="stable")
        mask[order[:n_zero]] = 0.0
        masks.append(mask.reshape(p.weight.shape))
    return masks


def train_pruned(spec: NetworkSpec, inputs: np.ndarray, labels: np.ndarray, config: TrainConfig,
                 prune_fraction: float, task_id: str = "pruned") -> Tuple[Weights, List[EpochReport]]:
    """
    Prune at initialization, then train with the mask held fixed.

    Args:
        spec: Network description
        inputs: Training inputs
        labels: Training labels
        config: Training configuration (seed drives init and shuffle)
        prune_fraction: Fraction of smallest-magnitude weights zeroed per layer

    Returns:
        (trained Weights, history)
    """
    initial = init_network(spec, config.seed)
    masks = prune_masks(initial, prune_fraction)
    logger.info(f"Training pruned network with {prune_fraction:.0%} weight sparsity")
    return _train_weights(spec, initial, inputs, labels, config, task_id, masks=masks)


def init_head(spec: NetworkSpec, weights: Weights, n_classes: int,
              class_groups: Sequence[Sequence[int]] = None, seed: int = 0) -> LayerParams:
    """
    Task classifier head.

    With class_groups, row k is the mean of the parent classifier rows of the
    parent classes merged into child class k. Otherwise rows are drawn like
    init_network draws an fc layer.
    """
    parent = weights.layers[-1]
    fan_in = spec.classifier.c_in
    if class_groups is not None:
        if len(class_groups) != n_classes:
            raise ConfigError(f"{len(class_groups)} class groups for {n_classes} classes")
        weight = np.stack([parent.weight[list(group)].mean(axis=0) for group in class_groups])
        bias = None
        if parent.bias is not None:
            bias = np.array([parent.bias[list(group)].mean() for group in class_groups])
        return LayerParams(weight, bias)
    rng = np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (fan_in + n_classes))
    weight = rng.uniform(-bound, bound, size=(n_classes, fan_in))
    return LayerParams(weight, None if parent.bias is None else np.zeros(n_classes))


@dataclass
class Checkpoint:
    spec: NetworkSpec
    weights: Weights
    seed: int
    config: Dict[str, Any]
    thresholds: List[ThresholdSet] = field(default_factory=list)


def save_checkpoint(path: Union[str, Path], spec: NetworkSpec, weights: Weights, seed: int,
                    config: TrainConfig, thresholds: Sequence[ThresholdSet] = ()):
    """
    Write a checkpoint document (sorted keys, row-major decimal arrays).

    Args:
        path: Output file
        spec: Network description
        weights: Weights to store
        seed: Seed of the run
        config: Training configuration of the run
        thresholds: Optional threshold sets
    """
    names = spec.layer_names()[:-1]
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "spec": spec.to_dict(),
        "seed": seed,
        "config": config.to_dict(),
        "weights": [
            {
                "shape": list(p.weight.shape),
                "weight": p.weight.ravel().tolist(),
                "bias": None if p.bias is None else p.bias.tolist(),
            }
            for p in weights.layers
        ],
        "thresholds": [t.to_document(names) for t in thresholds],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")
    logger.info(f"Saved checkpoint to {path}")


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read a document written by save_checkpoint."""
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {doc.get('format_version')}")
    spec = NetworkSpec.from_dict(doc["spec"])
    layers = []
    for entry in doc["weights"]:
        weight = np.asarray(entry["weight"], dtype=np.float64).reshape(tuple(entry["shape"]))
        bias = None if entry.get("bias") is None else np.asarray(entry["bias"], dtype=np.float64)
        layers.append(LayerParams(weight, bias))
    weights = Weights(layers)
    weights.check(spec)
    thresholds = [ThresholdSet.from_document(t) for t in doc.get("thresholds", [])]
    return Checkpoint(spec, weights, int(doc["seed"]), doc["config"], thresholds)
