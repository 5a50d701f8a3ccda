"""
Threshold Mask Module

Task-specific per-neuron thresholds on a frozen parent network: mask
generation, gated activations, masked inference and sparsity measurement.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ShapeError, ThresholdError, DatasetError
from .nn_core import (
    LayerShape, LayerParams, NetworkSpec, Weights,
    layer_forward, relu_forward, check_finite,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class ThresholdSet:
    """
    Thresholds of one child task.

    Attributes:
        task_id: Task name
        tensors: One array per hidden layer, shaped like that layer's output
        head: Optional task-specific classifier replacing the parent's
    """

    task_id: str
    tensors: List[np.ndarray]
    head: Optional[LayerParams] = None

    @classmethod
    def constant(cls, spec: NetworkSpec, task_id: str, value: float) -> "ThresholdSet":
        """Every threshold set to the same value."""
        return cls(task_id, [np.full(layer.output_shape, float(value)) for layer in spec.hidden_layers])

    @property
    def n_thresholds(self) -> int:
        return int(sum(t.size for t in self.tensors))

    def copy(self) -> "ThresholdSet":
        return ThresholdSet(self.task_id, [t.copy() for t in self.tensors],
                            None if self.head is None else self.head.copy())

    def validate(self, spec: NetworkSpec):
        """
        Check shapes against the network and positivity.

        Raises:
            ThresholdError: On count/shape mismatch or t <= 0
        """
        hidden = spec.hidden_layers
        if len(self.tensors) != len(hidden):
            raise ThresholdError(
                f"task '{self.task_id}' has {len(self.tensors)} threshold tensors, "
                f"network has {len(hidden)} hidden layers"
            )
        for i, (layer, t) in enumerate(zip(hidden, self.tensors)):
            if t.shape != layer.output_shape:
                raise ThresholdError(
                    f"task '{self.task_id}' layer {i}: threshold shape {t.shape}, expected {layer.output_shape}"
                )
            if not np.all(t > 0):
                raise ThresholdError(f"task '{self.task_id}' layer {i}: thresholds must be > 0")
        if self.head is not None and self.head.weight.shape[1] != spec.classifier.c_in:
            raise ThresholdError(
                f"task '{self.task_id}': head takes {self.head.weight.shape[1]} inputs, "
                f"classifier input is {spec.classifier.c_in}"
            )

    def equals(self, other: "ThresholdSet") -> bool:
        if self.task_id != other.task_id or len(self.tensors) != len(other.tensors):
            return False
        if not all(np.array_equal(a, b) for a, b in zip(self.tensors, other.tensors)):
            return False
        if (self.head is None) != (other.head is None):
            return False
        if self.head is None:
            return True
        same_bias = (self.head.bias is None and other.head.bias is None) or (
            self.head.bias is not None and other.head.bias is not None
            and np.array_equal(self.head.bias, other.head.bias)
        )
        return np.array_equal(self.head.weight, other.head.weight) and same_bias

    def to_document(self, layer_names: Sequence[str] = None) -> Dict[str, Any]:
        """Structured-text form: row-major flat arrays plus shapes."""
        names = list(layer_names) if layer_names else [f"hidden{i + 1}" for i in range(len(self.tensors))]
        doc = {
            "format_version": FORMAT_VERSION,
            "task_id": self.task_id,
            "layers": [
                {"name": name, "shape": list(t.shape), "values": t.ravel().tolist()}
                for name, t in zip(names, self.tensors)
            ],
            "head": None,
        }
        if self.head is not None:
            doc["head"] = {
                "shape": list(self.head.weight.shape),
                "weight": self.head.weight.ravel().tolist(),
                "bias": None if self.head.bias is None else self.head.bias.tolist(),
            }
        return doc

    @classmethod
    def from_document(cls, doc: Dict[str, Any]) -> "ThresholdSet":
        """Inverse of to_document."""
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise ThresholdError(f"unsupported threshold document version {version}")
        tensors = []
        for entry in doc["layers"]:
            values = np.asarray(entry["values"], dtype=np.float64)
            shape = tuple(entry["shape"])
            if values.size != int(np.prod(shape)):
                raise ThresholdError(f"layer {entry.get('name')}: {values.size} values for shape {shape}")
            tensors.append(values.reshape(shape))
        head = None
        if doc.get("head"):
            h = doc["head"]
            weight = np.asarray(h["weight"], dtype=np.float64).reshape(tuple(h["shape"]))
            bias = None if h.get("bias") is None else np.asarray(h["bias"], dtype=np.float64)
            head = LayerParams(weight, bias)
        return cls(doc["task_id"], tensors, head)

    def save(self, path: Union[str, Path], layer_names: Sequence[str] = None):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(self.to_document(layer_names), f, indent=1, sort_keys=True)
            f.write("\n")
        logger.info(f"Saved thresholds for task '{self.task_id}' to {path}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ThresholdSet":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_document(json.load(f))


@dataclass
class MaskedForwardTrace:
    """Per hidden layer: pre-activations Y, masks M, gated activations A."""

    logits: np.ndarray
    preacts: List[np.ndarray] = field(default_factory=list)
    masks: List[np.ndarray] = field(default_factory=list)
    activations: List[np.ndarray] = field(default_factory=list)


@dataclass(frozen=True)
class SparsityProfile:
    """
    Layerwise fraction of zero output activations.

    Attributes:
        task_id: Task the profile belongs to
        layers: Layer names
        values: Sparsity per layer, each in [0, 1]
        mode: "mime" (threshold masks) or "relu"
        source: "measured" or "fixture"
        n_samples: Evaluation set size (0 for fixtures)
    """

    task_id: str
    layers: Tuple[str, ...]
    values: Tuple[float, ...]
    mode: str = "mime"
    source: str = "measured"
    n_samples: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.layers) != len(self.values):
            raise ShapeError("sparsity profile needs one value per layer")
        for name, value in zip(self.layers, self.values):
            if not 0.0 <= value <= 1.0:
                raise ShapeError(f"sparsity of {name} must lie in [0, 1], got {value}")

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.layers, self.values))

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values else 0.0

    def to_document(self) -> Dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "task_id": self.task_id,
            "mode": self.mode,
            "source": self.source,
            "n_samples": self.n_samples,
            "layers": [{"name": n, "sparsity": v} for n, v in zip(self.layers, self.values)],
        }

    @classmethod
    def from_document(cls, doc: Dict[str, Any]) -> "SparsityProfile":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ShapeError(f"unsupported sparsity document version {doc.get('format_version')}")
        return cls(
            task_id=doc["task_id"],
            layers=tuple(e["name"] for e in doc["layers"]),
            values=tuple(e["sparsity"] for e in doc["layers"]),
            mode=doc.get("mode", "mime"),
            source=doc.get("source", "measured"),
            n_samples=int(doc.get("n_samples", 0)),
        )


def apply_mask(y: np.ndarray, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Threshold mask and gated activation.

    m = 1 where y - t >= 0 (ties fire), a = y * m.

    Args:
        y: Pre-activations, shaped like t or with a leading batch axis
        t: Positive thresholds

    Returns:
        (m, a) as float arrays shaped like y

    Raises:
        ShapeError: If y and t do not line up
        ThresholdError: If any threshold is <= 0
    """
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if y.shape != t.shape and y.shape[1:] != t.shape:
        raise ShapeError(f"pre-activation shape {y.shape} does not match threshold shape {t.shape}")
    if not np.all(t > 0):
        raise ThresholdError("thresholds must be > 0")
    fire = y >= t
    return fire.astype(np.float64), np.where(fire, y, 0.0)


def classifier_for(spec: NetworkSpec, weights: Weights,
                   thresholds: ThresholdSet = None) -> Tuple[LayerShape, LayerParams]:
    """Classifier layer and parameters used for a task: its head, else the parent's."""
    if thresholds is None or thresholds.head is None:
        return spec.classifier, weights.layers[-1]
    head = thresholds.head
    layer = LayerShape(kind="fc", c_in=head.weight.shape[1], c_out=head.weight.shape[0],
                       has_bias=head.bias is not None, name="head")
    return layer, head


def masked_forward(spec: NetworkSpec, weights: Weights, thresholds: ThresholdSet,
                   x: np.ndarray) -> MaskedForwardTrace:
    """
    Inference with threshold masks on every hidden layer.

    The classifier (parent or task head) emits raw logits.

    Args:
        spec: Network description
        weights: Frozen parent weights
        thresholds: Task thresholds
        x: Input sample or batch

    Returns:
        Full MaskedForwardTrace
    """
    if len(thresholds.tensors) != len(spec.hidden_layers):
        raise ThresholdError(
            f"task '{thresholds.task_id}' has {len(thresholds.tensors)} threshold tensors, "
            f"network has {len(spec.hidden_layers)} hidden layers"
        )
    trace = MaskedForwardTrace(logits=None)
    h = x
    for i, (layer, t) in enumerate(zip(spec.hidden_layers, thresholds.tensors)):
        y = layer_forward(layer, weights.layers[i], h, index=i)
        check_finite(y, i)
        m, a = apply_mask(y, t)
        trace.preacts.append(y)
        trace.masks.append(m)
        trace.activations.append(a)
        h = a
    head_layer, head_params = classifier_for(spec, weights, thresholds)
    last = len(spec.layers) - 1
    trace.logits = layer_forward(head_layer, head_params, h, index=last)
    check_finite(trace.logits, last)
    return trace


def measure_sparsity(spec: NetworkSpec, weights: Weights, thresholds: Optional[ThresholdSet],
                     dataset: np.ndarray, batch_size: int = 256,
                     task_id: str = None) -> SparsityProfile:
    """
    Average layerwise activation sparsity over a dataset.

    Args:
        spec: Network description
        weights: Parent weights
        thresholds: Task thresholds, or None for plain ReLU inference
        dataset: Batch of inputs (N, ...)
        batch_size: Samples per forward pass
        task_id: Profile name (defaults to the threshold task or "relu")

    Returns:
        SparsityProfile with s = zeros / (n_output_neurons * n_samples) per hidden layer
    """
    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.ndim == 0 or dataset.shape[0] == 0:
        raise DatasetError("cannot measure sparsity on an empty dataset")
    zeros = np.zeros(len(spec.hidden_layers), dtype=np.int64)
    n = dataset.shape[0]
    for start in range(0, n, batch_size):
        batch = dataset[start:start + batch_size]
        if thresholds is None:
            _, acts = relu_forward(spec, weights, batch)
        else:
            acts = masked_forward(spec, weights, thresholds, batch).activations
        for i, a in enumerate(acts):
            zeros[i] += int(np.count_nonzero(a == 0))
    values = [zeros[i] / (layer.n_outputs * n) for i, layer in enumerate(spec.hidden_layers)]
    names = spec.layer_names()[:-1]
    mode = "relu" if thresholds is None else "mime"
    name = task_id or (thresholds.task_id if thresholds is not None else "relu")
    logger.debug(f"Sparsity of '{name}' ({mode}) over {n} samples: {np.round(values, 4).tolist()}")
    return SparsityProfile(name, tuple(names), tuple(values), mode=mode, source="measured", n_samples=n)


def save_profiles(profiles: Sequence[SparsityProfile], path: Union[str, Path],
                  spec: NetworkSpec = None):
    """Write sparsity profiles (and the network they were measured on) as one JSON document."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "format_version": FORMAT_VERSION,
        "network": None if spec is None else spec.to_dict(),
        "profiles": [p.to_document() for p in profiles],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
    logger.info(f"Saved {len(profiles)} sparsity profiles to {path}")


def load_profiles(path: Union[str, Path]) -> Tuple[List[SparsityProfile], Optional[NetworkSpec]]:
    """Read a document written by save_profiles."""
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ShapeError(f"{path}: unsupported sparsity document version {doc.get('format_version')}")
    spec = NetworkSpec.from_dict(doc["network"]) if doc.get("network") else None
    return [SparsityProfile.from_document(p) for p in doc.get("profiles", [])], spec
