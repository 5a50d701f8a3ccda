"""
Architecture Accounting

Per-layer weight, threshold and MAC counts, and the DRAM storage
comparison between one-model-per-task inference and shared weights
plus per-task thresholds.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import List, Sequence, Tuple, Union

from .errors import ConfigError
from .nn_core import NetworkSpec, count_params

logger = logging.getLogger(__name__)

Number = Union[int, float, Fraction]


@dataclass(frozen=True)
class LayerFootprint:
    name: str
    kind: str
    n_weights: int
    n_biases: int
    n_thresholds: int
    n_output_neurons: int
    n_macs_dense: int
    n_inputs: int


@dataclass(frozen=True)
class ModelFootprint:
    """
    Counts of a network; words are bytes_per_word bytes wide.

    Weight words include biases. Thresholds exist on hidden layers only.
    """

    layers: Tuple[LayerFootprint, ...]
    bytes_per_word: int = 2

    @property
    def n_weights(self) -> int:
        return sum(l.n_weights + l.n_biases for l in self.layers)

    @property
    def n_thresholds(self) -> int:
        return sum(l.n_thresholds for l in self.layers)

    @property
    def n_output_neurons(self) -> int:
        return sum(l.n_output_neurons for l in self.layers)

    @property
    def n_macs_dense(self) -> int:
        return sum(l.n_macs_dense for l in self.layers)

    @property
    def weight_bytes(self) -> int:
        return self.n_weights * self.bytes_per_word

    @property
    def threshold_bytes(self) -> int:
        return self.n_thresholds * self.bytes_per_word

    def layer(self, name: str) -> LayerFootprint:
        for entry in self.layers:
            if entry.name == name:
                return entry
        raise ConfigError(f"no layer named '{name}'")


@dataclass(frozen=True)
class StoragePlan:
    n_children: int
    conventional_bytes: int
    mime_bytes: int
    ratio: float
    exceeds_n_times: bool
    head_bytes: int = 0


def footprint(spec: NetworkSpec, bytes_per_word: int = 2,
              threshold_kinds: Sequence[str] = ("conv", "fc")) -> ModelFootprint:
    """
    Aggregate count_params with the threshold rule.

    Args:
        spec: Network description
        bytes_per_word: Storage word width in bytes
        threshold_kinds: Hidden layer kinds that carry thresholds

    Returns:
        ModelFootprint
    """
    counts = count_params(spec)
    names = spec.layer_names()
    last = len(spec.layers) - 1
    layers = []
    for i, (layer, count) in enumerate(zip(spec.layers, counts)):
        thresholded = i < last and layer.kind in threshold_kinds
        layers.append(LayerFootprint(
            name=names[i],
            kind=layer.kind,
            n_weights=count.n_weights,
            n_biases=count.n_biases,
            n_thresholds=count.n_output_neurons if thresholded else 0,
            n_output_neurons=count.n_output_neurons,
            n_macs_dense=count.n_macs_dense,
            n_inputs=layer.n_inputs,
        ))
    return ModelFootprint(tuple(layers), bytes_per_word)


def storage_conventional(fp: ModelFootprint, n_tasks_total: int) -> int:
    """One full weight set per task (parent included)."""
    if n_tasks_total < 1:
        raise ConfigError("n_tasks_total must be >= 1")
    return n_tasks_total * fp.weight_bytes


def storage_mime(fp: ModelFootprint, n_children: int, head_bytes_per_task: int = 0) -> int:
    """Shared parent weights plus per-child thresholds (and optional heads)."""
    if n_children < 0:
        raise ConfigError("n_children must be >= 0")
    return fp.weight_bytes + n_children * (fp.threshold_bytes + head_bytes_per_task)


def storage_ratio(n_weights: Number, n_thresholds: Number, n_children: int) -> Tuple[float, bool]:
    """
    ((n+1)|W|) / (|W| + n|T|) and whether it exceeds n.

    The comparison is done in exact rational arithmetic; it holds iff |W| > n^2 |T|.
    """
    if n_children < 1:
        raise ConfigError("n_children must be >= 1")
    w = Fraction(n_weights) if isinstance(n_weights, (Rational, float)) else Fraction(str(n_weights))
    t = Fraction(n_thresholds) if isinstance(n_thresholds, (Rational, float)) else Fraction(str(n_thresholds))
    n = n_children
    ratio = ((n + 1) * w) / (w + n * t)
    return float(ratio), ratio > n


def savings_ratio(fp: ModelFootprint, n_children: int) -> Tuple[float, bool]:
    """storage_ratio over the footprint's weight and threshold totals."""
    return storage_ratio(fp.n_weights, fp.n_thresholds, n_children)


def storage_plan(fp: ModelFootprint, n_children: int, head_bytes_per_task: int = 0) -> StoragePlan:
    conventional = storage_conventional(fp, n_children + 1)
    mime = storage_mime(fp, n_children, head_bytes_per_task)
    ratio = Fraction(conventional, mime)
    return StoragePlan(n_children, conventional, mime, float(ratio), ratio > n_children,
                       head_bytes_per_task)


def storage_sweep(fp: ModelFootprint, n_max: int, head_bytes_per_task: int = 0) -> List[StoragePlan]:
    """StoragePlan for n = 1..n_max children."""
    if n_max < 1:
        raise ConfigError("storage sweep needs n_max >= 1")
    plans = [storage_plan(fp, n, head_bytes_per_task) for n in range(1, n_max + 1)]
    logger.debug(f"Storage sweep n=1..{n_max}: ratios {[round(p.ratio, 4) for p in plans]}")
    return plans
