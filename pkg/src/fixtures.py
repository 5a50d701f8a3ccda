"""
Built-in Fixtures

Network geometries (the VGG16-style CIFAR column and the desk-scale CNN),
published layerwise sparsity tables and accuracies, and the conversion of
sparsity profiles into the (s_in, s_out) pairs the cost model consumes.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import ConfigError, MissingSparsityError
from .nn_core import LayerShape, NetworkSpec
from .threshold_mask import SparsityProfile

logger = logging.getLogger(__name__)

VGG16_NAME = "vgg16-cifar-style"
DESK_NAME = "desk-cnn"

FIXTURE_TASKS = ("cifar10", "cifar100", "fmnist")
TABLE_COLUMNS = ("conv2", "conv4", "conv5", "conv7", "conv8", "conv9",
                 "conv10", "conv12", "conv13", "conv14", "conv15")

# Stored as published decimals; re-emitted verbatim.
SPARSITY_MIME = {
    "cifar10": ("0.6493", "0.6081", "0.6587", "0.6203", "0.6233", "0.6449",
                "0.6679", "0.6477", "0.6553", "0.6855", "0.657"),
    "cifar100": ("0.6522", "0.5951", "0.6373", "0.6100", "0.6121", "0.6279",
                 "0.6580", "0.6374", "0.6388", "0.6703", "0.6571"),
    "fmnist": ("0.6075", "0.5634", "0.6138", "0.5991", "0.5959", "0.6017",
               "0.6204", "0.6014", "0.6125", "0.6138", "0.6287"),
}
SPARSITY_RELU = {
    "cifar10": ("0.4983", "0.4506", "0.5390", "0.5015", "0.5097", "0.5341",
                "0.5635", "0.5358", "0.5420", "0.5627", "0.5608"),
    "cifar100": ("0.5030", "0.4586", "0.5399", "0.5069", "0.5129", "0.5333",
                 "0.5633", "0.5345", "0.5449", "0.5842", "0.6002"),
    "fmnist": ("0.5114", "0.4796", "0.5488", "0.5230", "0.5260", "0.5329",
               "0.5503", "0.5280", "0.5343", "0.5507", "0.5820"),
}
ACCURACY_MIME = {"cifar10": "83.57", "cifar100": "59.42", "fmnist": "88.36"}
ACCURACY_RELU = {"cifar10": "84.25", "cifar100": "60.55", "fmnist": "90.12"}
PARENT_ACCURACY = "73.36"

# Table column -> fixture network layer; None marks columns with no counterpart.
LAYER_MAP: Dict[str, Optional[str]] = {
    "conv2": "conv2", "conv4": "conv4", "conv5": "conv5", "conv7": "conv7",
    "conv8": "conv8", "conv9": "conv9", "conv10": "conv10", "conv12": "conv12",
    "conv13": "conv13", "conv14": None, "conv15": None,
}

_TABLES = {"mime": (SPARSITY_MIME, ACCURACY_MIME), "relu": (SPARSITY_RELU, ACCURACY_RELU)}

# (c_out, stride) per conv; stride 2 replaces pooling
_VGG16_CONVS = ((64, 1), (64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (256, 1),
                (512, 2), (512, 1), (512, 1), (512, 2), (512, 1), (512, 1))


def vgg16_cifar_style(classes: int = 10) -> NetworkSpec:
    """13 conv layers (3x3, pad 1) at 32x32x3 and one fc classifier."""
    layers: List[LayerShape] = []
    c_in, size = 3, 32
    for k, (c_out, stride) in enumerate(_VGG16_CONVS, start=1):
        layer = LayerShape(kind="conv", c_in=c_in, c_out=c_out, h_in=size, w_in=size,
                           k_h=3, k_w=3, stride=stride, pad=1, name=f"conv{k}")
        layers.append(layer)
        c_in, size = c_out, layer.h_out
    layers.append(LayerShape(kind="fc", c_in=c_in * size * size, c_out=classes, name="fc1"))
    spec = NetworkSpec(tuple(layers), classes, VGG16_NAME)
    spec.validate()
    return spec


def desk_cnn(classes: int = 4, input_shape: Sequence[int] = (1, 8, 8)) -> NetworkSpec:
    """Two conv layers, one hidden fc layer and the classifier."""
    c, h, w = input_shape
    conv1 = LayerShape(kind="conv", c_in=c, c_out=8, h_in=h, w_in=w, k_h=3, k_w=3, pad=1, name="conv1")
    conv2 = LayerShape(kind="conv", c_in=8, c_out=16, h_in=conv1.h_out, w_in=conv1.w_out,
                       k_h=3, k_w=3, stride=2, pad=1, name="conv2")
    fc1 = LayerShape(kind="fc", c_in=conv2.n_outputs, c_out=32, name="fc1")
    fc2 = LayerShape(kind="fc", c_in=32, c_out=classes, name="fc2")
    spec = NetworkSpec((conv1, conv2, fc1, fc2), classes, DESK_NAME)
    spec.validate()
    return spec


NETWORK_FIXTURES = {VGG16_NAME: vgg16_cifar_style, DESK_NAME: desk_cnn}


def network_fixture(name: str, classes: int = None, input_shape: Sequence[int] = None) -> NetworkSpec:
    """
    Look up a fixture network by name.

    input_shape applies to the desk network only; the VGG column is fixed at 3x32x32.
    """
    if name not in NETWORK_FIXTURES:
        raise ConfigError(f"unknown network fixture '{name}' (known: {sorted(NETWORK_FIXTURES)})")
    kwargs = {}
    if classes is not None:
        kwargs["classes"] = classes
    if input_shape is not None and name == DESK_NAME:
        kwargs["input_shape"] = tuple(input_shape)
    return NETWORK_FIXTURES[name](**kwargs)


def _table(kind: str):
    if kind not in _TABLES:
        raise ConfigError(f"unknown sparsity table '{kind}' (expected mime or relu)")
    return _TABLES[kind]


def fixture_rows(kind: str, tasks: Sequence[str] = FIXTURE_TASKS) -> List[Tuple[str, str, str]]:
    """(task, column, published decimal) for every table cell."""
    sparsity, _ = _table(kind)
    rows = []
    for task in tasks:
        if task not in sparsity:
            raise MissingSparsityError(task)
        rows.extend((task, column, value) for column, value in zip(TABLE_COLUMNS, sparsity[task]))
    return rows


def fixture_accuracy(kind: str, task: str) -> str:
    _, accuracy = _table(kind)
    if task not in accuracy:
        raise MissingSparsityError(task)
    return accuracy[task]


def fixture_profile(kind: str, task: str, spec: NetworkSpec = None,
                    interpolate: bool = False) -> SparsityProfile:
    """
    Published sparsity of one task, keyed by fixture network layer.

    Args:
        kind: "mime" or "relu"
        task: Fixture task id
        spec: Network whose conv layers receive interpolated values
        interpolate: Fill unpublished conv layers linearly from their neighbours

    Returns:
        SparsityProfile with source "fixture"
    """
    sparsity, _ = _table(kind)
    if task not in sparsity:
        raise MissingSparsityError(task)
    published = {LAYER_MAP[col]: float(v) for col, v in zip(TABLE_COLUMNS, sparsity[task]) if LAYER_MAP[col]}
    if not interpolate:
        names = [n for n in LAYER_MAP.values() if n]
        return SparsityProfile(task, tuple(names), tuple(published[n] for n in names),
                               mode=kind, source="fixture")

    spec = spec or vgg16_cifar_style()
    convs = [name for name, layer in zip(spec.layer_names(), spec.layers) if layer.kind == "conv"]
    known = [(p, published[n]) for p, n in enumerate(convs) if n in published]
    if not known:
        raise MissingSparsityError(task, "any conv layer")
    values = []
    for p, name in enumerate(convs):
        if name in published:
            values.append(published[name])
            continue
        left = [(q, v) for q, v in known if q < p]
        right = [(q, v) for q, v in known if q > p]
        if left and right:
            (ql, vl), (qr, vr) = left[-1], right[0]
            values.append(vl + (vr - vl) * (p - ql) / (qr - ql))
        else:
            values.append(left[-1][1] if left else right[0][1])
        logger.debug(f"Interpolated {kind} sparsity of {name} for '{task}': {values[-1]:.4f}")
    return SparsityProfile(task, tuple(convs), tuple(values), mode=kind, source="fixture")


def profile_pairs(profile: SparsityProfile, spec: NetworkSpec = None) -> Dict[str, Tuple[float, float]]:
    """
    (s_in, s_out) per layer.

    Fixture profiles use the published value for both sides of a layer.
    Measured profiles hold output sparsities, so a layer's s_in is the
    previous layer's s_out (0 for the first layer); the classifier emits
    dense logits.
    """
    if profile.source == "fixture":
        return {name: (v, v) for name, v in zip(profile.layers, profile.values)}
    if spec is None:
        raise ConfigError("measured sparsity needs the network it was measured on")
    measured = profile.as_dict()
    names = spec.layer_names()
    pairs: Dict[str, Tuple[float, float]] = {}
    previous = 0.0
    for k, name in enumerate(names):
        if k == len(names) - 1:
            pairs[name] = (previous, 0.0)
            break
        if name not in measured:
            raise MissingSparsityError(profile.task_id, name)
        pairs[name] = (previous, measured[name])
        previous = measured[name]
    return pairs


def sparsity_table(profiles: Sequence[SparsityProfile],
                   spec: NetworkSpec = None) -> Dict[str, Dict[str, Tuple[float, float]]]:
    """Cost-model sparsity table keyed by task id."""
    return {p.task_id: profile_pairs(p, spec) for p in profiles}
