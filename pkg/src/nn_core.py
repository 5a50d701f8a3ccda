"""
Dense Tensor Engine

Convolution and fully-connected layers for desk-scale networks, plain
ReLU inference, parameter counting and seeded initialization. Tensors are
numpy float64 arrays; conv activations are laid out (channels, height, width)
with an optional leading batch axis.
"""

import logging
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, NumericError

logger = logging.getLogger(__name__)

LAYER_KINDS = ("conv", "fc")


@dataclass(frozen=True)
class LayerShape:
    """Geometry of one conv or fc layer."""

    kind: str
    c_in: int
    c_out: int
    h_in: int = 1
    w_in: int = 1
    k_h: int = 1
    k_w: int = 1
    stride: int = 1
    pad: int = 0
    has_bias: bool = False
    name: str = ""

    @property
    def h_out(self) -> int:
        return (self.h_in + 2 * self.pad - self.k_h) // self.stride + 1

    @property
    def w_out(self) -> int:
        return (self.w_in + 2 * self.pad - self.k_w) // self.stride + 1

    @property
    def input_shape(self) -> Tuple[int, ...]:
        if self.kind == "fc":
            return (self.c_in,)
        return (self.c_in, self.h_in, self.w_in)

    @property
    def output_shape(self) -> Tuple[int, ...]:
        if self.kind == "fc":
            return (self.c_out,)
        return (self.c_out, self.h_out, self.w_out)

    @property
    def weight_shape(self) -> Tuple[int, ...]:
        if self.kind == "fc":
            return (self.c_out, self.c_in)
        return (self.c_out, self.c_in, self.k_h, self.k_w)

    @property
    def n_inputs(self) -> int:
        return self.c_in * self.h_in * self.w_in

    @property
    def n_outputs(self) -> int:
        return self.c_out * self.h_out * self.w_out

    def validate(self, index: int = None):
        """
        Check the layer geometry.

        Args:
            index: Position in the network, used in error messages

        Raises:
            ShapeError: On any invalid field
        """
        where = self.name or (f"layer {index}" if index is not None else "layer")
        if self.kind not in LAYER_KINDS:
            raise ShapeError(f"{where}: unknown kind '{self.kind}' (expected conv or fc)")
        for attr in ("c_in", "c_out", "h_in", "w_in", "k_h", "k_w", "stride"):
            if int(getattr(self, attr)) < 1:
                raise ShapeError(f"{where}: {attr} must be >= 1, got {getattr(self, attr)}")
        if self.pad < 0:
            raise ShapeError(f"{where}: pad must be >= 0, got {self.pad}")
        if self.kind == "fc":
            if (self.h_in, self.w_in, self.k_h, self.k_w, self.stride, self.pad) != (1, 1, 1, 1, 1, 0):
                raise ShapeError(f"{where}: fc layers take a flat input (h=w=k=stride=1, pad=0)")
        elif self.h_out < 1 or self.w_out < 1:
            raise ShapeError(
                f"{where}: kernel {self.k_h}x{self.k_w} with pad {self.pad} does not fit "
                f"input {self.h_in}x{self.w_in}"
            )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LayerShape":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        unknown = set(data) - set(known)
        if unknown:
            raise ShapeError(f"unknown layer fields: {sorted(unknown)}")
        try:
            return cls(**known)
        except TypeError as e:
            raise ShapeError(f"incomplete layer description {data}: {e}") from e


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layers; the last one is the fc classifier."""

    layers: Tuple[LayerShape, ...]
    classifier_classes: int
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def hidden_layers(self) -> Tuple[LayerShape, ...]:
        return self.layers[:-1]

    @property
    def classifier(self) -> LayerShape:
        return self.layers[-1]

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return self.layers[0].input_shape

    def layer_names(self) -> List[str]:
        """Names of all layers, generated as conv<k>/fc<k> when unset."""
        names, counts = [], {"conv": 0, "fc": 0}
        for layer in self.layers:
            counts[layer.kind] += 1
            names.append(layer.name or f"{layer.kind}{counts[layer.kind]}")
        return names

    def validate(self):
        """
        Check per-layer geometry and adjacency.

        Raises:
            ShapeError: If the network is malformed
        """
        if not self.layers:
            raise ShapeError("network has no layers")
        if self.classifier_classes < 1:
            raise ShapeError("classifier_classes must be positive")
        for i, layer in enumerate(self.layers):
            layer.validate(i)
        for i in range(1, len(self.layers)):
            prev, cur = self.layers[i - 1], self.layers[i]
            if cur.kind == "conv":
                ok = prev.kind == "conv" and (prev.c_out, prev.h_out, prev.w_out) == (cur.c_in, cur.h_in, cur.w_in)
                expected = prev.output_shape
                actual = cur.input_shape
            else:
                ok = prev.n_outputs == cur.c_in
                expected = (prev.n_outputs,)
                actual = (cur.c_in,)
            if not ok:
                raise ShapeError(f"layer {i} expects input {actual} but layer {i - 1} produces {expected}")
        last = self.classifier
        if last.kind != "fc" or last.c_out != self.classifier_classes:
            raise ShapeError(
                f"last layer must be fc with {self.classifier_classes} outputs, "
                f"got {last.kind} with {last.c_out}"
            )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "classifier_classes": self.classifier_classes,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetworkSpec":
        layers = tuple(LayerShape.from_dict(item) for item in data["layers"])
        classes = data.get("classifier_classes", layers[-1].c_out if layers else 0)
        spec = cls(layers=layers, classifier_classes=int(classes), name=data.get("name", ""))
        spec.validate()
        return spec


@dataclass
class LayerParams:
    """Weight tensor and optional bias of one layer."""

    weight: np.ndarray
    bias: Optional[np.ndarray] = None

    def copy(self) -> "LayerParams":
        return LayerParams(self.weight.copy(), None if self.bias is None else self.bias.copy())


@dataclass
class Weights:
    """Per-layer parameters matching a NetworkSpec."""

    layers: List[LayerParams] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, index: int) -> LayerParams:
        return self.layers[index]

    def copy(self) -> "Weights":
        return Weights([p.copy() for p in self.layers])

    def check(self, spec: NetworkSpec):
        """Raise ShapeError unless every tensor matches the network geometry."""
        if len(self.layers) != len(spec.layers):
            raise ShapeError(f"weights cover {len(self.layers)} layers, network has {len(spec.layers)}")
        for i, (layer, params) in enumerate(zip(spec.layers, self.layers)):
            if params.weight.shape != layer.weight_shape:
                raise ShapeError(f"layer {i}: weight shape {params.weight.shape}, expected {layer.weight_shape}")
            if layer.has_bias and (params.bias is None or params.bias.shape != (layer.c_out,)):
                raise ShapeError(f"layer {i}: bias missing or not of shape ({layer.c_out},)")

    def equals(self, other: "Weights") -> bool:
        """Bit-exact equality."""
        if len(self) != len(other):
            return False
        for a, b in zip(self.layers, other.layers):
            if not np.array_equal(a.weight, b.weight):
                return False
            if (a.bias is None) != (b.bias is None):
                return False
            if a.bias is not None and not np.array_equal(a.bias, b.bias):
                return False
        return True


@dataclass(frozen=True)
class ParamCount:
    n_weights: int
    n_biases: int
    n_output_neurons: int
    n_macs_dense: int


def init_network(spec: NetworkSpec, seed: int) -> Weights:
    """
    Seeded Glorot-uniform initialization.

    Each layer draws from U[-b, b] with b = sqrt(6 / (fan_in + fan_out)),
    fan counts including the kernel area. Biases start at zero.

    Args:
        spec: Network description
        seed: RNG seed; equal seeds give bit-identical weights

    Returns:
        Freshly initialized Weights
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    params = []
    for layer in spec.layers:
        area = layer.k_h * layer.k_w
        bound = np.sqrt(6.0 / (layer.c_in * area + layer.c_out * area))
        weight = rng.uniform(-bound, bound, size=layer.weight_shape)
        bias = np.zeros(layer.c_out) if layer.has_bias else None
        params.append(LayerParams(weight, bias))
    logger.debug(f"Initialized {len(params)} layers with seed {seed}")
    return Weights(params)


def count_params(spec: NetworkSpec) -> List[ParamCount]:
    """
    Per-layer parameter, neuron and dense MAC counts.

    Args:
        spec: Network description

    Returns:
        One ParamCount per layer
    """
    spec.validate()
    counts = []
    for layer in spec.layers:
        n_weights = int(np.prod(layer.weight_shape))
        n_out = layer.n_outputs
        counts.append(ParamCount(
            n_weights=n_weights,
            n_biases=layer.c_out if layer.has_bias else 0,
            n_output_neurons=n_out,
            n_macs_dense=n_out * layer.c_in * layer.k_h * layer.k_w,
        ))
    return counts


def _as_batch(layer: LayerShape, x: np.ndarray, index: int = None) -> Tuple[np.ndarray, bool]:
    """Return x with a leading batch axis and whether one was added."""
    x = np.asarray(x, dtype=np.float64)
    where = f"layer {index}" if index is not None else (layer.name or "layer")
    if layer.kind == "fc":
        # 1-D and (c, h, w) inputs are single samples; 2-D and 4-D are batches
        single = x.ndim in (1, 3)
        width = x.size if single else int(np.prod(x.shape[1:]))
        if x.ndim in (1, 2, 3, 4) and width == layer.c_in:
            if single:
                return x.reshape(1, layer.c_in), True
            return x.reshape(x.shape[0], layer.c_in), False
        raise ShapeError(f"{where}: expected input of width {layer.c_in}, got shape {x.shape}")
    expected = layer.input_shape
    if x.shape == expected:
        return x[np.newaxis], True
    if x.ndim == 4 and x.shape[1:] == expected:
        return x, False
    raise ShapeError(f"{where}: expected input shape {expected}, got {x.shape}")


def _im2col(layer: LayerShape, x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N, H_out*W_out, C*k_h*k_w) patch matrix."""
    p = layer.pad
    padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    windows = sliding_window_view(padded, (layer.k_h, layer.k_w), axis=(2, 3))
    windows = windows[:, :, ::layer.stride, ::layer.stride]
    n = x.shape[0]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(
        n, layer.h_out * layer.w_out, layer.c_in * layer.k_h * layer.k_w
    )


def layer_forward(layer: LayerShape, params: LayerParams, x: np.ndarray,
                  index: int = None) -> np.ndarray:
    """
    Pre-activation output Y of one layer (no nonlinearity).

    Conv layers compute zero-padded cross-correlation via im2col.

    Args:
        layer: Layer geometry
        params: Weights of the layer
        x: Input, single sample or batch
        index: Layer index for error messages

    Returns:
        Y with the same batching as x

    Raises:
        ShapeError: If x does not match the layer's input geometry
    """
    batch, added = _as_batch(layer, x, index)
    if layer.kind == "fc":
        y = batch @ params.weight.T
        if params.bias is not None:
            y = y + params.bias
    else:
        cols = _im2col(layer, batch)
        y = cols @ params.weight.reshape(layer.c_out, -1).T
        if params.bias is not None:
            y = y + params.bias
        y = y.transpose(0, 2, 1).reshape((batch.shape[0],) + layer.output_shape)
    return y[0] if added else y


def layer_backward(layer: LayerShape, params: LayerParams, x: np.ndarray,
                   dy: np.ndarray, need_params: bool = True) -> Tuple[np.ndarray, Optional[LayerParams]]:
    """
    Gradients of a layer's linear map.

    Args:
        layer: Layer geometry
        params: Weights of the layer
        x: Batched input the forward pass saw
        dy: Batched gradient w.r.t. the layer output
        need_params: Also return weight/bias gradients

    Returns:
        (dx shaped like x, LayerParams of gradients or None)
    """
    batch, _ = _as_batch(layer, x)
    n = batch.shape[0]
    grads = None
    if layer.kind == "fc":
        dy = dy.reshape(n, layer.c_out)
        dx = (dy @ params.weight).reshape(x.shape)
        if need_params:
            grads = LayerParams(dy.T @ batch, dy.sum(axis=0) if params.bias is not None else None)
        return dx, grads

    dy_rows = dy.reshape(n, layer.c_out, -1).transpose(0, 2, 1)
    w_mat = params.weight.reshape(layer.c_out, -1)
    if need_params:
        cols = _im2col(layer, batch)
        d_weight = np.einsum("npo,npk->ok", dy_rows, cols).reshape(layer.weight_shape)
        d_bias = dy_rows.sum(axis=(0, 1)) if params.bias is not None else None
        grads = LayerParams(d_weight, d_bias)

    d_cols = (dy_rows @ w_mat).reshape(n, layer.h_out, layer.w_out, layer.c_in, layer.k_h, layer.k_w)
    p, s = layer.pad, layer.stride
    d_padded = np.zeros((n, layer.c_in, layer.h_in + 2 * p, layer.w_in + 2 * p))
    for i in range(layer.k_h):
        for j in range(layer.k_w):
            d_padded[:, :, i:i + s * layer.h_out:s, j:j + s * layer.w_out:s] += (
                d_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    dx = d_padded[:, :, p:p + layer.h_in, p:p + layer.w_in]
    return dx.reshape(x.shape), grads


def check_finite(y: np.ndarray, index: int):
    """Raise NumericError if a layer produced NaN or inf."""
    if not np.all(np.isfinite(y)):
        raise NumericError(f"non-finite values in the output of layer {index}", layer=index)


def relu_forward(spec: NetworkSpec, weights: Weights,
                 x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    Plain ReLU inference.

    Args:
        spec: Network description
        weights: Network parameters
        x: Input sample or batch

    Returns:
        (logits, post-activation tensor of every hidden layer)
    """
    activations = []
    h = x
    for i, (layer, params) in enumerate(zip(spec.layers, weights.layers)):
        y = layer_forward(layer, params, h, index=i)
        check_finite(y, i)
        if i == len(spec.layers) - 1:
            return y, activations
        h = np.maximum(y, 0.0)
        activations.append(h)
    return h, activations


def network_from_config(items: Sequence[Dict[str, Any]], classes: int = None, name: str = "") -> NetworkSpec:
    """
    Build a NetworkSpec from a list of layer dicts.

    Fc layers may omit c_in; it is taken from the previous layer's outputs.
    """
    layers = []
    for item in items:
        data = dict(item)
        if data.get("kind") == "fc" and "c_in" not in data:
            if not layers:
                raise ShapeError("first fc layer needs an explicit c_in")
            data["c_in"] = layers[-1].n_outputs
        layers.append(LayerShape.from_dict(data))
    if not layers:
        raise ShapeError("network has no layers")
    spec = NetworkSpec(tuple(layers), classes or layers[-1].c_out, name)
    spec.validate()
    return spec
