"""Tests for the dense tensor engine."""

import numpy as np
import pytest

from src.errors import NumericError, ShapeError
from src.fixtures import vgg16_cifar_style
from src.nn_core import (
    LayerParams, LayerShape, NetworkSpec, Weights,
    count_params, init_network, layer_backward, layer_forward, network_from_config, relu_forward,
)


def naive_conv(layer, weight, x, bias=None):
    """Six nested loops over a zero-padded input; also counts multiplies."""
    c_in, h, w = x.shape
    p = layer.pad
    padded = np.zeros((c_in, h + 2 * p, w + 2 * p))
    padded[:, p:p + h, p:p + w] = x
    out = np.zeros(layer.output_shape)
    multiplies = 0
    for o in range(layer.c_out):
        for i in range(layer.h_out):
            for j in range(layer.w_out):
                acc = 0.0 if bias is None else bias[o]
                for c in range(layer.c_in):
                    for di in range(layer.k_h):
                        for dj in range(layer.k_w):
                            acc += weight[o, c, di, dj] * padded[c, i * layer.stride + di, j * layer.stride + dj]
                            multiplies += 1
                out[o, i, j] = acc
    return out, multiplies


def test_init_is_deterministic(conv_spec):
    a = init_network(conv_spec, seed=7)
    b = init_network(conv_spec, seed=7)
    assert a.equals(b)
    assert not a.equals(init_network(conv_spec, seed=8))


def test_weight_shapes():
    fc = LayerShape(kind="fc", c_in=4, c_out=3)
    conv = LayerShape(kind="conv", c_in=2, c_out=4, h_in=8, w_in=8, k_h=3, k_w=3, pad=1)
    spec = NetworkSpec((conv, LayerShape(kind="fc", c_in=256, c_out=4), fc), 3)
    weights = init_network(spec, seed=0)
    assert fc.weight_shape == (3, 4)
    assert weights[0].weight.shape == (4, 2, 3, 3)
    assert weights[0].weight.size == 72
    assert weights[2].weight.shape == (3, 4)


def test_init_respects_glorot_bound(conv_spec):
    weights = init_network(conv_spec, seed=3)
    for layer, params in zip(conv_spec.layers, weights.layers):
        area = layer.k_h * layer.k_w
        bound = np.sqrt(6.0 / (layer.c_in * area + layer.c_out * area))
        assert np.all(np.abs(params.weight) <= bound)


def test_scalar_fc_product():
    layer = LayerShape(kind="fc", c_in=1, c_out=1)
    y = layer_forward(layer, LayerParams(np.array([[3.0]])), np.array([2.0]))
    np.testing.assert_array_equal(y, [6.0])


def test_identity_kernel_reproduces_input(rng):
    layer = LayerShape(kind="conv", c_in=2, c_out=2, h_in=5, w_in=5, k_h=3, k_w=3, pad=1)
    weight = np.zeros(layer.weight_shape)
    weight[0, 0, 1, 1] = 1.0
    weight[1, 1, 1, 1] = 1.0
    x = rng.standard_normal((2, 5, 5))
    np.testing.assert_array_equal(layer_forward(layer, LayerParams(weight), x), x)


@pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 3), (1, 0, 2), (2, 0, 3), (1, 2, 1)])
def test_conv_matches_naive_loops(rng, stride, pad, k):
    layer = LayerShape(kind="conv", c_in=2, c_out=3, h_in=4, w_in=4, k_h=k, k_w=k, stride=stride, pad=pad)
    weight = rng.standard_normal(layer.weight_shape)
    bias = rng.standard_normal(3)
    x = rng.standard_normal((2, 4, 4))
    expected, multiplies = naive_conv(layer, weight, x, bias)
    actual = layer_forward(layer, LayerParams(weight, bias), x)
    np.testing.assert_allclose(actual, expected, rtol=0, atol=1e-12)

    counts = count_params(NetworkSpec((layer, LayerShape(kind="fc", c_in=layer.n_outputs, c_out=2)), 2))
    assert counts[0].n_macs_dense == multiplies


def test_batched_conv_matches_single_samples(rng):
    layer = LayerShape(kind="conv", c_in=2, c_out=3, h_in=6, w_in=6, k_h=3, k_w=3, stride=2, pad=1)
    params = LayerParams(rng.standard_normal(layer.weight_shape))
    batch = rng.standard_normal((4, 2, 6, 6))
    y = layer_forward(layer, params, batch)
    for n in range(4):
        np.testing.assert_allclose(y[n], layer_forward(layer, params, batch[n]), atol=1e-12)


def test_conv_linearity(rng):
    layer = LayerShape(kind="conv", c_in=3, c_out=2, h_in=5, w_in=5, k_h=3, k_w=3, pad=1)
    params = LayerParams(rng.standard_normal(layer.weight_shape))
    x1, x2 = rng.standard_normal((2, 3, 5, 5))
    a, b = 0.7, -1.3
    lhs = layer_forward(layer, params, a * x1 + b * x2)
    rhs = a * layer_forward(layer, params, x1) + b * layer_forward(layer, params, x2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_shape_mismatch_names_layer(conv_spec, conv_weights):
    with pytest.raises(ShapeError, match="layer 0"):
        layer_forward(conv_spec.layers[0], conv_weights[0], np.zeros((2, 5, 5)), index=0)
    with pytest.raises(ShapeError, match=r"\(2, 4, 4\)"):
        relu_forward(conv_spec, conv_weights, np.zeros((3, 4, 4)))


def test_layer_backward_matches_finite_differences(rng):
    layer = LayerShape(kind="conv", c_in=2, c_out=3, h_in=5, w_in=5, k_h=3, k_w=3, stride=2, pad=1, has_bias=True)
    params = LayerParams(rng.standard_normal(layer.weight_shape), rng.standard_normal(3))
    x = rng.standard_normal((2, 2, 5, 5))
    dy = rng.standard_normal((2,) + layer.output_shape)

    dx, grads = layer_backward(layer, params, x, dy)

    def objective(x_, w_, b_):
        return float(np.sum(dy * layer_forward(layer, LayerParams(w_, b_), x_)))

    h = 1e-6
    for idx in [(0, 0, 0, 0), (1, 1, 2, 3), (0, 1, 4, 4)]:
        step = np.zeros_like(x)
        step[idx] = h
        numeric = (objective(x + step, params.weight, params.bias)
                   - objective(x - step, params.weight, params.bias)) / (2 * h)
        assert dx[idx] == pytest.approx(numeric, rel=1e-6, abs=1e-8)
    for idx in [(0, 0, 0, 0), (2, 1, 1, 2)]:
        step = np.zeros_like(params.weight)
        step[idx] = h
        numeric = (objective(x, params.weight + step, params.bias)
                   - objective(x, params.weight - step, params.bias)) / (2 * h)
        assert grads.weight[idx] == pytest.approx(numeric, rel=1e-6, abs=1e-8)
    np.testing.assert_allclose(grads.bias, dy.sum(axis=(0, 2, 3)), atol=1e-12)


def test_relu_output_layer_is_unmasked():
    spec = NetworkSpec((LayerShape(kind="fc", c_in=2, c_out=2),), 2)
    weights = Weights([LayerParams(np.eye(2))])
    logits, acts = relu_forward(spec, weights, np.array([1.0, -1.0]))
    np.testing.assert_array_equal(logits, [1.0, -1.0])
    assert acts == []


def test_negative_preactivations_give_zero_activation(fc_spec, fc_weights):
    weights = fc_weights.copy()
    weights.layers[0] = LayerParams(-np.abs(weights[0].weight))
    _, acts = relu_forward(fc_spec, weights, np.ones(4))
    assert np.all(acts[0] == 0.0)


def test_relu_forward_matches_layerwise_recomputation(conv_spec, rng):
    weights = init_network(conv_spec, seed=13)
    x = rng.standard_normal((2, 4, 4))
    logits, acts = relu_forward(conv_spec, weights, x)

    conv, fc1, fc2 = conv_spec.layers
    y1, _ = naive_conv(conv, weights[0].weight, x)
    a1 = np.maximum(y1, 0.0)
    a2 = np.maximum(weights[1].weight @ a1.ravel(), 0.0)
    expected = weights[2].weight @ a2
    np.testing.assert_allclose(acts[0], a1, atol=1e-12)
    np.testing.assert_allclose(logits, expected, atol=1e-12)


def test_non_finite_output_raises(fc_spec, fc_weights):
    weights = fc_weights.copy()
    weights.layers[1] = LayerParams(np.full_like(weights[1].weight, np.nan))
    with pytest.raises(NumericError) as info:
        relu_forward(fc_spec, weights, np.ones(4))
    assert info.value.layer == 1


def test_count_params_examples():
    conv = LayerShape(kind="conv", c_in=2, c_out=4, h_in=8, w_in=8, k_h=3, k_w=3, pad=1)
    fc = LayerShape(kind="fc", c_in=512, c_out=10)
    counts = count_params(NetworkSpec((conv, LayerShape(kind="fc", c_in=256, c_out=512), fc), 10))
    assert (counts[0].n_weights, counts[0].n_output_neurons, counts[0].n_macs_dense) == (72, 256, 4608)
    assert (counts[2].n_weights, counts[2].n_output_neurons, counts[2].n_macs_dense) == (5120, 10, 5120)


def test_vgg_counts_match_recount():
    spec = vgg16_cifar_style()
    channels = [3, 64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512]
    sizes = [32, 32, 16, 16, 8, 8, 8, 4, 4, 4, 2, 2, 2]
    counts = count_params(spec)
    for k in range(13):
        c_in, c_out, size = channels[k], channels[k + 1], sizes[k]
        assert counts[k].n_weights == c_out * c_in * 9
        assert counts[k].n_output_neurons == c_out * size * size
        assert counts[k].n_macs_dense == c_out * size * size * c_in * 9
    assert counts[13].n_weights == 2048 * 10
    assert sum(c.n_weights for c in counts) == 14_730_944


def test_invalid_geometry_is_rejected():
    with pytest.raises(ShapeError, match="does not fit"):
        LayerShape(kind="conv", c_in=1, c_out=1, h_in=2, w_in=2, k_h=5, k_w=5).validate()
    with pytest.raises(ShapeError, match="unknown kind"):
        LayerShape(kind="pool", c_in=1, c_out=1).validate()
    with pytest.raises(ShapeError, match="produces"):
        NetworkSpec((LayerShape(kind="fc", c_in=4, c_out=3), LayerShape(kind="fc", c_in=5, c_out=2)), 2).validate()


def test_network_from_config_infers_fc_inputs():
    spec = network_from_config([
        {"kind": "conv", "c_in": 1, "c_out": 4, "h_in": 6, "w_in": 6, "k_h": 3, "k_w": 3, "stride": 2, "pad": 1},
        {"kind": "fc", "c_out": 7},
        {"kind": "fc", "c_out": 3},
    ])
    assert spec.layers[1].c_in == 4 * 3 * 3
    assert spec.classifier_classes == 3
    assert spec.layer_names() == ["conv1", "fc1", "fc2"]


def test_network_round_trips_through_dict(conv_spec):
    assert NetworkSpec.from_dict(conv_spec.to_dict()) == conv_spec
