"""Shared networks, hardware and output directories for the test suite."""

import numpy as np
import pytest

from src.cost_model import HardwareConfig
from src.fixtures import vgg16_cifar_style
from src.nn_core import LayerShape, NetworkSpec, init_network


@pytest.fixture
def rng():
    return np.random.default_rng(13)


@pytest.fixture
def fc_spec():
    """fc 4 -> 6 -> 5 -> 3."""
    spec = NetworkSpec((
        LayerShape(kind="fc", c_in=4, c_out=6),
        LayerShape(kind="fc", c_in=6, c_out=5),
        LayerShape(kind="fc", c_in=5, c_out=3),
    ), 3, "fc-toy")
    spec.validate()
    return spec


@pytest.fixture
def conv_spec():
    """conv 2 -> 3 (k3, pad 1) at 4x4, hidden fc 48 -> 5, classifier 5 -> 3."""
    spec = NetworkSpec((
        LayerShape(kind="conv", c_in=2, c_out=3, h_in=4, w_in=4, k_h=3, k_w=3, pad=1),
        LayerShape(kind="fc", c_in=48, c_out=5),
        LayerShape(kind="fc", c_in=5, c_out=3),
    ), 3, "conv-toy")
    spec.validate()
    return spec


@pytest.fixture
def fc_weights(fc_spec):
    return init_network(fc_spec, seed=13)


@pytest.fixture
def conv_weights(conv_spec):
    return init_network(conv_spec, seed=13)


@pytest.fixture
def toy_conv_layer():
    """conv c_in=2, c_out=4, k=3, 8x8 input, pad 1."""
    return LayerShape(kind="conv", c_in=2, c_out=4, h_in=8, w_in=8, k_h=3, k_w=3, pad=1, name="toy")


@pytest.fixture
def hw():
    return HardwareConfig()


@pytest.fixture(scope="session")
def vgg():
    return vgg16_cifar_style()


@pytest.fixture
def out_dir(tmp_path):
    path = tmp_path / "results"
    path.mkdir()
    return path
