"""
MIME Package

Threshold-masked multi-task inference on a frozen parent network:
threshold training, storage accounting and a systolic-array energy and
throughput model, driven from a command-line front end.
"""

__version__ = "1.0.0"
__author__ = "MIME Development Team"
__description__ = "Multi-task inference with per-neuron learned thresholds"

from .config_manager import ConfigManager
from .cost_model import HardwareConfig, InferenceCase, TaskSchedule, energy_schedule
from .main_app import MimeApp, main
from .threshold_mask import ThresholdSet, masked_forward, measure_sparsity
from .trainer import TrainConfig, train_thresholds

__all__ = [
    'ConfigManager', 'HardwareConfig', 'InferenceCase', 'TaskSchedule', 'energy_schedule',
    'MimeApp', 'main', 'ThresholdSet', 'masked_forward', 'measure_sparsity',
    'TrainConfig', 'train_thresholds',
]
