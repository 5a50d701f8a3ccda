"""
Configuration Management Module

This module layers built-in defaults, config/settings.yaml, an experiment
document passed with --config and command-line overrides into one
validated settings tree.
"""

import copy
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from jsonschema import Draft7Validator

from .errors import ConfigError


DEFAULT_SETTINGS: Dict[str, Any] = {
    "seed": 0,
    "network": {
        "fixture": "vgg16-cifar-style",
        "layers": None,
        "classifier_classes": None,
        "threshold_kinds": ["conv", "fc"],
    },
    "hardware": {
        "pe_count": 1024,
        "cache_kb": 156,
        "spad_bytes": 512,
        "bytes_per_word": 2,
        "e_dram": 200.0,
        "e_cache": 6.0,
        "e_reg": 2.0,
        "e_mac": 1.0,
        "weight_reuse": "episode",
    },
    "schedule": {
        "modes": ["singular", "pipelined"],
        "images": 3,
        "singular_task": "cifar10",
        "tasks": ["cifar10", "cifar100", "fmnist"],
        "rounds": 1,
    },
    "cases": ["case1", "case2", "case3"],
    "layers": None,
    "sparsity": {
        "source": "fixture",
        "profiles": None,
        "interpolate": False,
        "checkpoint": None,
    },
    "storage": {
        "n_max": 8,
        "include_heads": False,
        "threshold_kinds": ["conv"],
    },
    "ablation": {
        "reduced_pe": 256,
        "reduced_cache_kb": 128,
        "case": "case3",
        "mode": "pipelined",
        "prune_fraction": 0.9,
    },
    "trainer": {
        "epochs": 10,
        "learning_rate": 1e-3,
        "batch_size": 100,
        "beta": 1e-6,
        "threshold_init": 1e-2,
        "threshold_floor": 1e-4,
        "surrogate": {"kind": "triangular", "width": 1.0},
        "surrogate_through_y": True,
        "train_head": True,
        "progress": False,
        "parent_epochs": 20,
        "parent_learning_rate": 3e-3,
        "finetune_epochs": 10,
        "finetune_learning_rate": 1e-3,
        "network": "desk-cnn",
    },
    "dataset": {
        "source": "synthetic",
        "input_shape": [1, 8, 8],
        "parent_classes": 4,
        "samples_per_class": 250,
        "child_samples": 2000,
        "noise": 0.5,
        "shift": 0.3,
        "children": [
            {"task_id": "child2", "groups": [[0, 1], [2, 3]]},
            {"task_id": "child3", "groups": [[0], [1], [2, 3]]},
        ],
        "idx": {"parent": None, "children": []},
        "limit": None,
    },
    "output": {
        "dir": "results",
        "summary": True,
    },
    "logging": {
        "level": "INFO",
        "dir": "logs",
        "max_log_files": 10,
        "max_log_size_mb": 10,
    },
}


_POSITIVE_INT = {"type": "integer", "minimum": 1}
_POSITIVE_NUM = {"type": "number", "exclusiveMinimum": 0}
_TASK_LIST = {"type": "array", "items": {"type": "string"}, "minItems": 1}
_KINDS = {"type": "array", "items": {"enum": ["conv", "fc"]}}

SETTINGS_SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "network": {
            "type": "object",
            "properties": {
                "fixture": {"type": ["string", "null"]},
                "layers": {"type": ["array", "null"], "items": {"type": "object"}},
                "classifier_classes": {"type": ["integer", "null"], "minimum": 1},
                "threshold_kinds": _KINDS,
            },
        },
        "hardware": {
            "type": "object",
            "properties": {
                "pe_count": _POSITIVE_INT,
                "cache_kb": _POSITIVE_NUM,
                "spad_bytes": _POSITIVE_INT,
                "bytes_per_word": _POSITIVE_INT,
                "e_dram": _POSITIVE_NUM,
                "e_cache": _POSITIVE_NUM,
                "e_reg": _POSITIVE_NUM,
                "e_mac": _POSITIVE_NUM,
                "weight_reuse": {"enum": ["episode", "pass"]},
            },
        },
        "schedule": {
            "type": "object",
            "properties": {
                "modes": {"type": "array", "items": {"enum": ["singular", "pipelined"]}, "minItems": 1},
                "images": _POSITIVE_INT,
                "singular_task": {"type": "string"},
                "tasks": _TASK_LIST,
                "rounds": _POSITIVE_INT,
            },
        },
        "cases": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "layers": {"type": ["array", "null"], "items": {"type": "string"}},
        "sparsity": {
            "type": "object",
            "properties": {
                "source": {"enum": ["fixture", "measured"]},
                "profiles": {"type": ["string", "null"]},
                "interpolate": {"type": "boolean"},
                "checkpoint": {"type": ["string", "null"]},
            },
        },
        "storage": {
            "type": "object",
            "properties": {
                "n_max": _POSITIVE_INT,
                "include_heads": {"type": "boolean"},
                "threshold_kinds": _KINDS,
            },
        },
        "ablation": {
            "type": "object",
            "properties": {
                "reduced_pe": _POSITIVE_INT,
                "reduced_cache_kb": _POSITIVE_NUM,
                "case": {"type": "string"},
                "mode": {"enum": ["singular", "pipelined"]},
                "prune_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
        },
        "trainer": {
            "type": "object",
            "properties": {
                "epochs": {"type": "integer", "minimum": 0},
                "learning_rate": _POSITIVE_NUM,
                "batch_size": _POSITIVE_INT,
                "beta": {"type": "number", "minimum": 0},
                "threshold_init": _POSITIVE_NUM,
                "threshold_floor": _POSITIVE_NUM,
                "surrogate": {
                    "type": "object",
                    "properties": {"kind": {"enum": ["triangular"]}, "width": _POSITIVE_NUM},
                },
                "surrogate_through_y": {"type": "boolean"},
                "train_head": {"type": "boolean"},
                "progress": {"type": "boolean"},
                "parent_epochs": {"type": "integer", "minimum": 0},
                "parent_learning_rate": _POSITIVE_NUM,
                "finetune_epochs": {"type": "integer", "minimum": 0},
                "finetune_learning_rate": _POSITIVE_NUM,
                "network": {"type": "string"},
            },
        },
        "dataset": {
            "type": "object",
            "properties": {
                "source": {"enum": ["synthetic", "idx"]},
                "input_shape": {"type": "array", "items": _POSITIVE_INT, "minItems": 3, "maxItems": 3},
                "parent_classes": {"type": "integer", "minimum": 2},
                "samples_per_class": _POSITIVE_INT,
                "child_samples": _POSITIVE_INT,
                "noise": {"type": "number", "minimum": 0},
                "shift": {"type": "number", "minimum": 0},
                "children": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["task_id", "groups"],
                        "properties": {
                            "task_id": {"type": "string"},
                            "groups": {"type": "array", "minItems": 2,
                                       "items": {"type": "array", "minItems": 1,
                                                 "items": {"type": "integer", "minimum": 0}}},
                        },
                    },
                },
                "idx": {"type": "object"},
                "limit": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "output": {
            "type": "object",
            "properties": {"dir": {"type": "string"}, "summary": {"type": "boolean"}},
        },
        "logging": {
            "type": "object",
            "properties": {
                "level": {"enum": ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]},
                "dir": {"type": "string"},
                "max_log_files": _POSITIVE_INT,
                "max_log_size_mb": _POSITIVE_INT,
            },
        },
    },
}


class ConfigManager:
    """
    Builds the settings tree for one CLI run.

    Order of precedence (last wins): DEFAULT_SETTINGS, settings.yaml in
    config_dir, the experiment document, flag overrides.
    """

    def __init__(self, config_dir: str = None):
        """
        Initialize the configuration manager.

        Args:
            config_dir: Directory holding settings.yaml
        """
        if config_dir is None:
            self.config_dir = Path(__file__).parent.parent / "config"
        else:
            self.config_dir = Path(config_dir)

        self.settings_file = self.config_dir / "settings.yaml"
        self.logger = logging.getLogger(__name__)
        self.default_settings = copy.deepcopy(DEFAULT_SETTINGS)
        self.sources = ["defaults"]
        self.settings = self.load_settings()

    def load_settings(self) -> Dict[str, Any]:
        """
        Load settings.yaml merged over the built-in defaults.

        Returns:
            Settings dictionary
        """
        if not self.settings_file.exists():
            return copy.deepcopy(self.default_settings)
        loaded = self._read_document(self.settings_file)
        self.sources.append(str(self.settings_file))
        return self._merge_settings(self.default_settings, loaded)

    def save_settings(self, path: Optional[str] = None) -> Path:
        """
        Write the current settings as YAML.

        Args:
            path: Target file (defaults to settings.yaml in config_dir)

        Returns:
            Path written
        """
        target = Path(path) if path else self.settings_file
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.settings, f, default_flow_style=False, indent=2, sort_keys=True)
        self.logger.info(f"Saved settings to {target}")
        return target

    def _read_document(self, path: Path) -> Dict[str, Any]:
        """Parse a YAML or JSON document into a dict."""
        try:
            with open(path, "r", encoding="utf-8") as f:
                loaded = yaml.safe_load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"{path} is not valid JSON/YAML: {e}") from e
        if loaded is None:
            return {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path} must contain a mapping at top level")
        return loaded

    def load_experiment(self, path: str) -> Dict[str, Any]:
        """
        Merge an experiment document (JSON syntax) over the current settings.

        Args:
            path: Experiment config file

        Returns:
            Merged settings
        """
        document = self._read_document(Path(path))
        self.settings = self._merge_settings(self.settings, document)
        self.sources.append(str(path))
        self.logger.info(f"Loaded experiment config {path}")
        return self.settings

    def apply_overrides(self, overrides: Dict[str, Any]) -> Dict[str, Any]:
        """
        Apply dot-path overrides, skipping None values.

        Args:
            overrides: e.g. {"hardware.pe_count": 256}
        """
        for key_path, value in overrides.items():
            if value is not None:
                self.set_setting(key_path, value)
                self.logger.debug(f"Override {key_path} = {value}")
        if any(v is not None for v in overrides.values()):
            self.sources.append("flags")
        return self.settings

    def validate(self):
        """
        Validate the settings tree against SETTINGS_SCHEMA.

        Raises:
            ConfigError: Naming the first offending path
        """
        validator = Draft7Validator(SETTINGS_SCHEMA)
        errors = sorted(validator.iter_errors(self.settings), key=lambda e: list(e.absolute_path))
        if errors:
            first = errors[0]
            where = ".".join(str(p) for p in first.absolute_path) or "<root>"
            raise ConfigError(f"invalid setting {where}: {first.message}")

    def _merge_settings(self, default: Dict[str, Any],
                        loaded: Dict[str, Any]) -> Dict[str, Any]:
        """
        Recursively merge loaded settings with defaults.

        Args:
            default: Default settings dictionary
            loaded: Loaded settings dictionary

        Returns:
            Merged settings dictionary
        """
        result = copy.deepcopy(default)

        for key, value in loaded.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._merge_settings(result[key], value)
            else:
                result[key] = copy.deepcopy(value)

        return result

    def get_setting(self, key_path: str, default=None):
        """
        Get a specific setting using dot notation.

        Args:
            key_path: Setting path (e.g., "hardware.pe_count")
            default: Default value if setting not found

        Returns:
            Setting value or default
        """
        value = self.settings
        for key in key_path.split('.'):
            if isinstance(value, dict) and key in value:
                value = value[key]
            else:
                return default
        return value

    def set_setting(self, key_path: str, value):
        """
        Set a specific setting using dot notation.

        Args:
            key_path: Setting path (e.g., "hardware.pe_count")
            value: Value to set
        """
        keys = key_path.split('.')
        current = self.settings
        for key in keys[:-1]:
            if not isinstance(current.get(key), dict):
                current[key] = {}
            current = current[key]
        current[keys[-1]] = value
