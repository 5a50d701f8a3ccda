"""Tests for logging setup and error-to-exit-code mapping."""

import logging
import sys

import pytest

from src.errors import ConfigError, DatasetError, MissingSparsityError, NumericError, ShapeError, ThresholdError
from src.logger import ErrorHandler, MimeLogger, handle_errors, setup_application_logging


@pytest.fixture
def app_logging(tmp_path):
    original_hook = sys.excepthook
    mime_logger, error_handler, exception_handler = setup_application_logging(str(tmp_path / "logs"), "WARNING")
    yield mime_logger, error_handler
    exception_handler.uninstall()
    mime_logger.close()
    assert sys.excepthook is original_hook


@pytest.mark.parametrize("error,code", [
    (ConfigError("bad flag"), 2),
    (MissingSparsityError("svhn"), 2),
    (ShapeError("mismatch"), 2),
    (ThresholdError("t <= 0"), 2),
    (DatasetError("empty"), 2),
    (NumericError("nan"), 3),
    (FloatingPointError("overflow"), 3),
    (RuntimeError("other"), 1),
])
def test_exit_codes(error, code):
    assert ErrorHandler.exit_code_for(error) == code


def test_handle_errors_returns_exit_code_and_notifies(app_logging):
    _, error_handler = app_logging
    seen = []

    def callback(info, message):
        seen.append((info["type"], info["exit_code"], message))

    error_handler.add_error_callback(callback)

    def fails_config():
        raise MissingSparsityError("svhn", "conv3")

    def fails_numeric():
        raise NumericError("loss diverged", layer=2)

    def succeeds():
        return 0

    assert handle_errors(error_handler, "energy")(fails_config)() == 2
    assert handle_errors(error_handler, "train")(fails_numeric)() == 3
    assert handle_errors(error_handler, "storage")(succeeds)() == 0
    assert [s[:2] for s in seen] == [("MissingSparsityError", 2), ("NumericError", 3)]
    assert seen[0][2].startswith("Invalid configuration")

    error_handler.remove_error_callback(callback)
    handle_errors(error_handler)(fails_config)()
    assert len(seen) == 2


def test_broken_callback_does_not_mask_exit_code(app_logging):
    _, error_handler = app_logging

    def broken(info, message):
        raise ValueError("callback failed")

    error_handler.add_error_callback(broken)
    assert error_handler.handle_error(ShapeError("x"), "test") == 2


def test_unexpected_errors_propagate(app_logging):
    _, error_handler = app_logging

    def fails():
        raise KeyError("missing")

    with pytest.raises(KeyError):
        handle_errors(error_handler, "energy")(fails)()


def test_library_records_reach_log_files(app_logging):
    mime_logger, error_handler = app_logging
    logging.getLogger("src.trainer").debug("epoch 1 finished")
    error_handler.handle_error(ConfigError("bad layer list"), "energy")
    for handler in mime_logger.get_logger().handlers:
        handler.flush()

    main_log = mime_logger.main_log_file.read_text()
    assert "epoch 1 finished" in main_log
    assert "bad layer list" in main_log
    errors = mime_logger.error_log_file.read_text()
    assert "bad layer list" in errors
    assert "epoch 1 finished" not in errors


def test_console_level_follows_setting(tmp_path):
    mime_logger = MimeLogger(str(tmp_path), app_name="mime-test")
    try:
        mime_logger.set_level("ERROR")
        console = [h for h in mime_logger.get_logger().handlers
                   if isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler)]
        assert [h.level for h in console] == [logging.ERROR]
        assert mime_logger.get_logger("cli").name == "mime-test.cli"
    finally:
        mime_logger.close()
    assert mime_logger.get_logger().handlers == []


def test_floating_point_errors_exit_with_3(app_logging):
    _, error_handler = app_logging
    seen = []
    error_handler.add_error_callback(lambda info, message: seen.append(info))

    def overflows():
        raise NumericError("inf in logits", layer=4)

    def fp_trap():
        raise FloatingPointError("overflow encountered in exp")

    assert handle_errors(error_handler, "train")(overflows)() == 3
    assert handle_errors(error_handler, "train")(fp_trap)() == 3
    assert seen[0]["layer"] == 4
    assert "layer" not in seen[1]
    assert "at layer 4" in seen[0]["context"]
