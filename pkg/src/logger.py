"""
Logging and Error Handling Module

Rotating log files for the experiment runs, the console stream, and the
central error handler that turns typed toolkit errors into CLI exit codes.
"""

import functools
import logging
import logging.handlers
import sys
import threading
import traceback
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from .errors import ConfigError, DatasetError, MimeError, NumericError, ShapeError, ThresholdError

FILE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(filename)s:%(lineno)d - %(message)s'
CONSOLE_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

# library modules log under "src.<module>"
LIBRARY_LOGGER = "src"

USER_MESSAGES = (
    (ConfigError, "Invalid configuration. Check the config file and flags."),
    (NumericError, "Computation diverged or produced NaN values. Try a lower learning rate."),
    (ShapeError, "Network geometry or tensor shapes do not line up."),
    (ThresholdError, "Threshold set does not fit the network or holds non-positive values."),
    (DatasetError, "Dataset is empty, mislabeled or unreadable."),
    (OSError, "Could not read or write a file. Check paths and permissions."),
)


class MimeLogger:
    """
    Owns the application logger and the handlers shared with the library
    loggers: main rotating log, errors-only rotating log, console.
    """

    def __init__(self, log_dir: str = None, app_name: str = "mime",
                 max_log_size_mb: int = 10, max_log_files: int = 10):
        """
        Args:
            log_dir: Directory for log files (repo-level logs/ if None)
            app_name: Logger name and file stem
            max_log_size_mb: Rotation size of each log file
            max_log_files: Rotated files kept per log
        """
        self.app_name = app_name
        self.log_dir = Path(log_dir) if log_dir else Path(__file__).parent.parent / "logs"
        self.log_dir.mkdir(parents=True, exist_ok=True)

        self.main_log_file = self.log_dir / f"{app_name}.log"
        self.error_log_file = self.log_dir / f"{app_name}_errors.log"
        self.max_bytes = max_log_size_mb * 1024 * 1024
        self.backup_count = max_log_files

        self.logger = logging.getLogger(self.app_name)
        self._attach_handlers()

    def _rotating(self, path: Path, level: int) -> logging.Handler:
        handler = logging.handlers.RotatingFileHandler(
            path, maxBytes=self.max_bytes, backupCount=self.backup_count, encoding="utf-8"
        )
        handler.setLevel(level)
        handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))
        return handler

    def _attach_handlers(self):
        self.close()
        console = logging.StreamHandler(sys.stdout)
        console.setLevel(logging.INFO)
        console.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt='%H:%M:%S'))
        handlers = [
            self._rotating(self.main_log_file, logging.DEBUG),
            self._rotating(self.error_log_file, logging.ERROR),
            console,
        ]

        for name in (self.app_name, LIBRARY_LOGGER):
            target = logging.getLogger(name)
            target.setLevel(logging.DEBUG)
            target.propagate = name != LIBRARY_LOGGER
            for handler in handlers:
                target.addHandler(handler)

        self.logger.debug(f"Logging to {self.log_dir}")

    def get_logger(self, name: str = None) -> logging.Logger:
        """Application logger, or a child of it when name is given."""
        if name is None:
            return self.logger
        return logging.getLogger(f"{self.app_name}.{name}")

    def set_level(self, level: str):
        """
        Set the console level; the files always receive DEBUG and up.

        Args:
            level: 'DEBUG', 'INFO', 'WARNING', 'ERROR' or 'CRITICAL'
        """
        numeric_level = getattr(logging, level.upper(), logging.INFO)
        for handler in self.logger.handlers:
            if not isinstance(handler, logging.FileHandler):
                handler.setLevel(numeric_level)

    def close(self):
        """Detach the shared handlers and close the log files."""
        closed = set()
        for name in (self.app_name, LIBRARY_LOGGER):
            target = logging.getLogger(name)
            target.propagate = True
            for handler in list(target.handlers):
                target.removeHandler(handler)
                if isinstance(handler, logging.FileHandler) and id(handler) not in closed:
                    handler.close()
                    closed.add(id(handler))


class ErrorHandler:
    """
    Logs errors that end a command, notifies callbacks and maps the
    error to the process exit code.
    """

    def __init__(self, logger: logging.Logger):
        self.logger = logger
        self.error_callbacks: List[Callable[[Dict[str, Any], Optional[str]], None]] = []
        self._lock = threading.Lock()

    def add_error_callback(self, callback: Callable):
        """
        Register a callback.

        Args:
            callback: Called with (error_info, user_message)
        """
        with self._lock:
            self.error_callbacks.append(callback)

    def remove_error_callback(self, callback: Callable):
        with self._lock:
            if callback in self.error_callbacks:
                self.error_callbacks.remove(callback)

    @staticmethod
    def exit_code_for(error: Exception) -> int:
        """2 for rejected input, 3 for numeric failure, 1 for anything else."""
        if isinstance(error, MimeError):
            return error.exit_code
        if isinstance(error, (FloatingPointError, OverflowError)):
            return NumericError.exit_code
        return 1

    @staticmethod
    def user_message_for(error: Exception) -> Optional[str]:
        for kind, message in USER_MESSAGES:
            if isinstance(error, kind):
                return message
        return None

    def handle_error(self, error: Exception, context: str = None,
                     user_message: str = None, critical: bool = False) -> int:
        """
        Log an error and notify callbacks.

        Args:
            error: Exception that ended the command
            context: Command or stage that failed
            user_message: Short message for the user (derived from the error type if None)
            critical: Log at CRITICAL instead of ERROR

        Returns:
            Exit code for the error
        """
        exit_code = self.exit_code_for(error)
        error_info = {
            'type': type(error).__name__,
            'message': str(error),
            'context': context,
            'critical': critical,
            'exit_code': exit_code,
            'timestamp': datetime.now().isoformat(),
        }
        for attr in ("task_id", "layer", "filename"):
            value = getattr(error, attr, None)
            if value is not None:
                error_info[attr] = value

        log = self.logger.critical if critical else self.logger.error
        log(f"Error in {context}: {error}")
        self.logger.debug(f"Error details: {error_info}")
        self.logger.debug("".join(traceback.format_exception(type(error), error, error.__traceback__)))

        message = user_message or self.user_message_for(error)
        with self._lock:
            callbacks = list(self.error_callbacks)
        for callback in callbacks:
            try:
                callback(error_info, message)
            except Exception as e:
                self.logger.error(f"Error in error callback: {e}")

        return exit_code

    def handle_config_error(self, error: Exception, source: str = None) -> int:
        """Configuration rejected while resolving settings or inputs."""
        context = f"configuration for {source}" if source else "configuration"
        return self.handle_error(error, context)

    def handle_numeric_error(self, error: Exception, stage: str = None) -> int:
        """NaN/inf or overflow during training or inference."""
        layer = getattr(error, "layer", None)
        where = f" at layer {layer}" if layer is not None else ""
        context = f"numeric failure in {stage or 'computation'}{where}"
        return self.handle_error(error, context)

    def handle_io_error(self, error: Exception, path: str = None) -> int:
        """Unreadable input or unwritable output."""
        context = f"file access for {path}" if path else "file access"
        return self.handle_error(error, context)


class ApplicationExceptionHandler:
    """Routes unhandled exceptions (main and worker threads) to the log."""

    def __init__(self, logger: logging.Logger, error_handler: ErrorHandler):
        self.logger = logger
        self.error_handler = error_handler
        self.original_excepthook = sys.excepthook
        self.original_thread_hook = threading.excepthook

    def install(self):
        sys.excepthook = self.handle_exception
        threading.excepthook = self.handle_thread_exception

    def uninstall(self):
        """Restore the hooks that were active at construction."""
        sys.excepthook = self.original_excepthook
        threading.excepthook = self.original_thread_hook

    def handle_exception(self, exc_type, exc_value, exc_traceback):
        if issubclass(exc_type, KeyboardInterrupt):
            self.original_excepthook(exc_type, exc_value, exc_traceback)
            return
        self.logger.critical(f"Unhandled {exc_type.__name__}: {exc_value}")
        self.logger.critical("".join(traceback.format_exception(exc_type, exc_value, exc_traceback)))
        self.error_handler.handle_error(exc_value, "unhandled exception",
                                        "An unexpected error occurred. See the log for details.", critical=True)

    def handle_thread_exception(self, args):
        name = args.thread.name if args.thread else "unknown"
        self.logger.critical(f"Unhandled {args.exc_type.__name__} in thread {name}: {args.exc_value}")
        self.logger.critical("".join(traceback.format_exception(args.exc_type, args.exc_value, args.exc_traceback)))
        self.error_handler.handle_error(args.exc_value, f"thread {name}", critical=True)


def setup_application_logging(log_dir: str = None, log_level: str = "INFO", max_log_size_mb: int = 10,
                              max_log_files: int = 10) -> Tuple[MimeLogger, ErrorHandler, ApplicationExceptionHandler]:
    """
    Set up logging for one CLI run.

    Returns:
        (mime_logger, error_handler, exception_handler); the exception
        handler is installed and must be uninstalled by the caller.
    """
    mime_logger = MimeLogger(log_dir, max_log_size_mb=max_log_size_mb, max_log_files=max_log_files)
    mime_logger.set_level(log_level)

    main_logger = mime_logger.get_logger()
    error_handler = ErrorHandler(main_logger)
    exception_handler = ApplicationExceptionHandler(main_logger, error_handler)
    exception_handler.install()
    return mime_logger, error_handler, exception_handler


def handle_errors(error_handler: ErrorHandler, context: str = None, user_message: str = None):
    """
    Decorator for CLI commands: toolkit, numeric and file errors become
    exit codes; anything else propagates.
    """
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            where = context or func.__name__
            try:
                return func(*args, **kwargs)
            except ConfigError as e:
                return error_handler.handle_config_error(e, where)
            except (NumericError, FloatingPointError, OverflowError) as e:
                return error_handler.handle_numeric_error(e, where)
            except OSError as e:
                return error_handler.handle_io_error(e, getattr(e, "filename", None))
            except MimeError as e:
                return error_handler.handle_error(e, where, user_message)
        return wrapper
    return decorator
