"""
Structured Logging for the Solver Library
Provides JSON-structured logging with run correlation and solver helpers
"""

import logging
import json
import sys
import time
import functools
from datetime import datetime, timezone
from typing import Dict, Any, Optional
from contextvars import ContextVar
from pathlib import Path
import os

# Context variables for run tracking
run_id_context: ContextVar[str] = ContextVar('run_id', default='')
method_context: ContextVar[str] = ContextVar('method', default='')


def _env_flag(name: str, default: str = 'false') -> bool:
    return os.getenv(name, default).strip().lower() in ('1', 'true', 'yes', 'on')


class StructuredFormatter(logging.Formatter):
    """Formatter that outputs one JSON object per record"""

    def format(self, record):
        log_entry = {
            'timestamp': datetime.now(timezone.utc).isoformat(),
            'level': record.levelname,
            'message': record.getMessage(),
            'module': record.module,
            'function': record.funcName,
            'line': record.lineno,
        }

        run_id = run_id_context.get()
        if run_id:
            log_entry['run_id'] = run_id

        method = method_context.get()
        if method:
            log_entry['method'] = method

        if hasattr(record, 'extra_data'):
            log_entry.update(record.extra_data)

        if record.exc_info:
            log_entry['exception'] = self.formatException(record.exc_info)

        return json.dumps(log_entry, ensure_ascii=False, default=str)


class SolverLogger:
    """Centralized logging for solvers, oracles and the benchmark harness"""

    def __init__(self, name: str = 'spd_frank_wolfe'):
        self.logger = logging.getLogger(name)
        self._setup_logger()

    def _setup_logger(self):
        """Setup handlers from LOG_LEVEL / LOG_TO_FILE / SPDFW_ENV"""
        self.logger.handlers = []
        self.logger.propagate = False

        log_level = os.getenv('LOG_LEVEL', 'INFO').upper()
        self.logger.setLevel(getattr(logging, log_level, logging.INFO))

        if os.getenv('SPDFW_ENV') == 'production':
            console_formatter = StructuredFormatter()
        else:
            console_formatter = logging.Formatter(
                '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
            )

        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(logging.DEBUG)
        console_handler.setFormatter(console_formatter)
        self.logger.addHandler(console_handler)

        # File logging is opt-in so library use does not litter the cwd
        if _env_flag('LOG_TO_FILE'):
            log_dir = Path(os.getenv('LOG_DIR', 'logs'))
            log_dir.mkdir(parents=True, exist_ok=True)

            file_handler = logging.FileHandler(log_dir / 'solver.log')
            file_handler.setLevel(logging.INFO)
            file_handler.setFormatter(StructuredFormatter())

            error_handler = logging.FileHandler(log_dir / 'errors.log')
            error_handler.setLevel(logging.ERROR)
            error_handler.setFormatter(StructuredFormatter())

            self.logger.addHandler(file_handler)
            self.logger.addHandler(error_handler)

    def _log_with_context(self, level: int, message: str, extra_data: Optional[Dict[str, Any]] = None):
        if extra_data:
            self.logger.log(level, message, extra={'extra_data': extra_data})
        else:
            self.logger.log(level, message)

    def is_enabled_for(self, level: int) -> bool:
        return self.logger.isEnabledFor(level)

    def debug(self, message: str, **kwargs):
        self._log_with_context(logging.DEBUG, message, kwargs)

    def info(self, message: str, **kwargs):
        self._log_with_context(logging.INFO, message, kwargs)

    def warning(self, message: str, **kwargs):
        self._log_with_context(logging.WARNING, message, kwargs)

    def error(self, message: str, error: Optional[Exception] = None, **kwargs):
        if error:
            self.logger.error(message, exc_info=error, extra={'extra_data': kwargs})
        else:
            self._log_with_context(logging.ERROR, message, kwargs)

    def critical(self, message: str, error: Optional[Exception] = None, **kwargs):
        if error:
            self.logger.critical(message, exc_info=error, extra={'extra_data': kwargs})
        else:
            self._log_with_context(logging.CRITICAL, message, kwargs)


# Create singleton instance
logger = SolverLogger()


def log_solver_event(event: str, method: str, details: Dict[str, Any] = None):
    """Log solver lifecycle events (started, converged, failed, ...)"""
    logger.info(
        f"Solver event: {event}",
        event=event,
        solver=method,
        details=details or {}
    )


def log_solver_iteration(method: str, k: int, cost: float, fw_gap: float, step_size: float):
    """Per-iteration record at debug level"""
    if not logger.is_enabled_for(logging.DEBUG):
        return
    logger.debug(
        f"{method} iteration {k}",
        solver=method,
        k=k,
        cost=cost,
        fw_gap=fw_gap,
        step_size=step_size
    )


def log_api_request(method: str, path: str, status_code: int, duration: float):
    """Log HTTP request with timing"""
    logger.info(
        f"API Request: {method} {path}",
        method=method,
        path=path,
        status_code=status_code,
        duration_ms=duration * 1000
    )


def log_validation_error(field: str, value: Any, error_message: str):
    """Log validation errors"""
    logger.warning(
        f"Validation error: {field}",
        field=field,
        value=str(value)[:200],
        error_message=error_message
    )


def log_performance_issue(operation: str, duration: float, threshold: float = 1.0):
    """Log when an operation exceeds its time threshold"""
    if duration > threshold:
        logger.warning(
            f"Performance issue: {operation} took {duration:.2f}s",
            operation=operation,
            duration=duration,
            threshold=threshold
        )


class RunContext:
    """Context manager tagging every record with a run id and method"""

    def __init__(self, run_id: str, method: str = None):
        self.run_id = run_id
        self.method = method
        self.run_token = None
        self.method_token = None

    def __enter__(self):
        self.run_token = run_id_context.set(self.run_id)
        if self.method:
            self.method_token = method_context.set(self.method)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        run_id_context.reset(self.run_token)
        if self.method_token:
            method_context.reset(self.method_token)


def log_function_call(func):
    """Decorator to log function calls with duration"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.perf_counter()
        function_name = f"{func.__module__}.{func.__name__}"

        logger.debug(f"Function call started: {function_name}")

        try:
            result = func(*args, **kwargs)
            duration = time.perf_counter() - start_time

            logger.debug(
                f"Function call completed: {function_name}",
                duration=duration,
                success=True
            )

            return result

        except Exception as e:
            duration = time.perf_counter() - start_time

            logger.error(
                f"Function call failed: {function_name}",
                error=e,
                duration=duration,
                success=False
            )

            raise

    return wrapper
