"""Logging configuration and utilities for regx.

This module provides centralized logging configuration for the regx library,
with separate loggers for operational events and stage timings.

Example:
    Configure logging for development::

        from regx.logging import configure_logging
        import logging

        configure_logging(logging.INFO)
"""

import logging
from typing import Any

__all__ = [
    "logger",
    "perf_logger",
    "configure_logging",
    "log_adam_iteration",
    "log_performance_metric",
]

# Main logger for operational events
logger = logging.getLogger("regx")

# Separate logger for stage timings
perf_logger = logging.getLogger("regx.perf")

_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: int = logging.WARNING, *, perf: bool = False) -> None:
    """Configure regx logging levels.

    Sets the logging level for the main regx logger. Stage timings are only
    emitted when ``perf`` is set.

    Args:
        level: Logging level (default: WARNING).
               Use logging.INFO for pipeline stages,
               logging.DEBUG for per-iteration optimiser traces.
        perf: Also enable the ``regx.perf`` timing logger at INFO.

    Example:
        Production configuration (default)::

            configure_logging()  # WARNING level

        Debugging configuration::

            configure_logging(logging.DEBUG, perf=True)
    """
    logger.setLevel(level)

    # Only configure handler if none exists (avoid duplicate handlers)
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(_FORMAT))
        logger.addHandler(handler)
        logger.propagate = False

    if perf:
        perf_logger.setLevel(logging.INFO)
        if not perf_logger.handlers:
            handler = logging.StreamHandler()
            handler.setFormatter(logging.Formatter(_FORMAT))
            perf_logger.addHandler(handler)
            perf_logger.propagate = False


def log_adam_iteration(iteration: int, loss: float) -> None:
    """Log one instance-optimisation step at DEBUG level.

    Args:
        iteration: 1-based Adam step counter
        loss: Total loss evaluated at the start of the step
    """
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(f"adam step {iteration}: loss={loss:.6g}")


def log_performance_metric(
    operation: str,
    duration_ms: float,
    metadata: dict[str, Any] | None = None,
) -> None:
    """Log a stage timing.

    Args:
        operation: Name of the stage (e.g., "correlation", "convex")
        duration_ms: Duration in milliseconds
        metadata: Optional additional metadata
    """
    if perf_logger.isEnabledFor(logging.INFO):
        meta_str = f" {metadata}" if metadata else ""
        perf_logger.info(f"{operation}: {duration_ms:.2f}ms{meta_str}")
