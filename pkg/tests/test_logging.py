"""Tests for the regx and regx.perf loggers and their helpers."""

import logging
from collections.abc import Callable, Iterator

import pytest

import regx.logging as regx_logging
from regx.logging import log_adam_iteration, log_performance_metric, logger, perf_logger


class Collector(logging.Handler):
    """Keeps formatted messages in memory."""

    def __init__(self) -> None:
        super().__init__(logging.DEBUG)
        self.messages: list[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(record.getMessage())


@pytest.fixture
def collect() -> Iterator[Callable[[logging.Logger], Collector]]:
    """Attach a collector to one logger; levels and handlers are restored after."""
    attached: list[tuple[logging.Logger, Collector, int]] = []

    def attach(target: logging.Logger) -> Collector:
        handler = Collector()
        attached.append((target, handler, target.level))
        target.addHandler(handler)
        return handler

    yield attach
    for target, handler, level in attached:
        target.removeHandler(handler)
        target.setLevel(level)


class TestLoggingHelpers:
    """Level guards of the optimiser trace and stage timings."""

    def test_helpers_are_exported(self):
        assert "log_adam_iteration" in regx_logging.__all__
        assert "log_performance_metric" in regx_logging.__all__

    def test_adam_trace_only_at_debug(self, collect):
        collected = collect(logger)
        logger.setLevel(logging.INFO)
        log_adam_iteration(3, 0.25)
        assert collected.messages == []
        logger.setLevel(logging.DEBUG)
        log_adam_iteration(3, 0.25)
        assert collected.messages == ["adam step 3: loss=0.25"]

    def test_timing_goes_to_perf_logger(self, collect):
        collected = collect(perf_logger)
        perf_logger.setLevel(logging.WARNING)
        log_performance_metric("convex", 12.5)
        assert collected.messages == []
        perf_logger.setLevel(logging.INFO)
        log_performance_metric("convex", 12.5, {"nodes": 64})
        assert collected.messages == ["convex: 12.50ms {'nodes': 64}"]
