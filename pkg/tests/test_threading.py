"""Worker scopes and determinism under concurrency."""

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from contextvars import copy_context
from dataclasses import replace

import numpy as np
import pytest

from regx.config import ConvexConfig, InstanceOptConfig, RegistrationConfig
from regx.convex import coupled_convex
from regx.correlation import SearchSpace, build_cost_volume, normalise_costs
from regx.exceptions import ConfigError
from regx.features import mind_ssc
from regx.parallel import get_worker_count, run_blocks, set_worker_count, worker_scope
from regx.pipeline import register


@pytest.mark.thread_safety
class TestWorkerScope:
    """Context-local worker counts."""

    def test_default_is_one(self):
        assert get_worker_count() == 1

    def test_nesting_restores(self):
        with worker_scope(4) as outer:
            assert outer == 4
            with worker_scope(2):
                assert get_worker_count() == 2
            assert get_worker_count() == 4
        assert get_worker_count() == 1

    def test_zero_means_cpu_count(self):
        with worker_scope(0) as count:
            assert count == (os.cpu_count() or 1)

    def test_negative_rejected(self):
        with pytest.raises(ConfigError):
            with worker_scope(-1):
                pass
        with pytest.raises(ConfigError):
            set_worker_count(-2)

    def test_set_stays_in_context(self):
        def inner() -> int:
            set_worker_count(3)
            return get_worker_count()

        assert copy_context().run(inner) == 3
        assert get_worker_count() == 1

    def test_threads_do_not_share_counts(self):
        barrier = threading.Barrier(4)
        seen: dict[int, int] = {}

        def worker(n: int) -> None:
            with worker_scope(n):
                barrier.wait()
                seen[n] = get_worker_count()

        threads = [threading.Thread(target=worker, args=(n,)) for n in (1, 2, 3, 5)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert seen == {1: 1, 2: 2, 3: 3, 5: 5}


@pytest.mark.thread_safety
class TestRunBlocks:
    """Block decomposition."""

    @pytest.mark.parametrize(("total", "workers"), [(10, 1), (10, 3), (7, 8), (1, 4), (100, 6)])
    def test_covers_every_index_once(self, total: int, workers: int):
        hits = np.zeros(total, dtype=int)

        def work(block: range) -> None:
            hits[block.start : block.stop] += 1

        with worker_scope(workers):
            run_blocks(total, work)
        np.testing.assert_array_equal(hits, 1)

    def test_zero_total(self):
        calls: list[range] = []
        with worker_scope(4):
            run_blocks(0, calls.append)
        assert calls == []

    def test_errors_propagate(self):
        def work(block: range) -> None:
            if 5 in block:
                raise ValueError("boom")

        with worker_scope(3), pytest.raises(ValueError, match="boom"):
            run_blocks(9, work)


@pytest.mark.thread_safety
class TestDeterminism:
    """Outputs do not depend on the worker count."""

    def test_cost_volume_and_convex(self, textured):
        fixed, moving = mind_ssc(textured((12, 12, 12))), mind_ssc(textured((12, 12, 12)))
        search = SearchSpace((2, 2, 2))
        config = ConvexConfig(schedule=(0.1, 1.0), passes=1)

        with worker_scope(1):
            cv1 = build_cost_volume(fixed, moving, 2, search, 1)
            u1 = coupled_convex(normalise_costs(cv1), config)
        with worker_scope(4):
            cv4 = build_cost_volume(fixed, moving, 2, search, 1)
            u4 = coupled_convex(normalise_costs(cv4), config)

        np.testing.assert_array_equal(cv1.costs, cv4.costs)
        np.testing.assert_array_equal(u1.vectors, u4.vectors)

    @pytest.mark.slow
    def test_concurrent_registrations(self, textured):
        pairs = [(textured((10, 10, 10)), textured((10, 10, 10))) for _ in range(3)]
        config = RegistrationConfig(
            capture_mm=(2.0, 2.0, 2.0),
            instance=InstanceOptConfig(learning_rate=0.02, iterations=2),
        )
        serial = [register(f, m, config).field.vectors for f, m in pairs]

        def run(index: int):
            with worker_scope(1 + index):
                f, m = pairs[index]
                return register(f, m, replace(config)).field.vectors

        with ThreadPoolExecutor(max_workers=3) as pool:
            concurrent = list(pool.map(run, range(3)))
        for a, b in zip(serial, concurrent, strict=True):
            np.testing.assert_array_equal(a, b)
