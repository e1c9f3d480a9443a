"""Tests for dmtlab.workers."""

import logging
import threading

from dmtlab.workers import default_threads, parallel_map


class TestParallelMap:
    def test_preserves_order(self):
        assert parallel_map(lambda x: x * x, range(10), threads=4) == [x * x for x in range(10)]

    def test_serial_runs_inline(self):
        seen = parallel_map(lambda _: threading.current_thread().name, [1, 2], threads=1)
        assert set(seen) == {threading.current_thread().name}

    def test_empty(self):
        assert parallel_map(lambda x: x, [], threads=3) == []


class TestDefaultThreads:
    def test_reads_environment(self, monkeypatch):
        monkeypatch.setenv("DMT_THREADS", "3")
        assert default_threads() == 3

    def test_floor_of_one(self, monkeypatch):
        monkeypatch.setenv("DMT_THREADS", "0")
        assert default_threads() == 1

    def test_non_integer(self, monkeypatch, caplog):
        monkeypatch.setenv("DMT_THREADS", "many")
        with caplog.at_level(logging.WARNING, logger="dmtlab.workers"):
            assert default_threads() == 1
        assert "DMT_THREADS" in caplog.text
