from __future__ import annotations

import threading

import pytest

from ncfem.workers import THREADS_ENV, effective_workers, ordered_map


@pytest.fixture(autouse=True)
def _no_thread_cap(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)


def test_ordered_map_keeps_input_order():
    items = list(range(40))
    assert ordered_map(lambda x: x * x, items, workers=4) == [x * x for x in items]


def test_single_worker_runs_inline():
    seen = set()

    def record(item):
        seen.add(threading.get_ident())
        return item

    assert ordered_map(record, range(8), workers=1) == list(range(8))
    assert seen == {threading.get_ident()}


def test_ordered_map_handles_empty_input():
    assert ordered_map(str, [], workers=4) == []


@pytest.mark.parametrize("requested, expected", [(0, 1), (1, 1), (6, 6)])
def test_effective_workers_without_cap(requested, expected):
    assert effective_workers(requested) == expected


@pytest.mark.parametrize("raw, expected", [("2", 2), ("16", 6), ("many", 6), ("0", 6), ("-3", 6)])
def test_effective_workers_cap(monkeypatch, raw, expected):
    monkeypatch.setenv(THREADS_ENV, raw)
    assert effective_workers(6) == expected
