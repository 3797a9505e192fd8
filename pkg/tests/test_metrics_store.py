"""Metric store behavior: ingestion ordering, windows, lookback, labels."""

from __future__ import annotations

import pytest

from opslearn.metrics import MetricStore, OrderViolation, SeriesId


def test_series_id_is_canonical():
    a = SeriesId.make("m", {"b": "2", "a": "1"})
    b = SeriesId.make("m", {"a": "1", "b": "2"})
    assert a == b
    assert a.full_labels() == {"__name__": "m", "a": "1", "b": "2"}


def test_first_sample_creates_series():
    store = MetricStore()
    store.ingest_value("m", {"job": "j"}, 0.0, 1.0)
    assert store.label_values("__name__") == ["m"]
    assert store.label_values("job") == ["j"]


def test_range_window_sees_both_samples():
    store = MetricStore()
    sid = SeriesId.make("m", {})
    store.ingest_value("m", {}, 0.0, 1.0)
    store.ingest_value("m", {}, 15.0, 2.0)
    assert store.samples_in_window(sid, -45.0, 15.0) == [(0.0, 1.0), (15.0, 2.0)]


def test_window_bounds_are_inclusive():
    store = MetricStore()
    sid = SeriesId.make("m", {})
    for t in (0.0, 30.0, 60.0):
        store.ingest_value("m", {}, t, t)
    assert store.samples_in_window(sid, 0.0, 60.0) == [(0.0, 0.0), (30.0, 30.0), (60.0, 60.0)]
    assert store.samples_in_window(sid, 0.1, 59.9) == [(30.0, 30.0)]


def test_out_of_order_sample_rejected():
    store = MetricStore()
    store.ingest_value("m", {}, 20.0, 1.0)
    with pytest.raises(OrderViolation):
        store.ingest_value("m", {}, 10.0, 2.0)
    # Per-series timestamps are strictly increasing, so a duplicate
    # timestamp is also out of order.
    with pytest.raises(OrderViolation):
        store.ingest_value("m", {}, 20.0, 3.0)
    # Other series keep their own clocks.
    store.ingest_value("m", {"job": "x"}, 0.0, 1.0)


def test_latest_at_applies_lookback():
    store = MetricStore()
    sid = SeriesId.make("m", {})
    store.ingest_value("m", {}, 100.0, 5.0)
    assert store.latest_at(sid, 400.0, 300.0) == (100.0, 5.0)
    assert store.latest_at(sid, 401.0, 300.0) is None
    assert store.latest_at(sid, 99.0, 300.0) is None


def test_latest_at_picks_newest_sample():
    store = MetricStore()
    sid = SeriesId.make("m", {})
    store.ingest_value("m", {}, 0.0, 1.0)
    store.ingest_value("m", {}, 50.0, 2.0)
    assert store.latest_at(sid, 60.0, 300.0) == (50.0, 2.0)
    assert store.latest_at(sid, 49.0, 300.0) == (0.0, 1.0)


def test_label_values_sorted_distinct():
    store = MetricStore()
    store.ingest_value("b_total", {"job": "z"}, 0.0, 1.0)
    store.ingest_value("a_total", {"job": "y"}, 0.0, 1.0)
    store.ingest_value("a_total", {"job": "z"}, 1.0, 1.0)
    assert store.label_values("__name__") == ["a_total", "b_total"]
    assert store.label_values("job") == ["y", "z"]
    assert store.label_values("missing") == []
