"""Brute-force reference evaluator for the metrics query subset.

Implements every supported query construct as a direct formula over raw
sample lists, independent of the production engine's store, parser, and
evaluation helpers.  Tests build a random expression tree, render it to
query text for the production engine, evaluate the same tree here, and
compare the two results.

Conventions shared with the production engine because they are part of
the query language contract, not implementation detail:

* instant lookback is 300 seconds;
* label matchers treat a missing label as the empty string, ``=~`` is a
  full match;
* ``rate`` uses the samples inside the closed window ``[at - range, at]``
  and divides the counter increase by the observed span (no
  extrapolation), compensating counter resets by counting the full
  post-reset value;
* histogram quantiles interpolate linearly inside the target bucket from
  the previous bucket's upper bound (0 for the first bucket);
* vector division matches entries on their full label set minus
  ``__name__`` and drops unmatched or zero-denominator entries.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field

LOOKBACK = 300.0


@dataclass
class RawSeries:
    """One time series as plain data: name, labels, (timestamp, value) pairs."""

    name: str
    labels: dict[str, str]
    samples: list[tuple[float, float]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Expression trees.  The tests generate these, render them to query text for
# the production parser, and hand the tree itself to ``eval_tree`` below.
# ---------------------------------------------------------------------------


@dataclass
class SelectorNode:
    name: str | None
    matchers: list[tuple[str, str, str]]  # (label, "=" | "=~", value)


@dataclass
class RateNode:
    selector: SelectorNode
    range_text: str  # e.g. "5m", rendered inside the brackets
    range_seconds: float


@dataclass
class AggNode:
    op: str  # "sum" | "count"
    by: list[str] | None  # None renders without a by clause
    child: "ExprNode"


@dataclass
class QuantileNode:
    q_text: str
    q: float
    child: "ExprNode"


@dataclass
class DivNode:
    left: "ExprNode"
    right: "ExprNode"


ExprNode = SelectorNode | RateNode | AggNode | QuantileNode | DivNode


# ---------------------------------------------------------------------------
# Rendering: expression tree -> query text, with cosmetic randomization so the
# production parser sees varied-but-legal spellings of the same tree.
# ---------------------------------------------------------------------------


def _quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def render(node: ExprNode, rng: random.Random) -> str:
    """Render a tree to query text, varying whitespace and by-clause position."""
    comma = rng.choice([",", ", "])
    if isinstance(node, SelectorNode):
        body = comma.join(f"{label}{op}{_quote(value)}" for label, op, value in node.matchers)
        pad = rng.choice(["", " "])
        if node.name is None:
            return "{" + pad + body + pad + "}"
        if not node.matchers and rng.random() < 0.5:
            return node.name
        return node.name + "{" + pad + body + pad + "}"
    if isinstance(node, RateNode):
        return f"rate({render(node.selector, rng)}[{node.range_text}])"
    if isinstance(node, AggNode):
        inner = render(node.child, rng)
        if node.by is None:
            return f"{node.op}({inner})"
        by_clause = "by (" + comma.join(node.by) + ")"
        if rng.random() < 0.5:
            return f"{node.op} {by_clause}({inner})"
        return f"{node.op}({inner}) {by_clause}"
    if isinstance(node, QuantileNode):
        sep = rng.choice([",", ", "])
        return f"histogram_quantile({node.q_text}{sep}{render(node.child, rng)})"
    if isinstance(node, DivNode):
        left = render(node.left, rng)
        right = render(node.right, rng)
        if isinstance(node.right, DivNode) or rng.random() < 0.2:
            right = f"({right})"
        slash = rng.choice(["/", " / "])
        return f"{left}{slash}{right}"
    raise TypeError(f"unknown node {node!r}")


# ---------------------------------------------------------------------------
# Reference evaluation.
# ---------------------------------------------------------------------------


def _matches(series: RawSeries, node: SelectorNode) -> bool:
    if node.name is not None and series.name != node.name:
        return False
    for label, op, value in node.matchers:
        if label == "__name__":
            actual = series.name
        else:
            actual = series.labels.get(label, "")
        if op == "=":
            if actual != value:
                return False
        elif op == "=~":
            if re.fullmatch(value, actual) is None:
                return False
        else:
            raise ValueError(f"unknown matcher op {op!r}")
    return True


def _eval_selector(series_list: list[RawSeries], node: SelectorNode, at: float) -> list[tuple[dict[str, str], float]]:
    out: list[tuple[dict[str, str], float]] = []
    for series in series_list:
        if not _matches(series, node):
            continue
        newest: tuple[float, float] | None = None
        for t, v in series.samples:
            if t <= at and (newest is None or t > newest[0]):
                newest = (t, v)
        if newest is None or at - newest[0] > LOOKBACK:
            continue
        labels = dict(series.labels)
        labels["__name__"] = series.name
        out.append((labels, newest[1]))
    return out


def _eval_rate(series_list: list[RawSeries], node: RateNode, at: float) -> list[tuple[dict[str, str], float]]:
    start = at - node.range_seconds
    out: list[tuple[dict[str, str], float]] = []
    for series in series_list:
        if not _matches(series, node.selector):
            continue
        window = sorted((t, v) for t, v in series.samples if start <= t <= at)
        if len(window) < 2:
            continue
        increase = 0.0
        for (_, prev_v), (_, next_v) in zip(window, window[1:]):
            if next_v >= prev_v:
                increase += next_v - prev_v
            else:
                # Counter reset: the counter restarted, so the whole
                # post-reset value is new increase.
                increase += next_v
        span = window[-1][0] - window[0][0]
        out.append((dict(series.labels), increase / span))
    return out


def _eval_agg(entries: list[tuple[dict[str, str], float]], op: str, by: list[str] | None) -> list[tuple[dict[str, str], float]]:
    wanted = sorted(by) if by else []
    groups: dict[tuple[tuple[str, str], ...], list[float]] = {}
    for labels, value in entries:
        key = tuple((name, labels[name]) for name in wanted if name in labels)
        groups.setdefault(key, []).append(value)
    out: list[tuple[dict[str, str], float]] = []
    for key, values in groups.items():
        if op == "sum":
            total = 0.0
            for value in values:
                total += value
        elif op == "count":
            total = float(len(values))
        else:
            raise ValueError(f"unknown aggregation {op!r}")
        out.append((dict(key), total))
    return out


def _parse_le(text: str) -> float:
    if text in ("+Inf", "Inf"):
        return math.inf
    return float(text)


def _quantile_from_buckets(q: float, buckets: list[tuple[float, float]]) -> float | None:
    """Standard cumulative-bucket linear interpolation.

    ``buckets`` holds (upper_bound, cumulative_count) sorted by bound; the
    last bound must be +Inf.  Returns None when the data cannot support a
    quantile (too few buckets, no +Inf bucket, empty histogram).
    """
    if len(buckets) < 2 or not math.isinf(buckets[-1][0]):
        return None
    total = buckets[-1][1]
    if total <= 0:
        return None
    rank = q * total
    cum_prev = 0.0
    bound_prev = 0.0
    for index, (bound, cum) in enumerate(buckets):
        if cum >= rank:
            if math.isinf(bound):
                return buckets[-2][0]
            if index == 0 and bound <= 0:
                return bound
            mass = cum - cum_prev
            if mass <= 0:
                return bound_prev
            return bound_prev + (bound - bound_prev) * (rank - cum_prev) / mass
        cum_prev = cum
        bound_prev = bound
    return buckets[-2][0]


def _eval_quantile(entries: list[tuple[dict[str, str], float]], q: float) -> list[tuple[dict[str, str], float]]:
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile {q} outside [0, 1]")
    groups: dict[tuple[tuple[str, str], ...], list[tuple[float, float]]] = {}
    for labels, value in entries:
        if "le" not in labels:
            continue
        bound = _parse_le(labels["le"])
        key = tuple(sorted((k, v) for k, v in labels.items() if k not in ("le", "__name__")))
        groups.setdefault(key, []).append((bound, value))
    out: list[tuple[dict[str, str], float]] = []
    for key, buckets in groups.items():
        value = _quantile_from_buckets(q, sorted(buckets))
        if value is None:
            continue
        out.append((dict(key), value))
    return out


def _eval_div(
    left: list[tuple[dict[str, str], float]],
    right: list[tuple[dict[str, str], float]],
) -> list[tuple[dict[str, str], float]]:
    denominators: dict[tuple[tuple[str, str], ...], float] = {}
    for labels, value in right:
        key = tuple(sorted((k, v) for k, v in labels.items() if k != "__name__"))
        if key in denominators:
            raise ValueError("ambiguous division: duplicate right-hand label set")
        denominators[key] = value
    out: list[tuple[dict[str, str], float]] = []
    for labels, value in left:
        stripped = {k: v for k, v in labels.items() if k != "__name__"}
        key = tuple(sorted(stripped.items()))
        if key not in denominators or denominators[key] == 0:
            continue
        out.append((stripped, value / denominators[key]))
    return out


def eval_tree(series_list: list[RawSeries], node: ExprNode, at: float) -> list[tuple[dict[str, str], float]]:
    """Evaluate a tree against raw series, returning (labels, value) pairs."""
    if isinstance(node, SelectorNode):
        return _eval_selector(series_list, node, at)
    if isinstance(node, RateNode):
        return _eval_rate(series_list, node, at)
    if isinstance(node, AggNode):
        return _eval_agg(eval_tree(series_list, node.child, at), node.op, node.by)
    if isinstance(node, QuantileNode):
        return _eval_quantile(eval_tree(series_list, node.child, at), node.q)
    if isinstance(node, DivNode):
        return _eval_div(eval_tree(series_list, node.left, at), eval_tree(series_list, node.right, at))
    raise TypeError(f"unknown node {node!r}")
