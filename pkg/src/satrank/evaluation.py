"""Ranking metrics and comparison reports.

Convention: a lower predicted score means lower predicted satisfaction, and
Precision@k looks at the k% lowest-scored items, since the operational goal
is finding unhappy customers.
"""

from __future__ import annotations

import json
import math
import operator
import re
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from satrank.errors import DataError

K_PERCENTS = (1, 2, 3, 4, 5, 10, 25, 50, 75, 100)


def average_ranks(x) -> np.ndarray:
    """1-based ranks with tied values sharing their mean rank."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i: j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(pred, actual) -> float:
    """Spearman's rho: Pearson correlation of tie-averaged ranks."""
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or pred.ndim != 1:
        raise ValueError(f"spearman: shapes {pred.shape} and {actual.shape} differ")
    if len(pred) < 2:
        raise ValueError("spearman: need at least two observations")
    if np.all(pred == pred[0]) or np.all(actual == actual[0]):
        raise ValueError("undefined correlation: constant input")
    a = average_ranks(pred)
    b = average_ranks(actual)
    a -= a.mean()
    b -= b.mean()
    rho = float(a @ b / math.sqrt((a @ a) * (b @ b)))
    return max(-1.0, min(1.0, rho))


def top_k_indices(scores, k_percent: float, ids: Sequence[str] | None = None) -> np.ndarray:
    """Indices of the ``ceil(N*k/100)`` lowest scores; ties broken by id."""
    if not 0 < k_percent <= 100:
        raise ValueError(f"k_percent must be in (0, 100], got {k_percent}")
    scores = np.asarray(scores, dtype=float)
    n = len(scores)
    ids = [str(i) for i in range(n)] if ids is None else list(ids)
    order = sorted(range(n), key=lambda i: (scores[i], ids[i]))
    size = math.ceil(n * k_percent / 100.0)
    return np.asarray(order[:size], dtype=int)


def precision_at_k(scores, relevant, k_percent: float, ids: Sequence[str] | None = None) -> float:
    relevant = np.asarray(relevant, dtype=bool)
    top = top_k_indices(scores, k_percent, ids)
    if len(top) == 0:
        return 0.0
    return float(relevant[top].sum() / len(top))


_OPS = {"==": operator.eq, "<=": operator.le, "<": operator.lt, ">=": operator.ge, ">": operator.gt,
        "!=": operator.ne}
_RULE_RE = re.compile(r"^\s*([A-Za-z_]\w*)\s*(==|<=|>=|!=|<|>)\s*(-?\d+(?:\.\d+)?)\s*$")


@dataclass(frozen=True)
class RelevanceRule:
    """A threshold on the true label, e.g. ``rating == 1`` or ``RSI <= 7``."""

    text: str

    def __post_init__(self):
        if not _RULE_RE.match(self.text):
            raise ValueError(f"bad relevance rule {self.text!r}; expected e.g. 'rating == 1'")

    def __call__(self, labels) -> np.ndarray:
        _, op, value = _RULE_RE.match(self.text).groups()
        return _OPS[op](np.asarray(labels, dtype=float), float(value))


@dataclass
class EvalReport:
    model: str
    spearman_x100: float | None
    precision: dict[int, float]
    relevance_rule: str
    split: str
    n_items: int
    base_rate: float
    runtime_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = [{"model": self.model, "metric": "spearman_x100", "value": self.spearman_x100,
                "split": self.split, "relevance_rule": self.relevance_rule, "n": self.n_items}]
        for k, v in self.precision.items():
            out.append({"model": self.model, "metric": f"precision@{k}%", "k_percent": k, "value": v,
                        "split": self.split, "relevance_rule": self.relevance_rule, "n": self.n_items})
        out.append({"model": self.model, "metric": "base_rate", "value": self.base_rate,
                    "split": self.split, "relevance_rule": self.relevance_rule, "n": self.n_items})
        return out


def make_report(model: str, scores: Mapping[str, float], labels: Mapping[str, float],
                rule: RelevanceRule | str, split: str = "test",
                k_percents: Sequence[int] = K_PERCENTS) -> EvalReport:
    """Align predictions and labels by id and compute every metric."""
    rule = RelevanceRule(rule) if isinstance(rule, str) else rule
    missing_labels = sorted(set(scores) - set(labels))
    missing_scores = sorted(set(labels) - set(scores))
    if missing_labels or missing_scores:
        raise DataError(f"id mismatch: no label for {missing_labels[:20]}, "
                        f"no score for {missing_scores[:20]}")
    ids = sorted(scores)
    s = np.array([scores[i] for i in ids], dtype=float)
    y = np.array([labels[i] for i in ids], dtype=float)
    rel = rule(y)
    try:
        rho = round(100.0 * spearman(s, y), 10)
    except ValueError:
        rho = None
    prec = {int(k): precision_at_k(s, rel, k, ids) for k in k_percents}
    return EvalReport(model, rho, prec, rule.text, split, len(ids), float(rel.mean()))


def render_table(reports: Sequence[EvalReport], title: str = "", show_runtime: bool = False) -> str:
    """Aligned text table: one column per model, Spearman row then one row per k."""
    if not reports:
        return ""
    head = ["metric"] + [r.model for r in reports]
    body = [["Spearman x100"] + ["n/a" if r.spearman_x100 is None else f"{r.spearman_x100:.2f}" for r in reports]]
    for k in reports[0].precision:
        body.append([f"Precision@{k}%"] + [f"{r.precision[k]:.3f}" for r in reports])
    body.append(["base rate"] + [f"{r.base_rate:.3f}" for r in reports])
    if show_runtime:
        body.append(["runtime s"] + [f"{r.runtime_seconds:.1f}" for r in reports])
    widths = [max(len(row[c]) for row in [head] + body) for c in range(len(head))]

    def fmt(row):
        return "  ".join(cell.ljust(w) if c == 0 else cell.rjust(w) for c, (cell, w) in enumerate(zip(row, widths)))

    lines = []
    if title:
        lines.append(title)
    r0 = reports[0]
    lines.append(f"split={r0.split}  relevant: {r0.relevance_rule}  n={r0.n_items}")
    lines.append(fmt(head))
    lines.append("  ".join("-" * w for w in widths))
    lines.extend(fmt(row) for row in body)
    return "\n".join(lines) + "\n"


def report_jsonl(reports: Sequence[EvalReport]) -> str:
    return "".join(json.dumps(row, sort_keys=True) + "\n" for r in reports for row in r.rows())


def report_dict(report: EvalReport) -> dict:
    return asdict(report)
