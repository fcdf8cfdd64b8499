"""Accuracy, macro-averaged P/R/F1, multi-seed aggregation and paired t-tests."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .errors import DataError, NumericError

METRIC_NAMES = ("accuracy", "macro_p", "macro_r", "macro_f1")


@dataclass
class ConfusionCounts:
    tp: list[int]
    fp: list[int]
    fn: list[int]
    tn: list[int]

    @property
    def n_classes(self) -> int:
        return len(self.tp)

    @classmethod
    def from_labels(cls, gold: Sequence[int], pred: Sequence[int], n_classes: int) -> "ConfusionCounts":
        tp, fp, fn = [0] * n_classes, [0] * n_classes, [0] * n_classes
        for g, p in zip(gold, pred):
            if g == p:
                tp[g] += 1
            else:
                fp[p] += 1
                fn[g] += 1
        total = len(gold)
        tn = [total - tp[c] - fp[c] - fn[c] for c in range(n_classes)]
        return cls(tp, fp, fn, tn)


@dataclass
class MetricsReport:
    accuracy: float
    macro_p: float
    macro_r: float
    macro_f1: float
    precision: list[float] = field(default_factory=list)
    recall: list[float] = field(default_factory=list)
    f1: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def headline(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_NAMES}


def _div(a: float, b: float) -> float:
    return a / b if b else 0.0


def score(gold: Sequence[int], pred: Sequence[int], n_classes: int) -> MetricsReport:
    if len(gold) != len(pred):
        raise DataError(f"length mismatch: {len(gold)} gold vs {len(pred)} predicted labels")
    for y in (*gold, *pred):
        if not 0 <= y < n_classes:
            raise DataError(f"label {y} outside [0, {n_classes})")
    cc = ConfusionCounts.from_labels(gold, pred, n_classes)
    p = [_div(cc.tp[c], cc.tp[c] + cc.fp[c]) for c in range(n_classes)]
    r = [_div(cc.tp[c], cc.tp[c] + cc.fn[c]) for c in range(n_classes)]
    f = [_div(2 * p[c] * r[c], p[c] + r[c]) for c in range(n_classes)]
    acc = _div(sum(cc.tp), len(gold))
    return MetricsReport(acc, sum(p) / n_classes, sum(r) / n_classes, sum(f) / n_classes, p, r, f)


@dataclass
class Aggregate:
    mean: dict[str, float]
    std: dict[str, float]
    max: dict[str, float]
    n: int

    def to_dict(self) -> dict:
        return asdict(self)

    def cell(self, metric: str, scale: float = 100.0, digits: int = 3) -> str:
        """``mean±std(max)`` as printed in the result tables."""
        return (f"{self.mean[metric] * scale:.{digits}f}±{self.std[metric] * scale:.{digits}f}"
                f"({self.max[metric] * scale:.{digits}f})")


def aggregate(reports: Sequence[MetricsReport | dict]) -> Aggregate:
    """Mean, population std and max of each headline metric across runs."""
    if not reports:
        raise ValueError("need at least one report")
    rows = [r.headline() if isinstance(r, MetricsReport) else r for r in reports]
    n = len(rows)
    mean, std, best = {}, {}, {}
    for k in METRIC_NAMES:
        vals = [row[k] for row in rows]
        mu = math.fsum(vals) / n
        mean[k] = mu
        std[k] = math.sqrt(math.fsum((v - mu) ** 2 for v in vals) / n)
        best[k] = max(vals)
    return Aggregate(mean, std, best, n)


def format_table(rows: dict[str, Aggregate], title: str = "") -> str:
    """Plain-text table with one row per run group."""
    name_w = max([len("Method")] + [len(n) for n in rows])
    cells = {n: [a.cell(m) for m in METRIC_NAMES] for n, a in rows.items()}
    col_w = max([len(c) for cs in cells.values() for c in cs] + [8])
    head = ["ACC(%)", "P(%)", "R(%)", "F1(%)"]
    lines = [title] if title else []
    lines.append("Method".ljust(name_w) + "  " + "  ".join(h.ljust(col_w) for h in head))
    for n, cs in cells.items():
        lines.append(n.ljust(name_w) + "  " + "  ".join(c.ljust(col_w) for c in cs))
    return "\n".join(lines) + "\n"


# -- Student t distribution ---------------------------------------------------

def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 1e-15) -> float:
    # Lentz continued fraction for the incomplete beta function
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise NumericError("incomplete beta continued fraction did not converge")


def regularized_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """P(T > t) for Student's t with ``df`` degrees of freedom."""
    x = df / (df + t * t)
    tail = 0.5 * regularized_beta(df / 2.0, 0.5, x)
    return tail if t >= 0 else 1.0 - tail


def student_t_cdf(t: float, df: float) -> float:
    return 1.0 - student_t_sf(t, df)


@dataclass
class TTestResult:
    t_statistic: float
    p_value: float
    df: int
    mean_difference: float


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on ``a - b``, pairs matched by index."""
    if len(a) != len(b):
        raise DataError("paired samples must have equal length")
    n = len(a)
    if n < 2:
        raise DataError("paired t-test needs at least two pairs")
    diffs = [x - y for x, y in zip(a, b)]
    mean = math.fsum(diffs) / n
    var = math.fsum((d - mean) ** 2 for d in diffs) / (n - 1)
    # differences equal up to rounding count as constant
    scale = max(abs(d) for d in diffs) or 1.0
    if var <= (1e-12 * scale) ** 2:
        raise NumericError("degenerate variance")
    t = mean / math.sqrt(var / n)
    p = min(1.0, 2.0 * student_t_sf(abs(t), n - 1))
    return TTestResult(t, p, n - 1, mean)


def write_report(path, report: MetricsReport | Aggregate, extra: dict | None = None) -> None:
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
