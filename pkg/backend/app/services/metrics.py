"""Precision / recall / F1 per issue kind from (NI, N, TP) counts."""

import logging
from collections import Counter
from pathlib import Path

from pydantic import TypeAdapter

from app.models.schemas import GroundTruth, IssueReport, KindCounts, MetricsReport, MetricsRow
from app.utils.constants import ISSUE_KINDS


logger = logging.getLogger(__name__)

_COUNTS_ADAPTER = TypeAdapter(dict[str, KindCounts])


class InvalidCounts(ValueError):
    def __init__(self, kind: str, counts: KindCounts, reason: str):
        self.kind = kind
        self.counts = counts
        super().__init__(f"invalid counts for {kind} (NI={counts.ni}, N={counts.n}, TP={counts.tp}): {reason}")


def _check(kind: str, c: KindCounts) -> None:
    if min(c.ni, c.n, c.tp) < 0:
        raise InvalidCounts(kind, c, "counts must be non-negative")
    if c.tp > c.n:
        raise InvalidCounts(kind, c, "TP exceeds N")
    if c.tp > c.ni:
        raise InvalidCounts(kind, c, "TP exceeds NI")


def metrics_row(kind: str, c: KindCounts) -> MetricsRow:
    """P = TP/N, R = TP/NI as percentages; F1 from the unrounded fractions."""
    _check(kind, c)
    p = c.tp / c.n if c.n else 0.0
    r = c.tp / c.ni if c.ni else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return MetricsRow(
        kind=kind, ni=c.ni, n=c.n, tp=c.tp,
        precision=round(p * 100, 2),
        recall=round(r * 100, 2),
        f1=round(f1, 2),
    )


def compute_metrics(counts: dict[str, KindCounts]) -> MetricsReport:
    ordered = [k for k in ISSUE_KINDS if k in counts] + sorted(k for k in counts if k not in ISSUE_KINDS)
    rows = [metrics_row(kind, counts[kind]) for kind in ordered]
    total = KindCounts(
        ni=sum(counts[k].ni for k in ordered),
        n=sum(counts[k].n for k in ordered),
        tp=sum(counts[k].tp for k in ordered),
    )
    return MetricsReport(rows=rows, total=metrics_row("Total", total))


def load_counts(path: Path | str) -> dict[str, KindCounts]:
    """`{"<kind>": {"ni": .., "n": .., "tp": ..}}` JSON."""
    return _COUNTS_ADAPTER.validate_json(Path(path).read_text(encoding="utf-8"))


def count_confusion(report: IssueReport, truth: GroundTruth) -> dict[str, KindCounts]:
    """Match reported issues to expected (file, line, kind) entries; each entry matches once."""
    expected = Counter((e.file, e.line, e.kind) for e in truth.entries)
    remaining = Counter(expected)
    reported: Counter[str] = Counter()
    hits: Counter[str] = Counter()
    for file_issues in report.files:
        for issue in file_issues.issues:
            reported[issue.kind] += 1
            key = (Path(issue.file or file_issues.file).name, issue.line, issue.kind)
            if remaining[key] > 0:
                remaining[key] -= 1
                hits[issue.kind] += 1
    seeded = Counter(e.kind for e in truth.entries)
    counts = {
        kind: KindCounts(ni=seeded[kind], n=reported[kind], tp=hits[kind])
        for kind in ISSUE_KINDS
    }
    missed = sum(remaining.values())
    if missed:
        logger.info(f"{missed} expected issue(s) were not reported")
    return counts
