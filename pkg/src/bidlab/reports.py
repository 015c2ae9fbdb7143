"""Per-episode replay metrics and multi-run report rendering."""

from __future__ import annotations

import io
import json
import csv
from dataclasses import dataclass
from typing import Sequence

CSV_COLUMNS = (
    "strategy",
    "fraction",
    "period_id",
    "clicks",
    "pctr_sum",
    "imps_won",
    "cost",
    "budget",
    "cost_ratio",
    "cpm_won",
    "lost_early_stop",
    "lost_underbid",
)


@dataclass(frozen=True, slots=True)
class EpisodeReport:
    """What one bidder did over one delivery period.

    Every clicked impression the bidder lost is attributed to exactly one
    cause: the bid fell short of the market price (underbid) or the price
    was right but the slot's remaining funds could not cover it
    (early stop).
    """

    clicks_won: int
    pctr_sum_won: float
    imps_won: int
    cost: int
    budget: int
    lost_clicks_early_stop: int
    lost_clicks_underbid: int

    @property
    def cost_ratio(self) -> float:
        return self.cost / self.budget if self.budget else 0.0

    @property
    def avg_market_price_won(self) -> float:
        return self.cost / self.imps_won if self.imps_won else 0.0


@dataclass(frozen=True, slots=True)
class SweepCell:
    """One (strategy, budget fraction, period) evaluation result."""

    strategy: str
    fraction: str
    period_id: str
    report: EpisodeReport


def _fraction_sort_key(label: str) -> tuple[float, str]:
    """Largest budget fraction first; non-numeric labels sort after, by name."""
    try:
        if "/" in label:
            num, den = label.split("/", 1)
            value = float(num) / float(den)
        else:
            value = float(label)
    except (ValueError, ZeroDivisionError):
        return (float("inf"), label)
    return (-value, label)


def _sorted_cells(cells: Sequence[SweepCell]) -> list[SweepCell]:
    return sorted(
        cells,
        key=lambda c: (c.strategy, _fraction_sort_key(c.fraction), c.period_id),
    )


def emit_report(cells: Sequence[SweepCell], format: str = "csv") -> str:
    """Render sweep results deterministically as csv, json, or markdown."""
    if format == "csv":
        return _emit_csv(cells)
    if format == "json":
        return _emit_json(cells)
    if format == "markdown":
        return _emit_markdown(cells)
    raise ValueError(f"unknown report format: {format!r}")


def _emit_csv(cells: Sequence[SweepCell]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for cell in _sorted_cells(cells):
        r = cell.report
        writer.writerow(
            (
                cell.strategy,
                cell.fraction,
                cell.period_id,
                r.clicks_won,
                repr(r.pctr_sum_won),
                r.imps_won,
                r.cost,
                r.budget,
                f"{r.cost_ratio:.6f}",
                f"{r.avg_market_price_won:.3f}",
                r.lost_clicks_early_stop,
                r.lost_clicks_underbid,
            )
        )
    return out.getvalue()


def _emit_json(cells: Sequence[SweepCell]) -> str:
    rows = []
    for cell in _sorted_cells(cells):
        r = cell.report
        rows.append(
            {
                "strategy": cell.strategy,
                "fraction": cell.fraction,
                "period_id": cell.period_id,
                "clicks": r.clicks_won,
                "pctr_sum": r.pctr_sum_won,
                "imps_won": r.imps_won,
                "cost": r.cost,
                "budget": r.budget,
                "cost_ratio": r.cost_ratio,
                "cpm_won": r.avg_market_price_won,
                "lost_early_stop": r.lost_clicks_early_stop,
                "lost_underbid": r.lost_clicks_underbid,
            }
        )
    return json.dumps(rows, sort_keys=True, indent=2) + "\n"


def _emit_markdown(cells: Sequence[SweepCell]) -> str:
    """Strategies-by-fractions grid of total clicks over all periods."""
    strategies = sorted({c.strategy for c in cells})
    fractions = sorted({c.fraction for c in cells}, key=_fraction_sort_key)
    totals: dict[tuple[str, str], int] = {}
    for cell in cells:
        key = (cell.strategy, cell.fraction)
        totals[key] = totals.get(key, 0) + cell.report.clicks_won

    lines = ["| strategy | " + " | ".join(fractions) + " |"]
    lines.append("|" + " --- |" * (len(fractions) + 1))
    for strategy in strategies:
        row = [strategy]
        for fraction in fractions:
            row.append(str(totals.get((strategy, fraction), 0)))
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"
