#!filepath: src/weakfbsde_app/reporting.py
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from rich.console import Console
from rich.table import Table

from weakfbsde_app.records import write_jsonl
from weakfbsde_app.utils.logger import get_logger

logger = get_logger(__name__)

REPORTS_FILE = "reports.jsonl"
SUMMARY_FILE = "summary.md"


@dataclass(frozen=True, slots=True)
class ReportPaths:
    """Report output paths.

    Args:
        records_path: One JSON record per check or experiment.
        summary_path: Markdown summary.
    """

    records_path: Path
    summary_path: Path


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "pass" if value else "FAIL"
    if isinstance(value, float):
        return f"{value:.6g}"
    if value is None:
        return "-"
    return str(value)


def _row(record: Mapping[str, Any]) -> list[str]:
    return [
        _fmt(record.get("name")),
        _fmt(record.get("statistic")),
        _fmt(record.get("standard_error")),
        _fmt(record.get("threshold")),
        _fmt(record.get("pass")),
    ]


HEADERS = ("check", "statistic", "s.e.", "threshold", "verdict")


def summary_markdown(title: str, records: Sequence[Mapping[str, Any]], notes: Sequence[str] = ()) -> str:
    lines = [f"# {title}", ""]
    if records:
        lines.append("| " + " | ".join(HEADERS) + " |")
        lines.append("|" + "---|" * len(HEADERS))
        for rec in records:
            lines.append("| " + " | ".join(_row(rec)) + " |")
        lines.append("")
    for note in notes:
        lines.append(f"* {note}")
    return "\n".join(lines).rstrip() + "\n"


def write_reports(
    out_dir: Path,
    title: str,
    records: Sequence[Mapping[str, Any]],
    notes: Sequence[str] = (),
) -> ReportPaths:
    """Write reports.jsonl and summary.md into out_dir.

    Args:
        out_dir: Output directory, created if needed.
        title: Heading of the summary.
        records: Check or experiment records.
        notes: Extra bullet lines for the summary.

    Returns:
        ReportPaths: Paths written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records_path = write_jsonl(out / REPORTS_FILE, records)
    summary_path = out / SUMMARY_FILE
    summary_path.write_text(summary_markdown(title, records, notes), encoding="utf8")
    logger.info(f"Wrote {len(records)} records to {records_path}")
    return ReportPaths(records_path=records_path, summary_path=summary_path)


def render_table(title: str, records: Sequence[Mapping[str, Any]]) -> Table:
    table = Table(title=title)
    for h in HEADERS:
        table.add_column(h, justify="left" if h in ("check", "verdict") else "right")
    for rec in records:
        row = _row(rec)
        style = None if rec.get("pass", True) else "bold red"
        table.add_row(*row, style=style)
    return table


def print_table(title: str, records: Sequence[Mapping[str, Any]], console: Optional[Console] = None) -> None:
    (console or Console()).print(render_table(title, records))


def print_mapping(title: str, values: Mapping[str, Any], console: Optional[Console] = None) -> None:
    """Two-column key/value table."""
    table = Table(title=title)
    table.add_column("key")
    table.add_column("value", justify="right")
    for key, value in values.items():
        table.add_row(str(key), _fmt(value))
    (console or Console()).print(table)
