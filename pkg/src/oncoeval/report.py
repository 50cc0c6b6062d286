"""Aggregate stored runs into result tables (main, robustness-by-rate,
retriever comparison, generation timing) emitted as CSV or Markdown.

Run store layout: runs/<run_id>/{manifest.json, scores.json,
records.jsonl, dataset_ref.txt}. Directories without a manifest are
incomplete runs and are ignored.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from oncoeval.errors import ValidationError

TABLE_KINDS = ("main", "robustness", "retriever", "timing")

METRIC_COLUMNS = (
    "em_precision",
    "em_recall",
    "em_f1",
    "bleu2_precision",
    "bleu2_recall",
    "bleu2_f1",
    "rouge_l_precision",
    "rouge_l_recall",
    "rouge_l_f1",
)


@dataclass
class RunManifest:
    run_id: str
    task: str
    backend_tag: str
    retriever: str = "none"
    perturbation_kind: str | None = None
    perturbation_rate: float | None = None
    seed: int = 0
    started: str = ""
    finished: str = ""
    wall_clock_ms: int = 0

    def __post_init__(self):
        if self.wall_clock_ms < 0:
            raise ValidationError(f"run {self.run_id}: negative wall_clock_ms")


@dataclass
class TableSpec:
    kind: str
    run_ids: list[str]

    def __post_init__(self):
        if self.kind not in TABLE_KINDS:
            raise ValidationError(f"unknown table kind {self.kind!r}")


class RunStore:
    """Read-only view over a runs directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def list_runs(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(
            p.name for p in self.root.iterdir() if (p / "manifest.json").is_file()
        )

    def manifest(self, run_id: str) -> RunManifest:
        path = self.root / run_id / "manifest.json"
        if not path.is_file():
            raise ValidationError(f"no stored run named {run_id}")
        data = json.loads(path.read_text(encoding="utf-8"))
        known = {f.name for f in fields(RunManifest)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"run {run_id}: unknown manifest fields {sorted(unknown)}")
        return RunManifest(**data)

    def scores(self, run_id: str) -> dict:
        path = self.root / run_id / "scores.json"
        if not path.is_file():
            raise ValidationError(f"run {run_id} has no scores.json")
        return json.loads(path.read_text(encoding="utf-8"))


def round2(value: float) -> float:
    """Round half-up to 2 decimals (display rule for all table numbers)."""
    return float(Decimal(str(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def format_hms(wall_clock_ms: int) -> str:
    """Milliseconds to h:mm:ss, e.g. 4452000 -> "1:14:12"."""
    total_s = wall_clock_ms // 1000
    return f"{total_s // 3600}:{total_s % 3600 // 60:02d}:{total_s % 60:02d}"


def _metric_cells(scores: dict) -> list[float]:
    """The nine P/R/F1 cells (x100, display-rounded) in table order."""
    cells = []
    for metric in ("exact_match", "bleu2", "rouge_l"):
        triple = scores[metric]
        for part in ("precision", "recall", "f1"):
            cells.append(round2(100.0 * triple[part]))
    return cells


def _average_f1_cell(cells: list[float]) -> float:
    # Computed from the rounded F1 cells so the emitted table is
    # arithmetically self-consistent.
    f1s = (cells[2], cells[5], cells[8])
    return round2(sum(f1s) / 3.0)


def build_table(spec: TableSpec, store: RunStore) -> tuple[list[str], list[list]]:
    """Table header and rows for the requested kind, deterministic order."""
    if not spec.run_ids:
        raise ValidationError("table spec references no runs")
    loaded = []
    for run_id in spec.run_ids:
        loaded.append((store.manifest(run_id), store.scores(run_id)))

    if spec.kind == "main":
        header = ["run_id", *METRIC_COLUMNS, "average_f1"]
        rows = []
        for manifest, scores in sorted(loaded, key=lambda pair: pair[0].run_id):
            cells = _metric_cells(scores)
            rows.append([manifest.run_id, *cells, _average_f1_cell(cells)])
        return header, rows

    if spec.kind == "robustness":
        header = ["rate", "run_id", *METRIC_COLUMNS, "average_f1", "group_average_f1"]
        by_rate: dict[float, list] = {}
        for manifest, scores in loaded:
            rate = manifest.perturbation_rate
            if rate is None:
                rate = 0.0
            by_rate.setdefault(rate, []).append((manifest, scores))
        rows = []
        for rate in sorted(by_rate):
            group = sorted(by_rate[rate], key=lambda pair: pair[0].run_id)
            group_rows = []
            for manifest, scores in group:
                cells = _metric_cells(scores)
                # Rates render exactly (0.02 stays "0.02", not a 2-dp float cell).
                group_rows.append([f"{rate:g}", manifest.run_id, *cells, _average_f1_cell(cells)])
            group_avg = round2(sum(r[-1] for r in group_rows) / len(group_rows))
            for row in group_rows:
                rows.append([*row, group_avg])
        return header, rows

    if spec.kind == "retriever":
        header = ["retriever", "run_id", *METRIC_COLUMNS, "average_f1"]
        rows = []
        ordered = sorted(loaded, key=lambda pair: (pair[0].retriever, pair[0].run_id))
        for manifest, scores in ordered:
            cells = _metric_cells(scores)
            rows.append([manifest.retriever, manifest.run_id, *cells, _average_f1_cell(cells)])
        return header, rows

    # timing
    header = ["run_id", "task", "average_f1", "generation_time"]
    rows = []
    for manifest, scores in sorted(loaded, key=lambda pair: pair[0].run_id):
        cells = _metric_cells(scores)
        rows.append(
            [manifest.run_id, manifest.task, _average_f1_cell(cells), format_hms(manifest.wall_clock_ms)]
        )
    return header, rows


def _format_cell(value) -> str:
    if isinstance(value, float):
        return str(Decimal(str(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))
    return str(value)


def render(header: list[str], rows: list[list], fmt: str) -> str:
    """Render a table as csv or markdown text (byte-deterministic)."""
    if not rows:
        raise ValidationError("refusing to emit an empty table")
    formatted = [[_format_cell(v) for v in row] for row in rows]
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(formatted)
        return buffer.getvalue()
    if fmt == "markdown":
        lines = [
            "| " + " | ".join(header) + " |",
            "| " + " | ".join("---" for _ in header) + " |",
        ]
        for row in formatted:
            lines.append("| " + " | ".join(row) + " |")
        return "\n".join(lines) + "\n"
    raise ValidationError(f"unknown emit format {fmt!r}")


def emit(header: list[str], rows: list[list], fmt: str, path: str | Path) -> None:
    text = render(header, rows, fmt)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)


def write_manifest(manifest: RunManifest, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(asdict(manifest), handle, indent=2, sort_keys=True)
        handle.write("\n")
