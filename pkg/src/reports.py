"""Report files: CSV or JSON tables, a summary and a run manifest."""

import csv
import json
import logging
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from src.config import settings
from src.models import ExperimentReport, RunConfig, RunManifest
from src.utils import format_fraction

logger = logging.getLogger(__name__)


def render_value(value: Any) -> Any:
    """A CSV cell or JSON value for one table entry."""
    if isinstance(value, Fraction):
        return format_fraction(value, settings.decimal_places)
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return value


def _json_default(value: Any) -> Any:
    if isinstance(value, (Fraction, Decimal)):
        return str(value)
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps(payload: Any) -> str:
    return json.dumps(payload, indent=2, ensure_ascii=False, sort_keys=False, default=_json_default) + "\n"


def provenance_line(config: RunConfig) -> str:
    """First line of every CSV: seed and config, nothing run-specific."""
    return "# provenance " + json.dumps(config.provenance(), sort_keys=True, ensure_ascii=False, default=_json_default)


class ReportWriter:
    """Writes one subcommand's report files next to each other.

    ``out`` is the main table; ``<stem>.summary.json`` and
    ``<stem>.manifest.json`` go beside it, and every extra table becomes
    ``<stem>.<name>.csv`` (first row is its header).
    """

    def __init__(self, config: RunConfig):
        self.config = config
        default = Path(settings.report_dir) / f"{config.subcommand}.{config.format}"
        self.out = Path(config.out) if config.out else default
        self.stem = self.out.with_suffix("")

    def sibling(self, suffix: str) -> Path:
        return self.stem.parent / f"{self.stem.name}{suffix}"

    def write_csv(self, path: Path, columns: List[str], rows: List[List[Any]]) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(provenance_line(self.config) + "\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([render_value(value) for value in row])
        return path

    def write_json(self, path: Path, payload: Dict[str, Any]) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(dumps(payload))
        return path

    def write(self, report: ExperimentReport) -> List[Path]:
        """Write the table, extra tables and summary; return the paths written."""
        files = []
        provenance = self.config.provenance()
        if self.config.format == "csv":
            files.append(self.write_csv(self.out, report.columns, report.rows))
            for name, table in report.extra_tables.items():
                if table:
                    files.append(self.write_csv(self.sibling(f".{name}.csv"), table[0], table[1:]))
        else:
            payload = {
                "provenance": provenance,
                "columns": report.columns,
                "rows": [[render_value(value) for value in row] for row in report.rows],
                "extra_tables": {
                    name: [[render_value(value) for value in row] for row in table]
                    for name, table in report.extra_tables.items()
                },
            }
            files.append(self.write_json(self.out, payload))

        summary = {
            "provenance": provenance,
            "summary": report.summary,
            "assertions": [assertion.model_dump() for assertion in report.assertions],
            "passed": report.passed,
        }
        files.append(self.write_json(self.sibling(".summary.json"), summary))
        logger.info(f"Wrote {len(files)} report file(s) under {self.out.parent}")
        return files

    def write_manifest(self, manifest: RunManifest) -> Path:
        path = self.sibling(".manifest.json")
        self.write_json(path, manifest.model_dump(mode="json"))
        return path


def read_csv_body(path: Path) -> List[List[str]]:
    """Rows of a report CSV after the provenance line, header included."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        lines = handle.read().split("\n")
    body = [line for line in lines[1:] if line]
    return list(csv.reader(body))


def summary_path(out: Optional[str], subcommand: str, fmt: str) -> Path:
    """Where the summary of a run lands."""
    out_path = Path(out) if out else Path(settings.report_dir) / f"{subcommand}.{fmt}"
    stem = out_path.with_suffix("")
    return stem.parent / f"{stem.name}.summary.json"
