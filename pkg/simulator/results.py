"""Result tables and their CSV form.

The CSV starts with the metadata block as ``# `` comment lines (YAML), then
the header ``scenario,x_name,x_value,policy,metric,value,stderr`` and rows
sorted by independent variable, policy and metric.
"""

from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass, field
from typing import Any

import pandas as pd
import yaml

logger = logging.getLogger(__name__)

CODE_VERSION = "0.1.0"
COLUMNS = ("scenario", "x_name", "x_value", "policy", "metric", "value", "stderr")


@dataclass(frozen=True)
class ResultRow:
    x_value: float
    policy: str
    metric: str
    value: float
    stderr: float

    def __post_init__(self) -> None:
        if not self.stderr >= 0:
            raise ValueError(f"stderr must be >= 0, got {self.stderr} for {self.metric}")


@dataclass
class ResultTable:
    scenario: str
    x_name: str
    rows: list[ResultRow] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def add(self, x_value: float, policy: str, metric: str, value: float, stderr: float) -> None:
        self.rows.append(ResultRow(float(x_value), policy, metric, float(value), float(stderr)))

    def sorted_rows(self) -> list[ResultRow]:
        return sorted(self.rows, key=lambda r: (r.x_value, r.policy, r.metric))

    def lookup(self, policy: str, metric: str) -> dict[float, ResultRow]:
        """Rows of one (policy, metric) series keyed by x_value."""
        return {r.x_value: r for r in self.rows if r.policy == policy and r.metric == metric}


def _fmt(value: float) -> str:
    return format(value, ".12g")


def results_frame(table: ResultTable) -> pd.DataFrame:
    """Sorted rows as a string-valued frame in ``COLUMNS`` order."""
    records = [
        (
            table.scenario,
            table.x_name,
            _fmt(row.x_value),
            row.policy,
            row.metric,
            _fmt(row.value),
            _fmt(row.stderr),
        )
        for row in table.sorted_rows()
    ]
    return pd.DataFrame(records, columns=list(COLUMNS), dtype=str)


def render_results(table: ResultTable) -> str:
    buf = io.StringIO()
    meta = yaml.safe_dump(table.metadata, sort_keys=True, default_flow_style=False)
    for line in meta.splitlines():
        buf.write(f"# {line}\n")
    results_frame(table).to_csv(buf, index=False, lineterminator="\n")
    return buf.getvalue()


def emit_results(table: ResultTable, path: str) -> str:
    """Write ``table`` to ``path`` (parent directories created) and return the path."""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(render_results(table))
    logger.info("Wrote %d rows to %s", len(table.rows), path)
    return path


def read_metadata(path: str) -> dict[str, Any]:
    """Parse the leading ``# `` metadata block of a results CSV."""
    lines = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.startswith("#"):
                break
            lines.append(line[2:] if line.startswith("# ") else line[1:])
    return yaml.safe_load("".join(lines)) or {}


def read_results(path: str) -> list[dict[str, str]]:
    """CSV rows as dicts keyed by column name, metadata skipped."""
    df = pd.read_csv(path, comment="#", dtype=str, keep_default_na=False)
    return df.to_dict(orient="records")
