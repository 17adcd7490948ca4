"""
Deterministic text emitters for command-line and file output.
"""

import csv
import io
import json
from typing import Any, Dict, Iterable, List, Optional, Sequence

from pydantic import BaseModel

from app.errors import InvalidInputError


def _plain(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json")
    if isinstance(obj, (list, tuple)):
        return [_plain(o) for o in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


def to_json(obj: Any) -> str:
    """Sorted keys, 2-space indent, trailing newline."""
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def to_json_lines(records: Iterable[Any]) -> str:
    """One compact, key-sorted JSON object per line."""
    return "".join(json.dumps(_plain(r), sort_keys=True) + "\n" for r in records)


def _cell(value: Any, decimals: Optional[int]) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float) and decimals is not None:
        return f"{value:.{decimals}f}"
    return str(value)


def _rows(rows: Sequence[Any], columns: Sequence[str], decimals: Dict[str, int]) -> List[List[str]]:
    table = []
    for row in rows:
        data = _plain(row)
        table.append([_cell(data.get(c), decimals.get(c)) for c in columns])
    return table


def to_csv(rows: Sequence[Any], columns: Sequence[str], decimals: Optional[Dict[str, int]] = None) -> str:
    """Header plus one line per row, '\\n' line endings; floats use fixed decimals per column."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(_rows(rows, columns, decimals or {}))
    return out.getvalue()


def to_markdown(rows: Sequence[Any], columns: Sequence[str], decimals: Optional[Dict[str, int]] = None) -> str:
    """Pipe table."""
    lines = [
        "| " + " | ".join(columns) + " |",
        "|" + "|".join("---" for _ in columns) + "|",
    ]
    for cells in _rows(rows, columns, decimals or {}):
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def emit(rows: Sequence[Any], columns: Sequence[str], emit_format: str,
         decimals: Optional[Dict[str, int]] = None, document: Any = None) -> str:
    """Render rows as json, csv or md; json renders `document` when given."""
    if emit_format == "json":
        return to_json(document if document is not None else list(rows))
    if emit_format == "csv":
        return to_csv(rows, columns, decimals)
    if emit_format == "md":
        return to_markdown(rows, columns, decimals)
    raise InvalidInputError(f"unknown emit format '{emit_format}'")
