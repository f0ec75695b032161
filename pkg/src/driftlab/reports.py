"""Tabular experiment reports with CSV and JSON serialisation."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Assertion", "ExperimentReport", "fmt", "to_jsonable", "config_hash"]


def fmt(v) -> str:
    """Round-trip text for CSV cells: 17 significant digits for floats."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return "" if v is None else str(v)


def to_jsonable(o):
    if isinstance(o, dict):
        return {str(k): to_jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [to_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return to_jsonable(o.tolist())
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else repr(f)
    return o


def config_hash(text: str | bytes) -> str:
    if isinstance(text, str):
        text = text.encode()
    return hashlib.sha256(text).hexdigest()


@dataclass
class Assertion:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ExperimentReport:
    name: str
    columns: list[str]
    rows: list[dict] = field(default_factory=list)
    assertions: list[Assertion] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def check(self, name: str, ok: bool, detail: str = "") -> bool:
        self.assertions.append(Assertion(name, bool(ok), detail))
        return bool(ok)

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows])

    def to_csv(self, columns: list[str] | None = None) -> str:
        cols = columns or self.columns
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([fmt(r.get(c)) for c in cols])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return to_jsonable(
            {
                "name": self.name,
                "pass": self.passed,
                "columns": self.columns,
                "rows": self.rows,
                "assertions": [a.__dict__ for a in self.assertions],
                "notes": self.notes,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
