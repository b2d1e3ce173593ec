"""Experiment records and their CSV and JSON forms."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional


@dataclass(frozen=True)
class Record:
    """One reduced quantity at one sweep point.

    ``point`` holds the swept parameters plus the variant labels (duplex,
    detector, false-alarm target, ...). ``stderr`` is ``None`` when it is not
    defined, for a single trial or for order statistics.
    """

    point: dict[str, Any]
    metric: str
    value: float
    stderr: Optional[float] = None
    trials: int = 1


@dataclass
class ExperimentResult:
    records: list[Record]
    config: dict[str, Any]
    spec: dict[str, Any]
    config_hash: str
    seed: int
    version: str
    meta: dict[str, Any] = field(default_factory=dict)

    def select(self, metric: str, **labels) -> list[Record]:
        """Records of ``metric`` whose point matches every given label."""
        return [r for r in self.records if r.metric == metric
                and all(r.point.get(k) == v for k, v in labels.items())]

    def value(self, metric: str, **labels) -> float:
        found = self.select(metric, **labels)
        if len(found) != 1:
            raise KeyError(f"{len(found)} records match {metric} {labels}")
        return found[0].value

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "config": self.config,
            "spec": self.spec,
            "meta": self.meta,
            "records": [_record_to_json(r) for r in self.records],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentResult":
        return cls(
            records=[Record(r["point"], r["metric"], _from_json_float(r["value"]),
                            None if r["stderr"] is None else _from_json_float(r["stderr"]),
                            r["trials"])
                     for r in data["records"]],
            config=data["config"], spec=data["spec"], config_hash=data["config_hash"],
            seed=data["seed"], version=data["version"], meta=data.get("meta", {}),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentResult":
        return cls.from_dict(json.loads(text))

    def point_columns(self) -> list[str]:
        """Union of the point keys, in first-seen order."""
        columns: list[str] = []
        for record in self.records:
            for key in record.point:
                if key not in columns:
                    columns.append(key)
        return columns

    def to_csv(self) -> str:
        columns = self.point_columns()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns + ["metric", "value", "stderr", "trials", "seed"])
        for r in self.records:
            writer.writerow([r.point.get(c, "") for c in columns]
                            + [r.metric, _csv_float(r.value),
                               "" if r.stderr is None else _csv_float(r.stderr), r.trials, self.seed])
        return buf.getvalue()


def emit_results(result: ExperimentResult, path, fmt: str = "csv") -> Path:
    """Write ``result`` to ``path`` as CSV or JSON; OS errors propagate."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown result format {fmt!r}")
    path = Path(path)
    text = result.to_csv() if fmt == "csv" else result.to_json() + "\n"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _json_float(x: float):
    """JSON has no NaN or infinity; those become strings that read back exactly."""
    return x if math.isfinite(x) else repr(float(x))


def _from_json_float(x) -> float:
    return float(x)


def _record_to_json(r: Record) -> dict[str, Any]:
    out = asdict(r)
    out["value"] = _json_float(r.value)
    if r.stderr is not None:
        out["stderr"] = _json_float(r.stderr)
    return out


def _csv_float(x: float) -> str:
    return repr(float(x))
