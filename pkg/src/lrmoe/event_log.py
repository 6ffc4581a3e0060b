"""Event-log ingestion: CSV parsing, prefix extraction and temporal splitting."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable, Mapping, Union

from lrmoe.errors import EmptyLogError, LabelError, RowError, SchemaError, SplitError

AttrValue = Union[str, float]

ROLES = ("case_id", "activity", "timestamp", "label", "categorical", "numeric", "ignore")
MANDATORY_ROLES = ("case_id", "activity", "timestamp", "label")


@dataclass(frozen=True)
class Event:
    activity: str
    timestamp: datetime
    attributes: Mapping[str, AttrValue] = field(default_factory=dict)


@dataclass(frozen=True)
class Trace:
    case_id: str
    events: tuple[Event, ...]
    label: int

    def __len__(self) -> int:
        return len(self.events)

    @property
    def start(self) -> datetime:
        return self.events[0].timestamp


@dataclass(frozen=True)
class PrefixInstance:
    case_id: str
    prefix: tuple[Event, ...]
    label: int

    @property
    def prefix_length(self) -> int:
        return len(self.prefix)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.64
    valid_fraction: float = 0.16
    test_fraction: float = 0.20

    def __post_init__(self):
        fracs = (self.train_fraction, self.valid_fraction, self.test_fraction)
        if any(not 0.0 < f < 1.0 for f in fracs):
            raise SplitError(f"split fractions must lie in (0, 1), got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise SplitError(f"split fractions must sum to 1, got {sum(fracs)!r}")

    @classmethod
    def parse(cls, text: str) -> "SplitSpec":
        """Build from a ``"0.64,0.16,0.2"`` style string."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise SplitError(f"expected three comma-separated fractions, got {text!r}")
        try:
            return cls(*(float(p) for p in parts))
        except ValueError as exc:
            raise SplitError(f"bad split fractions {text!r}") from exc


@dataclass
class Schema:
    """Column-name to role mapping for a CSV event log."""

    case_id: str
    activity: str
    timestamp: str
    label: str
    categorical: list[str] = field(default_factory=list)
    numeric: list[str] = field(default_factory=list)
    ignore: list[str] = field(default_factory=list)
    timestamp_format: str | None = None

    @classmethod
    def from_mapping(cls, doc: Mapping) -> "Schema":
        """Accept ``{"columns": {name: role}, "timestamp_format": ...}`` or a bare ``{name: role}``."""
        if not isinstance(doc, Mapping):
            raise SchemaError("schema must be a JSON object")
        columns = doc.get("columns", doc)
        if not isinstance(columns, Mapping):
            raise SchemaError("schema 'columns' must be an object")
        by_role: dict[str, list[str]] = {r: [] for r in ROLES}
        for name, role in columns.items():
            if name == "timestamp_format" and columns is doc:
                continue
            if role not in ROLES:
                raise SchemaError(f"column {name!r} has unknown role {role!r}")
            by_role[role].append(name)
        for role in MANDATORY_ROLES:
            if len(by_role[role]) != 1:
                raise SchemaError(
                    f"schema must assign exactly one column to role {role!r}, "
                    f"got {len(by_role[role])}"
                )
        fmt = doc.get("timestamp_format")
        if fmt is not None and not isinstance(fmt, str):
            raise SchemaError("timestamp_format must be a string")
        return cls(
            case_id=by_role["case_id"][0],
            activity=by_role["activity"][0],
            timestamp=by_role["timestamp"][0],
            label=by_role["label"][0],
            categorical=by_role["categorical"],
            numeric=by_role["numeric"],
            ignore=by_role["ignore"],
            timestamp_format=fmt,
        )

    @classmethod
    def load(cls, path: str | Path) -> "Schema":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"schema file is not valid JSON: {exc}") from exc
        return cls.from_mapping(doc)

    def to_mapping(self) -> dict:
        columns = {
            self.case_id: "case_id",
            self.activity: "activity",
            self.timestamp: "timestamp",
            self.label: "label",
        }
        for role in ("categorical", "numeric", "ignore"):
            for name in getattr(self, role):
                columns[name] = role
        doc: dict = {"columns": columns}
        if self.timestamp_format:
            doc["timestamp_format"] = self.timestamp_format
        return doc

    def mandatory(self) -> dict[str, str]:
        return {role: getattr(self, role) for role in MANDATORY_ROLES}


@dataclass(frozen=True)
class EventLog:
    traces: tuple[Trace, ...]
    categorical: tuple[str, ...] = ()
    numeric: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)

    def subset(self, traces: Iterable[Trace]) -> "EventLog":
        return EventLog(tuple(traces), self.categorical, self.numeric)


def parse_timestamp(text: str, fmt: str | None = None) -> datetime:
    """Parse to an aware UTC datetime truncated to whole seconds."""
    text = text.strip()
    if fmt:
        ts = datetime.strptime(text, fmt)
    else:
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(ts: datetime, fmt: str | None = None) -> str:
    if fmt:
        return ts.strftime(fmt)
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_label(text: str, line: int) -> int:
    text = text.strip()
    if text in ("0", "1"):
        return int(text)
    try:
        value = float(text)
    except ValueError:
        value = math.nan
    if value in (0.0, 1.0):
        return int(value)
    raise LabelError(f"line {line}: label {text!r} is not in {{0, 1}}")


def parse_event_log(source: str | Path | IO[str] | IO[bytes], schema: Schema) -> EventLog:
    """Read a CSV event log and group its rows into traces.

    ``source`` may be a path, a text stream or a byte stream (decoded as UTF-8).
    Cases keep the order of their first row; events within a case are sorted
    by timestamp, ties keeping input order.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return parse_event_log(fh, schema)
    if isinstance(source, io.BufferedIOBase) or "b" in getattr(source, "mode", ""):
        source = io.TextIOWrapper(source, encoding="utf-8", newline="")  # type: ignore[arg-type]

    reader = csv.DictReader(source)  # type: ignore[arg-type]
    header = reader.fieldnames
    if not header:
        raise EmptyLogError("event log has no header row")
    for role, column in schema.mandatory().items():
        if column not in header:
            raise SchemaError(f"missing mandatory column {column!r} (role {role!r})")
    for column in (*schema.categorical, *schema.numeric):
        if column not in header:
            raise SchemaError(f"declared column {column!r} not found in header")

    events: dict[str, list[Event]] = {}
    labels: dict[str, int] = {}
    for line, row in enumerate(reader, start=2):
        case_id = (row[schema.case_id] or "").strip()
        if not case_id:
            raise RowError(line, "empty case id")
        activity = (row[schema.activity] or "").strip()
        if not activity:
            raise RowError(line, "empty activity")
        raw_ts = row[schema.timestamp] or ""
        try:
            ts = parse_timestamp(raw_ts, schema.timestamp_format)
        except ValueError as exc:
            raise RowError(line, f"unparseable timestamp {raw_ts!r}") from exc
        label = _parse_label(row[schema.label] or "", line)
        if labels.setdefault(case_id, label) != label:
            raise LabelError(f"line {line}: case {case_id!r} has conflicting labels")

        attrs: dict[str, AttrValue] = {}
        for col in schema.categorical:
            value = (row[col] or "").strip()
            if value:
                attrs[col] = value
        for col in schema.numeric:
            value = (row[col] or "").strip()
            if not value:
                continue
            try:
                num = float(value)
            except ValueError as exc:
                raise RowError(line, f"non-numeric value {value!r} in column {col!r}") from exc
            if not math.isfinite(num):
                raise RowError(line, f"non-finite value {value!r} in column {col!r}")
            attrs[col] = num
        events.setdefault(case_id, []).append(Event(activity, ts, attrs))

    traces = tuple(
        Trace(cid, tuple(sorted(evs, key=lambda e: e.timestamp)), labels[cid])
        for cid, evs in events.items()
    )
    return EventLog(traces, tuple(schema.categorical), tuple(schema.numeric))


def write_event_log(log: EventLog, schema: Schema, dest: IO[str]) -> None:
    """Write ``log`` back out as CSV in the column layout described by ``schema``."""
    columns = [schema.case_id, schema.activity, schema.timestamp, schema.label]
    columns += list(schema.categorical) + list(schema.numeric)
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(columns)
    for trace in log:
        for ev in trace.events:
            row = [
                trace.case_id,
                ev.activity,
                format_timestamp(ev.timestamp, schema.timestamp_format),
                str(trace.label),
            ]
            row += [str(ev.attributes.get(c, "")) for c in schema.categorical]
            row += [repr(float(ev.attributes[c])) if c in ev.attributes else "" for c in schema.numeric]
            writer.writerow(row)


def serialize_event_log(log: EventLog, schema: Schema) -> str:
    buf = io.StringIO()
    write_event_log(log, schema, buf)
    return buf.getvalue()


def extract_prefixes(log: EventLog | Iterable[Trace], min_len: int = 1, max_len: int | None = None) -> list[PrefixInstance]:
    """All prefixes of length ``min_len..min(n, max_len)`` per trace; ``max_len=None`` is unbounded."""
    if min_len < 1:
        raise ValueError("min_len must be >= 1")
    if max_len is not None and max_len < min_len:
        raise ValueError("max_len must be >= min_len")
    out = []
    for trace in log:
        n = len(trace.events)
        upper = n if max_len is None else min(n, max_len)
        for length in range(min_len, upper + 1):
            out.append(PrefixInstance(trace.case_id, trace.events[:length], trace.label))
    return out


def split_sizes(n: int, split: SplitSpec) -> tuple[int, int, int]:
    # cumulative floors; the tiny epsilon absorbs binary rounding of e.g. 0.7 * 10
    train_end = math.floor(split.train_fraction * n + 1e-9)
    valid_end = math.floor((split.train_fraction + split.valid_fraction) * n + 1e-9)
    return train_end, valid_end - train_end, n - valid_end


def temporal_split(log: EventLog, split: SplitSpec | None = None) -> tuple[EventLog, EventLog, EventLog]:
    """Partition cases by start time into train / validation / test logs."""
    split = split or SplitSpec()
    for trace in log:
        if not trace.events:
            raise SplitError(f"case {trace.case_id!r} has no events")
    ordered = sorted(log, key=lambda t: (t.start, t.case_id))
    n_train, n_valid, n_test = split_sizes(len(ordered), split)
    for name, size in (("train", n_train), ("validation", n_valid), ("test", n_test)):
        if size == 0:
            raise SplitError(f"{name} partition would be empty with {len(ordered)} cases")
    return (
        log.subset(ordered[:n_train]),
        log.subset(ordered[n_train : n_train + n_valid]),
        log.subset(ordered[n_train + n_valid :]),
    )
