#!/usr/bin/env python3
"""
=============================================================================
EVENT LOG DATA MODEL, DECISION-POINT DATASETS AND PREFIX ENCODING
=============================================================================

This module holds the observational process data and turns it into the
per-decision-point training samples used by every learner.

KEY FEATURES:
• DATA MODEL: Event, Trace, Prefix and EventLog as immutable dataclasses
• CSV I/O: UTF-8 comma-separated logs with declared attribute roles
  (`event:<name>:<num|cat>` / `static:<name>:<num|cat>`)
• DATASETS: one sample per (case, reached decision point), the observed
  action read from the event right after the prefix
• ENCODING: flat (last-event time features, mean-aggregated numeric
  attributes, one-hot counts for categorical attributes, statics appended)
  and sequence (front-padded per-event rows, statics on the final row)

ARCHITECTURE:
• AttributeHint: declared attribute role parsed from a schema hint
• DecisionPointSpec / Sample / Dataset: Definition-2 style training data
• FeatureSchema: vocabularies and standardization statistics fitted on
  training samples only; constant continuous features are dropped
• encode_prefix / encode_prefixes: single and batched encoders

Time-derived features (elapsed time since case start and time since the
previous event) are computed per event from timestamps and always taken
from the last event in flat mode.
=============================================================================
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from errors import EventLogError, SchemaError

logger = logging.getLogger(__name__)

MANDATORY_COLUMNS = ("case_id", "activity", "timestamp")
ACTIVITY = "activity"
TIME_FEATURES = ("elapsed_time", "time_since_previous")
ENCODING_MODES = ("flat", "sequence")


# =============================================================================
# Attribute roles
# =============================================================================

@dataclass(frozen=True)
class AttributeHint:
    """Declared role of one attribute column"""
    scope: str  # "event" | "static"
    name: str
    kind: str   # "num" | "cat"

    @classmethod
    def parse(cls, text: str) -> 'AttributeHint':
        """Parse `scope:name:kind`"""
        parts = text.strip().split(":")
        if len(parts) != 3:
            raise SchemaError(f"Schema hint '{text}' must look like scope:name:kind", column=text)
        scope, name, kind = parts
        if scope not in ("event", "static"):
            raise SchemaError(f"Schema hint '{text}': scope must be 'event' or 'static'", column=name)
        if kind not in ("num", "cat"):
            raise SchemaError(f"Schema hint '{text}': kind must be 'num' or 'cat'", column=name)
        if not name or name in MANDATORY_COLUMNS:
            raise SchemaError(f"Schema hint '{text}': invalid attribute name", column=name)
        return cls(scope=scope, name=name, kind=kind)

    def to_text(self) -> str:
        return f"{self.scope}:{self.name}:{self.kind}"


def parse_schema_hints(hints: Iterable[Union[str, AttributeHint]]) -> Tuple[AttributeHint, ...]:
    """Parse hint strings; duplicate attribute names are rejected."""
    parsed: List[AttributeHint] = []
    seen = set()
    for hint in hints:
        attribute = hint if isinstance(hint, AttributeHint) else AttributeHint.parse(hint)
        if attribute.name in seen:
            raise SchemaError(f"Attribute '{attribute.name}' declared twice", column=attribute.name)
        seen.add(attribute.name)
        parsed.append(attribute)
    return tuple(parsed)


# =============================================================================
# Events, traces, prefixes, logs
# =============================================================================

@dataclass(frozen=True)
class Event:
    """A single observed event of a case"""
    case_id: str
    activity: str
    timestamp: float
    event_attrs: Dict[str, Any] = field(default_factory=dict)
    static_attrs: Dict[str, Any] = field(default_factory=dict)

    def value(self, name: str) -> Any:
        """Attribute lookup that treats the activity label as an attribute"""
        if name == ACTIVITY:
            return self.activity
        return self.event_attrs.get(name)


@dataclass(frozen=True)
class Prefix:
    """The first `length` events of a trace"""
    case_id: str
    events: Tuple[Event, ...]

    @property
    def length(self) -> int:
        return len(self.events)

    @property
    def static_attrs(self) -> Dict[str, Any]:
        return self.events[0].static_attrs if self.events else {}

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class Trace:
    """All events of one case in timestamp order"""
    case_id: str
    events: Tuple[Event, ...]

    def __post_init__(self):
        previous = -math.inf
        statics = self.events[0].static_attrs if self.events else {}
        for event in self.events:
            if event.case_id != self.case_id:
                raise EventLogError(f"Event of case '{event.case_id}' placed in trace '{self.case_id}'",
                                    case_id=self.case_id)
            if event.timestamp < previous:
                raise EventLogError(f"Timestamps decrease within case '{self.case_id}'", case_id=self.case_id)
            if event.static_attrs != statics:
                raise EventLogError(f"Static attributes differ between events of case '{self.case_id}'",
                                    case_id=self.case_id)
            previous = event.timestamp

    def prefix(self, length: int) -> Prefix:
        if length < 0 or length > len(self.events):
            raise EventLogError(f"Prefix length {length} exceeds trace length {len(self.events)}",
                                case_id=self.case_id)
        return Prefix(case_id=self.case_id, events=self.events[:length])

    @property
    def static_attrs(self) -> Dict[str, Any]:
        return self.events[0].static_attrs if self.events else {}

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class EventLog:
    """Events grouped into traces, plus the declared attribute schema"""
    traces: Tuple[Trace, ...]
    attributes: Tuple[AttributeHint, ...] = ()
    case_outcomes: Dict[str, float] = field(default_factory=dict)
    _index: Dict[str, Trace] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for trace in self.traces:
            if trace.case_id in index:
                raise EventLogError(f"Case '{trace.case_id}' appears in two traces", case_id=trace.case_id)
            index[trace.case_id] = trace
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_events(cls, events: Sequence[Event], attributes: Iterable[AttributeHint] = (),
                    case_outcomes: Optional[Mapping[str, float]] = None) -> 'EventLog':
        """Group events by case (first-appearance order), keeping their given order."""
        grouped: Dict[str, List[Event]] = {}
        for event in events:
            grouped.setdefault(event.case_id, []).append(event)
        traces = tuple(Trace(case_id=case_id, events=tuple(case_events))
                       for case_id, case_events in grouped.items())
        return cls(traces=traces, attributes=tuple(attributes), case_outcomes=dict(case_outcomes or {}))

    @property
    def n_events(self) -> int:
        return sum(len(trace) for trace in self.traces)

    @property
    def n_cases(self) -> int:
        return len(self.traces)

    def trace(self, case_id: str) -> Trace:
        return self._index[case_id]

    def attribute(self, name: str) -> Optional[AttributeHint]:
        for attribute in self.attributes:
            if attribute.name == name:
                return attribute
        return None


# =============================================================================
# CSV I/O
# =============================================================================

def load_csv(path: str, schema_hints: Iterable[Union[str, AttributeHint]] = (),
             outcome_column: Optional[str] = None) -> EventLog:
    """
    Load an event log from CSV.

    Args:
        path: UTF-8 CSV with `case_id`, `activity`, `timestamp` columns
        schema_hints: roles of additional columns; undeclared columns are ignored
        outcome_column: optional per-case outcome column

    Returns:
        EventLog with one trace per case in file order
    """
    hints = parse_schema_hints(schema_hints)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    for column in MANDATORY_COLUMNS:
        if column not in frame.columns:
            raise SchemaError(f"Missing mandatory column '{column}' in {path}", column=column)
    for hint in hints:
        if hint.name not in frame.columns:
            raise SchemaError(f"Declared attribute column '{hint.name}' not found in {path}", column=hint.name)
    if outcome_column and outcome_column not in frame.columns:
        raise SchemaError(f"Outcome column '{outcome_column}' not found in {path}", column=outcome_column)

    events: List[Event] = []
    outcomes: Dict[str, float] = {}
    for row_index, row in enumerate(frame.to_dict("records")):
        case_id = row["case_id"].strip()
        if not case_id:
            raise EventLogError(f"Row {row_index}: empty case_id", row=row_index)
        timestamp = _parse_number(row["timestamp"], row_index, "timestamp")
        if timestamp is None:
            raise EventLogError(f"Row {row_index}: missing timestamp", row=row_index, case_id=case_id)
        event_attrs: Dict[str, Any] = {}
        static_attrs: Dict[str, Any] = {}
        for hint in hints:
            raw = row[hint.name]
            value = _parse_number(raw, row_index, hint.name) if hint.kind == "num" else (raw if raw != "" else None)
            target = event_attrs if hint.scope == "event" else static_attrs
            if value is not None:
                target[hint.name] = value
        events.append(Event(case_id=case_id, activity=row["activity"], timestamp=timestamp,
                            event_attrs=event_attrs, static_attrs=static_attrs))
        if outcome_column:
            outcome = _parse_number(row[outcome_column], row_index, outcome_column)
            if outcome is not None:
                if case_id in outcomes and outcomes[case_id] != outcome:
                    raise EventLogError(f"Row {row_index}: conflicting outcome for case '{case_id}'",
                                        row=row_index, case_id=case_id)
                outcomes[case_id] = outcome

    log = EventLog.from_events(events, hints, outcomes)
    logger.info(f"Loaded {log.n_events} events in {log.n_cases} cases from {path}")
    return log


def _parse_number(raw: str, row_index: int, column: str) -> Optional[float]:
    text = str(raw).strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise EventLogError(f"Row {row_index}: column '{column}' is not a number ({text!r})", row=row_index)
    if not math.isfinite(value):
        raise EventLogError(f"Row {row_index}: column '{column}' is not finite", row=row_index)
    return value


def export_csv(log: EventLog, path: str, outcome_column: Optional[str] = "outcome") -> None:
    """Write a log in the CSV format read by load_csv (outcomes included when known)."""
    records = []
    write_outcome = bool(outcome_column) and bool(log.case_outcomes)
    for trace in log.traces:
        for event in trace.events:
            record: Dict[str, Any] = {"case_id": event.case_id, "activity": event.activity,
                                      "timestamp": repr(float(event.timestamp))}
            for hint in log.attributes:
                source = event.event_attrs if hint.scope == "event" else event.static_attrs
                value = source.get(hint.name)
                if value is None:
                    record[hint.name] = ""
                elif hint.kind == "num":
                    record[hint.name] = repr(float(value))
                else:
                    record[hint.name] = str(value)
            if write_outcome:
                outcome = log.case_outcomes.get(trace.case_id)
                record[outcome_column] = "" if outcome is None else repr(float(outcome))
            records.append(record)
    columns = list(MANDATORY_COLUMNS) + [hint.name for hint in log.attributes]
    if write_outcome:
        columns.append(outcome_column)
    pd.DataFrame.from_records(records, columns=columns).to_csv(path, index=False, encoding="utf-8")
    logger.info(f"Wrote {log.n_events} events to {path}")


# =============================================================================
# Decision points and datasets
# =============================================================================

@dataclass(frozen=True)
class DecisionPointSpec:
    """Decision point k: a fixed prefix length and its action space"""
    k: int
    prefix_length: int
    actions: Tuple[str, ...]
    action_attr: str

    def __post_init__(self):
        if self.k < 1:
            raise EventLogError(f"Decision point index must be >= 1, got {self.k}", k=self.k)
        if self.prefix_length < 1:
            raise EventLogError(f"Decision point {self.k}: prefix length must be >= 1", k=self.k)
        if len(self.actions) < 2 or len(set(self.actions)) != len(self.actions):
            raise EventLogError(f"Decision point {self.k}: action space needs >= 2 distinct actions", k=self.k)

    def action_index(self, action: str) -> int:
        return self.actions.index(action)

    def to_dict(self) -> Dict[str, Any]:
        return {"k": self.k, "prefix_length": self.prefix_length,
                "actions": list(self.actions), "action_attr": self.action_attr}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DecisionPointSpec':
        return cls(k=int(data["k"]), prefix_length=int(data["prefix_length"]),
                   actions=tuple(data["actions"]), action_attr=data["action_attr"])


def validate_specs(specs: Sequence[DecisionPointSpec], attributes: Iterable[AttributeHint] = ()) -> None:
    """Indices run 1..K, prefix lengths strictly increase, action attributes exist."""
    known = {ACTIVITY} | {hint.name for hint in attributes if hint.scope == "event"}
    previous_length = 0
    for position, spec in enumerate(specs, start=1):
        if spec.k != position:
            raise EventLogError(f"Decision points must be numbered 1..K in order, got k={spec.k} at {position}",
                                k=spec.k)
        if spec.prefix_length <= previous_length:
            raise EventLogError(f"Prefix lengths must strictly increase (k={spec.k})", k=spec.k)
        if spec.action_attr not in known:
            raise SchemaError(f"Action attribute '{spec.action_attr}' is not in the log schema",
                              column=spec.action_attr)
        previous_length = spec.prefix_length


@dataclass(frozen=True)
class Sample:
    """(prefix, observed action, outcome) for one case at one decision point"""
    case_id: str
    k: int
    prefix: Prefix
    action: str
    action_index: int
    outcome: float


@dataclass(frozen=True)
class Dataset:
    """All samples of a log, grouped by decision point"""
    samples: Tuple[Sample, ...]
    specs: Tuple[DecisionPointSpec, ...]
    attributes: Tuple[AttributeHint, ...] = ()

    @property
    def n_decision_points(self) -> int:
        return len(self.specs)

    def samples_at(self, k: int) -> List[Sample]:
        return [sample for sample in self.samples if sample.k == k]

    def case_ids(self) -> List[str]:
        """Case ids in generation (first-appearance) order"""
        seen: Dict[str, None] = {}
        for sample in self.samples:
            seen.setdefault(sample.case_id, None)
        return list(seen)

    def outcomes(self) -> Dict[str, float]:
        return {sample.case_id: sample.outcome for sample in self.samples}

    def restrict(self, case_ids: Iterable[str]) -> 'Dataset':
        keep = set(case_ids)
        return Dataset(samples=tuple(s for s in self.samples if s.case_id in keep),
                       specs=self.specs, attributes=self.attributes)

    def __len__(self) -> int:
        return len(self.samples)


def build_dataset(log: EventLog, specs: Sequence[DecisionPointSpec],
                  outcome_fn: Optional[Callable[[Trace], float]] = None) -> Dataset:
    """
    Unroll a log into per-decision-point samples.

    A case reaches decision point k when its trace has at least l_k + 1
    events; the observed action is read from event l_k + 1.
    """
    validate_specs(specs, log.attributes)
    if outcome_fn is None:
        def outcome_fn(trace: Trace) -> float:
            if trace.case_id not in log.case_outcomes:
                raise EventLogError(f"No outcome recorded for case '{trace.case_id}'", case_id=trace.case_id)
            return log.case_outcomes[trace.case_id]

    samples: List[Sample] = []
    for trace in log.traces:
        outcome: Optional[float] = None
        for spec in specs:
            if len(trace) < spec.prefix_length + 1:
                break
            action = trace.events[spec.prefix_length].value(spec.action_attr)
            if action not in spec.actions:
                raise EventLogError(f"Case '{trace.case_id}', decision point {spec.k}: action {action!r} "
                                    f"not in {list(spec.actions)}", case_id=trace.case_id, k=spec.k)
            if outcome is None:
                outcome = float(outcome_fn(trace))
            samples.append(Sample(case_id=trace.case_id, k=spec.k, prefix=trace.prefix(spec.prefix_length),
                                  action=action, action_index=spec.action_index(action), outcome=outcome))
    logger.debug(f"Built dataset with {len(samples)} samples over {len(specs)} decision points")
    return Dataset(samples=tuple(samples), specs=tuple(specs), attributes=tuple(log.attributes))


# =============================================================================
# Feature schema
# =============================================================================

@dataclass
class FeatureSchema:
    """Fitted encoding state: kept features, vocabularies and standardization statistics"""
    time_features: Tuple[str, ...]
    event_numeric: Tuple[str, ...]
    event_categorical: Dict[str, Tuple[str, ...]]
    static_numeric: Tuple[str, ...]
    static_categorical: Dict[str, Tuple[str, ...]]
    stats: Dict[str, Tuple[float, float]]
    event_stats: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    dropped: Tuple[str, ...] = ()
    max_length: int = 1
    fitted: bool = True

    def __post_init__(self):
        self._category_index = {name: {category: i for i, category in enumerate(vocab)}
                                for name, vocab in {**self.event_categorical, **self.static_categorical}.items()}
        offset = len(self.time_features) + len(self.event_numeric)
        self._event_offsets: Dict[str, int] = {}
        for name, vocab in self.event_categorical.items():
            self._event_offsets[name] = offset
            offset += len(vocab)
        self.event_width = offset
        offset = len(self.static_numeric)
        self._static_offsets: Dict[str, int] = {}
        for name, vocab in self.static_categorical.items():
            self._static_offsets[name] = offset
            offset += len(vocab)
        self.static_width = offset

    @property
    def flat_width(self) -> int:
        return self.event_width + self.static_width

    def feature_names(self) -> List[str]:
        names = [f"time:{name}" for name in self.time_features]
        names += [f"event:{name}" for name in self.event_numeric]
        for name, vocab in self.event_categorical.items():
            names += [f"event:{name}={category}" for category in vocab]
        names += [f"static:{name}" for name in self.static_numeric]
        for name, vocab in self.static_categorical.items():
            names += [f"static:{name}={category}" for category in vocab]
        return names

    def to_dict(self) -> Dict[str, Any]:
        return {"time_features": list(self.time_features), "event_numeric": list(self.event_numeric),
                "event_categorical": {k: list(v) for k, v in self.event_categorical.items()},
                "static_numeric": list(self.static_numeric),
                "static_categorical": {k: list(v) for k, v in self.static_categorical.items()},
                "stats": {k: list(v) for k, v in self.stats.items()},
                "event_stats": {k: list(v) for k, v in self.event_stats.items()}, "dropped": list(self.dropped),
                "max_length": self.max_length}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'FeatureSchema':
        return cls(time_features=tuple(data["time_features"]), event_numeric=tuple(data["event_numeric"]),
                   event_categorical={k: tuple(v) for k, v in data["event_categorical"].items()},
                   static_numeric=tuple(data["static_numeric"]),
                   static_categorical={k: tuple(v) for k, v in data["static_categorical"].items()},
                   stats={k: (float(v[0]), float(v[1])) for k, v in data["stats"].items()},
                   event_stats={k: (float(v[0]), float(v[1])) for k, v in data.get("event_stats", {}).items()},
                   dropped=tuple(data["dropped"]), max_length=int(data["max_length"]))


def _time_values(events: Sequence[Event]) -> List[Tuple[float, float]]:
    """(elapsed since first event, time since previous event) per event"""
    start = events[0].timestamp if events else 0.0
    values = []
    previous = start
    for event in events:
        values.append((event.timestamp - start, event.timestamp - previous))
        previous = event.timestamp
    return values


def _numeric_mean(events: Sequence[Event], name: str) -> Optional[float]:
    values = [float(event.event_attrs[name]) for event in events if event.event_attrs.get(name) is not None]
    return sum(values) / len(values) if values else None


def fit_schema(dataset: Dataset, max_length: Optional[int] = None) -> FeatureSchema:
    """
    Fit vocabularies and standardization statistics on training samples.

    Continuous features are standardized with the statistics of their flat
    (per-sample) values; those with zero spread are dropped and recorded.
    Sequence rows use separate event statistics pooled over every event of
    every prefix, so early positions are scaled like the last one.
    """
    if len(dataset) == 0:
        raise SchemaError("Cannot fit a feature schema on an empty dataset")

    event_hints = [hint for hint in dataset.attributes if hint.scope == "event"]
    static_hints = [hint for hint in dataset.attributes if hint.scope == "static"]
    columns: Dict[str, List[float]] = {}
    pooled: Dict[str, List[float]] = {}
    vocabularies: Dict[str, set] = {ACTIVITY: set()}
    for hint in event_hints + static_hints:
        if hint.kind == "cat":
            vocabularies[hint.name] = set()

    for sample in dataset.samples:
        events = sample.prefix.events
        if not events:
            continue
        times = _time_values(events)
        columns.setdefault("time:elapsed_time", []).append(times[-1][0])
        columns.setdefault("time:time_since_previous", []).append(times[-1][1])
        for elapsed, gap in times:
            pooled.setdefault("time:elapsed_time", []).append(elapsed)
            pooled.setdefault("time:time_since_previous", []).append(gap)
        for event in events:
            vocabularies[ACTIVITY].add(str(event.activity))
        for hint in event_hints:
            if hint.kind == "num":
                mean = _numeric_mean(events, hint.name)
                if mean is not None:
                    columns.setdefault(f"event:{hint.name}", []).append(mean)
                pooled.setdefault(f"event:{hint.name}", []).extend(
                    float(event.event_attrs[hint.name]) for event in events
                    if event.event_attrs.get(hint.name) is not None)
            else:
                for event in events:
                    value = event.event_attrs.get(hint.name)
                    if value is not None:
                        vocabularies[hint.name].add(str(value))
        statics = sample.prefix.static_attrs
        for hint in static_hints:
            value = statics.get(hint.name)
            if value is None:
                continue
            if hint.kind == "num":
                columns.setdefault(f"static:{hint.name}", []).append(float(value))
            else:
                vocabularies[hint.name].add(str(value))

    stats: Dict[str, Tuple[float, float]] = {}
    event_stats: Dict[str, Tuple[float, float]] = {}
    dropped: List[str] = []
    for key in ([f"time:{name}" for name in TIME_FEATURES]
                + [f"event:{h.name}" for h in event_hints if h.kind == "num"]
                + [f"static:{h.name}" for h in static_hints if h.kind == "num"]):
        values = np.asarray(columns.get(key, []), dtype=float)
        std = float(values.std()) if values.size else 0.0
        if values.size == 0 or std <= 1e-12:
            dropped.append(key)
            continue
        stats[key] = (float(values.mean()), std)
        if not key.startswith("static:"):
            per_event = np.asarray(pooled[key], dtype=float)
            event_std = float(per_event.std())
            event_stats[key] = (float(per_event.mean()), event_std if event_std > 1e-12 else 1.0)

    schema = FeatureSchema(
        time_features=tuple(name for name in TIME_FEATURES if f"time:{name}" in stats),
        event_numeric=tuple(h.name for h in event_hints if h.kind == "num" and f"event:{h.name}" in stats),
        event_categorical={name: tuple(sorted(vocabularies[name]))
                           for name in [ACTIVITY] + [h.name for h in event_hints if h.kind == "cat"]},
        static_numeric=tuple(h.name for h in static_hints if h.kind == "num" and f"static:{h.name}" in stats),
        static_categorical={h.name: tuple(sorted(vocabularies[h.name])) for h in static_hints if h.kind == "cat"},
        stats=stats,
        event_stats=event_stats,
        dropped=tuple(dropped),
        max_length=max_length or max(sample.prefix.length for sample in dataset.samples),
    )
    if dropped:
        logger.info(f"Dropped constant features: {', '.join(dropped)}")
    logger.debug(f"Fitted schema: flat width {schema.flat_width}, sequence length {schema.max_length}")
    return schema


# =============================================================================
# Encoding
# =============================================================================

def _standardize(stats: Mapping[str, Tuple[float, float]], key: str, value: Optional[float]) -> float:
    if value is None:
        return 0.0
    mean, std = stats[key]
    return (float(value) - mean) / std


def _event_rows(events: Sequence[Event], schema: FeatureSchema) -> np.ndarray:
    """One row per event; continuous columns use the pooled per-event statistics"""
    stats = schema.event_stats or schema.stats
    rows = np.zeros((len(events), schema.event_width))
    times = _time_values(events)
    n_time = len(schema.time_features)
    for i, event in enumerate(events):
        for j, name in enumerate(schema.time_features):
            rows[i, j] = _standardize(stats, f"time:{name}", times[i][TIME_FEATURES.index(name)])
        for j, name in enumerate(schema.event_numeric):
            rows[i, n_time + j] = _standardize(stats, f"event:{name}", event.event_attrs.get(name))
        for name, offset in schema._event_offsets.items():
            value = event.value(name)
            if value is None:
                continue
            index = schema._category_index[name].get(str(value))
            if index is not None:
                rows[i, offset + index] = 1.0
    return rows


def _static_block(statics: Mapping[str, Any], schema: FeatureSchema) -> np.ndarray:
    block = np.zeros(schema.static_width)
    for j, name in enumerate(schema.static_numeric):
        block[j] = _standardize(schema.stats, f"static:{name}", statics.get(name))
    for name, offset in schema._static_offsets.items():
        value = statics.get(name)
        if value is None:
            continue
        index = schema._category_index[name].get(str(value))
        if index is not None:
            block[offset + index] = 1.0
    return block


def encode_prefix(prefix: Prefix, schema: Optional[FeatureSchema], mode: str = "flat") -> np.ndarray:
    """
    Encode one prefix.

    flat: vector of width schema.flat_width
    sequence: matrix (schema.max_length, schema.flat_width), zero rows at the
    front, static attributes in the final row's static block
    """
    if schema is None or not schema.fitted:
        raise SchemaError("Feature schema is not fitted")
    if mode not in ENCODING_MODES:
        raise SchemaError(f"Unknown encoding mode '{mode}'")
    events = prefix.events
    statics = _static_block(prefix.static_attrs, schema)

    if mode == "sequence":
        matrix = np.zeros((schema.max_length, schema.flat_width))
        kept = events[-schema.max_length:] if events else ()
        if kept:
            rows = _event_rows(events, schema)[-len(kept):]
            matrix[schema.max_length - len(kept):, :schema.event_width] = rows
            matrix[-1, schema.event_width:] = statics
        return matrix

    vector = np.zeros(schema.flat_width)
    if events:
        rows = _event_rows(events, schema)
        last = _time_values(events)[-1]
        n_time = len(schema.time_features)
        for j, name in enumerate(schema.time_features):
            vector[j] = _standardize(schema.stats, f"time:{name}", last[TIME_FEATURES.index(name)])
        for j, name in enumerate(schema.event_numeric):
            vector[n_time + j] = _standardize(schema.stats, f"event:{name}", _numeric_mean(events, name))
        categorical_start = n_time + len(schema.event_numeric)
        vector[categorical_start:schema.event_width] = rows[:, categorical_start:].sum(axis=0)
    vector[schema.event_width:] = statics
    return vector


def encode_prefixes(prefixes: Sequence[Prefix], schema: FeatureSchema, mode: str = "flat") -> np.ndarray:
    """Batched encode_prefix; sequence mode returns a 3-D array."""
    if schema is None or not schema.fitted:
        raise SchemaError("Feature schema is not fitted")
    if mode == "sequence":
        shape: Tuple[int, ...] = (len(prefixes), schema.max_length, schema.flat_width)
    else:
        shape = (len(prefixes), schema.flat_width)
    if not prefixes:
        return np.zeros(shape)
    return np.stack([encode_prefix(prefix, schema, mode) for prefix in prefixes])


def as_design_matrix(encoded: np.ndarray) -> np.ndarray:
    """Flatten sequence encodings to 2-D rows for the regressors."""
    return encoded.reshape(encoded.shape[0], -1) if encoded.ndim == 3 else encoded
