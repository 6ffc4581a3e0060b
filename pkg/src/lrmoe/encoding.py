"""Aggregation encoding of prefix traces into fixed-width feature vectors.

Every prefix is first extended with timestamp-derived numeric attributes
(hour, weekday, ...).  The encoding then keeps one occurrence count per
activity, one occurrence count per (categorical attribute, value) pair,
and the mean of every numeric attribute over the prefix.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from lrmoe.errors import EncodingError, FitError
from lrmoe.event_log import Event, EventLog, PrefixInstance, extract_prefixes

ACTIVITY_PREFIX = "Activity"
OTHER = "other"

ACTIVITY_COUNT = "activity-count"
CATEGORICAL_COUNT = "categorical-count"
NUMERIC_MEAN = "numeric-mean"

TEMPORAL_FEATURES = (
    "hour",
    "weekday",
    "month",
    "elapsed_since_case_start",
    "elapsed_since_prev_event",
)


def _temporal_values(ev: Event, start: Event, prev: Event | None) -> dict[str, float]:
    ts = ev.timestamp
    return {
        "hour": float(ts.hour),
        "weekday": float(ts.weekday()),
        "month": float(ts.month),
        "elapsed_since_case_start": (ts - start.timestamp).total_seconds(),
        "elapsed_since_prev_event": 0.0 if prev is None else (ts - prev.timestamp).total_seconds(),
    }


def derive_temporal_features(prefix: PrefixInstance, features: Sequence[str] = TEMPORAL_FEATURES) -> PrefixInstance:
    """Return a copy of ``prefix`` whose events carry the requested temporal attributes."""
    unknown = set(features) - set(TEMPORAL_FEATURES)
    if unknown:
        raise EncodingError(f"unknown temporal features: {sorted(unknown)}")
    events = []
    prev = None
    for ev in prefix.prefix:
        values = _temporal_values(ev, prefix.prefix[0], prev)
        attrs = dict(ev.attributes)
        attrs.update((name, values[name]) for name in features)
        events.append(replace(ev, attributes=attrs))
        prev = ev
    return replace(prefix, prefix=tuple(events))


@dataclass(frozen=True)
class FeatureDescriptor:
    name: str
    kind: str
    source: str
    value: str | None = None


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    label: int
    case_id: str
    prefix_length: int


@dataclass
class FeatureDictionary:
    descriptors: list[FeatureDescriptor]
    means: np.ndarray
    stds: np.ndarray
    other_values: dict[str, list[str]] = field(default_factory=dict)
    temporal_features: tuple[str, ...] = TEMPORAL_FEATURES
    rare_threshold: float = 0.01

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.stds = np.asarray(self.stds, dtype=float)
        names = self.names
        if len(set(names)) != len(names):
            dup = [n for n, c in Counter(names).items() if c > 1]
            raise FitError(f"duplicate feature names: {dup}")
        if self.means.shape != (self.d,) or self.stds.shape != (self.d,):
            raise FitError("standardization stats do not match descriptor count")
        self._index = {n: i for i, n in enumerate(names)}
        self._activity = {
            f.value: i for i, f in enumerate(self.descriptors) if f.kind == ACTIVITY_COUNT
        }
        self._categorical: dict[str, dict[str, int]] = {}
        self._numeric: dict[str, int] = {}
        for i, f in enumerate(self.descriptors):
            if f.kind == CATEGORICAL_COUNT:
                self._categorical.setdefault(f.source, {})[f.value if f.value is not None else OTHER] = i
            elif f.kind == NUMERIC_MEAN:
                self._numeric[f.source] = i
        self._other_lookup = {
            attr: set(values) for attr, values in self.other_values.items()
        }

    @property
    def d(self) -> int:
        return len(self.descriptors)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.descriptors]

    def index(self, name: str) -> int:
        return self._index[name]

    def to_json(self) -> dict:
        return {
            "features": [
                {"name": f.name, "kind": f.kind, "source": f.source, "value": f.value}
                for f in self.descriptors
            ],
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "other_values": self.other_values,
            "temporal_features": list(self.temporal_features),
            "rare_threshold": self.rare_threshold,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "FeatureDictionary":
        try:
            return cls(
                descriptors=[FeatureDescriptor(**f) for f in doc["features"]],
                means=doc["means"],
                stds=doc["stds"],
                other_values={k: list(v) for k, v in doc.get("other_values", {}).items()},
                temporal_features=tuple(doc.get("temporal_features", TEMPORAL_FEATURES)),
                rare_threshold=float(doc.get("rare_threshold", 0.01)),
            )
        except (KeyError, TypeError) as exc:
            raise FitError(f"malformed feature dictionary: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FeatureDictionary":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def raw_vector(self, prefix: PrefixInstance) -> np.ndarray:
        """Unstandardized encoding; NaN marks numeric attributes absent from the prefix."""
        out = np.zeros(self.d)
        sums: dict[int, float] = {}
        counts: dict[int, int] = {}
        for ev in prefix.prefix:
            idx = self._activity.get(ev.activity)
            if idx is not None:
                out[idx] += 1.0
            for attr, value in ev.attributes.items():
                if attr in self._numeric:
                    if isinstance(value, str):
                        raise EncodingError(f"attribute {attr!r} is numeric in the dictionary but got {value!r}")
                    i = self._numeric[attr]
                    sums[i] = sums.get(i, 0.0) + float(value)
                    counts[i] = counts.get(i, 0) + 1
                elif attr in self._categorical:
                    if not isinstance(value, str):
                        raise EncodingError(f"attribute {attr!r} is categorical in the dictionary but got {value!r}")
                    slots = self._categorical[attr]
                    if value in self._other_lookup.get(attr, ()):
                        value = OTHER
                    i = slots.get(value)
                    if i is not None:
                        out[i] += 1.0
        for i in self._numeric.values():
            out[i] = sums[i] / counts[i] if i in counts else math.nan
        return out

    def standardize(self, raw: np.ndarray) -> np.ndarray:
        safe = np.where(self.stds > 0, self.stds, 1.0)
        z = np.where(self.stds > 0, (raw - self.means) / safe, 0.0)
        # an absent numeric attribute sits at the train mean, i.e. 0 once standardized
        return np.where(np.isnan(z), 0.0, z)


def _attribute_kinds(prefixes: Iterable[PrefixInstance]) -> tuple[dict[str, Counter], set[str], Counter, int]:
    """Scan distinct events (longest prefix per case) for activities and attribute kinds."""
    longest: dict[str, PrefixInstance] = {}
    for p in prefixes:
        cur = longest.get(p.case_id)
        if cur is None or p.prefix_length > cur.prefix_length:
            longest[p.case_id] = p
    activities: Counter = Counter()
    categorical: dict[str, Counter] = {}
    numeric: set[str] = set()
    n_events = 0
    for p in longest.values():
        for ev in p.prefix:
            n_events += 1
            activities[ev.activity] += 1
            for attr, value in ev.attributes.items():
                if isinstance(value, str):
                    categorical.setdefault(attr, Counter())[value] += 1
                else:
                    numeric.add(attr)
    mixed = numeric & set(categorical)
    if mixed:
        raise FitError(f"attributes with both numeric and categorical values: {sorted(mixed)}")
    return categorical, numeric, activities, n_events


def fit_feature_dictionary(
    train_prefixes: Sequence[PrefixInstance],
    rare_threshold: float = 0.01,
    temporal_features: Sequence[str] = TEMPORAL_FEATURES,
) -> FeatureDictionary:
    """Fit the feature layout and z-score statistics on training prefixes.

    Temporal features must already be derived on ``train_prefixes``.  A
    categorical value seen on fewer than ``rare_threshold`` of the distinct
    training events is folded into an ``<attr>_other`` count.
    """
    if not train_prefixes:
        raise FitError("cannot fit a feature dictionary on an empty training set")
    categorical, numeric, activities, n_events = _attribute_kinds(train_prefixes)

    descriptors = [
        FeatureDescriptor(f"{ACTIVITY_PREFIX}_{a}", ACTIVITY_COUNT, ACTIVITY_PREFIX, a)
        for a in sorted(activities)
    ]
    other_values: dict[str, list[str]] = {}
    for attr in sorted(categorical):
        counts = categorical[attr]
        rare = sorted(v for v, c in counts.items() if c < rare_threshold * n_events)
        kept = sorted(v for v in counts if v not in rare)
        descriptors += [FeatureDescriptor(f"{attr}_{v}", CATEGORICAL_COUNT, attr, v) for v in kept]
        if rare:
            other_values[attr] = rare
            descriptors.append(FeatureDescriptor(f"{attr}_{OTHER}", CATEGORICAL_COUNT, attr, None))
    derived = [t for t in TEMPORAL_FEATURES if t in numeric]
    for attr in sorted(numeric - set(derived)) + derived:
        descriptors.append(FeatureDescriptor(f"mean_{attr}", NUMERIC_MEAN, attr))

    d = len(descriptors)
    draft = FeatureDictionary(descriptors, np.zeros(d), np.ones(d), other_values,
                              tuple(temporal_features), rare_threshold)
    raw = np.vstack([draft.raw_vector(p) for p in train_prefixes])
    # mean over prefixes where the attribute occurs; absent entries are imputed with it
    present = ~np.isnan(raw)
    counts = present.sum(axis=0)
    means = np.where(counts > 0, np.where(present, raw, 0.0).sum(axis=0) / np.maximum(counts, 1), 0.0)
    imputed = np.where(present, raw, means)
    stds = imputed.std(axis=0)
    stds = np.where(stds > 1e-12 * np.maximum(1.0, np.abs(means)), stds, 0.0)
    return FeatureDictionary(descriptors, means, stds, other_values,
                             tuple(temporal_features), rare_threshold)


def encode_prefix(prefix: PrefixInstance, dictionary: FeatureDictionary, standardize: bool = True) -> FeatureVector:
    raw = dictionary.raw_vector(prefix)
    values = dictionary.standardize(raw) if standardize else np.nan_to_num(raw, nan=0.0)
    return FeatureVector(values, prefix.label, prefix.case_id, prefix.prefix_length)


@dataclass
class Dataset:
    """Encoded prefixes stacked row-wise, with their provenance."""

    X: np.ndarray
    y: np.ndarray
    case_ids: list[str]
    prefix_lengths: np.ndarray
    feature_names: list[str]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.y), len(self.feature_names))
        self.y = np.asarray(self.y, dtype=int)
        self.prefix_lengths = np.asarray(self.prefix_lengths, dtype=int)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def rows(self):
        for i in range(len(self)):
            yield FeatureVector(self.X[i], int(self.y[i]), self.case_ids[i], int(self.prefix_lengths[i]))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["case_id", "prefix_length", "label", *self.feature_names])
            for i in range(len(self)):
                writer.writerow([self.case_ids[i], int(self.prefix_lengths[i]), int(self.y[i]),
                                 *(repr(float(v)) for v in self.X[i])])

    @classmethod
    def from_csv(cls, path: str | Path) -> "Dataset":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:3] != ["case_id", "prefix_length", "label"]:
                raise EncodingError(f"{path}: not an encoded dataset CSV")
            rows = list(reader)
        names = header[3:]
        X = np.array([[float(v) for v in r[3:]] for r in rows], dtype=float).reshape(len(rows), len(names))
        return cls(X, [int(r[2]) for r in rows], [r[0] for r in rows], [int(r[1]) for r in rows], names)


def encode_prefixes(prefixes: Sequence[PrefixInstance], dictionary: FeatureDictionary, standardize: bool = True) -> Dataset:
    vectors = [encode_prefix(p, dictionary, standardize) for p in prefixes]
    X = np.vstack([v.values for v in vectors]) if vectors else np.zeros((0, dictionary.d))
    return Dataset(
        X,
        [v.label for v in vectors],
        [v.case_id for v in vectors],
        [v.prefix_length for v in vectors],
        dictionary.names,
    )


def prepare_prefixes(log: EventLog, min_len: int = 2, max_len: int | None = None,
                     temporal_features: Sequence[str] = TEMPORAL_FEATURES) -> list[PrefixInstance]:
    return [derive_temporal_features(p, temporal_features) for p in extract_prefixes(log, min_len, max_len)]


def encode_log(log: EventLog, dictionary: FeatureDictionary, min_len: int = 2,
               max_len: int | None = None, standardize: bool = True) -> Dataset:
    """Extract, augment and encode every prefix of ``log`` in one go."""
    prefixes = prepare_prefixes(log, min_len, max_len, dictionary.temporal_features)
    return encode_prefixes(prefixes, dictionary, standardize)
