import io
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from lrmoe.encoding import encode_log, encode_prefixes, fit_feature_dictionary, prepare_prefixes
from lrmoe.event_log import Event, EventLog, Schema, Trace, temporal_split
from lrmoe.synthetic import regime_switching_log

T0 = datetime(2012, 3, 5, 14, 30, tzinfo=timezone.utc)

BASIC_SCHEMA = Schema(
    case_id="case", activity="activity", timestamp="time", label="label",
    categorical=["org:group"], numeric=["cost"],
)


def csv_bytes(text: str) -> io.BytesIO:
    return io.BytesIO(text.encode("utf-8"))


def make_trace(case_id, activities, label=0, start=T0, gap=60, attrs=None):
    events = []
    for k, act in enumerate(activities):
        a = dict(attrs[k]) if attrs else {}
        events.append(Event(act, start + timedelta(seconds=gap * k), a))
    return Trace(case_id, tuple(events), label)


def make_log(traces, categorical=(), numeric=()):
    return EventLog(tuple(traces), tuple(categorical), tuple(numeric))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def regime_data():
    """Encoded train / valid / test datasets from the two-regime generator."""
    log = regime_switching_log(2000, seed=0)
    train_log, valid_log, test_log = temporal_split(log)
    train_p = prepare_prefixes(train_log, 2)
    dictionary = fit_feature_dictionary(train_p)
    return (
        encode_prefixes(train_p, dictionary),
        encode_log(valid_log, dictionary),
        encode_log(test_log, dictionary),
        dictionary,
        test_log,
    )
