import calendar
import json
from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrmoe.encoding import (
    TEMPORAL_FEATURES,
    Dataset,
    FeatureDictionary,
    derive_temporal_features,
    encode_prefix,
    encode_prefixes,
    fit_feature_dictionary,
    prepare_prefixes,
)
from lrmoe.errors import EncodingError, FitError
from lrmoe.event_log import Event, PrefixInstance, extract_prefixes

from conftest import T0, make_log, make_trace


def _prefix(trace, length=None):
    length = length or len(trace.events)
    return derive_temporal_features(PrefixInstance(trace.case_id, trace.events[:length], trace.label))


def test_temporal_features_calendar():
    p = _prefix(make_trace("a", "AB", gap=90))
    first, second = (e.attributes for e in p.prefix)
    assert calendar.weekday(2012, 3, 5) == 0
    assert (first["hour"], first["weekday"], first["month"]) == (14.0, 0.0, 3.0)
    assert first["elapsed_since_case_start"] == 0 and first["elapsed_since_prev_event"] == 0
    assert second["elapsed_since_prev_event"] == 90 and second["elapsed_since_case_start"] == 90


def test_temporal_subset_and_original_untouched():
    trace = make_trace("a", "AB")
    p = derive_temporal_features(PrefixInstance("a", trace.events, 0), ("hour",))
    assert set(p.prefix[0].attributes) == {"hour"}
    assert trace.events[0].attributes == {}
    with pytest.raises(EncodingError):
        derive_temporal_features(PrefixInstance("a", trace.events, 0), ("moon_phase",))


def test_dimension_activities_only():
    log = make_log([make_trace("a", "AB"), make_trace("b", "BA", label=1)])
    d = fit_feature_dictionary(prepare_prefixes(log, 1))
    assert d.d == 2 + 5
    assert d.names == ["Activity_A", "Activity_B", *(f"mean_{t}" for t in TEMPORAL_FEATURES)]


def test_categorical_values_add_count_features():
    attrs = [{"org:group": "W"}, {"org:group": "G"}]
    log = make_log([make_trace("a", "AB", attrs=attrs)])
    d = fit_feature_dictionary(prepare_prefixes(log, 1))
    assert d.d == 2 + 2 + 5
    assert {"org:group_G", "org:group_W"} <= set(d.names)


def test_rare_values_bucketed_to_other():
    traces = [make_trace(f"c{i}", "AB", attrs=[{"g": "W"}, {"g": "W"}]) for i in range(60)]
    traces.append(make_trace("r", "AB", attrs=[{"g": "X"}, {"g": "W"}]))
    d = fit_feature_dictionary(prepare_prefixes(make_log(traces), 1))
    assert "g_other" in d.names and "g_X" not in d.names
    rare = _prefix(make_trace("t", "AB", attrs=[{"g": "X"}, {"g": "Z"}]))
    v = encode_prefix(rare, d, standardize=False).values
    # X was rare in train -> other; Z was never seen -> ignored
    assert v[d.index("g_other")] == 1 and v[d.index("g_W")] == 0


def test_counts_and_unseen_activity():
    log = make_log([make_trace("a", "AB")])
    d = fit_feature_dictionary(prepare_prefixes(log, 1))
    v = encode_prefix(_prefix(make_trace("t", "ABAC")), d, standardize=False).values
    assert (v[d.index("Activity_A")], v[d.index("Activity_B")]) == (2, 1)


def test_numeric_mean():
    trace = make_trace("a", "AAA", gap=7200, start=T0.replace(hour=8, minute=0))
    d = fit_feature_dictionary([_prefix(trace)])
    v = encode_prefix(_prefix(trace), d, standardize=False).values
    assert v[d.index("mean_hour")] == 10.0


def test_missing_numeric_is_zero():
    with_cost = make_trace("a", "AB", attrs=[{"cost": 4.0}, {"cost": 6.0}])
    without = make_trace("b", "AB")
    prefixes = [_prefix(with_cost), _prefix(without)]
    d = fit_feature_dictionary(prefixes)
    i = d.index("mean_cost")
    assert encode_prefix(prefixes[0], d, standardize=False).values[i] == 5.0
    assert encode_prefix(prefixes[1], d, standardize=False).values[i] == 0.0
    assert encode_prefix(prefixes[1], d, standardize=True).values[i] == 0.0


def test_zscore_arithmetic():
    d = FeatureDictionary(
        [fit_feature_dictionary([_prefix(make_trace("a", "A"))]).descriptors[0]],
        means=[10.0], stds=[2.0], temporal_features=(),
    )
    assert d.standardize(np.array([14.0]))[0] == 2.0
    const = FeatureDictionary(d.descriptors, means=[10.0], stds=[0.0], temporal_features=())
    assert const.standardize(np.array([14.0]))[0] == 0.0


def test_type_mismatch():
    d = fit_feature_dictionary([_prefix(make_trace("a", "AB", attrs=[{"g": "W"}, {"cost": 1.0}]))])
    with pytest.raises(EncodingError):
        encode_prefix(_prefix(make_trace("b", "A", attrs=[{"g": 3.0}])), d)
    with pytest.raises(EncodingError):
        encode_prefix(_prefix(make_trace("b", "A", attrs=[{"cost": "high"}])), d)


def test_fit_errors():
    with pytest.raises(FitError):
        fit_feature_dictionary([])
    mixed = [_prefix(make_trace("a", "AB", attrs=[{"g": "W"}, {"g": 1.0}]))]
    with pytest.raises(FitError):
        fit_feature_dictionary(mixed)


def _random_log(rng, n_cases=30):
    traces = []
    for i in range(n_cases):
        n = int(rng.integers(1, 7))
        attrs = [{"g": str(rng.choice(["W", "G", "Q"])), **({"cost": float(rng.normal(50, 10))} if rng.random() < 0.8 else {})}
                 for _ in range(n)]
        traces.append(make_trace(f"c{i}", "".join(rng.choice(list("ABCD"), n)), label=int(rng.integers(2)),
                                 start=T0 + timedelta(hours=int(rng.integers(0, 500))),
                                 gap=int(rng.integers(10, 5000)), attrs=attrs))
    return make_log(traces)


def test_standardized_train_matrix(rng):
    prefixes = prepare_prefixes(_random_log(rng), 1)
    d = fit_feature_dictionary(prefixes)
    Z = encode_prefixes(prefixes, d).X
    live = d.stds > 0
    np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(Z[:, live].std(axis=0), 1.0, atol=1e-9)
    assert np.all(Z[:, ~live] == 0)


def test_encoding_pure_and_dictionary_immutable(rng):
    log = _random_log(rng)
    prefixes = prepare_prefixes(log, 1)
    d = fit_feature_dictionary(prefixes[:40])
    before = json.dumps(d.to_json())
    first = encode_prefixes(prefixes, d).X
    second = encode_prefixes(prefixes, d).X
    assert first.tobytes() == second.tobytes()
    assert json.dumps(d.to_json()) == before
    assert np.all(np.isfinite(first))


def test_dictionary_json_round_trip(rng):
    prefixes = prepare_prefixes(_random_log(rng), 1)
    d = fit_feature_dictionary(prefixes)
    again = FeatureDictionary.from_json(json.loads(json.dumps(d.to_json())))
    assert again.names == d.names
    assert encode_prefixes(prefixes, again).X.tobytes() == encode_prefixes(prefixes, d).X.tobytes()


def test_dataset_csv_round_trip(tmp_path, rng):
    prefixes = prepare_prefixes(_random_log(rng), 2)
    data = encode_prefixes(prefixes, fit_feature_dictionary(prefixes))
    data.to_csv(tmp_path / "x.csv")
    header = (tmp_path / "x.csv").read_text().splitlines()[0].split(",")
    assert header[3:] == data.feature_names
    again = Dataset.from_csv(tmp_path / "x.csv")
    assert again.X.tobytes() == data.X.tobytes()
    assert again.case_ids == data.case_ids and np.array_equal(again.y, data.y)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from("ABC"), min_size=1, max_size=8), st.sampled_from("ABCD"))
def test_counts_monotone_under_append(acts, extra):
    train = [_prefix(make_trace("t", "ABC", attrs=[{"g": "W"}, {"g": "G"}, {"g": "W"}]))]
    d = fit_feature_dictionary(train)
    counts = [i for i, f in enumerate(d.descriptors) if f.kind.endswith("count")]
    longer = make_trace("x", acts + [extra], attrs=[{"g": "W"}] * (len(acts) + 1))
    short = encode_prefix(_prefix(longer, len(acts)), d, standardize=False).values
    full = encode_prefix(_prefix(longer), d, standardize=False).values
    assert np.all(full[counts] >= short[counts])
