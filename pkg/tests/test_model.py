import json
import math

import numpy as np
import pytest

from lrmoe.errors import ModelFormatError, ShapeError
from lrmoe.model import (
    MoeModel,
    complexity,
    deserialize,
    expert_forward,
    gate_forward,
    init_random,
    predict,
    predict_batch,
    serialize,
    soft_forward,
)


def zero_model(d, m):
    return MoeModel(np.zeros((m, d)), np.zeros(m), np.zeros((m, d)), np.zeros(m))


def random_model(rng, d, m, scale=1.0):
    return MoeModel(rng.normal(0, scale, (m, d)), rng.normal(0, scale, m),
                    rng.normal(0, scale, (m, d)), rng.normal(0, scale, m))


def test_init_deterministic():
    a, b = init_random(3, 2, seed=7), init_random(3, 2, seed=7)
    assert serialize(a) == serialize(b)
    assert a != init_random(3, 2, seed=8)


def test_init_biases_zero_and_bounded():
    model = init_random(9, 4, seed=1)
    assert np.all(model.gate_bias == 0) and np.all(model.expert_bias == 0)
    bound = 1 / math.sqrt(9)
    assert np.all(np.abs(model.gate_weights) <= bound) and np.all(np.abs(model.expert_weights) <= bound)


def test_model_is_immutable():
    model = init_random(3, 2, seed=0)
    with pytest.raises(ValueError):
        model.gate_weights[0, 0] = 1.0


def test_gate_uniform_for_zero_model():
    np.testing.assert_array_equal(gate_forward(zero_model(4, 3), np.arange(4.0)), np.full(3, 1 / 3))


def test_gate_closed_form():
    model = MoeModel([[0.0], [0.0]], [math.log(3), 0.0], [[0.0], [0.0]], [0.0, 0.0])
    np.testing.assert_allclose(gate_forward(model, [5.0]), [0.75, 0.25], rtol=0, atol=1e-15)


def test_gate_shift_invariance(rng):
    model = random_model(rng, 5, 4)
    x = rng.normal(size=5)
    shifted = model.with_params(gate_bias=model.gate_bias + 123.4)
    np.testing.assert_allclose(gate_forward(model, x), gate_forward(shifted, x), atol=1e-12)


def test_gate_shape_error():
    with pytest.raises(ShapeError):
        gate_forward(zero_model(3, 2), np.zeros(4))


def test_expert_forward_values():
    assert expert_forward(zero_model(2, 1), 0, [1.0, 2.0]) == 0.5
    m = MoeModel([[0.0]], [0.0], [[0.0]], [math.log(3)])
    assert abs(expert_forward(m, 0, [0.0]) - 0.75) < 1e-15
    big = MoeModel([[0.0]], [0.0], [[1.0]], [0.0])
    with np.errstate(all="raise"):
        assert expert_forward(big, 0, [1000.0]) == 1.0
        assert expert_forward(big, 0, [-1000.0]) >= 0.0
    with pytest.raises(IndexError):
        expert_forward(big, 1, [0.0])


def test_predict_zero_model():
    pred = predict(zero_model(3, 4), np.ones(3))
    assert pred.probability == 0.5 and pred.selected_expert == 0
    np.testing.assert_allclose(pred.gate_distribution, 0.25)


def test_predict_argmax():
    logits = np.log([0.1, 0.7, 0.2])
    z1 = math.log(0.9 / 0.1)
    model = MoeModel(np.zeros((3, 1)), logits, np.zeros((3, 1)), [0.0, z1, 0.0])
    pred = predict(model, [0.0])
    assert pred.selected_expert == 1 and abs(pred.probability - 0.9) < 1e-12


def test_predict_scaling_invariance(rng):
    model = random_model(rng, 6, 5)
    X = rng.normal(size=(300, 6))
    scaled = model.with_params(gate_weights=model.gate_weights * 3.7, gate_bias=model.gate_bias * 3.7)
    assert np.array_equal(predict_batch(model, X)[1], predict_batch(scaled, X)[1])


def test_soft_forward_examples(rng):
    single = random_model(rng, 3, 1)
    x = rng.normal(size=3)
    gate, probs = soft_forward(single, x)
    assert gate.tolist() == [1.0] and probs[0] == expert_forward(single, 0, x)
    gate, probs = soft_forward(zero_model(2, 3), np.ones(2))
    np.testing.assert_allclose(gate, 1 / 3)
    assert probs.tolist() == [0.5, 0.5, 0.5]


def test_gate_distribution_property(rng):
    for _ in range(1000):
        d, m = int(rng.integers(1, 8)), int(rng.integers(1, 6))
        model = random_model(rng, d, m, scale=float(rng.uniform(0.1, 5)))
        g = gate_forward(model, rng.normal(0, 10, d))
        assert np.all(g >= 0) and abs(g.sum() - 1) <= 1e-9


def test_predict_matches_soft_forward(rng):
    for _ in range(200):
        d, m = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        model = random_model(rng, d, m)
        x = rng.normal(size=d)
        gate, probs = soft_forward(model, x)
        pred = predict(model, x)
        assert pred.selected_expert == int(np.argmax(gate))
        assert pred.probability == probs[pred.selected_expert]
    X = rng.normal(size=(100, d))
    probs, experts = predict_batch(model, X)
    for i in range(100):
        p = predict(model, X[i])
        assert p.selected_expert == experts[i] and abs(p.probability - probs[i]) < 1e-15


def test_no_nan_for_large_inputs(rng):
    model = random_model(rng, 4, 3, scale=10)
    with np.errstate(over="raise", invalid="raise"):
        for _ in range(200):
            x = rng.uniform(-1e6, 1e6, 4)
            gate, probs = soft_forward(model, x)
            assert np.all(np.isfinite(gate)) and np.all(np.isfinite(probs))


def test_duplicate_gate_row_never_selected(rng):
    for _ in range(100):
        model = random_model(rng, 3, 4)
        gw, gb = model.gate_weights.copy(), model.gate_bias.copy()
        gw[3], gb[3] = gw[1], gb[1]
        dup = model.with_params(gate_weights=gw, gate_bias=gb)
        assert np.all(predict_batch(dup, rng.normal(size=(50, 3)))[1] != 3)


def test_complexity_counts():
    assert complexity(init_random(3, 2, seed=0)) == 12
    model = MoeModel([[0.0, 1.0]], [0.5], [[-0.0, 2.0]], [0.0])
    assert complexity(model) == 3


def test_serialize_round_trip(rng):
    model = random_model(rng, 4, 3).with_params(feature_names=("a", "b", "c", "d"))
    text = serialize(model)
    again = deserialize(text)
    assert again == model and serialize(again) == text


def test_deserialize_errors():
    doc = json.loads(serialize(init_random(3, 2, seed=0)))
    doc["experts"].pop()
    with pytest.raises(ModelFormatError):
        deserialize(json.dumps(doc))
    with pytest.raises(ModelFormatError):
        deserialize("{not json")
    with pytest.raises(ModelFormatError):
        deserialize(json.dumps({"gate": {}}))


def test_deserialize_default_names():
    doc = json.loads(serialize(init_random(3, 2, seed=0)))
    del doc["feature_names"]
    assert deserialize(json.dumps(doc)).feature_names == ("f0", "f1", "f2")
