"""Mixture of logistic-regression experts with a softmax gate and hard routing."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from lrmoe.errors import ModelFormatError, ShapeError

LOGIT_CLIP = 500.0


def sigmoid(z):
    z = np.clip(z, -LOGIT_CLIP, LOGIT_CLIP)
    return 1.0 / (1.0 + np.exp(-z))


def log_sigmoid(z):
    """log(sigmoid(z)), stable for any finite z."""
    return -np.logaddexp(0.0, -np.asarray(z, dtype=float))


def softmax(logits, axis=-1):
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MoeModel:
    """Gate (m x d softmax layer) plus m logistic experts over the same d inputs.

    Instances are immutable; training builds new models via :meth:`with_params`.
    """

    gate_weights: np.ndarray
    gate_bias: np.ndarray
    expert_weights: np.ndarray
    expert_bias: np.ndarray
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("gate_weights", "gate_bias", "expert_weights", "expert_bias"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        gw, gb, ew, eb = self.gate_weights, self.gate_bias, self.expert_weights, self.expert_bias
        if gw.ndim != 2 or gw.shape[0] < 1 or gw.shape[1] < 1:
            raise ShapeError(f"gate weights must be a non-empty m x d matrix, got shape {gw.shape}")
        m, d = gw.shape
        if gb.shape != (m,) or ew.shape != (m, d) or eb.shape != (m,):
            raise ShapeError(
                f"inconsistent parameter shapes: gate {gw.shape}/{gb.shape}, experts {ew.shape}/{eb.shape}"
            )
        for name in ("gate_weights", "gate_bias", "expert_weights", "expert_bias"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ShapeError(f"{name} contains non-finite values")
        names = tuple(self.feature_names) or tuple(f"f{j}" for j in range(d))
        if len(names) != d:
            raise ShapeError(f"expected {d} feature names, got {len(names)}")
        object.__setattr__(self, "feature_names", names)

    @property
    def m(self) -> int:
        return self.gate_weights.shape[0]

    @property
    def d(self) -> int:
        return self.gate_weights.shape[1]

    def with_params(self, **params) -> "MoeModel":
        current = {
            "gate_weights": self.gate_weights,
            "gate_bias": self.gate_bias,
            "expert_weights": self.expert_weights,
            "expert_bias": self.expert_bias,
            "feature_names": self.feature_names,
        }
        current.update(params)
        return MoeModel(**current)

    def params(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.gate_weights, self.gate_bias, self.expert_weights, self.expert_bias

    def __eq__(self, other) -> bool:
        if not isinstance(other, MoeModel):
            return NotImplemented
        return self.feature_names == other.feature_names and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.params(), other.params())
        )


@dataclass(frozen=True)
class Prediction:
    probability: float
    selected_expert: int
    gate_distribution: np.ndarray


def init_random(d: int, m: int, seed: int, feature_names: Sequence[str] | None = None) -> MoeModel:
    """Weights i.i.d. uniform on [-1/sqrt(d), 1/sqrt(d)], biases zero."""
    if d < 1 or m < 1:
        raise ShapeError(f"need d >= 1 and m >= 1, got d={d}, m={m}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(d)
    gate = rng.uniform(-bound, bound, size=(m, d))
    experts = rng.uniform(-bound, bound, size=(m, d))
    return MoeModel(gate, np.zeros(m), experts, np.zeros(m), tuple(feature_names or ()))


def _inputs(model: MoeModel, x) -> np.ndarray:
    x = np.asarray(getattr(x, "values", x), dtype=float)
    if x.shape[-1:] != (model.d,) or x.ndim > 2:
        raise ShapeError(f"expected input of width {model.d}, got shape {x.shape}")
    return x


def gate_logits(model: MoeModel, x) -> np.ndarray:
    x = _inputs(model, x)
    return x @ model.gate_weights.T + model.gate_bias


def expert_logits(model: MoeModel, x) -> np.ndarray:
    x = _inputs(model, x)
    return x @ model.expert_weights.T + model.expert_bias


def gate_forward(model: MoeModel, x) -> np.ndarray:
    """Gate distribution for one input (shape m) or a batch (shape n x m)."""
    return softmax(gate_logits(model, x))


def expert_forward(model: MoeModel, i: int, x):
    if not 0 <= i < model.m:
        raise IndexError(f"expert index {i} out of range for m={model.m}")
    p = sigmoid(expert_logits(model, x)[..., i])
    return float(p) if p.ndim == 0 else p


def soft_forward(model: MoeModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Gate distribution and every expert's class-1 probability."""
    return gate_forward(model, x), sigmoid(expert_logits(model, x))


def route(model: MoeModel, X) -> np.ndarray:
    """Selected expert per row; np.argmax already resolves ties to the lowest index."""
    return np.argmax(gate_forward(model, X), axis=-1)


def predict(model: MoeModel, x) -> Prediction:
    gate = gate_forward(model, x)
    if gate.ndim != 1:
        raise ShapeError("predict takes a single instance; use predict_batch for matrices")
    k = int(np.argmax(gate))
    return Prediction(expert_forward(model, k, x), k, gate)


def predict_batch(model: MoeModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Hard-routed probabilities and selected experts for every row of ``X``."""
    X = np.atleast_2d(_inputs(model, X))
    experts = route(model, X)
    z = expert_logits(model, X)[np.arange(len(X)), experts]
    return sigmoid(z), experts


def complexity(model: MoeModel) -> int:
    """Number of parameters (weights and biases, gate and experts) that are not exactly zero."""
    return int(sum(np.count_nonzero(p) for p in model.params()))


def active_features(weights: np.ndarray) -> list[int]:
    return [int(j) for j in np.flatnonzero(weights)]


def to_json(model: MoeModel) -> dict:
    return {
        "d": model.d,
        "m": model.m,
        "feature_names": list(model.feature_names),
        "gate": {"weights": model.gate_weights.tolist(), "bias": model.gate_bias.tolist()},
        "experts": [
            {"weights": model.expert_weights[i].tolist(), "bias": float(model.expert_bias[i])}
            for i in range(model.m)
        ],
    }


def from_json(doc) -> MoeModel:
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    try:
        gate = doc["gate"]
        experts = doc["experts"]
        gate_w = np.asarray(gate["weights"], dtype=float)
        gate_b = np.asarray(gate["bias"], dtype=float)
        exp_w = np.asarray([e["weights"] for e in experts], dtype=float)
        exp_b = np.asarray([e["bias"] for e in experts], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from exc
    if gate_w.ndim != 2:
        raise ModelFormatError("gate weights must be a matrix")
    if gate_w.shape[0] != len(experts):
        raise ModelFormatError(f"gate has {gate_w.shape[0]} rows but there are {len(experts)} experts")
    d = doc.get("d", gate_w.shape[1])
    m = doc.get("m", gate_w.shape[0])
    if (m, d) != gate_w.shape or exp_w.shape != (m, d):
        raise ModelFormatError(
            f"declared (m, d) = ({m}, {d}) disagrees with gate {gate_w.shape} / experts {exp_w.shape}"
        )
    names = doc.get("feature_names") or [f"f{j}" for j in range(d)]
    try:
        return MoeModel(gate_w, gate_b, exp_w, exp_b, tuple(names))
    except ShapeError as exc:
        raise ModelFormatError(str(exc)) from exc


def serialize(model: MoeModel) -> str:
    # json writes floats with repr(), the shortest string that round-trips exactly
    return json.dumps(to_json(model), indent=2) + "\n"


def deserialize(text: str) -> MoeModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model document is not valid JSON: {exc}") from exc
    return from_json(doc)
