"""Training: mixture NLL + L1 loss, SGD phases and feature-block pruning.

The full procedure (:func:`train_full`) is

1. random initialisation,
2. end-to-end mini-batch SGD with separate gate / expert learning rates,
3. gate-only fine-tuning with the experts frozen,
4. per-sub-net magnitude pruning down to ``k_top`` input features.

No training happens after pruning.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from lrmoe.encoding import Dataset
from lrmoe.errors import ConfigError, DivergenceError, LabelError, ShapeError, UndefinedAUCError
from lrmoe.metrics import auc
from lrmoe.model import MoeModel, gate_forward, init_random, log_sigmoid, predict_batch, sigmoid

log = logging.getLogger(__name__)

ALL = "ALL"
KTop = Union[int, str]

LOG_FLOOR = math.log(1e-12)

# stream ids mixed into the seed so each phase shuffles independently
E2E_STREAM = 1
GATE_STREAM = 2


def parse_k_top(value) -> KTop:
    if isinstance(value, str):
        if value.strip().upper() == ALL:
            return ALL
        try:
            value = int(value)
        except ValueError:
            raise ConfigError(f"k_top must be a positive integer or 'ALL', got {value!r}") from None
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
        raise ConfigError(f"k_top must be a positive integer or 'ALL', got {value!r}")
    return int(value)


@dataclass
class TrainConfig:
    m: int = 6
    k_top: KTop = 8
    lambda_r: float = 0.1
    epochs_e2e: int = 100
    epochs_gate: int = 100
    lr_experts: float = 0.05
    lr_gate: float = 0.01
    batch_size: int = 32
    seed: int = 0
    shuffle: bool = True
    selection: str = "best_valid_auc"
    block_norm: str = "l1"

    def __post_init__(self):
        self.k_top = parse_k_top(self.k_top)
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.lambda_r < 0:
            raise ConfigError("lambda_r must be >= 0")
        if self.epochs_e2e < 0 or self.epochs_gate < 0:
            raise ConfigError("epoch counts must be >= 0")
        # zero learning rates are allowed: they freeze the corresponding group
        if self.lr_experts < 0 or self.lr_gate < 0:
            raise ConfigError("learning rates must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.selection not in ("best_valid_auc", "last"):
            raise ConfigError(f"unknown selection mode {self.selection!r}")
        if self.block_norm not in ("l1", "l2"):
            raise ConfigError(f"unknown block norm {self.block_norm!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**self.to_dict(), **changes})

    @classmethod
    def from_mapping(cls, doc: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        path = Path(path)
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            doc = tomllib.loads(path.read_text(encoding="utf-8"))
        else:
            doc = json.loads(path.read_text(encoding="utf-8"))
        return cls.from_mapping(doc)


@dataclass
class TrainReport:
    phases: list[str] = field(default_factory=list)
    epochs: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    valid_aucs: list[float] = field(default_factory=list)
    chosen_epochs: dict[str, int] = field(default_factory=dict)
    wall_time: float = 0.0

    def losses_for(self, phase: str) -> list[float]:
        return [l for p, l in zip(self.phases, self.losses) if p == phase]

    def extend(self, other: "TrainReport") -> None:
        self.phases += other.phases
        self.epochs += other.epochs
        self.losses += other.losses
        self.valid_aucs += other.valid_aucs
        self.chosen_epochs.update(other.chosen_epochs)
        self.wall_time += other.wall_time

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["phase", "epoch", "loss", "valid_auc"])
            for row in zip(self.phases, self.epochs, self.losses, self.valid_aucs):
                writer.writerow([row[0], row[1], repr(row[2]), "" if math.isnan(row[3]) else repr(row[3])])


@dataclass
class Gradients:
    gate_weights: np.ndarray
    gate_bias: np.ndarray
    expert_weights: np.ndarray
    expert_bias: np.ndarray

    def as_tuple(self):
        return self.gate_weights, self.gate_bias, self.expert_weights, self.expert_bias


def _xy(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, Dataset):
        X, y = batch.X, batch.y
    elif isinstance(batch, tuple) and len(batch) == 2:
        X, y = batch
    else:
        rows = list(batch)
        X = np.vstack([r.values for r in rows]) if rows else np.zeros((0, 0))
        y = [r.label for r in rows]
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y)
    if len(y) == 0:
        raise ShapeError("batch is empty")
    if X.shape[0] != len(y):
        raise ShapeError(f"{X.shape[0]} rows but {len(y)} labels")
    if not np.all((y == 0) | (y == 1)):
        raise LabelError("labels must be 0 or 1")
    return X, y.astype(float)


def _check_width(params, X):
    d = params[0].shape[1]
    if X.shape[1] != d:
        raise ShapeError(f"model expects {d} features, batch has {X.shape[1]}")


def _logsumexp(a, keepdims=False):
    top = a.max(axis=1, keepdims=True)
    out = top + np.log(np.exp(a - top).sum(axis=1, keepdims=True))
    return out if keepdims else out[:, 0]


def _forward_terms(params, X, y):
    """Per-row log mixture likelihood plus the pieces the gradient needs."""
    gw, gb, ew, eb = params
    g_logits = X @ gw.T + gb
    log_g = g_logits - _logsumexp(g_logits, keepdims=True)
    z = X @ ew.T + eb
    yc = y[:, None]
    log_lik = yc * log_sigmoid(z) + (1.0 - yc) * log_sigmoid(-z)
    joint = log_g + log_lik
    log_mix = _logsumexp(joint)
    return log_g, z, joint, log_mix


def _l1(params) -> float:
    return float(sum(np.abs(p).sum() for p in params))


def _loss(params, X, y, lambda_r) -> float:
    _check_width(params, X)
    log_mix = _forward_terms(params, X, y)[3]
    nll = -np.mean(np.maximum(log_mix, LOG_FLOOR))
    return float(nll + lambda_r * _l1(params))


def _gradients(params, X, y, lambda_r, gate_only=False):
    _check_width(params, X)
    log_g, z, joint, log_mix = _forward_terms(params, X, y)
    # rows whose likelihood hit the floor have zero gradient
    live = (log_mix > LOG_FLOOR)[:, None] / X.shape[0]
    resp = np.exp(joint - log_mix[:, None])
    d_gate = (np.exp(log_g) - resp) * live
    out = [d_gate.T @ X, d_gate.sum(axis=0)]
    if not gate_only:
        d_expert = resp * (sigmoid(z) - y[:, None]) * live
        out += [d_expert.T @ X, d_expert.sum(axis=0)]
    if lambda_r:
        out = [g + lambda_r * np.sign(p) for g, p in zip(out, params)]
    return out


def loss(model: MoeModel, batch, lambda_r: float) -> float:
    """Mixture negative log-likelihood (mean over the batch) plus ``lambda_r`` times the L1 norm.

    The mixture likelihood of a row is sum_i gate_i(x) * p_i^y (1 - p_i)^(1 - y),
    floored at 1e-12 before the log.
    """
    X, y = _xy(batch)
    return _loss(model.params(), X, y, lambda_r)


def gradients(model: MoeModel, batch, lambda_r: float) -> Gradients:
    """Analytic gradient of :func:`loss`; the L1 part uses sign(0) = 0."""
    X, y = _xy(batch)
    return Gradients(*_gradients(model.params(), X, y, lambda_r))


def mean_gate_entropy(model: MoeModel, X) -> float:
    """Average per-instance entropy of the gate distribution (nats)."""
    g = gate_forward(model, np.atleast_2d(X))
    return float(-np.mean(np.sum(np.where(g > 0, g * np.log(np.where(g > 0, g, 1.0)), 0.0), axis=1)))


def _optional_xy(data):
    if data is None or len(data) == 0:
        return None
    return _xy(data)


def valid_auc(model: MoeModel, data: Dataset | None) -> float:
    data = data if isinstance(data, tuple) else _optional_xy(data)
    if data is None:
        return math.nan
    scores, _ = predict_batch(model, data[0])
    try:
        return auc(scores, data[1])
    except UndefinedAUCError:
        return math.nan


def _epoch_order(rng, n, shuffle):
    return rng.permutation(n) if shuffle else np.arange(n)


def _sgd_phase(model, train, valid, cfg, phase, epochs, lr_gate, lr_experts, gate_only):
    X, y = _xy(train)
    _check_width(model.params(), X)
    valid = _optional_xy(valid)
    if valid is not None and valid[0].shape[1] != model.d:
        raise ShapeError(f"validation set has {valid[0].shape[1]} features, model expects {model.d}")
    t0 = time.perf_counter()
    params = [p.copy() for p in model.params()]
    lrs = [lr_gate, lr_gate] if gate_only else [lr_gate, lr_gate, lr_experts, lr_experts]
    rng = np.random.default_rng([cfg.seed, E2E_STREAM if phase == "e2e" else GATE_STREAM])
    report = TrainReport()

    best_model, best_auc, best_epoch = model, valid_auc(model, valid), 0
    use_auc = cfg.selection == "best_valid_auc" and not math.isnan(best_auc)
    if cfg.selection == "best_valid_auc" and not use_auc:
        log.warning("%s: validation AUC undefined, keeping the last epoch", phase)

    current = model
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, epochs + 1):
            current, score = _sgd_epoch(model, params, lrs, X, y, valid, cfg, rng, phase, epoch, gate_only, report)
            if use_auc and score > best_auc:
                best_model, best_auc, best_epoch = current, score, epoch

    if not use_auc:
        best_model, best_epoch = current, epochs
    report.chosen_epochs[phase] = best_epoch
    report.wall_time = time.perf_counter() - t0
    log.info("%s: %d epochs, chose epoch %d (valid AUC %.4f)", phase, epochs, best_epoch, best_auc)
    return best_model, report


def _sgd_epoch(model, params, lrs, X, y, valid, cfg, rng, phase, epoch, gate_only, report):
    """One pass over the shuffled training rows; updates ``params`` in place."""
    n, bs = len(y), cfg.batch_size
    order = _epoch_order(rng, n, cfg.shuffle)
    for start in range(0, n, bs):
        idx = order[start:start + bs]
        grads = _gradients(params, X[idx], y[idx], cfg.lambda_r, gate_only=gate_only)
        for p, g, lr in zip(params, grads, lrs):
            p -= lr * g
    epoch_loss = _loss(params, X, y, cfg.lambda_r)
    if not math.isfinite(epoch_loss) or not all(np.all(np.isfinite(p)) for p in params):
        raise DivergenceError(phase, epoch)
    current = model.with_params(
        gate_weights=params[0], gate_bias=params[1], expert_weights=params[2], expert_bias=params[3]
    )
    score = valid_auc(current, valid)
    report.phases.append(phase)
    report.epochs.append(epoch)
    report.losses.append(epoch_loss)
    report.valid_aucs.append(score)
    return current, score


def train_end_to_end(model: MoeModel, train: Dataset, valid: Dataset | None, cfg: TrainConfig):
    """Mini-batch SGD on all parameters; returns the best-validation snapshot and the report.

    The input model counts as epoch 0 when choosing the snapshot.
    """
    return _sgd_phase(model, train, valid, cfg, "e2e", cfg.epochs_e2e, cfg.lr_gate, cfg.lr_experts, gate_only=False)


def fine_tune_gate(model: MoeModel, train: Dataset, valid: Dataset | None, cfg: TrainConfig):
    """Same as :func:`train_end_to_end` but only gate weights and biases move."""
    return _sgd_phase(model, train, valid, cfg, "gate", cfg.epochs_gate, cfg.lr_gate, 0.0, gate_only=True)


def block_scores(weights: np.ndarray, norm: str = "l1") -> np.ndarray:
    """Magnitude of each input feature's outgoing weights (columns of ``weights``)."""
    weights = np.atleast_2d(weights)
    if norm == "l1":
        return np.abs(weights).sum(axis=0)
    if norm == "l2":
        return np.sqrt((weights ** 2).sum(axis=0))
    raise ConfigError(f"unknown block norm {norm!r}")


def top_blocks(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` highest scores, ties to the lower index, ascending."""
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


def _keep_columns(weights: np.ndarray, keep: np.ndarray) -> np.ndarray:
    out = np.zeros_like(weights)
    out[..., keep] = weights[..., keep]
    return out


def prune_feature_blocks(model: MoeModel, k_top: KTop, norm: str = "l1") -> MoeModel:
    """Zero every weight outside each sub-net's ``k_top`` strongest input features.

    The gate is pruned as one sub-net (block score pooled over its m rows);
    each expert is pruned on its own.  Biases are left alone.
    """
    k_top = parse_k_top(k_top)
    if k_top == ALL:
        return model
    if k_top > model.d:
        raise ConfigError(f"k_top={k_top} exceeds the number of features d={model.d}")
    gate = _keep_columns(model.gate_weights, top_blocks(block_scores(model.gate_weights, norm), k_top))
    experts = np.vstack([
        _keep_columns(w, top_blocks(block_scores(w, norm), k_top)) for w in model.expert_weights
    ])
    return model.with_params(gate_weights=gate, expert_weights=experts)


def subnet_feature_counts(model: MoeModel) -> list[int]:
    """Features with any nonzero weight: gate first, then each expert."""
    gate = int(np.count_nonzero(np.any(model.gate_weights != 0, axis=0)))
    return [gate] + [int(np.count_nonzero(w)) for w in model.expert_weights]


def check_sparsity(model: MoeModel, k_top: KTop) -> None:
    k_top = parse_k_top(k_top)
    if k_top == ALL:
        return
    counts = subnet_feature_counts(model)
    if max(counts) > k_top:
        raise ConfigError(f"pruning invariant violated: sub-net feature counts {counts} exceed k_top={k_top}")


def train_full(train: Dataset, valid: Dataset | None, cfg: TrainConfig, feature_names=None):
    """Init, end-to-end training, gate fine-tuning, pruning; returns ``(model, report)``."""
    d = _xy(train)[0].shape[1]
    if cfg.k_top != ALL and cfg.k_top > d:
        raise ConfigError(f"k_top={cfg.k_top} exceeds the number of features d={d}")
    names = feature_names if feature_names is not None else getattr(train, "feature_names", None)
    model = init_random(d, cfg.m, cfg.seed, names)
    model, report = train_end_to_end(model, train, valid, cfg)
    model, gate_report = fine_tune_gate(model, train, valid, cfg)
    report.extend(gate_report)
    model = prune_feature_blocks(model, cfg.k_top, cfg.block_norm)
    check_sparsity(model, cfg.k_top)
    return model, report
