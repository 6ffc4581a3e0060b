"""Feature-weight explanations of the gate and of each expert."""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import asdict, dataclass

import numpy as np

from lrmoe.encoding import FeatureDictionary
from lrmoe.model import MoeModel, route, sigmoid


@dataclass(frozen=True)
class Entry:
    feature: str
    weight: float
    sign: str


@dataclass(frozen=True)
class ExpertExplanation:
    expert_index: int
    entries: tuple[Entry, ...]
    bias: float

    def logit(self, x, feature_index: dict[str, int]) -> float:
        x = np.asarray(getattr(x, "values", x), dtype=float)
        return self.bias + sum(e.weight * x[feature_index[e.feature]] for e in self.entries)

    def probability(self, x, feature_index: dict[str, int]) -> float:
        return float(sigmoid(self.logit(x, feature_index)))


def _entries(weights: np.ndarray, names) -> tuple[Entry, ...]:
    nz = np.flatnonzero(weights)
    # |weight| descending, feature index ascending on ties
    order = sorted(nz, key=lambda j: (-abs(weights[j]), j))
    return tuple(
        Entry(names[j], float(weights[j]), "positive" if weights[j] > 0 else "negative") for j in order
    )


def _destandardize(weights: np.ndarray, bias: float, dictionary: FeatureDictionary):
    """Re-express a linear score over z-scored inputs in raw feature units."""
    stds = dictionary.stds
    raw_w = np.where(stds > 0, weights / np.where(stds > 0, stds, 1.0), 0.0)
    raw_b = bias - float(np.sum(raw_w * dictionary.means))
    return raw_w, raw_b


def explain_experts(model: MoeModel, dictionary: FeatureDictionary | None = None) -> list[ExpertExplanation]:
    """One explanation per expert.

    Positive weights raise the class-1 probability, negative ones lower it.
    Passing ``dictionary`` reports weights in raw (de-standardized) units.
    """
    out = []
    for i in range(model.m):
        w, b = model.expert_weights[i], float(model.expert_bias[i])
        if dictionary is not None:
            w, b = _destandardize(w, b, dictionary)
        out.append(ExpertExplanation(i, _entries(w, model.feature_names), b))
    return out


def explain_gate(model: MoeModel, dictionary: FeatureDictionary | None = None) -> list[ExpertExplanation]:
    """Same readout for every gate row (the score for routing to expert i)."""
    out = []
    for i in range(model.m):
        w, b = model.gate_weights[i], float(model.gate_bias[i])
        if dictionary is not None:
            w, b = _destandardize(w, b, dictionary)
        out.append(ExpertExplanation(i, _entries(w, model.feature_names), b))
    return out


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


@dataclass
class FeatureUsage:
    expert_features: list[list[str]]
    union: list[str]
    jaccard: dict[tuple[int, int], float]
    routed_counts: list[int]

    def to_json(self) -> dict:
        return {
            "expert_features": self.expert_features,
            "union": self.union,
            "union_size": len(self.union),
            "jaccard": [{"a": i, "b": j, "similarity": s} for (i, j), s in self.jaccard.items()],
            "routed_counts": self.routed_counts,
        }


def feature_usage_summary(model: MoeModel, dataset=None) -> FeatureUsage:
    """Per-expert active features, their union, pairwise Jaccard, and routing counts on ``dataset``."""
    names = model.feature_names
    sets = [[names[j] for j in np.flatnonzero(w)] for w in model.expert_weights]
    union = [n for n in names if any(n in s for s in sets)]
    sim = {(i, j): jaccard(set(sets[i]), set(sets[j])) for i, j in itertools.combinations(range(model.m), 2)}
    counts = [0] * model.m
    if dataset is not None and len(dataset):
        X = getattr(dataset, "X", dataset)
        counts = np.bincount(route(model, np.atleast_2d(X)), minlength=model.m).tolist()
    return FeatureUsage(sets, union, sim, counts)


def explanations_to_json(explanations: list[ExpertExplanation]) -> list[dict]:
    return [asdict(e) for e in explanations]


def to_markdown(explanations: list[ExpertExplanation], title: str = "Expert") -> str:
    blocks = []
    for e in explanations:
        lines = [f"### {title} {e.expert_index} (bias {e.bias:+.4f})", "", "| feature | weight | influence |",
                 "|---|---:|---|"]
        lines += [f"| {x.feature} | {x.weight:+.4f} | {x.sign} |" for x in e.entries]
        if not e.entries:
            lines.append("| (none) | | |")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def to_csv(explanations: list[ExpertExplanation], role: str = "expert") -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["role", "index", "feature", "weight"])
    for e in explanations:
        for x in e.entries:
            writer.writerow([role, e.expert_index, x.feature, repr(x.weight)])
    return buf.getvalue()


def report_json(model: MoeModel, dictionary: FeatureDictionary | None = None) -> str:
    doc = {
        "experts": explanations_to_json(explain_experts(model, dictionary)),
        "gate": explanations_to_json(explain_gate(model, dictionary)),
        "usage": feature_usage_summary(model).to_json(),
    }
    return json.dumps(doc, indent=2) + "\n"
