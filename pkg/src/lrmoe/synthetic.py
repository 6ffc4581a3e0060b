"""Synthetic labelled event logs.

:func:`regime_switching_log` builds cases that belong to one of two latent
regimes, visible through a categorical ``channel`` attribute.  Each case
carries two numeric attributes ``x1``, ``x2`` drawn from a half-integer grid;
in regime ``R0`` the outcome is ``2*x1 + x2 > 0`` and in regime ``R1`` it is
the opposite, each label flipped with probability ``flip``.  Marginally over
regimes the numeric attributes carry no signal, so a single linear model sits
near chance while a two-expert mixture routed on ``channel`` can separate it.
"""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import numpy as np

from lrmoe.event_log import Event, EventLog, Schema, Trace

GRID = (-2.5, -1.5, -0.5, 0.5, 1.5, 2.5)
REGIMES = ("R0", "R1")
RULE = (2.0, 1.0)
ACTIVITIES = ("A", "B", "C", "D")

SCHEMA = Schema(
    case_id="case",
    activity="activity",
    timestamp="time",
    label="label",
    categorical=["channel"],
    numeric=["x1", "x2"],
)


def regime_score(regime: str, x1: float, x2: float) -> float:
    z = RULE[0] * x1 + RULE[1] * x2
    return z if regime == "R0" else -z


def regime_switching_log(n_cases: int = 2000, seed: int = 0, flip: float = 0.02,
                         min_events: int = 2, max_events: int = 6) -> EventLog:
    rng = np.random.default_rng(seed)
    base = datetime(2020, 1, 6, 8, 0, tzinfo=timezone.utc)
    traces = []
    for c in range(n_cases):
        regime = REGIMES[rng.integers(2)]
        x1, x2 = (float(v) for v in rng.choice(GRID, size=2))
        label = int(regime_score(regime, x1, x2) > 0)
        if rng.random() < flip:
            label = 1 - label
        n_events = int(rng.integers(min_events, max_events + 1))
        ts = base + timedelta(minutes=int(c * 30 + rng.integers(30)))
        events = []
        for _ in range(n_events):
            events.append(Event(str(rng.choice(ACTIVITIES)), ts, {"channel": regime, "x1": x1, "x2": x2}))
            ts += timedelta(minutes=int(rng.integers(1, 180)))
        traces.append(Trace(f"c{c:05d}", tuple(events), label))
    return EventLog(tuple(traces), ("channel",), ("x1", "x2"))


def toy_log(n_cases: int = 20, seed: int = 3) -> EventLog:
    """Small log with a mildly informative activity pattern, used for CLI smoke runs."""
    rng = np.random.default_rng(seed)
    base = datetime(2021, 3, 1, 9, 0, tzinfo=timezone.utc)
    traces = []
    for c in range(n_cases):
        label = int(c % 2)
        group = str(rng.choice(["W", "G"]))
        n_events = int(rng.integers(2, 6))
        ts = base + timedelta(hours=int(c * 5))
        events = []
        for k in range(n_events):
            pool = ["Register", "Check", "Treat" if label else "Wait", "Release"]
            act = pool[min(k, 3)] if rng.random() < 0.8 else str(rng.choice(pool))
            events.append(Event(act, ts, {"org:group": group, "cost": float(rng.integers(10, 100))}))
            ts += timedelta(minutes=int(rng.integers(5, 240)))
        traces.append(Trace(f"case{c:02d}", tuple(events), label))
    return EventLog(tuple(traces), ("org:group",), ("cost",))


TOY_SCHEMA = Schema(
    case_id="case_id",
    activity="activity",
    timestamp="timestamp",
    label="label",
    categorical=["org:group"],
    numeric=["cost"],
)
