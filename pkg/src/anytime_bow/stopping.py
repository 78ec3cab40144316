"""Stopping rules for the anytime query loop and a two-arm Hoeffding race."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

import numpy as np

from .errors import InconsistentState, InvalidConfig

if TYPE_CHECKING:
    from .query import ScoreHistogram


@dataclass(frozen=True)
class Rule1:
    """Stop once ``max(h) - mean(h) > threshold``."""

    threshold: float

    def __post_init__(self):
        object.__setattr__(self, "threshold", float(self.threshold))
        if not self.threshold > 0:
            raise InvalidConfig(f"rule1 threshold must be positive, got {self.threshold}")

    name = "rule1"

    @property
    def param(self):
        return self.threshold


@dataclass(frozen=True)
class Rule2:
    """Stop once ``(max(h) - mean(h)) / mean(h) > threshold``."""

    threshold: float

    def __post_init__(self):
        object.__setattr__(self, "threshold", float(self.threshold))
        if not self.threshold > 0:
            raise InvalidConfig(f"rule2 threshold must be positive, got {self.threshold}")

    name = "rule2"

    @property
    def param(self):
        return self.threshold


@dataclass(frozen=True)
class Rule3:
    """Stop once the histogram peak has kept its identity for ``patience`` features."""

    patience: int

    def __post_init__(self):
        if int(self.patience) != self.patience or self.patience < 1:
            raise InvalidConfig(f"rule3 patience must be a positive integer, got {self.patience}")
        object.__setattr__(self, "patience", int(self.patience))

    name = "rule3"

    @property
    def param(self):
        return self.patience


@dataclass(frozen=True)
class Hoeffding:
    """Stop once the top-two gap of per-feature mean votes clears the Hoeffding band."""

    delta: float

    def __post_init__(self):
        object.__setattr__(self, "delta", float(self.delta))
        if not 0.0 < self.delta < 1.0:
            raise InvalidConfig(f"hoeffding delta must lie in (0, 1), got {self.delta}")

    name = "hoeffding"

    @property
    def param(self):
        return self.delta


@dataclass(frozen=True)
class Never:
    name = "never"

    @property
    def param(self):
        return None


StoppingRule = Union[Rule1, Rule2, Rule3, Hoeffding, Never]

RULE_FAMILIES = {"rule1": Rule1, "rule2": Rule2, "rule3": Rule3, "hoeffding": Hoeffding, "never": Never}


def make_rule(family: str, value=None) -> StoppingRule:
    """Build a rule from its CLI name and numeric parameter."""
    try:
        cls = RULE_FAMILIES[family]
    except KeyError:
        raise InvalidConfig(f"unknown rule {family!r}; expected one of {sorted(RULE_FAMILIES)}") from None
    if cls is Never:
        return Never()
    if value is None:
        raise InvalidConfig(f"rule {family} needs a parameter")
    if cls is Rule3:
        return Rule3(int(round(float(value))))
    return cls(float(value))


def rule_label(rule: StoppingRule) -> tuple[str, str]:
    p = rule.param
    return rule.name, "" if p is None else repr(p)


@dataclass
class StopState:
    features_processed: int = 0
    current_peak_bin: int | None = None
    peak_unchanged_for: int = 0

    def advance(self, h: ScoreHistogram) -> None:
        """Record one processed feature against the updated histogram."""
        self.features_processed += 1
        peak = h.peak
        if peak is not None and peak == self.current_peak_bin:
            self.peak_unchanged_for += 1
        else:
            self.peak_unchanged_for = 0
        self.current_peak_bin = peak


def hoeffding_threshold(delta: float, t: int) -> float:
    """Smallest empirical gap after ``t`` samples that certifies the leader at confidence 1 - delta."""
    if t <= 0:
        return math.inf
    return math.sqrt(max(0.0, 2.0 * math.log(2.0 / delta)) / t)


def should_stop(rule: StoppingRule, h: ScoreHistogram, state: StopState) -> bool:
    if h.bins.size < 2:
        raise InconsistentState("histogram needs at least two bins")
    if not 0 <= state.peak_unchanged_for <= state.features_processed:
        raise InconsistentState("peak_unchanged_for exceeds features processed")
    if state.current_peak_bin != h.peak:
        raise InconsistentState(
            f"stop state tracks peak {state.current_peak_bin}, histogram peak is {h.peak}"
        )

    if isinstance(rule, Never):
        return False
    if isinstance(rule, Rule1):
        return h.current_max - h.mean > rule.threshold
    if isinstance(rule, Rule2):
        mean = h.mean
        if mean <= 0.0:
            return False
        return (h.current_max - mean) / mean > rule.threshold
    if isinstance(rule, Rule3):
        return state.peak_unchanged_for >= rule.patience
    if isinstance(rule, Hoeffding):
        t = state.features_processed
        if t == 0 or h.unit <= 0.0:
            return False
        gap = (h.current_max - h.second_max) / (h.unit * t)
        return gap > hoeffding_threshold(rule.delta, t)
    raise InvalidConfig(f"not a stopping rule: {rule!r}")


@dataclass(frozen=True)
class RaceReport:
    error_rate: float
    mean_stop_time: float
    trials: int
    truncated: int


def race_simulate(mu1: float, mu2: float, delta: float, trials: int, seed: int,
                  max_steps: int = 10_000_000) -> RaceReport:
    """Race two Bernoulli arms until the empirical gap clears the Hoeffding band.

    Each trial draws one sample per arm per round and stops at the first
    ``t`` with ``|mean_x - mean_y| >= sqrt(2 ln(2/delta) / t)``; the arm with
    the larger empirical mean is declared the winner. Trials still running
    at ``max_steps`` are decided by their current means and counted in
    ``truncated``.
    """
    for name, mu in (("mu1", mu1), ("mu2", mu2)):
        if not 0.0 <= mu <= 1.0:
            raise InvalidConfig(f"{name} must lie in [0, 1], got {mu}")
    if mu1 == mu2:
        raise InvalidConfig("mu1 and mu2 must differ")
    if not 0.0 < delta < 1.0:
        raise InvalidConfig(f"delta must lie in (0, 1), got {delta}")
    if trials < 1 or max_steps < 1:
        raise InvalidConfig("trials and max_steps must be positive")

    rng = np.random.default_rng(seed)
    c = 2.0 * math.log(2.0 / delta)
    first_is_better = mu1 > mu2
    sx = np.zeros(trials)
    sy = np.zeros(trials)
    active = np.arange(trials)
    stop_time = np.full(trials, max_steps, dtype=np.int64)
    wrong = np.zeros(trials, dtype=bool)
    t0 = 0
    block = 256
    while active.size and t0 < max_steps:
        b = min(block, max_steps - t0, max(1, (1 << 22) // active.size))
        cx = sx[active, None] + np.cumsum(rng.random((active.size, b)) < mu1, axis=1)
        cy = sy[active, None] + np.cumsum(rng.random((active.size, b)) < mu2, axis=1)
        t = np.arange(t0 + 1, t0 + b + 1, dtype=np.float64)
        gap = (cx - cy) / t
        hit = np.abs(gap) >= np.sqrt(c / t)
        done = hit.any(axis=1)
        first = hit.argmax(axis=1)
        rows = np.flatnonzero(done)
        ids = active[rows]
        g_stop = gap[rows, first[rows]]
        stop_time[ids] = t0 + first[rows] + 1
        wrong[ids] = (g_stop > 0) != first_is_better
        keep = ~done
        sx[active[keep]] = cx[keep, -1]
        sy[active[keep]] = cy[keep, -1]
        active = active[keep]
        t0 += b
        block = min(block * 2, 1 << 16)
    if active.size:
        g = sx[active] - sy[active]
        wrong[active] = (g == 0) | ((g > 0) != first_is_better)
    return RaceReport(
        error_rate=float(wrong.mean()),
        mean_stop_time=float(stop_time.mean()),
        trials=trials,
        truncated=int(active.size),
    )
