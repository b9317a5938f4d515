"""Budgeted estimation of pair-dropout returns from an episode oracle.

Every ordered pair (i, j) with i <= j gets an empirical mean return for
the episode where exactly those sensors are out (the diagonal covers
single dropouts). The momentum estimator seeds each pair with two
episodes and then spends the remaining budget on the pair whose running
mean moved the most on its last sample; the Round Robin baseline splits
the budget evenly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

from .model import DomainError, InputError, PairReturnTable


class EpisodeOracle(Protocol):
    """One-episode sampler: returns a scalar episode return for a dropout
    set. Successive calls with the same set are independent draws."""

    n: int

    def sample(self, dropout) -> float: ...


def pair_order(n: int) -> list[tuple[int, int]]:
    """All pairs (i, j) with i <= j in lexicographic order."""
    return [(i, j) for i in range(n) for j in range(i, n)]


def momentum(samples) -> float:
    """Shift of the running mean caused by the most recent sample.

    Absolute difference between the mean excluding and including the
    last entry; requires at least two samples.
    """
    values = list(samples)
    if len(values) < 2:
        raise ValueError("momentum needs at least two samples")
    total = math.fsum(values)
    with_last = total / len(values)
    without_last = (total - values[-1]) / (len(values) - 1)
    return abs(without_last - with_last)


@dataclass
class SampleLog:
    """Per-pair sample lists with running means and momenta.

    Momenta are refreshed only when their pair receives a new sample;
    values for untouched pairs stay as last computed.
    """

    n: int
    samples: dict[tuple[int, int], list[float]] = field(default_factory=dict)
    means: dict[tuple[int, int], float] = field(default_factory=dict)
    momenta: dict[tuple[int, int], float] = field(default_factory=dict)

    def record(self, pair: tuple[int, int], value: float) -> float:
        """Append one sample; returns the updated running mean."""
        history = self.samples.setdefault(pair, [])
        history.append(value)
        mean = math.fsum(history) / len(history)
        self.means[pair] = mean
        if len(history) >= 2:
            self.momenta[pair] = momentum(history)
        return mean

    def table(self, r0: float) -> PairReturnTable:
        return PairReturnTable(n=self.n, r0=r0, returns=dict(self.means))


TraceRow = tuple[int, int, int, float, float]  # episode_index, i, j, return, mean


def estimate_baseline(oracle: EpisodeOracle, k: int) -> float:
    """Mean return over k episodes with no dropouts."""
    if k < 1:
        raise InputError(f"baseline episode count must be positive, got {k}")
    return math.fsum(oracle.sample(()) for _ in range(k)) / k


def estimate_pairs_momentum(
    oracle: EpisodeOracle,
    budget: int,
    *,
    r0: float,
    trace: list[TraceRow] | None = None,
) -> PairReturnTable:
    """Estimate all pair returns with momentum-prioritized sampling.

    Initializes every pair with exactly two episodes, then repeatedly
    samples the pair with the largest momentum (ties go to the
    lexicographically smallest pair) until exactly ``budget`` episodes
    have been spent. Deterministic given the oracle's stream.
    """
    n = oracle.n
    pairs = pair_order(n)
    if budget < n * (n + 1):
        raise DomainError(
            f"budget {budget} too small: momentum estimation needs n(n+1)="
            f"{n * (n + 1)} initial episodes"
        )
    log = SampleLog(n=n)
    episode = 0
    for pair in pairs:
        for _ in range(2):
            value = oracle.sample(pair if pair[0] != pair[1] else (pair[0],))
            mean = log.record(pair, value)
            if trace is not None:
                trace.append((episode, pair[0], pair[1], value, mean))
            episode += 1
    for _ in range(budget - n * (n + 1)):
        best = pairs[0]
        best_momentum = log.momenta[best]
        for pair in pairs[1:]:
            if log.momenta[pair] > best_momentum:
                best, best_momentum = pair, log.momenta[pair]
        value = oracle.sample(best if best[0] != best[1] else (best[0],))
        mean = log.record(best, value)
        if trace is not None:
            trace.append((episode, best[0], best[1], value, mean))
        episode += 1
    return log.table(r0)


def estimate_pairs_round_robin(
    oracle: EpisodeOracle,
    budget: int,
    *,
    r0: float,
    trace: list[TraceRow] | None = None,
) -> PairReturnTable:
    """Estimate all pair returns by splitting the budget evenly.

    Each pair receives floor(budget / pair_count) episodes; the
    remainder goes to the lowest-index pairs, so exactly ``budget``
    episodes are spent.
    """
    n = oracle.n
    pairs = pair_order(n)
    if budget < len(pairs):
        raise DomainError(
            f"budget {budget} too small: round robin needs at least one episode "
            f"per pair ({len(pairs)})"
        )
    base, remainder = divmod(budget, len(pairs))
    log = SampleLog(n=n)
    episode = 0
    for rank, pair in enumerate(pairs):
        count = base + (1 if rank < remainder else 0)
        for _ in range(count):
            value = oracle.sample(pair if pair[0] != pair[1] else (pair[0],))
            mean = log.record(pair, value)
            if trace is not None:
                trace.append((episode, pair[0], pair[1], value, mean))
            episode += 1
    return log.table(r0)
