"""QUBO solvers and the end-to-end backup-selection pipeline.

Tabu Search walks the single-bit-flip neighborhood with a short-term
memory of recently flipped bits (aspiration lets a tabu move through
when it beats the global best) and restarts from fresh assignments.
An exhaustive solver provides the exact oracle for desk-scale matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimator import EpisodeOracle, TraceRow, estimate_baseline, estimate_pairs_momentum
from .model import (
    BackupConfig,
    DomainError,
    InputError,
    PairReturnTable,
    ProblemInstance,
    config_cost,
)
from .qubo import QuboMatrix, build_qubo, complete_slack, encode_slack, hamiltonian
from .seeding import substream

BRUTE_FORCE_LIMIT = 26  # 2**m assignments; guard for exhaustive solving

# Margin for near-tie candidate checks; candidates within this of the best
# incremental energy are re-evaluated exactly before comparison.
_NEAR_TIE = 1e-9


@dataclass(frozen=True)
class TabuParams:
    """Tabu Search knobs. Unset tenure and iteration cap default to
    max(7, m // 4) and 200 * m for an m-variable matrix."""

    tenure: int | None = None
    max_iters: int | None = None
    restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.tenure is not None and self.tenure < 1:
            raise InputError(f"tenure must be positive, got {self.tenure}")
        if self.max_iters is not None and self.max_iters < 1:
            raise InputError(f"max_iters must be positive, got {self.max_iters}")
        if self.restarts < 1:
            raise InputError(f"restarts must be positive, got {self.restarts}")


@dataclass(frozen=True)
class SolveResult:
    """A solved assignment with its decoded sensor configuration.

    ``cost`` and ``feasible`` are meaningful only when the solver was
    given cost data; otherwise they default to 0 and True.
    """

    assignment: tuple[int, ...]
    energy: float
    config: BackupConfig
    feasible: bool
    cost: int

    def to_json_dict(self) -> dict:
        return {
            "config": list(self.config),
            "cost": self.cost,
            "feasible": self.feasible,
            "energy": self.energy,
            "assignment": list(self.assignment),
        }


def _dense_arrays(Q: QuboMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal vector and symmetric off-diagonal matrix (zero diagonal)."""
    diag = np.zeros(Q.m)
    off = np.zeros((Q.m, Q.m))
    for (i, j), value in Q.coefficients.items():
        if i == j:
            diag[i] = value
        else:
            off[i, j] = value
            off[j, i] = value
    return diag, off


def _assignment_key(bits, n: int) -> tuple[int, int]:
    """Tie-break key: sensor bits as an integer (bit i worth 2**i), then
    slack bits likewise. Lower keys win, so all-slack completions beat
    cost-bearing sensor selections on equal energy."""
    sensor = 0
    for i in range(n):
        sensor |= int(bits[i]) << i
    slack = 0
    for t in range(n, len(bits)):
        slack |= int(bits[t]) << (t - n)
    return sensor, slack


def _make_result(
    Q: QuboMatrix,
    assignment: tuple[int, ...],
    costs,
    budget: int | None,
) -> SolveResult:
    energy = hamiltonian(Q, assignment)
    config = assignment[: Q.n]
    if costs is not None:
        cost = config_cost(config, costs)
        feasible = cost <= budget if budget is not None else True
    else:
        cost, feasible = 0, True
    return SolveResult(
        assignment=assignment, energy=energy, config=config, feasible=feasible, cost=cost
    )


def tabu_search(
    Q: QuboMatrix,
    params: TabuParams | None = None,
    *,
    costs=None,
    budget: int | None = None,
) -> SolveResult:
    """Best assignment found by restarted Tabu Search.

    Single-bit-flip moves are scored incrementally from cached flip
    fields; the recently flipped bit stays tabu for the tenure unless it
    would improve the global best. Restarts cycle through deterministic
    starting points (all zeros, the do-nothing slack completion, greedy
    constructions by gain per cost and by raw gain) and seeded random
    assignments repaired into the affordable region when cost data is
    available. A restart ends early after a long stretch without
    improving the best. Fully deterministic for a given (matrix, params).
    """
    params = params if params is not None else TabuParams()
    m = Q.m
    if m == 0:
        return _make_result(Q, (), costs, budget)
    diag, off = _dense_arrays(Q)
    tenure = params.tenure if params.tenure is not None else max(7, m // 4)
    tenure = min(tenure, m - 1) if m > 1 else 0
    max_iters = params.max_iters if params.max_iters is not None else 200 * m
    # Penalty landscapes put thin barriers between equal-cost valleys, so a
    # restart only ends early after a generous stretch without improvement.
    stall_limit = max(400, 40 * m)

    best_energy = math.inf
    best_key = (math.inf, math.inf)
    best_assignment: tuple[int, ...] | None = None

    warm_start = None
    if Q.slack_coeffs:
        capacity = sum(Q.slack_coeffs)
        fill = min(budget, capacity) if budget is not None else capacity
        warm_start = np.array((0,) * Q.n + encode_slack(fill, Q.slack_coeffs),
                              dtype=np.int8)

    def random_start(rng: np.random.Generator) -> np.ndarray:
        z = rng.integers(0, 2, size=m).astype(np.int8)
        if costs is None or budget is None or not Q.slack_coeffs:
            return z
        # Start inside a zero-penalty valley: drop random selections until
        # the config is affordable, then complete the slack exactly.
        config = list(z[: Q.n])
        cost = config_cost(config, costs)
        selected = [i for i, b in enumerate(config) if b]
        while cost > budget and selected:
            drop = selected.pop(int(rng.integers(len(selected))))
            config[drop] = 0
            cost -= costs[drop]
        if cost > budget:
            return z
        slack_bits, _ = complete_slack(Q, cost, budget)
        return np.array(tuple(config) + slack_bits, dtype=np.int8)

    def completed_energy(config: list[int]) -> float:
        slack_bits, _ = complete_slack(Q, config_cost(config, costs), budget)
        return hamiltonian(Q, tuple(config) + slack_bits)

    def greedy_start(
        rng: np.random.Generator | None = None, per_cost: bool = True
    ) -> np.ndarray | None:
        # Constructive start: insert an affordable bit with a top
        # completed-energy improvement until none helps, ranked by gain
        # per unit cost (or raw gain), taking the strict best when rng is
        # None and one of the best three otherwise. Penalty valleys sit
        # far apart relative to the objective differences between them,
        # so a good starting valley matters more than walk length.
        if costs is None or budget is None or not Q.slack_coeffs:
            return None
        config = [0] * Q.n
        cost = 0
        energy = completed_energy(config)
        while True:
            gains = []
            for i in range(Q.n):
                if config[i] or cost + costs[i] > budget:
                    continue
                config[i] = 1
                gain = energy - completed_energy(config)
                config[i] = 0
                if gain > 0.0:
                    score = gain / costs[i] if per_cost else gain
                    gains.append((score, gain, i))
            if not gains:
                break
            gains.sort(key=lambda item: (-item[0], item[2]))
            pick = 0 if rng is None else int(rng.integers(min(3, len(gains))))
            _, gain, chosen = gains[pick]
            config[chosen] = 1
            cost += costs[chosen]
            energy -= gain
        slack_bits, _ = complete_slack(Q, cost, budget)
        return np.array(tuple(config) + slack_bits, dtype=np.int8)

    def consider(z: np.ndarray, incremental: float) -> bool:
        nonlocal best_energy, best_key, best_assignment
        if incremental > best_energy + _NEAR_TIE:
            return False
        assignment = tuple(int(b) for b in z)
        exact = hamiltonian(Q, assignment)
        key = _assignment_key(assignment, Q.n)
        if exact < best_energy or (exact == best_energy and key < best_key):
            best_energy, best_key, best_assignment = exact, key, assignment
            return True
        return False

    greedy = greedy_start()
    for restart in range(params.restarts):
        rng = substream(params.seed, "tabu-restart", restart)
        if restart == 0:
            z = np.zeros(m, dtype=np.int8)
        elif restart == 1 and warm_start is not None:
            z = warm_start.copy()
        elif restart == 2 and greedy is not None:
            z = greedy.copy()
        elif restart == 3 and greedy is not None:
            z = greedy_start(per_cost=False)
        elif restart % 2 == 1 and greedy is not None:
            z = greedy_start(rng)
        else:
            z = random_start(rng)
        energy = hamiltonian(Q, tuple(int(b) for b in z))
        fields = diag + off @ z
        expires = np.zeros(m, dtype=np.int64)
        consider(z, energy)
        stall = 0
        for it in range(max_iters):
            delta = (1 - 2 * z) * fields
            admissible = (expires <= it) | (energy + delta < best_energy - _NEAR_TIE)
            if not admissible.any():
                admissible[:] = True
            scores = np.where(admissible, delta, np.inf)
            move = m - 1 - int(np.argmin(scores[::-1]))  # ties: highest index
            z[move] ^= 1
            energy += float(delta[move])
            fields += (2 * int(z[move]) - 1) * off[:, move]
            expires[move] = it + 1 + tenure
            if consider(z, energy):
                stall = 0
            else:
                stall += 1
                if stall > stall_limit:
                    break

    return _make_result(Q, best_assignment, costs, budget)


def brute_force_qubo(
    Q: QuboMatrix,
    *,
    costs=None,
    budget: int | None = None,
) -> SolveResult:
    """Exact global minimum by full enumeration (guarded to m <= 26).

    Assignments are enumerated so that equal-energy ties resolve to the
    lowest sensor integer, then the lowest slack integer.
    """
    m, n = Q.m, Q.n
    if m > BRUTE_FORCE_LIMIT:
        raise DomainError(
            f"exhaustive solving limited to m <= {BRUTE_FORCE_LIMIT}, got {m}"
        )
    if m == 0:
        return _make_result(Q, (), costs, budget)
    diag, off = _dense_arrays(Q)
    upper = np.triu(off, 1) + np.diag(diag)
    k = m - n

    best_energy = math.inf
    best_bits: np.ndarray | None = None
    block = 1 << 16
    total = 1 << m
    for start in range(0, total, block):
        codes = np.arange(start, min(start + block, total), dtype=np.int64)
        sensor = codes >> k
        slack = codes & ((1 << k) - 1)
        Z = np.empty((len(codes), m))
        for i in range(n):
            Z[:, i] = (sensor >> i) & 1
        for t in range(k):
            Z[:, n + t] = (slack >> t) & 1
        energies = ((Z @ upper) * Z).sum(axis=1)
        idx = int(np.argmin(energies))  # first occurrence: lowest code wins ties
        if energies[idx] < best_energy:
            best_energy = float(energies[idx])
            best_bits = Z[idx].astype(np.int64)
    assignment = tuple(int(b) for b in best_bits)
    return _make_result(Q, assignment, costs, budget)


def decode(assignment, n: int) -> BackupConfig:
    """Sensor configuration encoded in the first n assignment bits."""
    bits = tuple(int(b) for b in assignment)
    if len(bits) < n:
        raise InputError(f"assignment has {len(bits)} bits, need at least {n}")
    return bits[:n]


@dataclass(frozen=True)
class PipelineResult:
    """Everything the optimization pipeline produced."""

    solution: SolveResult
    table: PairReturnTable
    qubo: QuboMatrix


def optimize_backups(
    instance: ProblemInstance,
    oracle: EpisodeOracle,
    params: TabuParams | None = None,
    *,
    baseline_episodes: int = 10,
    power_two_slack: bool = False,
    trace: list[TraceRow] | None = None,
) -> PipelineResult:
    """Full pipeline: estimate returns, build the QUBO, solve, decode.

    The no-dropout baseline is sampled separately from the pair budget
    (``baseline_episodes`` draws); pair returns use the momentum
    estimator with the instance's episode budget.
    """
    if oracle.n != instance.n:
        raise InputError(
            f"oracle has n={oracle.n} sensors but instance has n={instance.n}"
        )
    r0 = estimate_baseline(oracle, baseline_episodes)
    table = estimate_pairs_momentum(oracle, instance.B, r0=r0, trace=trace)
    qubo = build_qubo(instance, table, power_two_slack=power_two_slack)
    if params is None:
        params = TabuParams(seed=instance.seed)
    solution = tabu_search(qubo, params, costs=instance.c, budget=instance.C)
    return PipelineResult(solution=solution, table=table, qubo=qubo)
