"""Second-order expected-return approximation and QUBO assembly.

The expected return under a dropout vector is approximated conditional on
at most two simultaneous dropouts, using the pair-return table. Backup
advantages (single and pairwise-interaction) derived from that
approximation form the soft objective; an integer-slack squared penalty
enforces the cost budget. The result is an upper-triangular QUBO whose
minimum encodes the best backup configuration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .model import (
    BackupConfig,
    DomainError,
    DropoutVector,
    InputError,
    PairReturnTable,
    ProblemInstance,
    apply_backups,
    as_backup_config,
    as_dropout_vector,
    config_cost,
)

logger = logging.getLogger(__name__)


def _product_excluding(factors: list[float], skip: tuple[int, ...] = ()) -> float:
    total = 1.0
    for idx, f in enumerate(factors):
        if idx in skip:
            continue
        total *= f
    return total


def at_most_two_dropout_prob(d: DropoutVector) -> float:
    """Probability that at most two sensors drop out under d.

    Sums the no-dropout, single-dropout, and pair-dropout mask
    probabilities in a fixed index order so results are bit-reproducible.
    """
    d = as_dropout_vector(d)
    n = len(d)
    keep = [1.0 - p for p in d]
    total = _product_excluding(keep)
    for i in range(n):
        if d[i] != 0.0:
            total += d[i] * _product_excluding(keep, (i,))
    for i in range(n):
        for j in range(i):
            if d[i] != 0.0 and d[j] != 0.0:
                total += d[i] * d[j] * _product_excluding(keep, (j, i))
    return total


def conditional_expected_return(d: DropoutVector, table: PairReturnTable) -> float:
    """Expected return conditional on at most two dropouts.

    Weights the no-dropout return and each single/pair dropout return by
    its mask probability, normalized by the at-most-two probability.
    Raises DomainError when that probability is zero (possible only when
    three or more sensors have dropout probability exactly 1).
    """
    d = as_dropout_vector(d)
    if len(d) != table.n:
        raise InputError(f"length mismatch: len(d)={len(d)}, table.n={table.n}")
    q = at_most_two_dropout_prob(d)
    if q == 0.0:
        raise DomainError(
            "conditional return undefined: zero probability of at most two "
            "dropouts (three or more sensors always fail)"
        )
    n = len(d)
    keep = [1.0 - p for p in d]
    total = table.r0 * _product_excluding(keep)
    for i in range(n):
        if d[i] != 0.0:
            total += table.pair(i, i) * d[i] * _product_excluding(keep, (i,))
    for i in range(n):
        for j in range(i):
            if d[i] != 0.0 and d[j] != 0.0:
                total += table.pair(j, i) * d[i] * d[j] * _product_excluding(keep, (j, i))
    return total / q


def _unit_config(n: int, *indices: int) -> BackupConfig:
    bits = [0] * n
    for i in indices:
        bits[i] = 1
    return tuple(bits)


def single_backup_advantage(i: int, d: DropoutVector, table: PairReturnTable) -> float:
    """Gain in conditional expected return from backing up sensor i alone."""
    d = as_dropout_vector(d)
    if not 0 <= i < len(d):
        raise ValueError(f"sensor index out of range: {i}")
    backed = apply_backups(d, _unit_config(len(d), i))
    return conditional_expected_return(backed, table) - conditional_expected_return(d, table)


def pair_backup_advantage(
    i: int, j: int, d: DropoutVector, table: PairReturnTable
) -> float:
    """Interaction gain from backing up sensors i and j together.

    The joint gain minus both single gains; symmetric in (i, j).
    """
    if i == j:
        raise ValueError("pair advantage requires two distinct sensors")
    d = as_dropout_vector(d)
    if not (0 <= i < len(d) and 0 <= j < len(d)):
        raise ValueError(f"sensor index out of range: ({i}, {j})")
    a, b = min(i, j), max(i, j)
    both = apply_backups(d, _unit_config(len(d), a, b))
    return (
        conditional_expected_return(both, table)
        - conditional_expected_return(d, table)
        - single_backup_advantage(a, d, table)
        - single_backup_advantage(b, d, table)
    )


def advantage_scale(d: DropoutVector, table: PairReturnTable) -> float:
    """Sum of absolute single and pairwise advantages.

    Used to scale the cost penalty so that one unit of budget violation
    always outweighs the largest possible soft-objective gain.
    """
    d = as_dropout_vector(d)
    n = len(d)
    total = 0.0
    for i in range(n):
        total += abs(single_backup_advantage(i, d, table))
    for i in range(n):
        for j in range(i + 1, n):
            total += abs(pair_backup_advantage(i, j, d, table))
    return total


def bounded_slack_coeffs(budget: int) -> tuple[int, ...]:
    """Slack coefficients covering exactly the integers 0..budget.

    Powers of two up to 2**(k-2) plus a closing coefficient budget+1-2**(k-1)
    with k = ceil(log2(budget+1)) bits, so the representable range neither
    misses budget itself nor overshoots it.
    """
    if budget < 1:
        raise ValueError(f"budget must be positive, got {budget}")
    k = budget.bit_length()
    powers = [1 << t for t in range(k - 1)]
    return tuple(powers + [budget + 1 - (1 << (k - 1))])


def power_slack_coeffs(budget: int) -> tuple[int, ...]:
    """Plain power-of-two slack coefficients 2**0 .. 2**ceil(log2(budget)).

    May overshoot the budget range; kept for compatibility with the
    --paper-slack-encoding flag.
    """
    if budget < 1:
        raise ValueError(f"budget must be positive, got {budget}")
    return tuple(1 << t for t in range((budget - 1).bit_length() + 1))


def encode_slack(value: int, coeffs: tuple[int, ...]) -> tuple[int, ...]:
    """Bit pattern over the slack coefficients summing exactly to value.

    Works for both supported layouts: all leading coefficients are powers
    of two; only the final coefficient may be irregular.
    """
    if value < 0:
        raise ValueError(f"slack value must be non-negative, got {value}")
    if not coeffs:
        if value:
            raise DomainError(f"slack value {value} not representable (no slack bits)")
        return ()
    bits = [0] * len(coeffs)
    head_sum = sum(coeffs[:-1])
    remainder = value
    if remainder > head_sum:
        bits[-1] = 1
        remainder -= coeffs[-1]
    if remainder < 0 or remainder > head_sum:
        raise DomainError(f"slack value {value} not representable by {coeffs}")
    for t in reversed(range(len(coeffs) - 1)):
        if remainder >= coeffs[t]:
            bits[t] = 1
            remainder -= coeffs[t]
    if remainder:
        raise DomainError(f"slack value {value} not representable by {coeffs}")
    return tuple(bits)


@dataclass(frozen=True)
class QuboMatrix:
    """Upper-triangular QUBO coefficients with an explicit constant offset.

    The objective value of a binary assignment x of length m is
    sum over i <= j of x_i x_j * coefficients[i, j], plus the constant.
    The first n bits are sensor-backup decisions; the remaining bits are
    budget slack with the stored integer coefficients. ``degenerate`` marks
    matrices built with a zero advantage scale (penalty weight fell back
    to the bare trade-off weight).
    """

    m: int
    n: int
    coefficients: dict[tuple[int, int], float] = field(repr=False)
    constant: float
    slack_coeffs: tuple[int, ...]
    degenerate: bool = False

    def __post_init__(self):
        if self.m != self.n + len(self.slack_coeffs):
            raise InputError(
                f"variable count mismatch: m={self.m} but n={self.n} "
                f"with {len(self.slack_coeffs)} slack bits"
            )
        for i, j in self.coefficients:
            if not 0 <= i <= j < self.m:
                raise InputError(f"coefficient key out of range: ({i}, {j})")

    def to_json_dict(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "constant": self.constant,
            "entries": [
                {"i": i, "j": j, "q": self.coefficients[(i, j)]}
                for (i, j) in sorted(self.coefficients)
            ],
            "slack_coeffs": list(self.slack_coeffs),
        }

    def to_coo_text(self) -> str:
        lines = [f"constant {self.constant!r}"]
        for (i, j) in sorted(self.coefficients):
            lines.append(f"{i} {j} {self.coefficients[(i, j)]!r}")
        return "\n".join(lines) + "\n"


def qubo_from_json(raw: dict) -> QuboMatrix:
    for key in ("m", "n", "constant", "entries", "slack_coeffs"):
        if key not in raw:
            raise InputError(f"QUBO JSON missing field {key!r}")
    coeffs: dict[tuple[int, int], float] = {}
    for entry in raw["entries"]:
        i, j = int(entry["i"]), int(entry["j"])
        if (i, j) in coeffs:
            raise InputError(f"duplicate QUBO entry ({i}, {j})")
        coeffs[(i, j)] = float(entry["q"])
    return QuboMatrix(
        m=int(raw["m"]),
        n=int(raw["n"]),
        coefficients=coeffs,
        constant=float(raw["constant"]),
        slack_coeffs=tuple(int(v) for v in raw["slack_coeffs"]),
    )


def qubo_from_coo(text: str, n: int | None = None) -> QuboMatrix:
    """Parse the plain-text triplet format: a ``constant <value>`` header
    line followed by one ``i j value`` line per coefficient.

    Without an explicit sensor count every variable is treated as a
    sensor bit (no slack structure).
    """
    constant = None
    coeffs: dict[tuple[int, int], float] = {}
    m = 0
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if constant is None:
            if len(parts) != 2 or parts[0] != "constant":
                raise InputError(
                    f"line {lineno}: expected header 'constant <value>', got {rawline!r}"
                )
            try:
                constant = float(parts[1])
            except ValueError:
                raise InputError(f"line {lineno}: invalid constant {parts[1]!r}") from None
            continue
        if len(parts) != 3:
            raise InputError(f"line {lineno}: expected 'i j value', got {rawline!r}")
        try:
            i, j, value = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise InputError(f"line {lineno}: malformed triplet {rawline!r}") from None
        if i < 0 or j < 0 or i > j:
            raise InputError(f"line {lineno}: indices must satisfy 0 <= i <= j")
        if (i, j) in coeffs:
            raise InputError(f"line {lineno}: duplicate entry ({i}, {j})")
        coeffs[(i, j)] = value
        m = max(m, j + 1)
    if constant is None:
        raise InputError("missing 'constant <value>' header line")
    if n is None:
        n = m
    if not 0 <= n <= m:
        raise InputError(f"sensor count {n} out of range for {m} variables")
    return QuboMatrix(
        m=m,
        n=n,
        coefficients=coeffs,
        constant=constant,
        slack_coeffs=tuple(0 for _ in range(m - n)),
    )


def build_qubo(
    instance: ProblemInstance,
    table: PairReturnTable,
    *,
    power_two_slack: bool = False,
) -> QuboMatrix:
    """Assemble the QUBO for a problem instance and its pair-return table.

    Sensor bits carry the negated single advantages on the diagonal and
    negated interaction advantages off-diagonal. The squared budget
    penalty (sensor costs plus slack minus budget) is expanded into
    diagonal, cross, and constant terms, weighted by beta times the
    advantage scale. A zero advantage scale is flagged and replaced by
    1.0 so the penalty does not vanish.
    """
    n, d, costs, budget = instance.n, instance.d, instance.c, instance.C
    if table.n != n:
        raise InputError(f"table covers {table.n} sensors but instance has {n}")

    singles = [single_backup_advantage(i, d, table) for i in range(n)]
    pair_adv = {
        (i, j): pair_backup_advantage(i, j, d, table)
        for i in range(n)
        for j in range(i + 1, n)
    }
    alpha = sum(abs(v) for v in singles) + sum(abs(v) for v in pair_adv.values())

    degenerate = alpha == 0.0
    if degenerate:
        logger.warning(
            "advantage scale is zero (no backup changes the approximate return); "
            "penalty weight falls back to beta * 1.0"
        )
    weight = instance.beta * (alpha if alpha > 0.0 else 1.0)

    slack = power_slack_coeffs(budget) if power_two_slack else bounded_slack_coeffs(budget)
    m = n + len(slack)
    weights = list(costs) + list(slack)

    coeffs: dict[tuple[int, int], float] = {}
    for i in range(m):
        a = weights[i]
        value = weight * float(a * a - 2 * budget * a)
        if i < n:
            value -= singles[i]
        coeffs[(i, i)] = value
    for i in range(m):
        for j in range(i + 1, m):
            value = weight * float(2 * weights[i] * weights[j])
            if j < n:
                value -= pair_adv[(i, j)]
            coeffs[(i, j)] = value

    return QuboMatrix(
        m=m,
        n=n,
        coefficients=coeffs,
        constant=weight * float(budget * budget),
        slack_coeffs=slack,
        degenerate=degenerate,
    )


def hamiltonian(Q: QuboMatrix, x) -> float:
    """Objective value of a full binary assignment.

    Accumulates coefficient terms in sorted key order so repeated
    evaluations are bit-identical.
    """
    bits = as_backup_config(x)
    if len(bits) != Q.m:
        raise InputError(f"assignment length {len(bits)} != variable count {Q.m}")
    total = 0.0
    for (i, j) in sorted(Q.coefficients):
        if bits[i] and bits[j]:
            total += Q.coefficients[(i, j)]
    return total + Q.constant


def complete_slack(Q: QuboMatrix, cost: int, budget: int) -> tuple[tuple[int, ...], int]:
    """Best slack completion for a sensor config of the given cost.

    Returns the slack bit pattern and the achieved slack value; the
    completion minimizes the squared budget penalty (zero exactly when
    the config is affordable).
    """
    capacity = sum(Q.slack_coeffs)
    target = max(0, min(budget - cost, capacity))
    return encode_slack(target, Q.slack_coeffs), target


def approx_expected_return(
    instance: ProblemInstance,
    table: PairReturnTable,
    Q: QuboMatrix,
    x: BackupConfig,
) -> float:
    """Approximate expected return of a sensor config through the QUBO.

    Completes the slack bits to minimize the budget penalty, subtracts
    whatever penalty remains (nonzero only for unaffordable configs,
    which callers should flag via their cost), negates the objective,
    and re-adds the conditional expected return baseline. For affordable
    configs this equals the soft objective plus the baseline.
    """
    bits = as_backup_config(x)
    if len(bits) != Q.n:
        raise InputError(f"config length {len(bits)} != sensor count {Q.n}")
    cost = config_cost(bits, instance.c)
    slack_bits, slack_value = complete_slack(Q, cost, instance.C)

    alpha = advantage_scale(instance.d, table)
    weight = instance.beta * (alpha if alpha > 0.0 else 1.0)
    residue = weight * float(cost + slack_value - instance.C) ** 2

    energy = hamiltonian(Q, bits + slack_bits)
    baseline = conditional_expected_return(instance.d, table)
    return -(energy - residue) + baseline
