"""Domain types for backup-sensor planning instances.

A problem instance couples per-sensor dropout probabilities with integer
backup costs, a cost budget, and an episode budget for return estimation.
Configurations are binary vectors over sensors; installing a backup for
sensor i squares its dropout probability (both copies must fail).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field


class SensorOptError(Exception):
    """Base class for errors raised by this package."""


class InputError(SensorOptError):
    """Malformed or inconsistent external input (files, flags, protocol)."""


class DomainError(SensorOptError):
    """Well-formed input that is degenerate or infeasible for the requested
    operation."""


DropoutVector = tuple[float, ...]
BackupConfig = tuple[int, ...]


def as_dropout_vector(values) -> DropoutVector:
    """Validate and normalize a sequence of dropout probabilities."""
    probs = tuple(float(v) for v in values)
    for i, p in enumerate(probs):
        if not 0.0 <= p <= 1.0:
            raise InputError(f"probability out of range at index {i}: {p!r}")
    return probs


def as_backup_config(bits) -> BackupConfig:
    """Validate and normalize a binary configuration vector."""
    config = tuple(int(b) for b in bits)
    for i, b in enumerate(config):
        if b not in (0, 1):
            raise InputError(f"configuration bit out of {{0,1}} at index {i}: {b!r}")
    return config


@dataclass(frozen=True)
class ProblemInstance:
    """A backup-sensor selection problem.

    Fields
    ------
    n:     sensor count
    d:     per-sensor dropout probabilities, each in [0, 1]
    c:     per-sensor backup costs, positive integers
    C:     cost budget
    B:     episode budget for pair-return estimation
    beta:  penalty trade-off weight in [0, 1]
    seed:  master seed for all derived randomness
    """

    n: int
    d: DropoutVector
    c: tuple[int, ...]
    C: int
    B: int
    beta: float
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "d": list(self.d),
            "c": list(self.c),
            "C": self.C,
            "B": self.B,
            "beta": self.beta,
            "seed": self.seed,
        }


def validate_instance(raw: dict) -> ProblemInstance:
    """Validate a parsed instance record and return a ProblemInstance.

    Raises InputError on any violated invariant: dimension mismatches,
    probabilities outside [0, 1], non-positive costs or budgets, or an
    episode budget below n(n+1) (two initial samples per sensor pair).
    """
    if not isinstance(raw, dict):
        raise InputError("instance record must be a JSON object")
    missing = [k for k in ("n", "d", "c", "C", "B") if k not in raw]
    if missing:
        raise InputError(f"instance record missing fields: {', '.join(missing)}")

    n = _as_int(raw["n"], "n")
    if n < 1:
        raise InputError(f"sensor count must be positive, got {n}")

    d = as_dropout_vector(raw["d"])
    if len(d) != n:
        raise InputError(f"dimension mismatch: len(d)={len(d)} but n={n}")

    c = tuple(_as_int(v, "c") for v in raw["c"])
    if len(c) != n:
        raise InputError(f"dimension mismatch: len(c)={len(c)} but n={n}")
    for i, cost in enumerate(c):
        if cost < 1:
            raise InputError(f"cost must be a positive integer at index {i}: {cost}")

    C = _as_int(raw["C"], "C")
    if C < 1:
        raise InputError(f"cost budget must be positive, got {C}")

    B = _as_int(raw["B"], "B")
    if B < 1:
        raise InputError(f"episode budget must be positive, got {B}")
    if B < n * (n + 1):
        raise InputError(
            f"episode budget too small: B={B} < n(n+1)={n * (n + 1)} "
            "(two initial samples per sensor pair)"
        )

    beta = float(raw.get("beta", 1.0))
    if not 0.0 <= beta <= 1.0:
        raise InputError(f"penalty weight beta must lie in [0, 1], got {beta}")

    seed = _as_int(raw.get("seed", 0), "seed")

    return ProblemInstance(n=n, d=d, c=c, C=C, B=B, beta=beta, seed=seed)


def _as_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise InputError(f"field {name!r} must be an integer, got {value!r}")
    return int(value)


def apply_backups(d: DropoutVector, x: BackupConfig) -> DropoutVector:
    """Dropout probabilities after installing the backups selected by x.

    A backed-up sensor only fails when both copies fail, so its probability
    is squared; unselected sensors are unchanged.
    """
    if len(d) != len(x):
        raise InputError(f"length mismatch: len(d)={len(d)}, len(x)={len(x)}")
    return tuple(p * p if b else p for p, b in zip(d, x))


def config_cost(x: BackupConfig, c) -> int:
    """Total cost of the backups selected by x."""
    if len(x) != len(c):
        raise InputError(f"length mismatch: len(x)={len(x)}, len(c)={len(c)}")
    return sum(int(ci) for b, ci in zip(x, c) if b)


@dataclass(frozen=True)
class PairReturnTable:
    """Estimated returns for the no-dropout case and every sensor pair.

    ``r0`` is the return with all sensors alive. ``returns`` maps each
    ordered pair (i, j) with i <= j to the expected return when exactly
    that pair has dropped out; the diagonal (i, i) holds single-sensor
    dropout returns.
    """

    n: int
    r0: float
    returns: dict[tuple[int, int], float] = field(repr=False)

    def __post_init__(self):
        expected = {(i, j) for i in range(self.n) for j in range(i, self.n)}
        got = set(self.returns)
        if got != expected:
            raise InputError(
                f"pair table must cover exactly all i <= j pairs for n={self.n}; "
                f"missing={sorted(expected - got)[:3]} extra={sorted(got - expected)[:3]}"
            )

    def pair(self, i: int, j: int) -> float:
        """Return for the dropout pair {i, j}, order-insensitive."""
        if i > j:
            i, j = j, i
        return self.returns[(i, j)]

    def to_json_dict(self) -> dict:
        return {
            "r0": self.r0,
            "pairs": [
                {"i": i, "j": j, "r": self.returns[(i, j)]}
                for (i, j) in sorted(self.returns)
            ],
        }


def pair_table_from_json(raw: dict) -> PairReturnTable:
    """Parse the pair-table JSON format {"r0": float, "pairs": [{i,j,r}]}."""
    if not isinstance(raw, dict) or "r0" not in raw or "pairs" not in raw:
        raise InputError('pair table must be an object with "r0" and "pairs"')
    returns: dict[tuple[int, int], float] = {}
    n = 0
    for entry in raw["pairs"]:
        i, j = _as_int(entry["i"], "i"), _as_int(entry["j"], "j")
        if not 0 <= i <= j:
            raise InputError(f"pair indices must satisfy 0 <= i <= j, got ({i}, {j})")
        if (i, j) in returns:
            raise InputError(f"duplicate pair entry ({i}, {j})")
        returns[(i, j)] = float(entry["r"])
        n = max(n, j + 1)
    return PairReturnTable(n=n, r0=float(raw["r0"]), returns=returns)


def write_json_atomic(path: str, obj: dict) -> None:
    """Serialize obj to path, replacing any existing file atomically."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc


def load_instance(path: str) -> ProblemInstance:
    return validate_instance(load_json(path))


def save_instance(path: str, instance: ProblemInstance) -> None:
    write_json_atomic(path, instance.to_json_dict())


def load_pair_table(path: str) -> PairReturnTable:
    return pair_table_from_json(load_json(path))


def save_pair_table(path: str, table: PairReturnTable) -> None:
    write_json_atomic(path, table.to_json_dict())
