"""Synthetic environments and verification oracles.

A ground-truth model assigns a deterministic return to every dropout
subset; episode oracles add optional Gaussian noise on top. Exact and
Monte-Carlo evaluators, a brute-force configuration optimizer, a
knapsack reduction with an independent dynamic-programming oracle, and
seeded instance/model generators provide the machinery against which
the approximation pipeline is checked.
"""

from __future__ import annotations

import itertools
import json
import math
import os
import select
import shlex
import subprocess
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .model import (
    BackupConfig,
    DomainError,
    DropoutVector,
    InputError,
    ProblemInstance,
    apply_backups,
    as_backup_config,
    as_dropout_vector,
    config_cost,
    load_json,
    validate_instance,
    write_json_atomic,
)
from .seeding import substream

EXTENSION_RULES = ("additive-deficit", "min-pair", "clipped")

ENUMERATION_LIMIT = 20  # 2**n masks; guard for exact evaluators


@dataclass(frozen=True)
class GroundTruthModel:
    """Deterministic return surface over dropout subsets.

    Stores the no-dropout return, single-dropout returns, and pair
    returns directly; larger masks are valued by the extension rule.
    ``triples`` holds optional third-order deficit corrections.
    ``pair_noise`` overrides the episode noise scale for specific
    single/pair masks (keys (i, j) with i <= j).
    """

    n: int
    r0: float
    singles: tuple[float, ...]
    pairs: dict[tuple[int, int], float] = field(repr=False)
    triples: dict[tuple[int, int, int], float] = field(default_factory=dict, repr=False)
    noise_sigma: float = 0.0
    pair_noise: dict[tuple[int, int], float] = field(default_factory=dict, repr=False)
    extension: str = "additive-deficit"

    def __post_init__(self):
        if len(self.singles) != self.n:
            raise InputError(
                f"model has {len(self.singles)} single returns for n={self.n}"
            )
        expected = {(i, j) for i in range(self.n) for j in range(i + 1, self.n)}
        if set(self.pairs) != expected:
            raise InputError("model pair returns must cover exactly all i < j pairs")
        if self.extension not in EXTENSION_RULES:
            raise InputError(
                f"unknown extension rule {self.extension!r}; "
                f"choose one of {', '.join(EXTENSION_RULES)}"
            )
        if self.noise_sigma < 0:
            raise InputError("noise_sigma must be non-negative")

    def stored_return(self, i: int, j: int) -> float:
        """Pair return for i != j, single-dropout return for i == j."""
        if i == j:
            return self.singles[i]
        return self.pairs[(min(i, j), max(i, j))]

    def to_json_dict(self) -> dict:
        out = {
            "n": self.n,
            "r0": self.r0,
            "singles": list(self.singles),
            "pairs": [
                {"i": i, "j": j, "r": self.pairs[(i, j)]} for (i, j) in sorted(self.pairs)
            ],
            "noise_sigma": self.noise_sigma,
            "extension": self.extension,
        }
        if self.triples:
            out["triples"] = [
                {"i": i, "j": j, "k": k, "delta": v}
                for (i, j, k), v in sorted(self.triples.items())
            ]
        if self.pair_noise:
            out["pair_noise"] = [
                {"i": i, "j": j, "sigma": v} for (i, j), v in sorted(self.pair_noise.items())
            ]
        return out


def model_from_json(raw: dict) -> GroundTruthModel:
    for key in ("n", "r0", "singles", "pairs"):
        if key not in raw:
            raise InputError(f"model JSON missing field {key!r}")
    pairs = {}
    for entry in raw["pairs"]:
        i, j = int(entry["i"]), int(entry["j"])
        pairs[(i, j)] = float(entry["r"])
    triples = {}
    for entry in raw.get("triples") or []:
        key = (int(entry["i"]), int(entry["j"]), int(entry["k"]))
        triples[key] = float(entry["delta"])
    pair_noise = {}
    for entry in raw.get("pair_noise") or []:
        pair_noise[(int(entry["i"]), int(entry["j"]))] = float(entry["sigma"])
    return GroundTruthModel(
        n=int(raw["n"]),
        r0=float(raw["r0"]),
        singles=tuple(float(v) for v in raw["singles"]),
        pairs=pairs,
        triples=triples,
        noise_sigma=float(raw.get("noise_sigma", 0.0)),
        pair_noise=pair_noise,
        extension=raw.get("extension", "additive-deficit"),
    )


def load_model(path: str) -> GroundTruthModel:
    return model_from_json(load_json(path))


def save_model(path: str, model: GroundTruthModel) -> None:
    write_json_atomic(path, model.to_json_dict())


def _normalize_mask(model: GroundTruthModel, mask) -> tuple[int, ...]:
    indices = tuple(sorted(set(int(i) for i in mask)))
    for i in indices:
        if not 0 <= i < model.n:
            raise InputError(f"dropout index out of range: {i}")
    return indices


def model_return(model: GroundTruthModel, mask) -> float:
    """Deterministic return for a dropout subset.

    Masks of size <= 2 return the stored table values exactly under
    every extension rule; larger masks are valued by the configured rule:

    - additive-deficit: subtract each member's single deficit and each
      inner pair's interaction deficit from the base return, plus any
      stored triple corrections.
    - min-pair: the worst stored return among inner pairs.
    - clipped: additive-deficit clamped to the range of stored returns.
    """
    mask = _normalize_mask(model, mask)
    if len(mask) == 0:
        return model.r0
    if len(mask) == 1:
        return model.singles[mask[0]]
    if len(mask) == 2:
        return model.pairs[mask]

    if model.extension == "min-pair":
        return min(model.pairs[p] for p in itertools.combinations(mask, 2))

    value = _additive_deficit_return(model, mask)
    if model.extension == "clipped":
        stored = [model.r0, *model.singles, *model.pairs.values()]
        value = min(max(value, min(stored)), max(stored))
    return value


def _additive_deficit_return(model: GroundTruthModel, mask: tuple[int, ...]) -> float:
    deficit = 0.0
    for i in mask:
        deficit += model.r0 - model.singles[i]
    for i, j in itertools.combinations(mask, 2):
        pair_deficit = model.r0 - model.pairs[(i, j)]
        single_part = (model.r0 - model.singles[i]) + (model.r0 - model.singles[j])
        deficit += pair_deficit - single_part
    for key, correction in sorted(model.triples.items()):
        if set(key) <= set(mask):
            deficit += correction
    return model.r0 - deficit


class ModelOracle:
    """Episode oracle backed by a ground-truth model.

    Each call returns the model's deterministic return for the dropout
    mask plus Gaussian noise at the mask's scale. Draws come from a
    dedicated stream, so two oracles built with the same seed produce
    identical sample sequences.
    """

    def __init__(self, model: GroundTruthModel, seed: int):
        self.model = model
        self.n = model.n
        self.seed = seed
        self._rng = substream(seed, "episode-oracle")

    def _sigma(self, mask: tuple[int, ...]) -> float:
        if len(mask) == 1:
            return self.model.pair_noise.get((mask[0], mask[0]), self.model.noise_sigma)
        if len(mask) == 2:
            return self.model.pair_noise.get(mask, self.model.noise_sigma)
        return self.model.noise_sigma

    def sample(self, dropout) -> float:
        mask = _normalize_mask(self.model, dropout)
        value = model_return(self.model, mask)
        sigma = self._sigma(mask)
        if sigma > 0.0:
            value += sigma * self._rng.standard_normal()
        return value


def make_oracle(model: GroundTruthModel, seed: int) -> ModelOracle:
    """Construct a seeded episode oracle for a ground-truth model."""
    return ModelOracle(model, seed)


def all_mask_returns(model: GroundTruthModel) -> np.ndarray:
    """Returns for every dropout subset, indexed by bitmask (bit i set
    means sensor i dropped)."""
    if model.n > ENUMERATION_LIMIT:
        raise DomainError(
            f"mask enumeration limited to n <= {ENUMERATION_LIMIT}, got {model.n}"
        )
    out = np.empty(1 << model.n)
    for idx in range(1 << model.n):
        mask = tuple(i for i in range(model.n) if idx >> i & 1)
        out[idx] = model_return(model, mask)
    return out


def mask_probabilities(d: DropoutVector) -> np.ndarray:
    """Probability of every dropout bitmask under independent dropouts."""
    probs = np.ones(1)
    for p in d:
        probs = np.concatenate([probs * (1.0 - p), probs * p])
    return probs


def exact_expected_return(
    model: GroundTruthModel,
    d: DropoutVector,
    x: BackupConfig,
    _returns: np.ndarray | None = None,
) -> float:
    """Exact expected return of config x by full mask enumeration.

    Dropouts are decided independently per sensor at episode start; the
    expectation sums all 2**n masks. Guarded to n <= 20.
    """
    d = as_dropout_vector(d)
    x = as_backup_config(x)
    if len(d) != model.n or len(x) != model.n:
        raise InputError("dropout vector and config must match the model's sensor count")
    effective = apply_backups(d, x)
    returns = all_mask_returns(model) if _returns is None else _returns
    return float(mask_probabilities(effective) @ returns)


def monte_carlo_expected_return(
    model: GroundTruthModel,
    d: DropoutVector,
    x: BackupConfig,
    episodes: int,
    seed: int,
) -> tuple[float, float]:
    """Monte-Carlo estimate of the expected return of config x.

    Samples a dropout mask per episode, queries a seeded oracle, and
    returns the sample mean and its standard error (0.0 for a single
    episode, where the error is undefined).
    """
    if episodes < 1:
        raise InputError(f"episode count must be positive, got {episodes}")
    d = as_dropout_vector(d)
    x = as_backup_config(x)
    effective = np.array(apply_backups(d, x))
    mask_rng = substream(seed, "mc-masks")
    oracle = make_oracle(model, seed)
    draws = np.empty(episodes)
    for e in range(episodes):
        mask = np.flatnonzero(mask_rng.random(model.n) < effective)
        draws[e] = oracle.sample(mask.tolist())
    mean = float(draws.mean())
    if episodes == 1:
        return mean, 0.0
    stderr = float(draws.std(ddof=1) / math.sqrt(episodes))
    return mean, stderr


def brute_force_best_config(
    model: GroundTruthModel, instance: ProblemInstance
) -> BackupConfig:
    """Exact best affordable config by enumerating all 2**n candidates.

    Maximizes the exact expected return; ties prefer lower cost, then
    the lower config integer (bit i weighted 2**i).
    """
    if model.n != instance.n:
        raise InputError("model and instance sensor counts differ")
    if instance.n > ENUMERATION_LIMIT:
        raise DomainError(
            f"config enumeration limited to n <= {ENUMERATION_LIMIT}, got {instance.n}"
        )
    returns = all_mask_returns(model)
    best_bits = None
    best_value = -math.inf
    best_cost = 0
    for code in range(1 << instance.n):
        bits = tuple(code >> i & 1 for i in range(instance.n))
        cost = config_cost(bits, instance.c)
        if cost > instance.C:
            continue
        value = exact_expected_return(model, instance.d, bits, _returns=returns)
        if value > best_value or (value == best_value and cost < best_cost):
            best_bits, best_value, best_cost = bits, value, cost
    return best_bits


@dataclass(frozen=True)
class KnapsackInstance:
    """Classic 0/1 knapsack: values, integer costs, and a capacity."""

    n_items: int
    values: tuple[float, ...]
    costs: tuple[int, ...]
    capacity: int

    def __post_init__(self):
        if len(self.values) != self.n_items or len(self.costs) != self.n_items:
            raise InputError("knapsack value/cost lengths must equal n_items")
        if any(v <= 0 for v in self.values) or any(c < 1 for c in self.costs):
            raise InputError("knapsack values and costs must be positive")
        if self.capacity < 1:
            raise InputError("knapsack capacity must be positive")


def knapsack_dp(kp: KnapsackInstance) -> tuple[float, tuple[int, ...]]:
    """Exact knapsack optimum by the classic O(n * capacity) table.

    Returns the optimal value and a selected item tuple; when taking or
    skipping an item ties, the backtrack skips it.
    """
    if kp.n_items * kp.capacity > 50_000_000:
        raise DomainError("knapsack table too large for the dynamic program")
    n, cap = kp.n_items, kp.capacity
    table = [[0.0] * (cap + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost, value = kp.costs[i - 1], kp.values[i - 1]
        prev = table[i - 1]
        row = table[i]
        for w in range(cap + 1):
            row[w] = prev[w]
            if cost <= w and prev[w - cost] + value > row[w]:
                row[w] = prev[w - cost] + value
    chosen = []
    w = cap
    for i in range(n, 0, -1):
        if table[i][w] != table[i - 1][w]:
            chosen.append(i - 1)
            w -= kp.costs[i - 1]
    return table[n][cap], tuple(reversed(chosen))


KNAPSACK_DROPOUT = 1e-6  # per-sensor dropout in the reduction construction


def knapsack_to_instance(
    kp: KnapsackInstance,
    *,
    seed: int = 0,
    episodes_per_pair: int = 10,
) -> tuple[ProblemInstance, GroundTruthModel]:
    """Encode a knapsack as a backup-selection instance.

    Builds a purely additive model whose return drops by an item's value
    whenever its sensor is out, with a tiny uniform dropout probability.
    Backing up sensor i then raises the exact expected return by a term
    proportional to values[i], with pair interactions smaller by the
    dropout factor, so the affordable-config argmax matches the knapsack
    argmax and the optimal selection value is preserved.
    """
    n = kp.n_items
    eps = KNAPSACK_DROPOUT
    singles = tuple(-float(v) for v in kp.values)
    pairs = {
        (i, j): -float(kp.values[i]) - float(kp.values[j])
        for i in range(n)
        for j in range(i + 1, n)
    }
    model = GroundTruthModel(n=n, r0=0.0, singles=singles, pairs=pairs)
    pair_count = n * (n + 1) // 2
    instance = validate_instance(
        {
            "n": n,
            "d": [eps] * n,
            "c": list(kp.costs),
            "C": kp.capacity,
            "B": max(episodes_per_pair * pair_count, n * (n + 1)),
            "beta": 1.0,
            "seed": seed,
        }
    )
    return instance, model


def generate_model(
    n: int,
    seed: int,
    *,
    r0_range: tuple[float, float] = (8.0, 12.0),
    deficit_range: tuple[float, float] = (0.5, 6.0),
    interaction_scale: float = 1.0,
    triple_scale: float = 0.0,
    noise_sigma: float = 0.0,
    noise_choices: tuple[float, ...] | None = None,
    extension: str = "additive-deficit",
) -> GroundTruthModel:
    """Draw a random ground-truth model, deterministic per seed.

    Single-dropout returns sit one deficit below the base return; pair
    returns add a symmetric interaction perturbation. With both scales
    zero the model is constant. ``noise_choices`` assigns each single or
    pair mask an episode noise scale drawn from the given set.
    """
    if n < 1:
        raise InputError(f"sensor count must be positive, got {n}")
    rng = substream(seed, "model-gen")
    r0 = float(rng.uniform(*r0_range))
    deficits = rng.uniform(deficit_range[0], deficit_range[1], size=n)
    singles = tuple(float(r0 - deficits[i]) for i in range(n))
    pairs = {}
    for i in range(n):
        for j in range(i + 1, n):
            interaction = float(rng.uniform(-interaction_scale, interaction_scale))
            pairs[(i, j)] = float(r0 - deficits[i] - deficits[j] - interaction)
    triples = {}
    if triple_scale > 0.0:
        for key in itertools.combinations(range(n), 3):
            triples[key] = float(rng.uniform(-triple_scale, triple_scale))
    pair_noise = {}
    if noise_choices:
        choices = np.array(noise_choices, dtype=float)
        for i in range(n):
            for j in range(i, n):
                pair_noise[(i, j)] = float(rng.choice(choices))
    return GroundTruthModel(
        n=n,
        r0=r0,
        singles=singles,
        pairs=pairs,
        triples=triples,
        noise_sigma=noise_sigma,
        pair_noise=pair_noise,
        extension=extension,
    )


def generate_instance(
    n: int,
    seed: int,
    *,
    d_range: tuple[float, float] = (0.05, 0.15),
    cost_range: tuple[int, int] = (1, 9),
    budget_fraction: tuple[float, float] = (0.3, 0.7),
    cost_budget: int | None = None,
    episodes_per_pair: int = 10,
    beta: float = 1.0,
) -> ProblemInstance:
    """Draw a random problem instance, deterministic per seed.

    Costs are integers from ``cost_range``; unless an explicit budget is
    given, one is drawn as a fraction of the total cost so the budget
    binds without being trivially empty.
    """
    if n < 1:
        raise InputError(f"sensor count must be positive, got {n}")
    rng = substream(seed, "instance-gen")
    d = [float(rng.uniform(*d_range)) for _ in range(n)]
    c = [int(rng.integers(cost_range[0], cost_range[1] + 1)) for _ in range(n)]
    if cost_budget is None:
        fraction = float(rng.uniform(*budget_fraction))
        cost_budget = max(1, round(fraction * sum(c)))
    pair_count = n * (n + 1) // 2
    return validate_instance(
        {
            "n": n,
            "d": d,
            "c": c,
            "C": int(cost_budget),
            "B": max(episodes_per_pair * pair_count, n * (n + 1)),
            "beta": beta,
            "seed": seed,
        }
    )


# Proof-of-concept demo instance: five sensors, a non-binding budget, and
# a fully specified pair-return surface.
_DEMO_PAIRS = {
    (0, 0): 9.0, (0, 1): 4.0, (0, 2): 1.0, (0, 3): 4.0, (0, 4): 5.0,
    (1, 1): 9.0, (1, 2): 3.0, (1, 3): 5.0, (1, 4): 3.0,
    (2, 2): 7.0, (2, 3): 3.0, (2, 4): 2.0,
    (3, 3): 8.0, (3, 4): 4.0,
    (4, 4): 8.0,
}

FIXTURES = ("table1",)


def named_fixture(name: str, seed: int = 0) -> tuple[ProblemInstance, GroundTruthModel]:
    """Built-in named fixtures; ``table1`` is the five-sensor demo."""
    if name != "table1":
        raise InputError(f"unknown fixture {name!r}; available: {', '.join(FIXTURES)}")
    instance = validate_instance(
        {
            "n": 5,
            "d": [0.09, 0.08, 0.1, 0.085, 0.095],
            "c": [4, 5, 3, 4, 2],
            "C": 390,
            "B": 150,
            "beta": 1.0,
            "seed": seed,
        }
    )
    singles = tuple(_DEMO_PAIRS[(i, i)] for i in range(5))
    pairs = {(i, j): _DEMO_PAIRS[(i, j)] for i in range(5) for j in range(i + 1, 5)}
    model = GroundTruthModel(n=5, r0=10.0, singles=singles, pairs=pairs)
    return instance, model


class OracleProtocolError(InputError):
    """External oracle session violated the line-delimited JSON protocol."""


class SubprocessOracle:
    """Episode oracle speaking the line-delimited JSON protocol.

    The child process sends a handshake line {"n": int}; each request
    {"dropout": [indices]} is answered by {"return": float}. Timeouts
    and malformed lines terminate the session.
    """

    def __init__(self, command: str | list[str], *, expected_n: int | None = None,
                 timeout: float = 30.0):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self._buffer = b""
        self._proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE
        )
        handshake = self._read_message()
        if "n" not in handshake or not isinstance(handshake["n"], int):
            self._fail(f"invalid handshake: {handshake!r}")
        self.n = handshake["n"]
        if expected_n is not None and self.n != expected_n:
            self._fail(f"oracle reports n={self.n}, expected n={expected_n}")

    def _fail(self, message: str):
        self.close()
        raise OracleProtocolError(f"external oracle: {message}")

    def _read_message(self) -> dict:
        deadline = time.monotonic() + self.timeout
        stdout = self._proc.stdout
        while b"\n" not in self._buffer:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self._fail("timed out waiting for a response line")
            ready, _, _ = select.select([stdout], [], [], remaining)
            if not ready:
                self._fail("timed out waiting for a response line")
            chunk = os.read(stdout.fileno(), 65536)
            if not chunk:
                self._fail("stream closed mid-session")
            self._buffer += chunk
        line, _, self._buffer = self._buffer.partition(b"\n")
        try:
            message = json.loads(line)
        except json.JSONDecodeError:
            self._fail(f"malformed line: {line!r}")
        if not isinstance(message, dict):
            self._fail(f"expected a JSON object, got: {line!r}")
        return message

    def sample(self, dropout) -> float:
        request = json.dumps({"dropout": sorted(int(i) for i in set(dropout))})
        try:
            self._proc.stdin.write(request.encode() + b"\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError):
            self._fail("stream closed mid-session")
        message = self._read_message()
        if "return" not in message or not isinstance(message["return"], (int, float)):
            self._fail(f"invalid response: {message!r}")
        return float(message["return"])

    def close(self):
        proc = self.__dict__.get("_proc")
        if proc is None or proc.poll() is not None:
            return
        for stream in (proc.stdin, proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        proc.terminate()
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_oracle(model: GroundTruthModel, seed: int, stdin=None, stdout=None) -> int:
    """Serve a model-backed oracle over the line-delimited JSON protocol.

    Reads requests from stdin until EOF; a malformed line terminates the
    session with a nonzero status.
    """
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    oracle = make_oracle(model, seed)
    stdout.write(json.dumps({"n": model.n}) + "\n")
    stdout.flush()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            dropout = request["dropout"]
            value = oracle.sample(dropout)
        except (json.JSONDecodeError, KeyError, TypeError, InputError):
            sys.stderr.write(f"malformed oracle request: {line!r}\n")
            return 2
        stdout.write(json.dumps({"return": value}) + "\n")
        stdout.flush()
    return 0
