"""Command-line front end.

Commands: generate, optimize, landscape, compare-estimators, solve-qubo,
evaluate, and serve-oracle. Every file-writing command drops a
manifest.json beside its outputs recording the resolved configuration,
input/output checksums, master seed, and wall-clock duration, so runs
can be reproduced bit-exactly. Set SENSOROPT_LOG to control verbosity.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time

from . import __version__
from .estimator import (
    estimate_pairs_momentum,
    estimate_pairs_round_robin,
    pair_order,
)
from .model import (
    DomainError,
    InputError,
    PairReturnTable,
    ProblemInstance,
    SensorOptError,
    as_backup_config,
    config_cost,
    load_json,
    load_pair_table,
    validate_instance,
    write_json_atomic,
)
from .qubo import (
    approx_expected_return,
    build_qubo,
    qubo_from_coo,
    qubo_from_json,
)
from .seeding import substream
from .simenv import (
    EXTENSION_RULES,
    FIXTURES,
    SubprocessOracle,
    all_mask_returns,
    exact_expected_return,
    generate_instance,
    generate_model,
    load_model,
    make_oracle,
    monte_carlo_expected_return,
    named_fixture,
    serve_oracle,
)
from .solver import TabuParams, brute_force_qubo, optimize_backups, tabu_search

logger = logging.getLogger(__name__)

LANDSCAPE_LIMIT = 16  # 2**n configurations enumerated per landscape


def _configure_logging() -> None:
    level_name = os.environ.get("SENSOROPT_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(
    out_dir: str,
    command: str,
    config: dict,
    inputs: list[str],
    outputs: list[str],
    seed: int,
    started: float,
    stats: dict | None = None,
) -> str:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {path: _sha256(path) for path in inputs},
        "outputs": {path: _sha256(path) for path in outputs},
        "master_seed": seed,
        "duration_seconds": time.time() - started,
        "version": __version__,
    }
    if stats is not None:
        manifest["stats"] = stats
    path = os.path.join(out_dir, "manifest.json")
    write_json_atomic(path, manifest)
    return path


def _out_path(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _resolved_config(args) -> dict:
    skip = {"func"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(buffer.getvalue())
    os.replace(tmp, path)


def _fmt(value: float) -> str:
    return repr(float(value))


def _load_instance(args) -> ProblemInstance:
    raw = load_json(args.instance)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.beta is not None:
        raw["beta"] = args.beta
    if getattr(args, "cost_budget", None) is not None:
        raw["C"] = args.cost_budget
    if getattr(args, "episode_budget", None) is not None:
        raw["B"] = args.episode_budget
    return validate_instance(raw)


def _open_oracle(args, instance: ProblemInstance):
    if args.oracle_cmd:
        return SubprocessOracle(args.oracle_cmd, expected_n=instance.n)
    if not getattr(args, "model", None):
        raise InputError("either --model or --oracle-cmd is required")
    return make_oracle(load_model(args.model), instance.seed)


def _tabu_params(args, seed: int) -> TabuParams:
    return TabuParams(
        tenure=args.tabu_tenure,
        max_iters=args.tabu_iters,
        restarts=args.restarts,
        seed=seed,
    )


def _truth_table(model) -> PairReturnTable:
    returns = {
        (i, j): model.stored_return(i, j)
        for i in range(model.n)
        for j in range(i, model.n)
    }
    return PairReturnTable(n=model.n, r0=model.r0, returns=returns)


def _parse_config_bits(text: str, n: int):
    text = text.strip()
    if "," in text:
        bits = [part.strip() for part in text.split(",")]
    else:
        bits = list(text)
    try:
        config = as_backup_config(int(b) for b in bits)
    except ValueError:
        raise InputError(f"cannot parse configuration {text!r}") from None
    if len(config) != n:
        raise InputError(f"configuration has {len(config)} bits, instance has n={n}")
    return config


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------


def cmd_generate(args) -> int:
    started = time.time()
    seed = args.seed if args.seed is not None else 0
    if args.fixture:
        instance, model = named_fixture(args.fixture, seed=seed)
        if args.beta is not None:
            raw = instance.to_json_dict()
            raw["beta"] = args.beta
            instance = validate_instance(raw)
    else:
        if args.n is None:
            raise InputError("generate needs either --fixture or --n")
        noise_choices = None
        if args.noise_choices:
            try:
                noise_choices = tuple(float(v) for v in args.noise_choices.split(","))
            except ValueError:
                raise InputError(
                    f"cannot parse --noise-choices {args.noise_choices!r}"
                ) from None
        noise_sigma = 0.0 if args.zero_noise else args.noise
        if args.zero_noise:
            noise_choices = None
        model = generate_model(
            args.n,
            seed,
            r0_range=tuple(args.r0_range),
            deficit_range=tuple(args.deficit_range),
            interaction_scale=args.interaction,
            triple_scale=0.0 if args.pairwise_only else args.triples,
            noise_sigma=noise_sigma,
            noise_choices=noise_choices,
            extension=args.extension,
        )
        instance = generate_instance(
            args.n,
            seed,
            d_range=tuple(args.d_range),
            cost_range=tuple(int(v) for v in args.cost_range),
            budget_fraction=tuple(args.budget_fraction),
            cost_budget=args.cost_budget,
            episodes_per_pair=args.episodes_per_pair,
            beta=args.beta if args.beta is not None else 1.0,
        )
    instance_path = _out_path(args, "instance.json")
    model_path = _out_path(args, "model.json")
    write_json_atomic(instance_path, instance.to_json_dict())
    write_json_atomic(model_path, model.to_json_dict())
    _write_manifest(
        args.out, "generate", _resolved_config(args), [],
        [instance_path, model_path], seed, started,
    )
    print(f"wrote {instance_path} and {model_path}")
    return 0


def cmd_optimize(args) -> int:
    started = time.time()
    instance = _load_instance(args)
    oracle = _open_oracle(args, instance)
    trace = [] if args.trace else None
    try:
        result = optimize_backups(
            instance,
            oracle,
            _tabu_params(args, instance.seed),
            baseline_episodes=args.baseline_episodes,
            power_two_slack=args.paper_slack_encoding,
            trace=trace,
        )
    finally:
        if hasattr(oracle, "close"):
            oracle.close()

    solution_path = _out_path(args, "solution.json")
    table_path = _out_path(args, "pair_table.json")
    qubo_path = _out_path(args, "qubo.json")
    write_json_atomic(solution_path, result.solution.to_json_dict())
    write_json_atomic(table_path, result.table.to_json_dict())
    write_json_atomic(qubo_path, result.qubo.to_json_dict())
    outputs = [solution_path, table_path, qubo_path]
    if trace is not None:
        trace_path = _out_path(args, "trace.csv")
        _write_csv(
            trace_path,
            ["episode_index", "i", "j", "return", "running_mean"],
            [[e, i, j, _fmt(r), _fmt(mean)] for (e, i, j, r, mean) in trace],
        )
        outputs.append(trace_path)

    config = _resolved_config(args)
    config["instance"] = instance.to_json_dict()
    inputs = [args.instance] + ([args.model] if args.model else [])
    _write_manifest(args.out, "optimize", config, inputs, outputs, instance.seed, started)
    solution = result.solution
    bits = "".join(str(b) for b in solution.config)
    print(
        f"config={bits} cost={solution.cost} feasible={str(solution.feasible).lower()} "
        f"energy={solution.energy!r}"
    )
    return 0


def cmd_landscape(args) -> int:
    started = time.time()
    instance = _load_instance(args)
    model = load_model(args.model)
    if model.n != instance.n:
        raise InputError("model and instance sensor counts differ")
    if instance.n > LANDSCAPE_LIMIT:
        raise DomainError(
            f"landscape enumeration limited to n <= {LANDSCAPE_LIMIT}, got {instance.n}"
        )
    table = load_pair_table(args.table) if args.table else _truth_table(model)
    qubo = build_qubo(instance, table, power_two_slack=args.paper_slack_encoding)
    returns = all_mask_returns(model)

    rows = []
    for code in range(1 << instance.n):
        bits = tuple(code >> i & 1 for i in range(instance.n))
        cost = config_cost(bits, instance.c)
        rows.append(
            {
                "config": "".join(str(b) for b in bits),
                "cost": cost,
                "feasible": cost <= instance.C,
                "approx_return": approx_expected_return(instance, table, qubo, bits),
                "exact_return": exact_expected_return(
                    model, instance.d, bits, _returns=returns
                ),
                "code": code,
            }
        )
    rows.sort(key=lambda row: (-row["exact_return"], row["code"]))

    csv_path = _out_path(args, "landscape.csv")
    _write_csv(
        csv_path,
        ["config", "cost", "feasible", "approx_return", "exact_return"],
        [
            [
                row["config"],
                row["cost"],
                str(row["feasible"]).lower(),
                _fmt(row["approx_return"]),
                _fmt(row["exact_return"]),
            ]
            for row in rows
        ],
    )
    outputs = [csv_path]
    if not args.no_plot:
        from .plots import save_landscape_figure

        figure_path = _out_path(args, "landscape.png")
        save_landscape_figure(rows, figure_path)
        outputs.append(figure_path)

    from scipy.stats import spearmanr

    approx_col = [row["approx_return"] for row in rows]
    exact_col = [row["exact_return"] for row in rows]
    if len(set(approx_col)) == 1 or len(set(exact_col)) == 1:
        spearman = None  # rank correlation undefined for a constant column
    else:
        correlation = float(spearmanr(approx_col, exact_col).statistic)
        spearman = correlation if math.isfinite(correlation) else None

    inputs = [args.instance, args.model] + ([args.table] if args.table else [])
    _write_manifest(
        args.out, "landscape", _resolved_config(args), inputs, outputs,
        instance.seed, started, stats={"spearman": spearman},
    )
    print(f"wrote {csv_path} ({len(rows)} configurations, spearman={spearman})")
    return 0


def cmd_compare_estimators(args) -> int:
    started = time.time()
    instance = _load_instance(args)
    model = load_model(args.model)
    if model.n != instance.n:
        raise InputError("model and instance sensor counts differ")
    if args.seeds < 2:
        raise InputError(f"need at least 2 comparison seeds, got {args.seeds}")
    pairs = pair_order(instance.n)
    budget = args.episodes_per_pair * len(pairs)
    if args.episodes_per_pair < 2:
        raise InputError("need at least 2 episodes per pair for momentum estimation")

    run_seeds = substream(instance.seed, "compare-seeds").integers(
        0, 2**62, size=args.seeds
    )
    rows = []
    for index, run_seed in enumerate(run_seeds):
        run_seed = int(run_seed)
        momentum_table = estimate_pairs_momentum(
            make_oracle(model, run_seed), budget, r0=model.r0
        )
        rr_table = estimate_pairs_round_robin(
            make_oracle(model, run_seed), budget, r0=model.r0
        )
        momentum_mae = sum(
            abs(momentum_table.pair(i, j) - model.stored_return(i, j)) for i, j in pairs
        ) / len(pairs)
        rr_mae = sum(
            abs(rr_table.pair(i, j) - model.stored_return(i, j)) for i, j in pairs
        ) / len(pairs)
        rows.append(
            {
                "seed_index": index,
                "oracle_seed": run_seed,
                "momentum_mae": momentum_mae,
                "round_robin_mae": rr_mae,
            }
        )

    csv_path = _out_path(args, "compare.csv")
    _write_csv(
        csv_path,
        ["seed_index", "oracle_seed", "momentum_mae", "round_robin_mae"],
        [
            [row["seed_index"], row["oracle_seed"], _fmt(row["momentum_mae"]),
             _fmt(row["round_robin_mae"])]
            for row in rows
        ],
    )
    outputs = [csv_path]
    if not args.no_plot:
        from .plots import save_estimator_comparison_figure

        figure_path = _out_path(args, "compare.png")
        save_estimator_comparison_figure(rows, figure_path)
        outputs.append(figure_path)

    wins = sum(1 for row in rows if row["momentum_mae"] <= row["round_robin_mae"])
    stats = {
        "budget": budget,
        "momentum_mean_error": sum(r["momentum_mae"] for r in rows) / len(rows),
        "round_robin_mean_error": sum(r["round_robin_mae"] for r in rows) / len(rows),
        "momentum_win_rate": wins / len(rows),
        "seeds": args.seeds,
    }
    _write_manifest(
        args.out, "compare-estimators", _resolved_config(args),
        [args.instance, args.model], outputs, instance.seed, started, stats=stats,
    )
    print(
        f"momentum mean error {stats['momentum_mean_error']:.6g} vs round robin "
        f"{stats['round_robin_mean_error']:.6g}; momentum wins "
        f"{wins}/{len(rows)} seeds"
    )
    return 0


def cmd_solve_qubo(args) -> int:
    started = time.time()
    try:
        with open(args.qubo) as fh:
            text = fh.read()
    except UnicodeDecodeError as exc:
        raise InputError(f"{args.qubo}: not a text file: {exc}") from exc
    fmt = args.format
    if fmt == "auto":
        fmt = "json" if text.lstrip().startswith("{") else "coo"
    if fmt == "json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.qubo}: invalid JSON: {exc}") from exc
        qubo = qubo_from_json(raw)
    else:
        try:
            qubo = qubo_from_coo(text, n=args.n)
        except InputError as exc:
            raise InputError(f"{args.qubo}: {exc}") from exc

    costs = budget = None
    if args.instance:
        instance = validate_instance(load_json(args.instance))
        costs, budget = instance.c, instance.C
    seed = args.seed if args.seed is not None else 0
    if args.exact:
        result = brute_force_qubo(qubo, costs=costs, budget=budget)
    else:
        result = tabu_search(qubo, _tabu_params(args, seed), costs=costs, budget=budget)

    solution_path = _out_path(args, "solution.json")
    write_json_atomic(solution_path, result.to_json_dict())
    inputs = [args.qubo] + ([args.instance] if args.instance else [])
    _write_manifest(
        args.out, "solve-qubo", _resolved_config(args), inputs, [solution_path],
        seed, started,
    )
    print(f"energy={result.energy!r} assignment={''.join(str(b) for b in result.assignment)}")
    return 0


def cmd_evaluate(args) -> int:
    started = time.time()
    instance = _load_instance(args)
    model = load_model(args.model)
    if model.n != instance.n:
        raise InputError("model and instance sensor counts differ")
    config = _parse_config_bits(args.config, instance.n)
    cost = config_cost(config, instance.c)
    record = {
        "config": list(config),
        "cost": cost,
        "feasible": cost <= instance.C,
        "method": args.method,
    }
    if args.method == "exact":
        record["value"] = exact_expected_return(model, instance.d, config)
        record["stderr"] = None
        record["episodes"] = None
    else:
        mean, stderr = monte_carlo_expected_return(
            model, instance.d, config, args.episodes, instance.seed
        )
        record["value"] = mean
        record["stderr"] = stderr
        record["episodes"] = args.episodes

    eval_path = _out_path(args, "evaluation.json")
    write_json_atomic(eval_path, record)
    _write_manifest(
        args.out, "evaluate", _resolved_config(args), [args.instance, args.model],
        [eval_path], instance.seed, started,
    )
    print(f"value={record['value']!r} cost={cost} feasible={str(record['feasible']).lower()}")
    return 0


def cmd_serve_oracle(args) -> int:
    model = load_model(args.model)
    seed = args.seed if args.seed is not None else 0
    return serve_oracle(model, seed)


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------


def _add_range(parser, name, default, help_text, parser_type=float):
    parser.add_argument(
        name, nargs=2, type=parser_type, default=list(default),
        metavar=("LO", "HI"), help=help_text,
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="master seed (overrides the instance file)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--beta", type=float, default=None,
                        help="penalty trade-off weight in [0, 1]")
    common.add_argument("--tabu-tenure", type=int, default=None,
                        help="iterations a flipped bit stays tabu")
    common.add_argument("--tabu-iters", type=int, default=None,
                        help="iteration cap per restart")
    common.add_argument("--restarts", type=int, default=10,
                        help="independent tabu restarts")
    common.add_argument("--paper-slack-encoding", action="store_true",
                        help="use the plain power-of-two slack bit layout")
    common.add_argument("--oracle-cmd", default=None,
                        help="spawn this command as an external episode oracle "
                             "(line-delimited JSON protocol)")
    common.add_argument("--no-plot", action="store_true",
                        help="skip rendering report figures")

    parser = argparse.ArgumentParser(
        prog="sensoropt",
        description="Optimize backup-sensor configurations under a cost budget.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common],
                       help="write a random or built-in instance/model pair")
    p.add_argument("--fixture", choices=FIXTURES, default=None,
                   help="emit a built-in named instance")
    p.add_argument("--n", type=int, default=None, help="sensor count")
    _add_range(p, "--d-range", (0.05, 0.15), "dropout probability range")
    _add_range(p, "--cost-range", (1, 9), "integer backup cost range", parser_type=int)
    _add_range(p, "--budget-fraction", (0.3, 0.7),
               "cost budget as a fraction of total cost")
    p.add_argument("--cost-budget", type=int, default=None,
                   help="explicit cost budget (overrides --budget-fraction)")
    p.add_argument("--episodes-per-pair", type=int, default=10,
                   help="episode budget per sensor pair")
    _add_range(p, "--r0-range", (8.0, 12.0), "base return range")
    _add_range(p, "--deficit-range", (0.5, 6.0), "single-dropout deficit range")
    p.add_argument("--interaction", type=float, default=1.0,
                   help="pair interaction perturbation scale")
    p.add_argument("--triples", type=float, default=0.0,
                   help="third-order correction scale")
    p.add_argument("--noise", type=float, default=0.0, help="episode noise sigma")
    p.add_argument("--noise-choices", default=None,
                   help="comma-separated sigma set sampled per pair")
    p.add_argument("--zero-noise", action="store_true", help="force a noiseless model")
    p.add_argument("--pairwise-only", action="store_true",
                   help="omit third-order corrections")
    p.add_argument("--extension", choices=EXTENSION_RULES, default="additive-deficit",
                   help="valuation rule for dropout masks larger than two")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("optimize", parents=[common],
                       help="run the full estimate/build/solve pipeline")
    p.add_argument("--instance", required=True, help="instance JSON path")
    p.add_argument("--model", default=None, help="ground-truth model JSON path")
    p.add_argument("--baseline-episodes", type=int, default=10,
                   help="episodes for the no-dropout baseline")
    p.add_argument("--cost-budget", type=int, default=None, help="override C")
    p.add_argument("--episode-budget", type=int, default=None, help="override B")
    p.add_argument("--trace", action="store_true",
                   help="also write a per-episode trace.csv")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("landscape", parents=[common],
                       help="evaluate every configuration exactly and approximately")
    p.add_argument("--instance", required=True, help="instance JSON path")
    p.add_argument("--model", required=True, help="ground-truth model JSON path")
    p.add_argument("--table", default=None,
                   help="pair-return table JSON (default: model ground truth)")
    p.add_argument("--cost-budget", type=int, default=None, help="override C")
    p.add_argument("--episode-budget", type=int, default=None, help="override B")
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("compare-estimators", parents=[common],
                       help="momentum vs round-robin estimation error over seeds")
    p.add_argument("--instance", required=True, help="instance JSON path")
    p.add_argument("--model", required=True, help="ground-truth model JSON path")
    p.add_argument("--seeds", type=int, default=20, help="number of paired runs")
    p.add_argument("--episodes-per-pair", type=int, default=10,
                   help="episode budget per sensor pair")
    p.add_argument("--cost-budget", type=int, default=None, help="override C")
    p.add_argument("--episode-budget", type=int, default=None, help="override B")
    p.set_defaults(func=cmd_compare_estimators)

    p = sub.add_parser("solve-qubo", parents=[common],
                       help="solve a QUBO file (JSON or COO text)")
    p.add_argument("--qubo", required=True, help="QUBO file path")
    p.add_argument("--format", choices=("auto", "json", "coo"), default="auto")
    p.add_argument("--n", type=int, default=None,
                   help="sensor count for COO files (default: all variables)")
    p.add_argument("--exact", action="store_true",
                   help="solve by exhaustive enumeration instead of tabu search")
    p.add_argument("--instance", default=None,
                   help="instance JSON used to report cost/feasibility")
    p.set_defaults(func=cmd_solve_qubo)

    p = sub.add_parser("evaluate", parents=[common],
                       help="evaluate one configuration exactly or by Monte Carlo")
    p.add_argument("--instance", required=True, help="instance JSON path")
    p.add_argument("--model", required=True, help="ground-truth model JSON path")
    p.add_argument("--config", required=True,
                   help="configuration bits, e.g. 01011 or 0,1,0,1,1")
    p.add_argument("--method", choices=("exact", "mc"), default="exact")
    p.add_argument("--episodes", type=int, default=100,
                   help="episodes for the Monte Carlo method")
    p.add_argument("--cost-budget", type=int, default=None, help="override C")
    p.add_argument("--episode-budget", type=int, default=None, help="override B")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve-oracle", parents=[common],
                       help="serve a model-backed oracle over stdio "
                            "(line-delimited JSON protocol)")
    p.add_argument("--model", required=True, help="ground-truth model JSON path")
    p.set_defaults(func=cmd_serve_oracle)

    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SensorOptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 1


if __name__ == "__main__":
    sys.exit(main())
