import numpy as np
import pytest

from sensoropt.model import DomainError, InputError, validate_instance
from sensoropt.qubo import QuboMatrix, build_qubo, hamiltonian
from sensoropt.simenv import (
    GroundTruthModel,
    brute_force_best_config,
    generate_instance,
    generate_model,
    knapsack_dp,
    knapsack_to_instance,
    make_oracle,
)
from sensoropt.simenv import KnapsackInstance
from sensoropt.solver import (
    SolveResult,
    TabuParams,
    brute_force_qubo,
    decode,
    optimize_backups,
    tabu_search,
)


def random_qubo(rng, m):
    coeffs = {(i, j): float(rng.normal()) for i in range(m) for j in range(i, m)}
    return QuboMatrix(m=m, n=m, coefficients=coeffs, constant=float(rng.normal()),
                      slack_coeffs=())


class TestTabuSearch:
    def test_all_zero_matrix_returns_all_zeros(self):
        qubo = QuboMatrix(
            m=6, n=6,
            coefficients={(i, j): 0.0 for i in range(6) for j in range(i, 6)},
            constant=2.5, slack_coeffs=(),
        )
        result = tabu_search(qubo, TabuParams(seed=3))
        assert result.assignment == (0,) * 6
        assert result.energy == 2.5

    def test_single_variable(self):
        qubo = QuboMatrix(m=1, n=1, coefficients={(0, 0): -5.0}, constant=0.0,
                          slack_coeffs=())
        result = tabu_search(qubo, TabuParams(seed=0))
        assert result.assignment == (1,)
        assert result.energy == -5.0

    def test_matches_brute_force_on_demo_qubos(self, demo, demo_table):
        inst, _ = demo
        qubo = build_qubo(inst, demo_table)
        reference = brute_force_qubo(qubo)
        for seed in range(10):
            result = tabu_search(qubo, TabuParams(seed=seed))
            assert result.energy == reference.energy

    def test_deterministic(self, demo, demo_table):
        inst, _ = demo
        qubo = build_qubo(inst, demo_table)
        a = tabu_search(qubo, TabuParams(seed=5), costs=inst.c, budget=inst.C)
        b = tabu_search(qubo, TabuParams(seed=5), costs=inst.c, budget=inst.C)
        assert a == b

    def test_monotone_in_restarts(self):
        rng = np.random.default_rng(12)
        qubo = random_qubo(rng, 12)
        energies = [
            tabu_search(qubo, TabuParams(seed=4, restarts=r)).energy
            for r in range(1, 8)
        ]
        assert all(b <= a for a, b in zip(energies, energies[1:]))

    def test_energy_matches_hamiltonian(self):
        rng = np.random.default_rng(8)
        qubo = random_qubo(rng, 9)
        result = tabu_search(qubo, TabuParams(seed=1))
        assert result.energy == hamiltonian(qubo, result.assignment)

    def test_invalid_params_rejected(self):
        with pytest.raises(InputError):
            TabuParams(tenure=0)
        with pytest.raises(InputError):
            TabuParams(restarts=0)
        with pytest.raises(InputError):
            TabuParams(max_iters=0)


class TestBruteForceQubo:
    def test_all_zero_matrix_tie_rule(self):
        qubo = QuboMatrix(
            m=4, n=4,
            coefficients={(i, j): 0.0 for i in range(4) for j in range(i, 4)},
            constant=0.0, slack_coeffs=(),
        )
        assert brute_force_qubo(qubo).assignment == (0, 0, 0, 0)

    def test_negative_diagonal_selects_everything(self):
        m = 5
        qubo = QuboMatrix(
            m=m, n=m, coefficients={(i, i): -1.0 for i in range(m)},
            constant=0.25, slack_coeffs=(),
        )
        result = brute_force_qubo(qubo)
        assert result.assignment == (1,) * m
        assert result.energy == -m + 0.25

    def test_never_beaten_by_random_probes(self):
        rng = np.random.default_rng(77)
        qubo = random_qubo(rng, 12)
        best = brute_force_qubo(qubo)
        for _ in range(1000):
            probe = tuple(int(b) for b in rng.integers(0, 2, 12))
            assert best.energy <= hamiltonian(qubo, probe) + 1e-12

    def test_enumeration_guard(self):
        qubo = QuboMatrix(m=27, n=27, coefficients={}, constant=0.0,
                          slack_coeffs=())
        with pytest.raises(DomainError, match="m <= 26"):
            brute_force_qubo(qubo)

    def test_energy_matches_hamiltonian(self):
        rng = np.random.default_rng(13)
        qubo = random_qubo(rng, 10)
        result = brute_force_qubo(qubo)
        assert result.energy == hamiltonian(qubo, result.assignment)


class TestDecode:
    def test_strips_slack_bits(self):
        assert decode([1, 0, 1, 1, 0, 0], 3) == (1, 0, 1)

    def test_all_zeros(self):
        assert decode([0] * 9, 5) == (0,) * 5

    def test_too_short(self):
        with pytest.raises(InputError):
            decode([1, 0], 3)

    def test_demo_solution_decodes_to_exact_optimum(self, demo, demo_table):
        inst, model = demo
        qubo = build_qubo(inst, demo_table)
        result = tabu_search(qubo, TabuParams(seed=0), costs=inst.c, budget=inst.C)
        assert decode(result.assignment, inst.n) == brute_force_best_config(model, inst)


class TestSolveResult:
    def test_json_dict_schema(self):
        result = SolveResult(assignment=(1, 0, 1), energy=-2.0, config=(1, 0),
                             feasible=True, cost=3)
        record = result.to_json_dict()
        assert record == {
            "config": [1, 0],
            "cost": 3,
            "feasible": True,
            "energy": -2.0,
            "assignment": [1, 0, 1],
        }


class TestPipeline:
    def test_noiseless_demo_matches_exact_optimum(self, demo):
        inst, model = demo
        out = optimize_backups(inst, make_oracle(model, inst.seed))
        assert out.solution.config == brute_force_best_config(model, inst)
        assert out.solution.feasible
        assert out.solution.cost == 18

    def test_zero_dropout_returns_no_backups(self):
        inst = validate_instance(
            {"n": 4, "d": [0, 0, 0, 0], "c": [4, 5, 3, 2], "C": 9, "B": 40,
             "beta": 1.0, "seed": 3}
        )
        model = GroundTruthModel(
            n=4, r0=7.0, singles=(6.0, 5.0, 4.0, 3.0),
            pairs={(i, j): 3.0 for i in range(4) for j in range(i + 1, 4)},
        )
        out = optimize_backups(inst, make_oracle(model, 3))
        assert out.solution.config == (0, 0, 0, 0)
        assert out.solution.cost == 0 and out.solution.feasible
        assert out.qubo.degenerate

    def test_knapsack_reduction_matches_dynamic_program(self):
        kp = KnapsackInstance(
            n_items=10,
            values=(6.0, 10.0, 12.0, 7.0, 3.0, 9.0, 5.0, 11.0, 4.0, 8.0),
            costs=(1, 2, 3, 2, 1, 3, 2, 4, 1, 3),
            capacity=9,
        )
        dp_value, _ = knapsack_dp(kp)
        inst, model = knapsack_to_instance(kp)
        out = optimize_backups(inst, make_oracle(model, inst.seed))
        value = sum(v for v, b in zip(kp.values, out.solution.config) if b)
        assert value == dp_value
        assert out.solution.cost <= kp.capacity

    def test_oracle_sensor_count_mismatch(self, demo):
        inst, _ = demo
        other = generate_model(3, seed=1)
        with pytest.raises(InputError, match="oracle has n=3"):
            optimize_backups(inst, make_oracle(other, 0))

    def test_pipeline_deterministic(self, demo):
        inst, model = demo
        a = optimize_backups(inst, make_oracle(model, 4), TabuParams(seed=4))
        b = optimize_backups(inst, make_oracle(model, 4), TabuParams(seed=4))
        assert a.solution == b.solution
        assert a.table == b.table

    def test_solution_invariants_on_random_instances(self):
        for k in range(5):
            n = 4 + k % 3
            model = generate_model(n, seed=300 + k)
            inst = generate_instance(n, seed=300 + k)
            out = optimize_backups(inst, make_oracle(model, inst.seed))
            sol = out.solution
            assert sol.energy == hamiltonian(out.qubo, sol.assignment)
            assert sol.config == sol.assignment[: inst.n]
            assert sol.feasible == (sol.cost <= inst.C)
            assert sol.feasible  # unit trade-off weight dominates the budget
