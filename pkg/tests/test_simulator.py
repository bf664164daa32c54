from __future__ import annotations

import csv
import io
import math

import numpy as np
import pytest

from superclt.errors import ConfigurationError, EnsembleResourceError, InputError, ResourceError
from superclt.moments import mean_functional, particle_variance_correction, survival_probability, variance_functional
from superclt.simulator import (
    SimPlan,
    advance_to,
    init,
    jump_count,
    measure,
    minimal_scale,
    offspring_probability,
    ou_step,
    replica_rng,
    replica_rows,
    run_ensemble,
    run_replica,
    write_replica_csv,
)
from superclt.spectral import SpectralFunction, SuperOUConfig

CFG0 = SuperOUConfig()
phi = SpectralFunction.level
FUNCS = {"f3": phi(3), "h2": phi(2)}


def within(sample, target, se, k=4.0):
    return abs(np.mean(sample) - target) <= k * se


# --- init -------------------------------------------------------------------------


def test_init_examples():
    state = init(SimPlan(scale_n=100), CFG0)
    assert state.count == 100 and state.mass_unit == 0.01 and np.all(state.positions == 0)
    empty = init(SimPlan(scale_n=100, initial_measure=(((0.0,), 0.0),)), CFG0)
    assert empty.extinct and empty.total_mass == 0
    assert offspring_probability(SimPlan(scale_n=100), CFG0) == pytest.approx(0.505)


def test_init_multiple_atoms_round():
    plan = SimPlan(scale_n=10, initial_measure=(((0.0,), 0.26), ((1.5,), 1.0)))
    state = init(plan, CFG0)
    assert state.count == 3 + 10
    assert np.sum(state.positions[:, 0] == 1.5) == 10


def test_init_names_minimal_scale():
    cfg = SuperOUConfig(branch_a=10.0)
    assert minimal_scale(cfg) == 5
    with pytest.raises(ConfigurationError, match="at least 5"):
        init(SimPlan(scale_n=2), cfg)
    init(SimPlan(scale_n=5), cfg)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"scale_n": 0},
        {"scale_n": 10, "checkpoints": (1.0, 0.5)},
        {"scale_n": 10, "checkpoints": (1.0,), "horizon_t": 0.5},
        {"scale_n": 10, "replicas": 0},
        {"scale_n": 10, "method": "euler"},
        {"scale_n": 10, "initial_measure": (((0.0,), -1.0),)},
    ],
)
def test_plan_validation(kwargs):
    with pytest.raises(ConfigurationError):
        SimPlan(**kwargs)


# --- motion -----------------------------------------------------------------------


def test_ou_step_exact_moments():
    rng = replica_rng(1, 0)
    x = np.ones((200_000, 1))
    y = ou_step(x, math.log(2), rng, CFG0)[:, 0]
    assert abs(y.mean() - 0.5) < 4 * math.sqrt(0.75 / len(y))
    assert abs(y.var() - 0.75) < 4 * 0.75 * math.sqrt(2 / len(y))


def test_ou_step_preserves_stationarity_and_small_steps():
    rng = replica_rng(2, 0)
    x = rng.standard_normal((200_000, 1))
    y = ou_step(x, 0.37, rng, CFG0)[:, 0]
    assert abs(y.var() - 1.0) < 4 * math.sqrt(2 / len(y))
    z = ou_step(np.full((10, 1), 2.0), 1e-12, rng, CFG0)
    assert np.allclose(z, 2.0, atol=1e-5)
    with pytest.raises(InputError):
        ou_step(np.zeros((1, 1)), -1.0, rng, CFG0)


# --- evolution ----------------------------------------------------------------------


def test_empty_state_is_a_trap():
    plan = SimPlan(scale_n=10, initial_measure=(((0.0,), 0.0),))
    state = advance_to(init(plan, CFG0), 5.0, CFG0, plan)
    assert state.extinct and state.clock == 5.0


def test_cannot_advance_backwards():
    plan = SimPlan(scale_n=10)
    state = advance_to(init(plan, CFG0), 1.0, CFG0, plan)
    with pytest.raises(InputError):
        advance_to(state, 0.5, CFG0, plan)


@pytest.mark.parametrize("method", ["pruned", "events"])
def test_critical_branching_keeps_mean_mass(method):
    cfg = SuperOUConfig(branch_a=0.0, require_supercritical=False)
    plan = SimPlan(scale_n=5, checkpoints=(1.0,), horizon_t=1.0, replicas=3000, master_seed=4, method=method)
    assert offspring_probability(plan, cfg) == 0.5
    mass = run_ensemble(plan, cfg, {}).readouts(phi(1))[:, 0]
    se = math.sqrt(variance_functional(0.0, phi(1), 1.0, cfg) + particle_variance_correction(0.0, phi(1), 1.0, cfg, 5))
    assert within(mass, 1.0, se / math.sqrt(len(mass)))


@pytest.mark.parametrize("method", ["pruned", "events"])
def test_engines_reproduce_exact_particle_moments(method):
    # the binary particle system has exactly computable first and second moments
    n = 10
    plan = SimPlan(scale_n=n, checkpoints=(1.0,), horizon_t=1.0, replicas=6000, master_seed=21, method=method)
    ens = run_ensemble(plan, CFG0, {"f3": phi(3)})
    mass = ens.readouts(phi(1))[:, 0]
    f3 = ens.readouts(phi(3))[:, 0]
    var_mass = variance_functional(0.0, phi(1), 1.0, CFG0) + particle_variance_correction(0.0, phi(1), 1.0, CFG0, n)
    var_f3 = variance_functional(0.0, phi(3), 1.0, CFG0) + particle_variance_correction(0.0, phi(3), 1.0, CFG0, n)
    r = len(mass)
    assert within(mass, math.exp(2), math.sqrt(var_mass / r))
    assert within(f3, mean_functional([(0.0, 1.0)], phi(3), 1.0, CFG0), math.sqrt(var_f3 / r))
    # sample variance of a heavy-ish tailed variable: allow 5 rough SEs from the kurtosis estimate
    for sample, target in ((mass, var_mass), (f3, var_f3)):
        c = sample - sample.mean()
        se = math.sqrt((np.mean(c**4) - np.mean(c**2) ** 2) / r)
        assert abs(np.var(sample, ddof=1) - target) <= 5 * se


def test_jump_count_matches_positions_engine():
    plan = SimPlan(scale_n=10, checkpoints=(0.7,), horizon_t=0.7, replicas=1)
    rng = replica_rng(9, 0)
    jumps = np.array([jump_count(10, 0.7, CFG0, plan, rng) for _ in range(20_000)]) / 10
    mean = math.exp(2 * 0.7)
    var = variance_functional(0.0, phi(1), 0.7, CFG0) + particle_variance_correction(0.0, phi(1), 0.7, CFG0, 10)
    assert within(jumps, mean, math.sqrt(var / len(jumps)))
    assert abs(jumps.var() - var) < 0.1 * var
    assert jump_count(0, 1.0, CFG0, plan, rng) == 0
    assert jump_count(7, 0.0, CFG0, plan, rng) == 7


def test_measure_examples():
    plan = SimPlan(scale_n=100, initial_measure=(((2.0,), 0.01),))
    state = init(plan, CFG0)
    assert measure(state, phi(2), CFG0) == pytest.approx(0.02)
    assert measure(state, phi(1), CFG0) == pytest.approx(state.mass_unit * state.count)
    empty = init(SimPlan(scale_n=100, initial_measure=(((0.0,), 0.0),)), CFG0)
    assert measure(empty, phi(3), CFG0) == 0.0


def test_population_cap_is_an_error_with_state():
    plan = SimPlan(scale_n=50, checkpoints=(3.0,), population_cap=2000)
    state = init(plan, CFG0, replica_rng(0, 0))
    with pytest.raises(ResourceError) as info:
        advance_to(state, 3.0, CFG0, plan)
    assert info.value.state is not None and info.value.state.count == 50
    with pytest.raises(EnsembleResourceError) as info:
        run_ensemble(SimPlan(scale_n=50, checkpoints=(3.0,), population_cap=2000, replicas=3), CFG0, {})
    assert [f.replica_id for f in info.value.failures] == [0, 1, 2]
    assert "[0, 1, 2]" in str(info.value)


# --- replicas and ensembles -----------------------------------------------------------


def test_replica_is_deterministic():
    plan = SimPlan(scale_n=20, checkpoints=(0.5, 1.0), master_seed=77)
    a = run_replica(plan, CFG0, FUNCS, 3)
    b = run_replica(plan, CFG0, FUNCS, 3)
    assert a.identical(b)
    c = run_replica(plan, CFG0, FUNCS, 4)
    assert not a.identical(c)


def test_extinct_replica_reads_zero():
    plan = SimPlan(scale_n=2, checkpoints=(0.5, 1.0, 2.0), master_seed=5, replicas=200)
    ens = run_ensemble(plan, CFG0, FUNCS)
    dead = [r for r in ens.records if not r.survival[0]]
    assert dead, "expected some replicas to die by t=0.5 at N=2"
    for r in dead:
        assert np.all(r.basis_readouts == 0) and r.w_inf_hat == 0 and not r.survived_horizon
    surv = ens.survival
    assert np.all(surv[:, 1:] <= surv[:, :-1])
    assert np.all(ens.survived_horizon <= surv[:, -1])


def test_singleton_ensemble_equals_replica_zero():
    plan = SimPlan(scale_n=20, checkpoints=(1.0,), master_seed=8)
    ens = run_ensemble(plan, CFG0, FUNCS)
    assert len(ens) == 1 and ens.records[0].identical(run_replica(plan, CFG0, FUNCS, 0))


def test_parallel_matches_serial_byte_for_byte(tmp_path):
    plan = SimPlan(scale_n=20, checkpoints=(0.5, 1.0), replicas=24, master_seed=2024)
    serial = run_ensemble(plan, CFG0, FUNCS, workers=1)
    parallel = run_ensemble(plan, CFG0, FUNCS, workers=3)
    assert serial.identical(parallel)
    write_replica_csv(serial, tmp_path / "a.csv", "d")
    write_replica_csv(parallel, tmp_path / "b.csv", "d")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_horizon_estimates():
    plan = SimPlan(scale_n=20, checkpoints=(1.0, 2.0), horizon_t=2.0, replicas=5, master_seed=1)
    ens = run_ensemble(plan, CFG0, FUNCS)
    mass_t2 = ens.readouts(phi(1))[:, 1]
    assert np.allclose(ens.w_inf_hat, math.exp(-4.0) * mass_t2)
    assert np.array_equal(ens.h_inf_hat((0,)), ens.w_inf_hat)


def test_horizon_estimates_with_two_large_levels():
    cfg = SuperOUConfig(branch_a=4.0)  # (1,) is also a large index: positions are advanced to T
    plan = SimPlan(scale_n=10, checkpoints=(0.5,), horizon_t=1.0, replicas=400, master_seed=3)
    ens = run_ensemble(plan, cfg, {})
    h = ens.h_inf_hat((1,))
    # E H^{2,1} = phi^{(2)}(0) = 0 by the martingale property
    assert abs(h.mean()) < 4 * h.std() / math.sqrt(len(h))


def test_csv_layout():
    plan = SimPlan(scale_n=10, checkpoints=(0.5, 1.0), replicas=3, master_seed=1)
    ens = run_ensemble(plan, CFG0, FUNCS)
    rows = list(replica_rows(ens, "abc"))
    assert rows[0] == ["replica_id", "t", "survival", "f3", "h2", "W_inf_hat", "H_inf_hat_1_1", "config_digest"]
    assert len(rows) == 1 + 3 * 2
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    parsed = list(csv.DictReader(io.StringIO(buf.getvalue())))
    rec = ens.records[1]
    row = parsed[2]
    assert float(row["f3"]) == rec.readout(phi(3))[0]  # 17 significant digits round-trip exactly
    assert float(row["W_inf_hat"]) == rec.w_inf_hat


def test_survival_frequency_small_run():
    plan = SimPlan(scale_n=50, checkpoints=(1.0,), horizon_t=1.0, replicas=1500, master_seed=12)
    surv = run_ensemble(plan, CFG0, {}).survival[:, 0]
    p = survival_probability(1.0, 1.0, CFG0)
    # the particle system's survival differs from the superprocess at O(1/N)
    assert abs(surv.mean() - p) < 4 * math.sqrt(p * (1 - p) / len(surv)) + 0.01
