"""Acceptance criteria, one pytest case per criterion.

Each criterion prints a single ``CRITERION n: PASS|FAIL`` line. Run
``python3 tests/test_acceptance.py`` to get just those lines without pytest.
The Monte Carlo criteria share two session-scoped ensembles; together they
take several minutes on one core.
"""

from __future__ import annotations

import math
import sys
import time
from functools import lru_cache
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))
import oracles  # noqa: E402

from superclt.cltlab import (  # noqa: E402
    ks_self_calibration,
    mutation_self_test,
    verify_covariances,
    verify_extinction,
    verify_joint_clt,
    verify_martingales,
    verify_moments,
    verify_scale_bias,
)
from superclt.moments import (  # noqa: E402
    beta2,
    covariance_expsum,
    rho2,
    sigma2,
    variance_functional,
    variance_quadrature,
)
from superclt.simulator import SimPlan, run_ensemble  # noqa: E402
from superclt.spectral import SpectralFunction, SuperOUConfig  # noqa: E402

CFG0 = SuperOUConfig()
phi = SpectralFunction.level
FUNCS = {"f3": phi(3), "f4": phi(4), "h2": phi(2), "g1": phi(1)}


# ----------------------------------------------------------------------------
# shared ensembles (cached so the script runner and pytest both build them once)


@lru_cache(maxsize=None)
def moment_ensemble():
    plan = SimPlan(scale_n=1000, checkpoints=(0.5, 1.0, 2.0), horizon_t=6.0, replicas=10_000, master_seed=4)
    return run_ensemble(plan, CFG0, {"f3": phi(3)})


@lru_cache(maxsize=None)
def clt_ensemble():
    plan = SimPlan(scale_n=200, checkpoints=(3.5,), horizon_t=6.0, replicas=4000, master_seed=7)
    return run_ensemble(plan, CFG0, FUNCS)


def _failed(report) -> str:
    bad = [t.name for t in report.failures()]
    return "all sub-tests pass" if not bad else "failed: " + ", ".join(bad)


# ----------------------------------------------------------------------------
# criteria


def criterion_1():
    # oracle dictionaries are keyed by Hermite degree, i.e. level - 1
    cases = [
        ("sigma2(f3)", sigma2(phi(3), CFG0), oracles.sigma2({2: 1.0}, CFG0), 1.0),
        ("sigma2(f4)", sigma2(phi(4), CFG0), oracles.sigma2({3: 1.0}, CFG0), 0.5),
        ("rho2(h2)", rho2(phi(2), CFG0), oracles.rho2({1: 1.0}, CFG0), 2.0),
        ("beta2(g1)", beta2(phi(1), CFG0), oracles.beta2({0: 1.0}, CFG0), 1.0),
    ]
    # beta2 also equals -(1/lambda_1) <A phi_1^3>_m, and phi_1 = 1 here
    cases.append(("beta2 via <A phi_1^3>", beta2(phi(1), CFG0), -CFG0.big_a / CFG0.lambda1, 1.0))
    worst = max(max(abs(v / q - 1), abs(v / e - 1)) for _, v, q, e in cases)
    return worst <= 1e-8, f"max relative error {worst:.2e} over {len(cases)} constants"


def criterion_2():
    analytic = variance_functional(0.0, phi(3), 1.0, CFG0)
    panels = variance_quadrature(0.0, phi(3), 1.0, CFG0, panels=200, max_panels=200)
    oracle = oracles.covariance({2: 1.0}, {2: 1.0}, 0.0, 1.0, CFG0)
    closed = oracles.var_phi3_origin(1.0)
    errs = [abs(analytic / v - 1) for v in (panels, oracle, closed)]
    ok = max(errs) <= 1e-6 and abs(analytic - 3.68605) < 5e-6
    return ok, f"value {analytic:.8f}; relative gaps {', '.join(f'{e:.1e}' for e in errs)}"


def _decay_rates(errs, times):
    return [-math.log(abs(b) / abs(a)) / (t2 - t1) for a, b, t1, t2 in zip(errs, errs[1:], times, times[1:])]


def criterion_3():
    times = (10.0, 20.0, 40.0)
    lam1 = CFG0.lambda1
    small = covariance_expsum(0.0, phi(3), phi(3), CFG0)
    crit = covariance_expsum(0.0, phi(2), phi(2), CFG0)
    large = covariance_expsum(0.0, phi(1), phi(1), CFG0)
    e_small = [small.remainder(t, shift=lam1) for t in times]
    e_crit = [crit.remainder(t, shift=lam1, power=1) for t in times]
    e_large = [large.remainder(t, shift=2 * lam1) for t in times]

    oracle_gap = max(
        [abs(e / oracles.var_phi3_scaled_remainder(t) - 1) for e, t in zip(e_small, times)]
        + [abs(e / oracles.var_phi2_scaled_remainder(t) - 1) for e, t in zip(e_crit, times)]
        + [abs(e / oracles.var_phi1_scaled_remainder(t) - 1) for e, t in zip(e_large, times)]
    )
    r_small, r_large = _decay_rates(e_small, times), _decay_rates(e_large, times)
    geometric = all(r >= 1.0 for r in r_small + r_large)
    # the critical remainder is t^{-1} e^{lambda_1 t} Var - rho2 ~ -1/t: it shrinks, but algebraically
    t_scaled = [t * abs(e) for t, e in zip(times, e_crit)]
    critical_ok = abs(e_crit[0]) > abs(e_crit[1]) > abs(e_crit[2]) and max(t_scaled) / min(t_scaled) < 1.01
    ok = oracle_gap < 1e-9 and geometric and critical_ok
    detail = (
        f"small rates {r_small[0]:.3f},{r_small[1]:.3f}; large rates {r_large[0]:.3f},{r_large[1]:.3f}; "
        f"critical t*|err| {t_scaled[0]:.4f}..{t_scaled[-1]:.4f}; oracle gap {oracle_gap:.1e}"
    )
    return ok, detail


def criterion_4():
    ens = moment_ensemble()
    rep = verify_moments(ens, {"f3": phi(3)}, CFG0)
    mean, var = rep["mean_f3_t1"], rep["variance_f3_t1"]
    # at N = 1000 the O(1/N) excess (~0.009) is far below the variance SE with 1e4
    # replicas, so the shrinking bias is measured where it is resolvable
    scaled = [
        run_ensemble(SimPlan(scale_n=n, checkpoints=(1.0,), horizon_t=1.0, replicas=20_000, master_seed=40 + n),
                     CFG0, {"f3": phi(3)})
        for n in (2, 4, 8)
    ]
    bias = verify_scale_bias(scaled, phi(3), 1.0, CFG0)
    ok = mean.passed and var.passed and bias.passed
    ex = bias["particle_excess_shrinks"].inputs["excesses"]
    detail = (
        f"mean {mean.statistic:.4f} vs {mean.target:.4f}; variance {var.statistic:.4f} vs {var.target:.4f}; "
        f"excess at N=2,4,8: {', '.join(f'{e:.3f}' for e in ex)}; {_failed(bias)}"
    )
    return ok, detail


def criterion_5():
    rep = verify_martingales(moment_ensemble(), CFG0)
    return rep.passed, f"{len(rep.tests)} checks; {_failed(rep)}"


def criterion_6():
    rep = verify_extinction(moment_ensemble(), CFG0)
    s1, lh = rep["extinction_t1"], rep["extinction_long_horizon"]
    detail = (
        f"survival by t=1 {1 - s1.inputs['frequency']:.4f} vs {1 - s1.inputs['probability']:.4f}; "
        f"extinction by T=6 {lh.statistic:.4f} vs {lh.target:.5f}; {_failed(rep)}"
    )
    return rep.passed, detail


def criterion_7():
    rep = verify_joint_clt(clt_ensemble(), phi(3), phi(2), phi(1), 3.5, CFG0, level=0.001)
    ks = "; ".join(f"{c} p={rep['ks_' + c].p_value:.2g}" for c in ("c4", "c3", "c2"))
    worst = max(abs(t.statistic) for t in rep.tests if t.name.startswith("corr_"))
    return rep.passed, f"{ks}; max |corr| {worst:.4f} (bound {3 / math.sqrt(4000):.4f}); {_failed(rep)}"


def criterion_8():
    rep = verify_covariances(clt_ensemble(), [("f3", "f4"), ("f3", "f3")], 3.5, CFG0)
    a, b = rep["cov_f3_f4"], rep["cov_f3_f3"]
    return rep.passed, f"cov(f3,f4) {a.statistic:.4f}; cov(f3,f3) {b.statistic:.4f} vs 1; {_failed(rep)}"


def criterion_9():
    cal = ks_self_calibration(n=1000, trials=200, level=0.05)
    null, biased = mutation_self_test(CFG0)
    caught = [t.name for t in biased.failures() if t.name.startswith("martingale_")]
    ok = cal.passed and null.passed and bool(caught)
    detail = (
        f"KS rejection rate {cal.statistic:.3f} at level 0.05 (band [0.025, 0.1]); "
        f"unbiased run {null.verdict}; biased run flagged by {len(caught)} martingale checks"
    )
    return ok, detail


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 10)}


def run_criterion(i: int) -> tuple[bool, str]:
    start = time.perf_counter()
    ok, detail = CRITERIA[i]()
    line = f"CRITERION {i}: {'PASS' if ok else 'FAIL'}  {detail}  [{time.perf_counter() - start:.1f}s]"
    return ok, line


# ----------------------------------------------------------------------------
# pytest entry points


@pytest.mark.parametrize("i", [1, 2, 3])
def test_analytic_criterion(i, capsys):
    ok, line = run_criterion(i)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


@pytest.mark.slow
@pytest.mark.parametrize("i", [4, 5, 6, 7, 8, 9])
def test_monte_carlo_criterion(i, capsys):
    ok, line = run_criterion(i)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [run_criterion(i) for i in CRITERIA]
    for _, line in results:
        print(line, flush=True)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
