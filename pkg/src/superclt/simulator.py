"""Branching OU particle approximation of the super-OU process.

Each particle carries mass ``1/N``, moves as an exact OU process and branches
at rate ``R = 2 b beta N`` into zero or two offspring at its own position, two
with probability ``p2 = 1/2 + a/(4bN)``.  Because the branching rate does not
depend on position, the genealogy is a linear birth-death process (birth rate
``R p2``, death rate ``R (1 - p2)``) independent of the spatial motion.

Two exact engines are provided:

``"events"``
    every branching event is sampled; cost grows like ``R * t`` per lineage.
``"pruned"``
    only lineages with descendants alive at the next observation time are
    sampled.  Given survival, such a lineage splits at rate ``birth * p(u)``
    where ``p(u)`` is the survival probability over the remaining time ``u``;
    subtrees that die out before the observation never affect the readouts.
    Cost is proportional to the population at the observation time.

Both produce the same law for the particle positions at observation times.
"""

from __future__ import annotations

import concurrent.futures
import csv
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, EnsembleResourceError, InputError, ResourceError
from .moments import correction_half_life_horizon
from .spectral import (
    EigenIndex,
    SpectralFunction,
    SuperOUConfig,
    check_index,
    hermite_table,
    index_eigenvalue,
    label_of,
    large_indices,
)

METHODS = ("pruned", "events")


@dataclass(frozen=True)
class SimPlan:
    scale_n: int
    initial_measure: tuple = (((0.0,), 1.0),)  # ((point, mass), ...)
    checkpoints: tuple = (1.0,)
    horizon_t: float | None = None  # None: 2.5 half-lives past the last checkpoint
    replicas: int = 1
    master_seed: int = 0
    population_cap: int = 10_000_000
    method: str = "pruned"
    #: Added to p2; non-zero only when mutation-testing the harness.
    offspring_bias: float = 0.0

    def __post_init__(self):
        if int(self.scale_n) != self.scale_n or self.scale_n < 1:
            raise ConfigurationError(f"scale_n must be a positive integer, got {self.scale_n}")
        cps = tuple(float(t) for t in self.checkpoints)
        if not cps or any(t < 0 for t in cps) or any(b <= a for a, b in zip(cps, cps[1:])):
            raise ConfigurationError(f"checkpoints must be non-negative and strictly increasing, got {cps}")
        object.__setattr__(self, "checkpoints", cps)
        atoms = []
        for point, mass in self.initial_measure:
            mass = float(mass)
            if not (math.isfinite(mass) and mass >= 0):
                raise ConfigurationError(f"atom masses must be non-negative, got {mass}")
            atoms.append((tuple(float(v) for v in np.atleast_1d(point)), mass))
        object.__setattr__(self, "initial_measure", tuple(atoms))
        if self.horizon_t is not None and self.horizon_t < cps[-1]:
            raise ConfigurationError("horizon_t must not precede the last checkpoint")
        if self.replicas < 1:
            raise ConfigurationError("replicas must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigurationError("master_seed must be an unsigned 64-bit integer")
        if self.population_cap < 1:
            raise ConfigurationError("population_cap must be positive")
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")

    @property
    def total_mass(self) -> float:
        return math.fsum(m for _, m in self.initial_measure)

    def horizon(self, cfg: SuperOUConfig) -> float:
        if self.horizon_t is not None:
            return float(self.horizon_t)
        return correction_half_life_horizon(self.checkpoints[-1], cfg)

    def to_dict(self) -> dict:
        return {
            "scale_n": self.scale_n,
            "initial_measure": [{"point": list(p), "mass": m} for p, m in self.initial_measure],
            "checkpoints": list(self.checkpoints),
            "horizon_t": self.horizon_t,
            "replicas": self.replicas,
            "master_seed": self.master_seed,
            "population_cap": self.population_cap,
            "method": self.method,
            "offspring_bias": self.offspring_bias,
        }


def branching_rate(plan: SimPlan, cfg: SuperOUConfig) -> float:
    return 2.0 * cfg.branch_b * cfg.branch_rate * plan.scale_n


def offspring_probability(plan: SimPlan, cfg: SuperOUConfig) -> float:
    """``p2 = 1/2 + a/(4bN)`` (plus the mutation bias, normally zero)."""
    return 0.5 + cfg.branch_a / (4.0 * cfg.branch_b * plan.scale_n) + plan.offspring_bias


def minimal_scale(cfg: SuperOUConfig) -> int:
    return max(1, math.ceil(abs(cfg.branch_a) / (2.0 * cfg.branch_b)))


def replica_rng(master_seed: int, replica_id: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by ``(master_seed, replica_id)``."""
    return np.random.Generator(np.random.Philox(key=(int(master_seed) << 64) | int(replica_id)))


@dataclass
class PopulationState:
    clock: float
    positions: np.ndarray  # shape (M, d)
    mass_unit: float
    rng: np.random.Generator = field(repr=False)

    @property
    def count(self) -> int:
        return len(self.positions)

    @property
    def total_mass(self) -> float:
        return self.mass_unit * self.count

    @property
    def extinct(self) -> bool:
        return self.count == 0


def init(plan: SimPlan, cfg: SuperOUConfig, rng: np.random.Generator | None = None) -> PopulationState:
    p2 = offspring_probability(plan, cfg)
    if not 0.0 <= p2 <= 1.0:
        raise ConfigurationError(
            f"offspring probability p2={p2:.6g} outside [0, 1]; scale_n must be at least {minimal_scale(cfg)}"
        )
    blocks = []
    for point, mass in plan.initial_measure:
        if len(point) != cfg.dimension:
            raise ConfigurationError(f"initial atom {point} does not live in R^{cfg.dimension}")
        copies = int(round(mass * plan.scale_n))
        blocks.append(np.tile(np.asarray(point, dtype=float), (copies, 1)))
    positions = np.concatenate(blocks) if blocks else np.empty((0, cfg.dimension))
    if rng is None:
        rng = replica_rng(plan.master_seed, 0)
    return PopulationState(0.0, positions.reshape(-1, cfg.dimension), 1.0 / plan.scale_n, rng)


# ----------------------------------------------------------------------------
# motion


def ou_step(x, dt, rng: np.random.Generator, cfg: SuperOUConfig) -> np.ndarray:
    """Exact OU transition: N(x e^{-c dt}, s^2 (1 - e^{-2c dt})) per coordinate.

    ``x`` has shape (M, d) (a single point is accepted); ``dt`` is a scalar or
    an array of shape (M,).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x.reshape(-1, cfg.dimension) if single else x
    dt = np.broadcast_to(np.asarray(dt, dtype=float), (len(x2),))
    if np.any(dt < 0):
        raise InputError("ou_step needs dt >= 0")
    decay = np.exp(-cfg.drift_c * dt)[:, None]
    sd = (cfg.stationary_std * np.sqrt(-np.expm1(-2.0 * cfg.drift_c * dt)))[:, None]
    out = x2 * decay + sd * rng.standard_normal(x2.shape)
    return out.reshape(x.shape)


# ----------------------------------------------------------------------------
# engines


def _expm1_ratio(r: float, u):
    return np.expm1(r * u) / r if r != 0 else u


def _inv_expm1_ratio(r: float, y):
    return np.log1p(r * y) / r if r != 0 else y


def _survival_scale(birth: float, death: float, u):
    """``G(u)`` with ``P(survive u) = e^{ru}/G(u)`` and ``P(one descendant | survive) = 1/G(u)``."""
    return 1.0 + birth * _expm1_ratio(birth - death, u)


def _cap_breach(state: PopulationState, size: int, cap: int, t_target: float):
    raise ResourceError(
        f"population reached {size} > cap {cap} while advancing from t={state.clock:g} to t={t_target:g}",
        state=state,
    )


def _advance_pruned(state, dt, birth, death, cfg, cap, t_target) -> np.ndarray:
    rng = state.rng
    r = birth - death
    x = state.positions
    keep = rng.random(len(x)) * _survival_scale(birth, death, dt) < math.exp(r * dt)
    active_x = x[keep]
    active_u = np.full(len(active_x), dt)
    done = []
    n_done = 0
    while len(active_x):
        g1 = _survival_scale(birth, death, active_u) * rng.random(len(active_x))
        split = g1 > 1.0
        remaining = np.zeros_like(active_u)
        if birth > 0:
            remaining[split] = _inv_expm1_ratio(r, (g1[split] - 1.0) / birth)
        moved = ou_step(active_x, active_u - remaining, rng, cfg)
        finished = moved[~split]
        done.append(finished)
        n_done += len(finished)
        active_x = np.repeat(moved[split], 2, axis=0)
        active_u = np.repeat(remaining[split], 2)
        if n_done + len(active_x) > cap:
            _cap_breach(state, n_done + len(active_x), cap, t_target)
    return np.concatenate(done) if done else np.empty((0, cfg.dimension))


def _advance_events(state, dt, rate, p2, cfg, cap, t_target) -> np.ndarray:
    rng = state.rng
    active_x = state.positions
    active_u = np.full(len(active_x), dt)
    done = []
    n_done = 0
    while len(active_x):
        tau = rng.exponential(1.0 / rate, len(active_x))
        fire = tau < active_u
        moved = ou_step(active_x, np.where(fire, tau, active_u), rng, cfg)
        finished = moved[~fire]
        done.append(finished)
        n_done += len(finished)
        parents = moved[fire]
        remaining = (active_u - tau)[fire]
        born = rng.random(len(parents)) < p2
        active_x = np.repeat(parents[born], 2, axis=0)
        active_u = np.repeat(remaining[born], 2)
        if n_done + len(active_x) > cap:
            _cap_breach(state, n_done + len(active_x), cap, t_target)
    return np.concatenate(done) if done else np.empty((0, cfg.dimension))


def advance_to(state: PopulationState, t_target: float, cfg: SuperOUConfig, plan: SimPlan) -> PopulationState:
    """Evolve the population to ``t_target``; the RNG inside ``state`` is consumed."""
    if t_target < state.clock:
        raise InputError(f"cannot advance backwards from {state.clock} to {t_target}")
    dt = t_target - state.clock
    if state.extinct or dt == 0:
        return replace(state, clock=float(t_target))
    rate = branching_rate(plan, cfg)
    p2 = offspring_probability(plan, cfg)
    if not 0.0 <= p2 <= 1.0:
        raise ConfigurationError(f"p2={p2} outside [0, 1]; scale_n must be at least {minimal_scale(cfg)}")
    if plan.method == "events":
        positions = _advance_events(state, dt, rate, p2, cfg, plan.population_cap, t_target)
    else:
        positions = _advance_pruned(state, dt, rate * p2, rate * (1.0 - p2), cfg, plan.population_cap, t_target)
    return PopulationState(float(t_target), positions, state.mass_unit, state.rng)


def jump_count(count: int, dt: float, cfg: SuperOUConfig, plan: SimPlan, rng: np.random.Generator) -> int:
    """Exact particle count after ``dt`` (positions are not tracked).

    Each particle survives with probability ``e^{r dt}/G`` and then leaves a
    geometric number of descendants with success probability ``1/G``.
    """
    if count == 0 or dt == 0:
        return int(count)
    rate = branching_rate(plan, cfg)
    p2 = offspring_probability(plan, cfg)
    birth, death = rate * p2, rate * (1.0 - p2)
    g = float(_survival_scale(birth, death, dt))
    alive = int(rng.binomial(count, min(1.0, math.exp((birth - death) * dt) / g)))
    if alive == 0:
        return 0
    return alive + int(rng.negative_binomial(alive, 1.0 / g))


def basis_values(positions: np.ndarray, basis: Sequence[EigenIndex], cfg: SuperOUConfig) -> np.ndarray:
    """``phi_n(x_i)`` for every basis index; shape (len(basis), M)."""
    if not len(positions):
        return np.zeros((len(basis), 0))
    order = max(max(n) for n in basis)
    y = positions / cfg.stationary_std
    tables = [hermite_table(y[:, axis], order) for axis in range(cfg.dimension)]
    out = np.empty((len(basis), len(positions)))
    for row, n in enumerate(basis):
        v = tables[0][n[0]]
        for axis in range(1, cfg.dimension):
            v = v * tables[axis][n[axis]]
        out[row] = v
    return out


def measure(state: PopulationState, f: SpectralFunction, cfg: SuperOUConfig) -> float:
    """``<f, X_t> = mass_unit * sum_i f(x_i)``."""
    if state.extinct or f.is_zero():
        return 0.0
    return state.mass_unit * float(np.sum(f.evaluate(cfg, state.positions)))


# ----------------------------------------------------------------------------
# replicas and ensembles


@dataclass
class ReplicaRecord:
    replica_id: int
    times: np.ndarray  # checkpoints
    basis: tuple  # eigen-indices read out at every checkpoint
    basis_readouts: np.ndarray  # shape (q, len(basis)): <phi_n, X_t>
    counts: np.ndarray  # particles alive at each checkpoint
    horizon: float
    horizon_count: int
    h_inf_hat: dict  # large index -> e^{lambda_k T} <phi_n, X_T>

    @property
    def survival(self) -> np.ndarray:
        return self.counts > 0

    @property
    def survived_horizon(self) -> bool:
        return self.horizon_count > 0

    @property
    def w_inf_hat(self) -> float:
        return self.h_inf_hat[(0,) * len(self.basis[0])]

    def readout(self, f: SpectralFunction) -> np.ndarray:
        """``<f, X_t>`` at every checkpoint, assembled from the basis readouts."""
        out = np.zeros(len(self.times))
        for n, a in f.items():
            try:
                col = self.basis.index(n)
            except ValueError:
                raise InputError(f"index {n} was not recorded by this replica") from None
            out += a * self.basis_readouts[:, col]
        return out

    def identical(self, other: "ReplicaRecord") -> bool:
        return (
            self.replica_id == other.replica_id
            and self.basis == other.basis
            and np.array_equal(self.basis_readouts, other.basis_readouts)
            and np.array_equal(self.counts, other.counts)
            and self.horizon_count == other.horizon_count
            and self.h_inf_hat == other.h_inf_hat
        )


def recorded_basis(functions: Mapping[str, SpectralFunction], cfg: SuperOUConfig) -> tuple:
    indices = set(large_indices(cfg))
    indices.add((0,) * cfg.dimension)
    for f in functions.values():
        indices.update(check_index(cfg, n) for n in f.indices())
    return tuple(sorted(indices, key=lambda n: (sum(n), n)))


def run_replica(plan: SimPlan, cfg: SuperOUConfig, functions: Mapping[str, SpectralFunction], replica_id: int) -> ReplicaRecord:
    """One replica through every checkpoint and on to the horizon; determined by (seed, id)."""
    basis = recorded_basis(functions, cfg)
    rng = replica_rng(plan.master_seed, replica_id)
    state = init(plan, cfg, rng)
    q = len(plan.checkpoints)
    readouts = np.zeros((q, len(basis)))
    counts = np.zeros(q, dtype=np.int64)
    try:
        for i, t in enumerate(plan.checkpoints):
            state = advance_to(state, t, cfg, plan)
            counts[i] = state.count
            if state.count:
                readouts[i] = state.mass_unit * basis_values(state.positions, basis, cfg).sum(axis=1)
        horizon = plan.horizon(cfg)
        corr = large_indices(cfg) or [(0,) * cfg.dimension]  # W is always recorded
        if all(sum(n) == 0 for n in corr):
            count_t = jump_count(state.count, horizon - state.clock, cfg, plan, rng)
            h_inf = {corr[0]: math.exp(cfg.lambda1 * horizon) * count_t * state.mass_unit}
        else:
            state = advance_to(state, horizon, cfg, plan)
            count_t = state.count
            vals = basis_values(state.positions, corr, cfg).sum(axis=1) * state.mass_unit
            h_inf = {n: math.exp(index_eigenvalue(cfg, n) * horizon) * float(v) for n, v in zip(corr, vals)}
    except ResourceError as exc:
        exc.replica_id = replica_id
        raise
    return ReplicaRecord(replica_id, np.array(plan.checkpoints), basis, readouts, counts, horizon, int(count_t), h_inf)


@dataclass
class Ensemble:
    plan: SimPlan
    cfg: SuperOUConfig
    functions: dict
    records: list

    def __len__(self) -> int:
        return len(self.records)

    @property
    def times(self) -> np.ndarray:
        return np.array(self.plan.checkpoints)

    def checkpoint_index(self, t: float) -> int:
        for i, c in enumerate(self.plan.checkpoints):
            if math.isclose(c, t, rel_tol=1e-12, abs_tol=1e-12):
                return i
        raise InputError(f"t={t} is not a recorded checkpoint {self.plan.checkpoints}")

    def readouts(self, f: SpectralFunction) -> np.ndarray:
        """Shape (replicas, checkpoints)."""
        return np.stack([r.readout(f) for r in self.records])

    @property
    def counts(self) -> np.ndarray:
        return np.stack([r.counts for r in self.records])

    @property
    def survival(self) -> np.ndarray:
        return self.counts > 0

    @property
    def survived_horizon(self) -> np.ndarray:
        return np.array([r.survived_horizon for r in self.records])

    @property
    def w_inf_hat(self) -> np.ndarray:
        return np.array([r.w_inf_hat for r in self.records])

    def h_inf_hat(self, n: EigenIndex) -> np.ndarray:
        return np.array([r.h_inf_hat[tuple(n)] for r in self.records])

    def identical(self, other: "Ensemble") -> bool:
        return len(self) == len(other) and all(a.identical(b) for a, b in zip(self.records, other.records))


def _run_block(args):
    plan, cfg, functions, ids = args
    out, failures = [], []
    for i in ids:
        try:
            out.append(run_replica(plan, cfg, functions, i))
        except ResourceError as exc:
            exc.state = None  # keep the payload picklable and small
            failures.append(exc.with_traceback(None))
    return out, failures


def run_ensemble(
    plan: SimPlan,
    cfg: SuperOUConfig,
    functions: Mapping[str, SpectralFunction],
    workers: int = 1,
) -> Ensemble:
    """Run ``plan.replicas`` independent replicas; output order is replica id order."""
    functions = dict(functions)
    ids = list(range(plan.replicas))
    if workers <= 1 or plan.replicas == 1:
        results = [_run_block((plan, cfg, functions, ids))]
    else:
        n_blocks = min(plan.replicas, 4 * workers)
        blocks = [ids[k::n_blocks] for k in range(n_blocks)]
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_block, [(plan, cfg, functions, b) for b in blocks]))
    records = sorted((r for rs, _ in results for r in rs), key=lambda r: r.replica_id)
    failures = sorted((f for _, fs in results for f in fs), key=lambda f: f.replica_id)
    if failures:
        raise EnsembleResourceError(failures)
    return Ensemble(plan, cfg, functions, records)


# ----------------------------------------------------------------------------
# CSV


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def replica_rows(ensemble: Ensemble, digest: str = ""):
    """Header plus one row per replica x checkpoint."""
    names = list(ensemble.functions)
    corr = large_indices(ensemble.cfg)
    h_cols = [f"H_inf_hat_{k}_{j}" for k, j in (label_of(n) for n in corr)]
    yield ["replica_id", "t", "survival", *names, "W_inf_hat", *h_cols, "config_digest"]
    for rec in ensemble.records:
        cols = [rec.readout(ensemble.functions[name]) for name in names]
        tail = [_fmt(rec.w_inf_hat), *(_fmt(rec.h_inf_hat[n]) for n in corr), digest]
        for i, t in enumerate(rec.times):
            yield [str(rec.replica_id), _fmt(t), str(int(rec.survival[i])), *(_fmt(c[i]) for c in cols), *tail]


def write_replica_csv(ensemble: Ensemble, path, digest: str = ""):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in replica_rows(ensemble, digest):
            writer.writerow(row)
