"""Mean semigroup, finite-time second moments and limiting variance constants.

Every finite-time second moment reduces to

    Cov_x(<f,X_t>, <h,X_t>) = int_0^t T_s[A (T_{t-s} f)(T_{t-s} h)](x) ds,

and with a finite eigen-expansion the integrand is a finite sum of
exponentials in ``s``.  :class:`ExpSum` keeps that sum symbolically so the
time integral is exact and large-``t`` limits can be read off term by term.
A second, independent path (:func:`covariance_quadrature`) integrates the same
expression numerically over time and over the OU transition kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import InputError, RegimeError
from .spectral import (
    GAMMA_INFINITY,
    SpectralFunction,
    SuperOUConfig,
    check_index,
    classify,
    eigenfunction_eval,
    hermite_table,
    index_eigenvalue,
    label_of,
    multiply,
    ou_transition_rule,
)


@dataclass(frozen=True)
class ACoefficient:
    """Eigen-expansion of the second-moment coefficient A(x)."""

    expansion: SpectralFunction

    @classmethod
    def from_config(cls, cfg: SuperOUConfig) -> "ACoefficient":
        return cls.constant(cfg.big_a, cfg.dimension)

    @classmethod
    def constant(cls, value: float, dimension: int = 1) -> "ACoefficient":
        if not (math.isfinite(value) and value >= 0):
            raise InputError(f"A must be a non-negative constant, got {value}")
        return cls(SpectralFunction({(0,) * dimension: value}, dimension=dimension))

    @property
    def is_constant(self) -> bool:
        return all(sum(n) == 0 for n in self.expansion.indices())

    @property
    def constant_value(self) -> float:
        return self.expansion[(0,) * self.expansion.dimension]

    def evaluate(self, cfg: SuperOUConfig, x):
        return self.expansion.evaluate(cfg, x)

    def times(self, f: SpectralFunction, cfg: SuperOUConfig) -> SpectralFunction:
        if self.is_constant:
            return self.constant_value * f
        return multiply(self.expansion, f, cfg)


def resolve_a(A, cfg: SuperOUConfig) -> ACoefficient:
    if A is None:
        return ACoefficient.from_config(cfg)
    if isinstance(A, ACoefficient):
        return A
    if isinstance(A, SpectralFunction):
        return ACoefficient(A)
    return ACoefficient.constant(float(A), cfg.dimension)


# ----------------------------------------------------------------------------
# first moments


def semigroup_apply(f: SpectralFunction, t: float, cfg: SuperOUConfig) -> SpectralFunction:
    """``T_t f``: multiply each coefficient by ``exp(-lambda_n t)``."""
    if not t >= 0:
        raise InputError(f"time must be non-negative, got {t}")
    if t == 0:
        return f
    return SpectralFunction(
        {n: a * math.exp(-index_eigenvalue(cfg, check_index(cfg, n)) * t) for n, a in f.items()},
        dimension=cfg.dimension,
    )


def _atoms(mu) -> list[tuple[np.ndarray, float]]:
    out = []
    for point, mass in mu:
        mass = float(mass)
        if not (math.isfinite(mass) and mass >= 0):
            raise InputError(f"atom masses must be finite and non-negative, got {mass}")
        out.append((np.atleast_1d(np.asarray(point, dtype=float)), mass))
    return out


def total_mass(mu) -> float:
    return math.fsum(m for _, m in _atoms(mu))


def mean_functional(mu, f: SpectralFunction, t: float, cfg: SuperOUConfig) -> float:
    """``P_mu <f, X_t> = <T_t f, mu>`` for a finite sum of point masses ``[(x, w), ...]``."""
    g = semigroup_apply(f, t, cfg)
    return math.fsum(w * g.evaluate(cfg, x if cfg.dimension > 1 else x[0]) for x, w in _atoms(mu) if w)


# ----------------------------------------------------------------------------
# exponential sums


def _same_rate(r1: float, r2: float) -> bool:
    return math.isclose(r1, r2, rel_tol=1e-12, abs_tol=1e-12)


@dataclass
class ExpSum:
    """``sum_i (c0_i + c1_i * t) * exp(r_i * t)`` with distinct rates."""

    terms: list[list[float]] = field(default_factory=list)  # [rate, c0, c1]

    def add(self, rate: float, c0: float, c1: float = 0.0):
        for term in self.terms:
            if _same_rate(term[0], rate):
                term[1] += c0
                term[2] += c1
                return
        self.terms.append([rate, c0, c1])

    def add_integral(self, coef: float, p: float, q: float):
        """Add ``coef * int_0^t exp(q s + p (t - s)) ds``."""
        if _same_rate(p, q):
            self.add(p, 0.0, coef)
        else:
            self.add(q, coef / (q - p))
            self.add(p, -coef / (q - p))

    def __call__(self, t: float) -> float:
        return math.fsum((c0 + c1 * t) * math.exp(r * t) for r, c0, c1 in self.terms)

    def scaled(self, t: float, shift: float = 0.0, power: int = 0) -> float:
        """``exp(shift t) t^{-power} * self(t)``, with the scaling applied per term."""
        return math.fsum((c0 + c1 * t) * math.exp((r + shift) * t) for r, c0, c1 in self.terms) / t**power

    def _scale(self) -> float:
        return max((abs(c0) + abs(c1) for _, c0, c1 in self.terms), default=0.0)

    def limit(self, shift: float = 0.0, power: int = 0) -> float:
        """``lim_{t->inf} exp(shift t) t^{-power} self(t)`` for power in {0, 1}."""
        tiny = 1e-12 * max(self._scale(), 1e-300)
        out = 0.0
        for r, c0, c1 in self.terms:
            rate = r + shift
            if _same_rate(rate, 0.0):
                if power == 0:
                    if abs(c1) > tiny:
                        raise InputError("scaled exponential sum grows linearly; no finite limit")
                    out += c0
                else:
                    out += c1
            elif rate > 0 and (abs(c0) > tiny or abs(c1) > tiny):
                raise InputError("scaled exponential sum diverges")
        return out

    def remainder(self, t: float, shift: float = 0.0, power: int = 0) -> float:
        """``scaled(t) - limit`` summed term by term, free of cancellation."""
        parts = []
        for r, c0, c1 in self.terms:
            rate = r + shift
            if _same_rate(rate, 0.0):
                # leading terms: keep only the sub-leading piece
                parts.append(c1 * t if power == 0 else c0 / t)
            else:
                parts.append((c0 + c1 * t) * math.exp(rate * t) / t**power)
        return math.fsum(parts)


# ----------------------------------------------------------------------------
# finite-time second moments


def _check_time(t: float):
    if not (t >= 0 and math.isfinite(t)):
        raise InputError(f"time must be finite and non-negative, got {t}")


def _point(cfg: SuperOUConfig, x):
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.shape != (cfg.dimension,) or not np.all(np.isfinite(arr)):
        raise InputError(f"x must be a finite point in R^{cfg.dimension}")
    return arr[0] if cfg.dimension == 1 else arr


def covariance_expsum(x, f: SpectralFunction, h: SpectralFunction, cfg: SuperOUConfig, A=None) -> ExpSum:
    """Closed-form ``t -> Cov_{delta_x}(<f,X_t>, <h,X_t>)`` as an :class:`ExpSum`."""
    A = resolve_a(A, cfg)
    xp = _point(cfg, x)
    out = ExpSum()
    phi_at_x: dict = {}
    for ni, ai in f.items():
        li = index_eigenvalue(cfg, check_index(cfg, ni))
        a_phi = A.times(SpectralFunction.basis(ni), cfg)
        for nj, bj in h.items():
            lj = index_eigenvalue(cfg, check_index(cfg, nj))
            prod = multiply(a_phi, SpectralFunction.basis(nj), cfg)
            for nk, ck in prod.items():
                if nk not in phi_at_x:
                    phi_at_x[nk] = eigenfunction_eval(cfg, nk, xp)
                coef = ai * bj * ck * phi_at_x[nk]
                if coef != 0.0:
                    out.add_integral(coef, p=-(li + lj), q=-index_eigenvalue(cfg, nk))
    return out


def covariance_functional(x, f: SpectralFunction, h: SpectralFunction, t: float, cfg: SuperOUConfig, A=None) -> float:
    _check_time(t)
    if t == 0 or f.is_zero() or h.is_zero():
        return 0.0
    return covariance_expsum(x, f, h, cfg, A)(t)


def variance_functional(x, f: SpectralFunction, t: float, cfg: SuperOUConfig, A=None) -> float:
    """``Var_{delta_x} <f, X_t>`` in closed form."""
    return covariance_functional(x, f, f, t, cfg, A)


def measure_covariance(mu, f: SpectralFunction, h: SpectralFunction, t: float, cfg: SuperOUConfig, A=None) -> float:
    """Covariance under ``P_mu``: the atom-weighted sum of point covariances."""
    return math.fsum(w * covariance_functional(x, f, h, t, cfg, A) for x, w in _atoms(mu) if w)


def measure_variance(mu, f: SpectralFunction, t: float, cfg: SuperOUConfig, A=None) -> float:
    return measure_covariance(mu, f, f, t, cfg, A)


def _semigroup_on_points(f: SpectralFunction, u: np.ndarray, pts: np.ndarray, cfg: SuperOUConfig) -> np.ndarray:
    """``(T_u f)(y)`` for times ``u`` of shape (S,) and points of shape (S, G, d)."""
    out = np.zeros(pts.shape[:2])
    if f.is_zero():
        return out
    y = pts / cfg.stationary_std
    order = f.degree()
    tables = [hermite_table(y[..., axis], order) for axis in range(cfg.dimension)]
    for n, a in f.items():
        basis = tables[0][n[0]]
        for axis in range(1, cfg.dimension):
            basis = basis * tables[axis][n[axis]]
        out += (a * np.exp(-index_eigenvalue(cfg, n) * u))[:, None] * basis
    return out


def _time_integrand(s: np.ndarray, xp, f, h, t, cfg, A: ACoefficient) -> np.ndarray:
    """``T_s[A (T_{t-s} f)(T_{t-s} h)](x)`` evaluated by Gauss-Hermite over the OU kernel."""
    rules = [ou_transition_rule(cfg, xp, si) for si in s]
    pts = np.stack([r[0] for r in rules])
    w = rules[0][1]
    u = t - s
    ff = _semigroup_on_points(f, u, pts, cfg)
    hh = ff if h is f else _semigroup_on_points(h, u, pts, cfg)
    a_vals = A.evaluate(cfg, pts.reshape(-1, cfg.dimension)).reshape(pts.shape[:2])
    return np.exp(cfg.alpha * s) * ((a_vals * ff * hh) @ w)


def covariance_quadrature(
    x,
    f: SpectralFunction,
    h: SpectralFunction,
    t: float,
    cfg: SuperOUConfig,
    A=None,
    panels: int = 200,
    order: int = 8,
    rtol: float = 1e-9,
    max_panels: int = 12800,
) -> float:
    """Second evaluation path: composite Gauss-Legendre in time, doubling panels to ``rtol``."""
    _check_time(t)
    A = resolve_a(A, cfg)
    xp = _point(cfg, x)
    if t == 0 or f.is_zero() or h.is_zero():
        return 0.0
    g_nodes, g_weights = leggauss(order)

    def composite(n_panels: int) -> float:
        edges = np.linspace(0.0, t, n_panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        s = (mid[:, None] + half[:, None] * g_nodes[None, :]).ravel()
        w = (half[:, None] * g_weights[None, :]).ravel()
        total = 0.0
        chunk = max(1, 200_000 // (64**cfg.dimension))
        for lo in range(0, len(s), chunk):
            total += float(np.dot(w[lo : lo + chunk], _time_integrand(s[lo : lo + chunk], xp, f, h, t, cfg, A)))
        return total

    prev = composite(panels)
    while panels < max_panels:
        panels *= 2
        cur = composite(panels)
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    return prev


def variance_quadrature(x, f: SpectralFunction, t: float, cfg: SuperOUConfig, A=None, **kwargs) -> float:
    return covariance_quadrature(x, f, f, t, cfg, A, **kwargs)


def particle_variance_correction(x, f: SpectralFunction, t: float, cfg: SuperOUConfig, scale_n: int) -> float:
    """Exact O(1/N) excess variance of the binary particle approximation.

    For ``N`` particles of mass ``1/N`` started at ``x`` with branching rate
    ``2 b beta N`` and ``p2 = 1/2 + a/(4bN)``, the many-to-two formula gives

        Var = A*J + (T_t(f^2)(x) - (T_t f(x))^2 + alpha*J) / N,

    where ``J = int_0^t T_s[(T_{t-s} f)^2](x) ds``.  Returns the second term.
    """
    _check_time(t)
    xp = _point(cfg, x)
    if t == 0 or f.is_zero():
        return 0.0
    j_term = covariance_expsum(x, f, f, cfg, A=1.0)(t)
    sq = semigroup_apply(multiply(f, f, cfg), t, cfg).evaluate(cfg, xp)
    mean = semigroup_apply(f, t, cfg).evaluate(cfg, xp)
    return (sq - mean**2 + cfg.alpha * j_term) / scale_n


# ----------------------------------------------------------------------------
# limiting constants


def _require(f: SpectralFunction, cfg: SuperOUConfig, regime: str, what: str):
    cls = classify(f, cfg)
    if cls.regime not in (regime, "zero"):
        raise RegimeError(f"{what} needs a function in the {regime} regime, got {cls.regime}")
    return cls


def _a_pair(ni, nj, cfg: SuperOUConfig, A: ACoefficient) -> float:
    """``<A phi_i phi_j phi_1>_m``; phi_1 is the constant 1."""
    if A.is_constant:
        return A.constant_value if ni == nj else 0.0
    prod = multiply(A.times(SpectralFunction.basis(ni), cfg), SpectralFunction.basis(nj), cfg)
    return prod[(0,) * cfg.dimension]


def _bilinear(f1, f2, cfg, A, weight) -> float:
    terms = []
    for ni, a in f1.items():
        li = index_eigenvalue(cfg, ni)
        for nj, b in f2.items():
            c = _a_pair(ni, nj, cfg, A)
            if c:
                terms.append(a * b * c * weight(li, index_eigenvalue(cfg, nj)))
    return math.fsum(terms)


def sigma_cov(f1: SpectralFunction, f2: SpectralFunction, cfg: SuperOUConfig, A=None) -> float:
    """``int_0^inf e^{lambda_1 s} <A (T_s f1)(T_s f2), phi_1>_m ds`` for small-regime inputs."""
    A = resolve_a(A, cfg)
    _require(f1, cfg, "small", "sigma")
    _require(f2, cfg, "small", "sigma")
    lam1 = cfg.lambda1
    return _bilinear(f1, f2, cfg, A, lambda li, lj: 1.0 / (li + lj - lam1))


def sigma2(f: SpectralFunction, cfg: SuperOUConfig, A=None) -> float:
    return sigma_cov(f, f, cfg, A)


def rho_cov(h1: SpectralFunction, h2: SpectralFunction, cfg: SuperOUConfig, A=None) -> float:
    """``<A h1 h2, phi_1>_m`` for critical-regime inputs."""
    A = resolve_a(A, cfg)
    _require(h1, cfg, "critical", "rho")
    _require(h2, cfg, "critical", "rho")
    return _bilinear(h1, h2, cfg, A, lambda li, lj: 1.0)


def rho2(h: SpectralFunction, cfg: SuperOUConfig, A=None) -> float:
    return rho_cov(h, h, cfg, A)


def beta_cov(g1: SpectralFunction, g2: SpectralFunction, cfg: SuperOUConfig, A=None) -> float:
    """``int_0^inf e^{-lambda_1 s} <A (I_s g1)(I_s g2), phi_1>_m ds`` for large-regime inputs."""
    A = resolve_a(A, cfg)
    _require(g1, cfg, "large", "beta")
    _require(g2, cfg, "large", "beta")
    lam1 = cfg.lambda1
    return _bilinear(g1, g2, cfg, A, lambda li, lj: 1.0 / (lam1 - li - lj))


def beta2(g: SpectralFunction, cfg: SuperOUConfig, A=None) -> float:
    return beta_cov(g, g, cfg, A)


def eta2(f: SpectralFunction, x, cfg: SuperOUConfig, A=None) -> float:
    """``int_0^inf e^{2 lambda_gamma s} T_s(A (f*)^2)(x) ds`` when ``lambda_1 > 2 lambda_gamma``."""
    A = resolve_a(A, cfg)
    xp = _point(cfg, x)
    cls = classify(f, cfg)
    if cls.gamma == GAMMA_INFINITY:
        return 0.0
    lam_g = index_eigenvalue(cfg, cls.leading.indices()[0])
    if classify(cls.leading, cfg).regime != "large":
        raise RegimeError("eta2 needs lambda_1 > 2 lambda_gamma(f)")
    expansion = A.times(multiply(cls.leading, cls.leading, cfg), cfg)
    return math.fsum(
        c * eigenfunction_eval(cfg, n, xp) / (index_eigenvalue(cfg, n) - 2.0 * lam_g) for n, c in expansion.items()
    )


@dataclass(frozen=True)
class LimitLaw:
    """Which normalisation applies to ``<f, X_t>`` and the Gaussian limit variance.

    ``normalization`` is ``"sqrt_mass"`` for ``(<f,X_t> - corr)/sqrt(<phi_1,X_t>)``
    (the e^{lambda_1 t/2} scale), ``"sqrt_t_mass"`` when a critical part
    dominates, or ``"none"`` for the zero function.
    """

    normalization: str
    variance: float
    corrections: tuple[tuple[int, int], ...]
    regime: str
    zero_function: bool = False


def limit_decomposition(f: SpectralFunction, cfg: SuperOUConfig, A=None) -> LimitLaw:
    A = resolve_a(A, cfg)
    cls = classify(f, cfg)
    if cls.regime == "zero":
        return LimitLaw("none", 0.0, (), "zero", zero_function=True)
    corrections = tuple(label_of(n) for n in cls.large.indices())
    if cls.critical:
        return LimitLaw("sqrt_t_mass", rho2(cls.critical, cfg, A), corrections, cls.regime)
    variance = sigma2(cls.small, cfg, A) + beta2(cls.large, cfg, A)
    return LimitLaw("sqrt_mass", variance, corrections, cls.regime)


# ----------------------------------------------------------------------------
# extinction


def extinction_rate(t: float, cfg: SuperOUConfig) -> float:
    """``u_t = -log P_{delta_x}(||X_t|| = 0)`` from the ODE ``u' = -beta psi(u)``, ``u_0+ = inf``.

    Closed form ``a / (b (1 - exp(-a beta t)))``; ``1/(b beta t)`` when a = 0.
    ``t = inf`` gives the eventual-extinction rate ``a/b``.
    """
    if not t > 0:
        raise InputError("extinction rate needs t > 0")
    a, b, beta = cfg.branch_a, cfg.branch_b, cfg.branch_rate
    if math.isinf(t):
        if a <= 0:
            return 0.0
        return a / b
    if a == 0:
        return 1.0 / (b * beta * t)
    return a / (b * -math.expm1(-a * beta * t))


def extinction_probability(mass: float, t: float, cfg: SuperOUConfig) -> float:
    return math.exp(-mass * extinction_rate(t, cfg))


def survival_probability(mass: float, t: float, cfg: SuperOUConfig) -> float:
    return -math.expm1(-mass * extinction_rate(t, cfg))


def conditional_mean_w(mass: float, t: float, horizon: float, cfg: SuperOUConfig) -> float:
    """``E[W_t | ||X_T|| > 0]`` for initial total mass ``mass`` and ``T >= t``.

    The total mass is a Feller diffusion, so with ``v = u_{T-t}`` the Laplace
    functional gives ``E[W_t; ||X_T|| = 0] = mass e^{-mass u_T} / (1 + b v g_t)^2``
    where ``g_t = expm1(a beta t) / a`` (``beta t`` when a = 0).
    """
    if horizon < t:
        raise InputError("horizon must not precede t")
    p_surv = survival_probability(mass, horizon, cfg)
    if horizon == t:
        return mass / p_surv
    a, b, beta = cfg.branch_a, cfg.branch_b, cfg.branch_rate
    g = beta * t if a == 0 else math.expm1(a * beta * t) / a
    v = extinction_rate(horizon - t, cfg)
    lost = math.exp(-mass * extinction_rate(horizon, cfg)) / (1.0 + b * v * g) ** 2
    return mass * (1.0 - lost) / p_surv


def correction_half_life_horizon(t: float, cfg: SuperOUConfig, half_lives: float = 2.5) -> float:
    """Default horizon for the martingale-limit estimates.

    ``H_T - H_inf`` has variance proportional to ``exp((2 lambda_k - lambda_1) T)``;
    the slowest decay over all large indices sets the half-life. Without any
    large index (critical growth) there is nothing to estimate and the horizon
    is ``t`` itself.
    """
    from .spectral import large_indices

    rates = [cfg.lambda1 - 2.0 * index_eigenvalue(cfg, n) for n in large_indices(cfg)]
    if not rates:
        return float(t)
    slowest = min(rates)
    return t + half_lives * math.log(2.0) / slowest

