"""Hermite eigenbasis of the super-OU mean semigroup.

The spatial motion is an Ornstein-Uhlenbeck process on R^d with
mean-reversion rate ``drift_c`` and stationary variance ``s^2``.  Its
generator is diagonalised by products of normalised probabilists' Hermite
polynomials ``He_n(x/s)/sqrt(n!)``; adding the constant growth rate
``alpha = beta*a`` shifts every eigenvalue, so the index ``n`` (a multi-index)
has eigenvalue ``|n|*c - alpha`` and sits on spectral level ``k = |n| + 1``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Mapping

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import ConfigurationError, IndexRangeError, InputError, TruncationError

EigenIndex = tuple[int, ...]

#: gamma(f) of the zero function; a sentinel, never a large integer.
GAMMA_INFINITY = math.inf

QUADRATURE_NODES = 64

REGIMES = ("large", "critical", "small")


@dataclass(frozen=True)
class SuperOUConfig:
    """Spatial OU parameters plus a constant quadratic branching mechanism.

    ``psi(lambda) = -a*lambda + b*lambda^2`` acts at rate ``branch_rate``.
    """

    dimension: int = 1
    drift_c: float = 1.0
    diffusion: float = 2.0
    branch_a: float = 2.0
    branch_b: float = 1.0
    branch_rate: float = 1.0
    k_max: int = 12
    #: Off only for harness self-tests on critical (a = 0) branching.
    require_supercritical: bool = True

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ConfigurationError(f"dimension must be 1 or 2, got {self.dimension}")
        for name in ("drift_c", "diffusion", "branch_b", "branch_rate"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"{name} must be a positive finite number, got {value}")
        if not math.isfinite(self.branch_a):
            raise ConfigurationError("branch_a must be finite")
        if self.require_supercritical and self.branch_a <= 0:
            raise ConfigurationError(
                f"supercritical requires lambda_1 < 0, i.e. branch_a > 0 (got branch_a={self.branch_a})"
            )
        if int(self.k_max) != self.k_max or self.k_max < 2:
            raise ConfigurationError(f"k_max must be an integer >= 2, got {self.k_max}")

    @property
    def stationary_variance(self) -> float:
        return self.diffusion / (2.0 * self.drift_c)

    @property
    def stationary_std(self) -> float:
        return math.sqrt(self.stationary_variance)

    @property
    def alpha(self) -> float:
        """Mean growth rate ``beta * a``."""
        return self.branch_rate * self.branch_a

    @property
    def big_a(self) -> float:
        """Second-moment coefficient ``A = beta * 2b``."""
        return self.branch_rate * 2.0 * self.branch_b

    @property
    def lambda1(self) -> float:
        return -self.alpha

    @property
    def max_level(self) -> int:
        return self.k_max + 1

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "drift_c": self.drift_c,
            "diffusion": self.diffusion,
            "branch_a": self.branch_a,
            "branch_b": self.branch_b,
            "branch_rate": self.branch_rate,
            "k_max": self.k_max,
        }


# ----------------------------------------------------------------------------
# indices, levels, eigenvalues


def level_of(n: EigenIndex) -> int:
    return sum(n) + 1


def indices_at_level(k: int, dimension: int) -> list[EigenIndex]:
    """Multi-indices with ``|n| = k - 1`` in lexicographic order (j = 1, 2, ...)."""
    total = k - 1
    if dimension == 1:
        return [(total,)]
    return [(i, total - i) for i in range(total + 1)]


def multiplicity(k: int, dimension: int) -> int:
    return len(indices_at_level(k, dimension))


def label_of(n: EigenIndex) -> tuple[int, int]:
    """The ``(k, j)`` level label of a multi-index (both 1-based)."""
    k = level_of(n)
    return k, indices_at_level(k, len(n)).index(tuple(n)) + 1


def index_from_label(k: int, j: int, dimension: int) -> EigenIndex:
    members = indices_at_level(k, dimension)
    if not 1 <= j <= len(members):
        raise IndexRangeError(f"level {k} has {len(members)} eigenfunctions, got j={j}")
    return members[j - 1]


def check_index(cfg: SuperOUConfig, n: Iterable[int]) -> EigenIndex:
    n = tuple(int(v) for v in n)
    if len(n) != cfg.dimension:
        raise IndexRangeError(f"index {n} has wrong dimension for d={cfg.dimension}")
    if any(v < 0 for v in n):
        raise IndexRangeError(f"negative Hermite order in {n}")
    if any(v > cfg.k_max for v in n):
        raise IndexRangeError(f"index {n} exceeds truncation k_max={cfg.k_max}")
    return n


def eigenvalue(cfg: SuperOUConfig, k: int) -> float:
    """k-th smallest distinct eigenvalue ``lambda_k = (k-1)*c - alpha`` of -L."""
    if int(k) != k or k < 1 or k > cfg.max_level:
        raise IndexRangeError(f"level k={k} outside 1..{cfg.max_level}")
    return (k - 1) * cfg.drift_c - cfg.alpha


def index_eigenvalue(cfg: SuperOUConfig, n: EigenIndex) -> float:
    return sum(n) * cfg.drift_c - cfg.alpha


def _compare_to_lambda1(cfg: SuperOUConfig, total_order: int) -> int:
    """Sign of ``2*lambda - lambda_1`` for an index of total order ``|n|``.

    ``2*lambda_k - lambda_1 = 2|n|c - alpha``; ties are detected with a
    relative tolerance so configs like c=0.1, a=0.2 land on the critical line.
    """
    lhs = 2.0 * total_order * cfg.drift_c
    if math.isclose(lhs, cfg.alpha, rel_tol=1e-12, abs_tol=1e-14):
        return 0
    return 1 if lhs > cfg.alpha else -1


def index_regime(cfg: SuperOUConfig, n: EigenIndex) -> str:
    return ("large", "critical", "small")[_compare_to_lambda1(cfg, sum(n)) + 1]


def level_regime(cfg: SuperOUConfig, k: int) -> str:
    return ("large", "critical", "small")[_compare_to_lambda1(cfg, k - 1) + 1]


def large_indices(cfg: SuperOUConfig) -> list[EigenIndex]:
    """All indices with ``2*lambda_k < lambda_1``, ordered by level then j."""
    out = []
    for k in range(1, cfg.max_level + 1):
        if level_regime(cfg, k) != "large":
            break
        out.extend(indices_at_level(k, cfg.dimension))
    return out


# ----------------------------------------------------------------------------
# pointwise evaluation


def hermite_table(y: np.ndarray, order: int) -> np.ndarray:
    """Normalised Hermite values ``He_n(y)/sqrt(n!)`` for n = 0..order.

    Uses the recurrence ``phi_{n+1} = (y*phi_n - sqrt(n)*phi_{n-1})/sqrt(n+1)``.
    Returns an array of shape ``(order + 1,) + y.shape``.
    """
    y = np.asarray(y, dtype=float)
    table = np.empty((order + 1,) + y.shape)
    table[0] = 1.0
    if order >= 1:
        table[1] = y
    for n in range(1, order):
        table[n + 1] = (y * table[n] - math.sqrt(n) * table[n - 1]) / math.sqrt(n + 1)
    return table


def _as_points(cfg: SuperOUConfig, x) -> tuple[np.ndarray, bool]:
    """Coerce ``x`` to shape (P, d); the flag says whether a scalar was given."""
    arr = np.asarray(x, dtype=float)
    scalar = False
    if cfg.dimension == 1:
        if arr.ndim == 0:
            arr, scalar = arr.reshape(1, 1), True
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
    else:
        if arr.ndim == 1:
            if arr.shape[0] != cfg.dimension:
                raise InputError(f"point must have {cfg.dimension} coordinates")
            arr, scalar = arr.reshape(1, -1), True
    if arr.ndim != 2 or arr.shape[1] != cfg.dimension:
        raise InputError(f"points must have shape (P, {cfg.dimension}), got {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise InputError("non-finite coordinate")
    return arr, scalar


def eigenfunction_eval(cfg: SuperOUConfig, idx: Iterable[int], x):
    """Evaluate ``prod_i He_{n_i}(x_i/s)/sqrt(n_i!)`` at one point or an array of points."""
    n = check_index(cfg, idx)
    pts, scalar = _as_points(cfg, x)
    y = pts / cfg.stationary_std
    out = np.ones(len(pts))
    for axis, order in enumerate(n):
        out *= hermite_table(y[:, axis], order)[order]
    return float(out[0]) if scalar else out


# ----------------------------------------------------------------------------
# spectral functions


class SpectralFunction:
    """A finite eigen-expansion ``sum_n a_n phi_n``.

    Instances are treated as immutable; arithmetic returns new objects.
    Exact zero coefficients are dropped so the support is meaningful.
    """

    __slots__ = ("_coeffs", "dimension")

    def __init__(self, coeffs: Mapping[Iterable[int], float] | None = None, dimension: int | None = None):
        clean: dict[EigenIndex, float] = {}
        for n, value in (coeffs or {}).items():
            key = (int(n),) if isinstance(n, (int, np.integer)) else tuple(int(v) for v in n)
            value = float(value)
            if not math.isfinite(value):
                raise InputError(f"non-finite coefficient at {key}")
            if any(v < 0 for v in key):
                raise IndexRangeError(f"negative Hermite order in {key}")
            if value != 0.0:
                clean[key] = clean.get(key, 0.0) + value
        dims = {len(k) for k in clean}
        if len(dims) > 1:
            raise InputError("mixed index dimensions in SpectralFunction")
        if dimension is None:
            dimension = next(iter(dims)) if dims else 1
        elif dims and next(iter(dims)) != dimension:
            raise InputError(f"indices have dimension {next(iter(dims))}, expected {dimension}")
        self._coeffs = {k: v for k, v in sorted(clean.items()) if v != 0.0}
        self.dimension = dimension

    @classmethod
    def basis(cls, n: Iterable[int] | int, scale: float = 1.0) -> "SpectralFunction":
        key = (n,) if isinstance(n, (int, np.integer)) else tuple(n)
        return cls({key: scale}, dimension=len(key))

    @classmethod
    def level(cls, k: int, j: int = 1, dimension: int = 1, scale: float = 1.0) -> "SpectralFunction":
        """Eigenfunction ``phi_j^{(k)}``."""
        return cls.basis(index_from_label(k, j, dimension), scale)

    @classmethod
    def zero(cls, dimension: int = 1) -> "SpectralFunction":
        return cls({}, dimension=dimension)

    @property
    def coeffs(self) -> dict[EigenIndex, float]:
        return dict(self._coeffs)

    def items(self):
        return self._coeffs.items()

    def indices(self) -> list[EigenIndex]:
        return list(self._coeffs)

    def __getitem__(self, n) -> float:
        key = (n,) if isinstance(n, int) else tuple(n)
        return self._coeffs.get(key, 0.0)

    def __len__(self) -> int:
        return len(self._coeffs)

    def __bool__(self) -> bool:
        return bool(self._coeffs)

    def is_zero(self) -> bool:
        return not self._coeffs

    def degree(self) -> int:
        """Largest per-coordinate Hermite order (0 for the zero function)."""
        return max((max(n) for n in self._coeffs), default=0)

    def _check_dim(self, other: "SpectralFunction"):
        if other.dimension != self.dimension and self and other:
            raise InputError("dimension mismatch between spectral functions")

    def __add__(self, other: "SpectralFunction") -> "SpectralFunction":
        self._check_dim(other)
        out = dict(self._coeffs)
        for n, v in other.items():
            out[n] = out.get(n, 0.0) + v
        return SpectralFunction(out, dimension=self.dimension if self else other.dimension)

    def __neg__(self) -> "SpectralFunction":
        return SpectralFunction({n: -v for n, v in self.items()}, dimension=self.dimension)

    def __sub__(self, other: "SpectralFunction") -> "SpectralFunction":
        return self + (-other)

    def __mul__(self, scalar: float) -> "SpectralFunction":
        return SpectralFunction({n: scalar * v for n, v in self.items()}, dimension=self.dimension)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpectralFunction):
            return NotImplemented
        return self._coeffs == other._coeffs and (self.dimension == other.dimension or not self)

    def __hash__(self):
        return hash((self.dimension, tuple(self._coeffs.items())))

    def __repr__(self) -> str:
        body = ", ".join(f"{n}: {v:.6g}" for n, v in self.items())
        return f"SpectralFunction({{{body}}})"

    def allclose(self, other: "SpectralFunction", rtol: float = 1e-12, atol: float = 1e-12) -> bool:
        keys = set(self._coeffs) | set(other._coeffs)
        return all(math.isclose(self[k], other[k], rel_tol=rtol, abs_tol=atol) for k in keys)

    def restrict(self, keep: Callable[[EigenIndex], bool]) -> "SpectralFunction":
        return SpectralFunction({n: v for n, v in self.items() if keep(n)}, dimension=self.dimension)

    def evaluate(self, cfg: SuperOUConfig, x):
        """Pointwise value at a point or at an array of points of shape (P, d)."""
        pts, scalar = _as_points(cfg, x)
        for n in self._coeffs:
            check_index(cfg, n)
        out = np.zeros(len(pts))
        if self._coeffs:
            y = pts / cfg.stationary_std
            order = self.degree()
            tables = [hermite_table(y[:, axis], order) for axis in range(cfg.dimension)]
            for n, a in self.items():
                term = tables[0][n[0]]
                for axis in range(1, cfg.dimension):
                    term = term * tables[axis][n[axis]]
                out += a * term
        return float(out[0]) if scalar else out

    def to_json(self) -> dict:
        return {"coeffs": [{"n": list(n), "value": v} for n, v in self.items()]}

    @classmethod
    def from_json(cls, obj: Mapping, dimension: int | None = None) -> "SpectralFunction":
        try:
            entries = obj["coeffs"]
            coeffs = {}
            for entry in entries:
                key = tuple(int(v) for v in entry["n"])
                coeffs[key] = coeffs.get(key, 0.0) + float(entry["value"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed spectral function JSON: {exc}") from exc
        return cls(coeffs, dimension=dimension)


def inner_product(f: SpectralFunction, g: SpectralFunction) -> float:
    """``<f, g>_m`` by Parseval."""
    small, big = (f, g) if len(f) <= len(g) else (g, f)
    return math.fsum(v * big[n] for n, v in small.items())


# ----------------------------------------------------------------------------
# Hermite products


@lru_cache(maxsize=None)
def _triple_1d(l: int, m: int, n: int) -> float:
    """``E[phi_l phi_m phi_n]`` under N(0,1) for normalised Hermite polynomials."""
    total = l + m + n
    if total % 2:
        return 0.0
    s = total // 2
    if s < l or s < m or s < n:
        return 0.0
    num = math.factorial(l) * math.factorial(m) * math.factorial(n)
    den = math.factorial(s - l) * math.factorial(s - m) * math.factorial(s - n)
    return math.sqrt(num) / den


def triple_product(cfg: SuperOUConfig, i1, i2, i3) -> float:
    """``<phi_{i1} phi_{i2} phi_{i3}>_m`` via the Hermite linearisation formula."""
    a, b, c = (check_index(cfg, i) for i in (i1, i2, i3))
    out = 1.0
    for axis in range(cfg.dimension):
        out *= _triple_1d(a[axis], b[axis], c[axis])
        if out == 0.0:
            return 0.0
    return out


def _product_terms_1d(m: int, n: int) -> list[tuple[int, float]]:
    return [(l, _triple_1d(m, n, l)) for l in range(abs(m - n), m + n + 1, 2)]


def multiply(f: SpectralFunction, g: SpectralFunction, cfg: SuperOUConfig) -> SpectralFunction:
    """Exact eigen-expansion of the pointwise product ``f*g``.

    Raises TruncationError if the product needs an order above ``k_max``.
    """
    out: dict[EigenIndex, float] = {}
    for n1, a in f.items():
        for n2, b in g.items():
            axis_terms = []
            for axis in range(cfg.dimension):
                terms = _product_terms_1d(n1[axis], n2[axis])
                if terms[-1][0] > cfg.k_max:
                    raise TruncationError(
                        f"product of orders {n1} and {n2} needs Hermite order {terms[-1][0]} > k_max={cfg.k_max}"
                    )
                axis_terms.append(terms)
            for combo in itertools.product(*axis_terms):
                key = tuple(l for l, _ in combo)
                w = a * b
                for _, c in combo:
                    w *= c
                out[key] = out.get(key, 0.0) + w
    return SpectralFunction(out, dimension=cfg.dimension)


# ----------------------------------------------------------------------------
# quadrature


@lru_cache(maxsize=8)
def _gh_1d(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    y, w = hermegauss(nodes)
    return y, w / math.sqrt(2.0 * math.pi)


def gauss_hermite(cfg: SuperOUConfig, nodes: int = QUADRATURE_NODES) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Hermite rule for the reference measure m.

    Returns points of shape (nodes**d, d) and weights summing to one.
    """
    y, w = _gh_1d(nodes)
    s = cfg.stationary_std
    if cfg.dimension == 1:
        return (s * y).reshape(-1, 1), w.copy()
    yy = np.stack(np.meshgrid(y, y, indexing="ij"), axis=-1).reshape(-1, 2)
    ww = np.outer(w, w).ravel()
    return s * yy, ww


def ou_transition_rule(cfg: SuperOUConfig, x, t: float, nodes: int = QUADRATURE_NODES):
    """Quadrature rule for the exact OU transition law from ``x`` over time ``t``.

    Per coordinate the law is N(x e^{-ct}, s^2 (1 - e^{-2ct})).
    """
    pts, _ = _as_points(cfg, x)
    if pts.shape[0] != 1:
        raise InputError("ou_transition_rule takes a single starting point")
    decay = math.exp(-cfg.drift_c * t)
    sd = cfg.stationary_std * math.sqrt(-math.expm1(-2.0 * cfg.drift_c * t))
    y, w = _gh_1d(nodes)
    if cfg.dimension == 1:
        return (pts[0, 0] * decay + sd * y).reshape(-1, 1), w.copy()
    yy = np.stack(np.meshgrid(y, y, indexing="ij"), axis=-1).reshape(-1, 2)
    return pts[0] * decay + sd * yy, np.outer(w, w).ravel()


def project(func: Callable, max_order: int, cfg: SuperOUConfig, tol: float = 1e-12) -> SpectralFunction:
    """Project a pointwise function onto indices of total order <= ``max_order``.

    ``func`` receives one coordinate array per dimension (``func(x)`` in 1-d,
    ``func(x, y)`` in 2-d).  Coefficients below ``tol`` times the largest one
    are treated as quadrature noise and dropped.
    """
    if max_order < 0:
        raise InputError("max_order must be non-negative")
    if max_order > cfg.k_max:
        raise IndexRangeError(f"max_order {max_order} exceeds k_max={cfg.k_max}")
    nodes = max(QUADRATURE_NODES, max_order + 1)
    pts, w = gauss_hermite(cfg, nodes)
    values = np.asarray(func(*pts.T), dtype=float)
    values = np.broadcast_to(values, (len(pts),))
    if not np.all(np.isfinite(values)):
        raise InputError("function evaluation produced non-finite values")
    y = pts / cfg.stationary_std
    tables = [hermite_table(y[:, axis], max_order) for axis in range(cfg.dimension)]
    weighted = values * w
    coeffs = {}
    for total in range(max_order + 1):
        for n in indices_at_level(total + 1, cfg.dimension):
            basis = tables[0][n[0]]
            for axis in range(1, cfg.dimension):
                basis = basis * tables[axis][n[axis]]
            coeffs[n] = float(np.dot(weighted, basis))
    scale = max((abs(v) for v in coeffs.values()), default=0.0)
    cut = tol * max(scale, 1.0)
    return SpectralFunction({n: v for n, v in coeffs.items() if abs(v) > cut}, dimension=cfg.dimension)


# ----------------------------------------------------------------------------
# regime classification


@dataclass(frozen=True)
class RegimeClassification:
    gamma: float  # int-valued, or GAMMA_INFINITY for the zero function
    regime: str  # large | critical | small | mixed | zero
    large: SpectralFunction  # part in C_l (2 lambda_k < lambda_1)
    critical: SpectralFunction  # part in C_c
    small: SpectralFunction  # part in C_s
    leading: SpectralFunction  # f*: the gamma(f)-level terms


def classify(f: SpectralFunction, cfg: SuperOUConfig) -> RegimeClassification:
    for n in f.indices():
        check_index(cfg, n)
    d = cfg.dimension
    if f.is_zero():
        zero = SpectralFunction.zero(d)
        return RegimeClassification(GAMMA_INFINITY, "zero", zero, zero, zero, zero)
    parts = {r: f.restrict(lambda n, r=r: index_regime(cfg, n) == r) for r in REGIMES}
    gamma = min(level_of(n) for n in f.indices())
    leading = f.restrict(lambda n: level_of(n) == gamma)
    nonzero = [r for r in REGIMES if parts[r]]
    regime = nonzero[0] if len(nonzero) == 1 else "mixed"
    return RegimeClassification(gamma, regime, parts["large"], parts["critical"], parts["small"], leading)
