"""Univariate uncertainty models for (pseudo-)measurements.

Every model exposes ``logpdf``, ``dlogpdf`` and ``d2logpdf`` (vectorised over
numpy arrays), ``sample``, ``mean``/``var``, ``max_logpdf`` and ``scaled``.
The module-level functions mirror these methods and add the Gaussian
reductions used to build approximate models from a mixture.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np
from scipy import integrate, special

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class DistributionError(ValueError):
    pass


class DomainError(DistributionError):
    """Derivative requested on or outside the boundary of the support."""


class UnboundedDensityError(DistributionError):
    pass


class UnsupportedModelError(DistributionError):
    pass


def _logsumexp(a, keepdims=False):
    """``log(sum(exp(a)))`` over the last axis; all-``-inf`` rows give ``-inf``."""
    m = np.max(a, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=-1, keepdims=True)) + m
    return out if keepdims else out[..., 0]


def _ret(x, val):
    return float(val) if np.ndim(x) == 0 else val


def _newton_refine(model, x0: float, lo: float, hi: float, iters: int = 50) -> float:
    """Polish a grid maximiser of ``model.logpdf`` with safeguarded Newton steps."""
    x = x0
    for _ in range(iters):
        if not (lo < x < hi):
            break
        g = model.dlogpdf(x)
        h = model.d2logpdf(x)
        if h >= 0:
            break
        step = -g / h
        xn = min(max(x + step, lo + 0.5 * (x - lo)), hi - 0.5 * (hi - x))
        if model.logpdf(xn) < model.logpdf(x) - 1e-15:
            break
        if abs(xn - x) <= 1e-15 * max(1.0, abs(x)):
            x = xn
            break
        x = xn
    return x


def _grid_mode(model, lo: float, hi: float, points: int = 1000) -> float:
    grid = np.linspace(lo, hi, points)
    vals = model.logpdf(grid)
    k = int(np.argmax(vals))
    if not np.isfinite(vals[k]):
        raise UnboundedDensityError(f"{type(model).__name__}: no finite density on the search grid")
    x = float(grid[k])
    # keep refinement inside the neighbouring grid cells and the open support
    left = grid[max(k - 1, 0)]
    right = grid[min(k + 1, points - 1)]
    if k in (0, points - 1):
        return x
    return _newton_refine(model, x, left, right)


@dataclass(frozen=True)
class Gaussian:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0):
            raise DistributionError("Gaussian sigma must be positive")

    support = (-math.inf, math.inf)

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return _ret(x, -0.5 * z * z - math.log(self.sigma) - LOG_SQRT_2PI)

    def dlogpdf(self, x):
        return _ret(x, -(np.asarray(x, dtype=float) - self.mu) / self.sigma**2)

    def d2logpdf(self, x):
        return _ret(x, np.full(np.shape(x), -1.0 / self.sigma**2))

    def sample(self, rng: np.random.Generator, size=None):
        return rng.normal(self.mu, self.sigma, size)

    def mean(self) -> float:
        return self.mu

    def var(self) -> float:
        return self.sigma**2

    def mode(self) -> float:
        return self.mu

    def scaled(self, k: float) -> "Gaussian":
        return Gaussian(k * self.mu, k * self.sigma)


@dataclass(frozen=True)
class Laplacian:
    mu: float
    b: float

    def __post_init__(self):
        if not (self.b > 0):
            raise DistributionError("Laplacian scale must be positive")

    support = (-math.inf, math.inf)

    def logpdf(self, x):
        return _ret(x, -np.abs(np.asarray(x, dtype=float) - self.mu) / self.b - math.log(2.0 * self.b))

    def dlogpdf(self, x):
        # subgradient 0 at the kink
        return _ret(x, -np.sign(np.asarray(x, dtype=float) - self.mu) / self.b)

    def d2logpdf(self, x):
        return _ret(x, np.zeros(np.shape(x)))

    def sample(self, rng, size=None):
        return rng.laplace(self.mu, self.b, size)

    def mean(self) -> float:
        return self.mu

    def var(self) -> float:
        return 2.0 * self.b**2

    def mode(self) -> float:
        return self.mu

    def scaled(self, k: float) -> "Laplacian":
        return Laplacian(k * self.mu, k * self.b)


@dataclass(frozen=True)
class Beta4:
    """Four-parameter Beta distribution on ``[xmin, xmax]``."""

    alpha: float
    beta: float
    xmin: float
    xmax: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise DistributionError("Beta4 shape parameters must be positive")
        if not (self.xmin < self.xmax):
            raise DistributionError("Beta4 requires xmin < xmax")

    @property
    def support(self):
        return (self.xmin, self.xmax)

    @property
    def log_norm(self) -> float:
        # log B(alpha, beta) + (alpha + beta - 1) log(range), via log-gamma
        lbeta = special.gammaln(self.alpha) + special.gammaln(self.beta) - special.gammaln(self.alpha + self.beta)
        return float(lbeta + (self.alpha + self.beta - 1.0) * math.log(self.xmax - self.xmin))

    def logpdf(self, x):
        xa = np.asarray(x, dtype=float)
        inside = (xa >= self.xmin) & (xa <= self.xmax)
        with np.errstate(divide="ignore", invalid="ignore"):
            lo = np.where(inside, xa - self.xmin, 1.0)
            hi = np.where(inside, self.xmax - xa, 1.0)
            val = special.xlogy(self.alpha - 1.0, lo) + special.xlogy(self.beta - 1.0, hi) - self.log_norm
        return _ret(x, np.where(inside, val, -np.inf))

    def _check_interior(self, xa):
        if np.any((xa <= self.xmin) | (xa >= self.xmax)):
            raise DomainError(f"Beta4 derivative requested outside the open support ({self.xmin}, {self.xmax})")

    def dlogpdf(self, x):
        xa = np.asarray(x, dtype=float)
        self._check_interior(xa)
        return _ret(x, (self.alpha - 1.0) / (xa - self.xmin) - (self.beta - 1.0) / (self.xmax - xa))

    def d2logpdf(self, x):
        xa = np.asarray(x, dtype=float)
        self._check_interior(xa)
        return _ret(x, -(self.alpha - 1.0) / (xa - self.xmin) ** 2 - (self.beta - 1.0) / (self.xmax - xa) ** 2)

    def sample(self, rng, size=None):
        return self.xmin + (self.xmax - self.xmin) * rng.beta(self.alpha, self.beta, size)

    def mean(self) -> float:
        return self.xmin + (self.xmax - self.xmin) * self.alpha / (self.alpha + self.beta)

    def var(self) -> float:
        a, b = self.alpha, self.beta
        return (self.xmax - self.xmin) ** 2 * a * b / ((a + b) ** 2 * (a + b + 1.0))

    def mode(self) -> float:
        a, b = self.alpha, self.beta
        if a < 1.0 or b < 1.0:
            raise UnboundedDensityError("Beta4 density is unbounded when alpha < 1 or beta < 1")
        if a == 1.0 and b == 1.0:
            return 0.5 * (self.xmin + self.xmax)
        return self.xmin + (self.xmax - self.xmin) * (a - 1.0) / (a + b - 2.0)

    def scaled(self, k: float) -> "Beta4":
        if k <= 0:
            raise DistributionError("scale factor must be positive")
        return Beta4(self.alpha, self.beta, k * self.xmin, k * self.xmax)


@dataclass(frozen=True)
class GMM:
    """Gaussian mixture; ``weights`` must sum to one."""

    weights: tuple[float, ...]
    mus: tuple[float, ...]
    sigmas: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "mus", tuple(float(m) for m in self.mus))
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        n = len(self.weights)
        if n < 1 or len(self.mus) != n or len(self.sigmas) != n:
            raise DistributionError("GMM needs matching, non-empty weight/mu/sigma lists")
        if any(w < 0 for w in self.weights):
            raise DistributionError("GMM weights must be non-negative")
        if abs(math.fsum(self.weights) - 1.0) > 1e-12:
            raise DistributionError(f"GMM weights sum to {math.fsum(self.weights)!r}, not 1")
        if any(not (s > 0) for s in self.sigmas):
            raise DistributionError("GMM sigmas must be positive")

    support = (-math.inf, math.inf)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def _component_logs(self, xa):
        w = np.asarray(self.weights)
        m = np.asarray(self.mus)
        s = np.asarray(self.sigmas)
        z = (xa[..., None] - m) / s
        with np.errstate(divide="ignore"):
            logw = np.log(w)
        return logw - 0.5 * z * z - np.log(s) - LOG_SQRT_2PI, z / s

    def logpdf(self, x):
        xa = np.asarray(x, dtype=float)
        logs, _ = self._component_logs(xa)
        return _ret(x, _logsumexp(logs))

    def _resp(self, xa):
        logs, zs = self._component_logs(xa)
        r = np.exp(logs - _logsumexp(logs, keepdims=True))
        return r, zs

    def dlogpdf(self, x):
        xa = np.asarray(x, dtype=float)
        r, zs = self._resp(xa)
        return _ret(x, -np.sum(r * zs, axis=-1))

    def d2logpdf(self, x):
        xa = np.asarray(x, dtype=float)
        r, zs = self._resp(xa)
        s2 = np.asarray(self.sigmas) ** 2
        g = -np.sum(r * zs, axis=-1)
        return _ret(x, np.sum(r * (zs * zs - 1.0 / s2), axis=-1) - g * g)

    def sample(self, rng, size=None):
        n = 1 if size is None else int(np.prod(size))
        comp = rng.choice(self.n_components, size=n, p=np.asarray(self.weights) / sum(self.weights))
        out = rng.normal(np.asarray(self.mus)[comp], np.asarray(self.sigmas)[comp])
        return float(out[0]) if size is None else out.reshape(size)

    def mean(self) -> float:
        return float(np.dot(self.weights, self.mus))

    def var(self) -> float:
        w, m, s = map(np.asarray, (self.weights, self.mus, self.sigmas))
        mu = np.dot(w, m)
        return float(np.dot(w, s * s + (m - mu) ** 2))

    def mode(self) -> float:
        m, s = np.asarray(self.mus), np.asarray(self.sigmas)
        return _grid_mode(self, float(np.min(m - 5 * s)), float(np.max(m + 5 * s)))

    def scaled(self, k: float) -> "GMM":
        if k <= 0:
            raise DistributionError("scale factor must be positive")
        return GMM(self.weights, tuple(k * m for m in self.mus), tuple(k * s for s in self.sigmas))


@dataclass(frozen=True)
class PolynomialLogPdf:
    """``log f(x) = sum_k coefficients[k] * x**k`` on ``[xmin, xmax]``; not necessarily normalised."""

    coefficients: tuple[float, ...]
    xmin: float
    xmax: float

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if not self.coefficients or not all(math.isfinite(c) for c in self.coefficients):
            raise DistributionError("polynomial coefficients must be finite and non-empty")
        if not (self.xmin < self.xmax):
            raise DistributionError("polynomial support requires xmin < xmax")

    @property
    def support(self):
        return (self.xmin, self.xmax)

    @property
    def poly(self) -> np.polynomial.Polynomial:
        return np.polynomial.Polynomial(self.coefficients)

    def logpdf(self, x):
        xa = np.asarray(x, dtype=float)
        inside = (xa >= self.xmin) & (xa <= self.xmax)
        return _ret(x, np.where(inside, self.poly(xa), -np.inf))

    def _check_interior(self, xa):
        if np.any((xa <= self.xmin) | (xa >= self.xmax)):
            raise DomainError(f"polynomial derivative requested outside ({self.xmin}, {self.xmax})")

    def dlogpdf(self, x):
        xa = np.asarray(x, dtype=float)
        self._check_interior(xa)
        return _ret(x, self.poly.deriv(1)(xa))

    def d2logpdf(self, x):
        xa = np.asarray(x, dtype=float)
        self._check_interior(xa)
        return _ret(x, self.poly.deriv(2)(xa))

    def log_normalizer(self) -> float:
        """``log of the integral of exp(poly)`` over the support (adaptive quadrature)."""
        top = self.max_logpdf()
        z, _ = integrate.quad(lambda t: math.exp(self.poly(t) - top), self.xmin, self.xmax, limit=200)
        return top + math.log(z)

    def normalized(self) -> "PolynomialLogPdf":
        c = list(self.coefficients)
        c[0] -= self.log_normalizer()
        return PolynomialLogPdf(tuple(c), self.xmin, self.xmax)

    def max_logpdf(self) -> float:
        return float(self.logpdf(self.mode()))

    def _moment(self, k: int, about: float = 0.0) -> float:
        lz = self.log_normalizer()
        val, _ = integrate.quad(lambda t: (t - about) ** k * math.exp(self.poly(t) - lz), self.xmin, self.xmax, limit=200)
        return val

    def mean(self) -> float:
        return self._moment(1)

    def var(self) -> float:
        return self._moment(2, self.mean())

    def mode(self) -> float:
        return _grid_mode(self, self.xmin, self.xmax)

    def sample(self, rng, size=None):
        """Rejection sampling from a uniform proposal bounded by the density maximum."""
        top = self.max_logpdf()
        if not math.isfinite(top):
            raise UnsupportedModelError("cannot bound the polynomial density for rejection sampling")
        n = 1 if size is None else int(np.prod(size))
        out = np.empty(0)
        while out.size < n:
            m = max(2 * (n - out.size), 16)
            cand = rng.uniform(self.xmin, self.xmax, m)
            keep = np.log(rng.uniform(size=m)) <= self.poly(cand) - top
            out = np.concatenate([out, cand[keep]])
        out = out[:n]
        return float(out[0]) if size is None else out.reshape(size)

    def scaled(self, k: float) -> "PolynomialLogPdf":
        if k <= 0:
            raise DistributionError("scale factor must be positive")
        c = [ck / k**i for i, ck in enumerate(self.coefficients)]
        c[0] -= math.log(k)
        return PolynomialLogPdf(tuple(c), k * self.xmin, k * self.xmax)


UncertaintyModel = Union[Gaussian, Laplacian, Beta4, GMM, PolynomialLogPdf]


# -- functional interface ------------------------------------------------------

def logpdf(model: UncertaintyModel, x):
    return model.logpdf(x)


def dlogpdf(model: UncertaintyModel, x):
    return model.dlogpdf(x)


def d2logpdf(model: UncertaintyModel, x):
    return model.d2logpdf(x)


def sample(model: UncertaintyModel, rng: np.random.Generator, size=None):
    return model.sample(rng, size)


def mode(model: UncertaintyModel) -> float:
    return model.mode()


@functools.lru_cache(maxsize=256)
def max_logpdf(model: UncertaintyModel) -> float:
    """``log max_x f(x)`` (cached per model; models are immutable)."""
    if isinstance(model, PolynomialLogPdf):
        return model.max_logpdf()
    return float(model.logpdf(model.mode()))


def shift_constant(model: UncertaintyModel, literal: bool = False) -> float:
    """Constant making ``xi - log f(x)`` non-negative.

    By default ``xi = log max f`` so the residual vanishes at the mode. With
    ``literal=True`` the absolute value ``|min(-log f)|`` is returned instead,
    which is only tight when ``max f >= 1``.
    """
    xi = max_logpdf(model)
    if not math.isfinite(xi):
        raise UnboundedDensityError(f"{type(model).__name__} has no finite density maximum")
    return abs(xi) if literal else xi


def ge_reduce(gmm: GMM, selection: Iterable[int] | None = None) -> Gaussian:
    """Collapse the selected mixture components into one equivalent Gaussian.

    ``selection`` holds 0-based component indices; the default keeps only the
    component with the largest weight.
    """
    idx = [int(np.argmax(gmm.weights))] if selection is None else sorted(set(int(i) for i in selection))
    if not idx:
        raise DistributionError("GE selection must contain at least one component")
    if any(i < 0 or i >= gmm.n_components for i in idx):
        raise DistributionError(f"GE selection {idx} out of range for {gmm.n_components} components")
    w = np.asarray(gmm.weights)[idx]
    m = np.asarray(gmm.mus)[idx]
    s = np.asarray(gmm.sigmas)[idx]
    w_eq = w.sum()
    if w_eq <= 0:
        raise DistributionError("selected components have zero total weight")
    mu_eq = float(np.dot(w, m) / w_eq)
    var_eq = float(np.dot(w, s * s + (m - mu_eq) ** 2) / w_eq)
    return Gaussian(mu_eq, math.sqrt(var_eq))


def ga_fit(model: UncertaintyModel) -> Gaussian:
    """Gaussian approximation by moment matching (the large-sample Gaussian MLE)."""
    if isinstance(model, Gaussian):
        return model
    if isinstance(model, GMM):
        return ge_reduce(model, range(model.n_components))
    return Gaussian(model.mean(), math.sqrt(model.var()))


def rescale(model: UncertaintyModel, k: float) -> UncertaintyModel:
    """Distribution of ``k * X`` for ``X ~ model``, ``k > 0``."""
    if not (k > 0):
        raise DistributionError("scale factor must be positive")
    return model.scaled(k)


# -- JSON ---------------------------------------------------------------------

def to_dict(model: UncertaintyModel) -> dict:
    if isinstance(model, Gaussian):
        return {"type": "gaussian", "mu": model.mu, "sigma": model.sigma}
    if isinstance(model, Laplacian):
        return {"type": "laplacian", "mu": model.mu, "b": model.b}
    if isinstance(model, Beta4):
        return {"type": "beta4", "alpha": model.alpha, "beta": model.beta, "xmin": model.xmin, "xmax": model.xmax}
    if isinstance(model, GMM):
        return {"type": "gmm", "weights": list(model.weights), "mu": list(model.mus), "sigma": list(model.sigmas)}
    if isinstance(model, PolynomialLogPdf):
        return {"type": "polynomial", "coefficients": list(model.coefficients), "xmin": model.xmin, "xmax": model.xmax}
    raise UnsupportedModelError(f"cannot serialise {type(model).__name__}")


def from_dict(d: dict) -> UncertaintyModel:
    kind = str(d.get("type", "")).lower()
    try:
        if kind == "gaussian":
            return Gaussian(float(d["mu"]), float(d["sigma"]))
        if kind == "laplacian":
            return Laplacian(float(d["mu"]), float(d["b"]))
        if kind == "beta4":
            return Beta4(float(d["alpha"]), float(d["beta"]), float(d["xmin"]), float(d["xmax"]))
        if kind == "gmm":
            return GMM(tuple(d["weights"]), tuple(d["mu"]), tuple(d["sigma"]))
        if kind == "polynomial":
            return PolynomialLogPdf(tuple(d["coefficients"]), float(d["xmin"]), float(d["xmax"]))
    except KeyError as exc:
        raise DistributionError(f"{kind} distribution missing field {exc}") from exc
    raise UnsupportedModelError(f"unknown distribution type {d.get('type')!r}")
