"""Likelihood backends, multi-start maximum-likelihood fits and Hessians.

Gaussian likelihoods only: iid noise with known sigma, or a full covariance
matrix. Normalization constants are included so description lengths and
evidences are comparable across sample sizes. Observed information comes
from central finite differences with one Richardson refinement.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy import optimize as _opt

from .exprtree import CONST, PARAM, VAR, ExprTree, _postorder, _UNARY_IMPL, _BINARY_IMPL, canonical_form
from .util import rng_for

_PENALTY = 1e10
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class IIDNoise:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


class FullCovNoise:
    """Symmetric positive-definite covariance; Cholesky cached."""

    def __init__(self, cov: np.ndarray):
        cov = np.asarray(cov, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError("covariance must be a square matrix")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        self.cov = cov
        self.chol = np.linalg.cholesky(cov)  # raises LinAlgError if not PD
        self.log_det = 2.0 * float(np.sum(np.log(np.diag(self.chol))))


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    noise: IIDNoise | FullCovNoise

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if x.shape[0] != y.shape[0] or y.shape[0] < 1:
            raise ValueError("x and y must hold the same, positive number of rows")
        if isinstance(self.noise, FullCovNoise) and self.noise.cov.shape[0] != y.shape[0]:
            raise ValueError("covariance size does not match data")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @classmethod
    def iid(cls, x, y, sigma: float) -> "Dataset":
        return cls(np.asarray(x, dtype=float), np.asarray(y, dtype=float), IIDNoise(float(sigma)))

    @classmethod
    def fullcov(cls, x, y, cov) -> "Dataset":
        return cls(np.asarray(x, dtype=float), np.asarray(y, dtype=float), FullCovNoise(cov))


class FitStatus(Enum):
    OK = "ok"
    DEGENERATE_INFO = "degenerate_info"
    NO_CONVERGENCE = "no_convergence"
    INVALID_DOMAIN = "invalid_domain"


@dataclass(frozen=True)
class FitResult:
    theta_hat: np.ndarray
    logL_hat: float
    info: np.ndarray          # observed information, -d2 logL at theta_hat
    n_data: int
    status: FitStatus
    message: str = ""

    @property
    def n_params(self) -> int:
        return self.theta_hat.shape[0]


@dataclass(frozen=True)
class FitConfig:
    restarts: int = 20
    seed: int = 0
    max_iters: int = 200
    tol: float = 1e-8
    start_magnitude: tuple[float, float] = (1e-3, 1e3)
    abs_pow: bool = False

    def metadata(self) -> dict:
        return {
            "restarts": self.restarts,
            "seed": self.seed,
            "max_iters": self.max_iters,
            "tol": self.tol,
            "start_magnitude": list(self.start_magnitude),
            "abs_pow": self.abs_pow,
        }


class CompiledTree:
    """Flat postorder program for fast repeated evaluation of one tree."""

    def __init__(self, tree: ExprTree):
        self.n_params = tree.n_params
        program = []
        index: dict[int, int] = {}
        for node_id in _postorder(tree):
            nd = tree.nodes[node_id]
            index[node_id] = len(program)
            args = tuple(index[c] for c in nd.children)
            program.append((nd.symbol, nd.payload, args))
        self.program = program

    def __call__(self, theta: np.ndarray, x: np.ndarray, abs_pow: bool = False) -> np.ndarray:
        n = x.shape[0]
        values: list[np.ndarray] = []
        with np.errstate(all="ignore"):
            for symbol, payload, args in self.program:
                if symbol == VAR:
                    values.append(x[:, payload or 0])
                elif symbol == PARAM:
                    values.append(np.full(n, theta[payload]))
                elif symbol == CONST:
                    values.append(np.full(n, float(payload)))
                elif len(args) == 1:
                    values.append(_UNARY_IMPL[symbol](values[args[0]]))
                elif symbol == "pow" and abs_pow:
                    values.append(np.power(np.abs(values[args[0]]), values[args[1]]))
                else:
                    values.append(_BINARY_IMPL[symbol](values[args[0]], values[args[1]]))
        return values[-1]


def _residual_loglike(pred: np.ndarray, data: Dataset) -> float:
    if not np.all(np.isfinite(pred)):
        return -math.inf
    r = pred - data.y
    if isinstance(data.noise, IIDNoise):
        s = data.noise.sigma
        return float(-0.5 * np.dot(r, r) / (s * s) - 0.5 * data.n * (LOG_2PI + 2.0 * math.log(s)))
    z = np.linalg.solve(data.noise.chol, r)
    return float(-0.5 * np.dot(z, z) - 0.5 * (data.noise.log_det + data.n * LOG_2PI))


def log_likelihood(tree: ExprTree, theta: Sequence[float], data: Dataset, *,
                   abs_pow: bool = False) -> float:
    """Gaussian log-likelihood including constants; -inf on domain errors."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[0] != tree.n_params:
        raise ValueError(f"expected {tree.n_params} parameters, got {theta.shape[0]}")
    pred = CompiledTree(tree)(theta, data.x, abs_pow)
    return _residual_loglike(pred, data)


def _objective(compiled: CompiledTree, data: Dataset, abs_pow: bool) -> Callable:
    def f(theta: np.ndarray) -> float:
        ll = _residual_loglike(compiled(theta, data.x, abs_pow), data)
        return -ll if math.isfinite(ll) else _PENALTY
    return f


def _starts(p: int, config: FitConfig, canonical: str) -> np.ndarray:
    rng = rng_for(config.seed, "fit-starts", canonical)
    lo, hi = config.start_magnitude
    mags = np.exp(rng.uniform(math.log(lo), math.log(hi), size=(max(config.restarts - 1, 0), p)))
    signs = rng.choice([-1.0, 1.0], size=mags.shape)
    return np.vstack([np.ones((1, p)), mags * signs])


def fit_params(tree: ExprTree, data: Dataset, config: FitConfig = FitConfig()) -> FitResult:
    """Best of multi-start Nelder-Mead plus a BFGS polish, then information.

    Deterministic given the config seed (start points are drawn from a
    counter-based stream keyed on the tree's canonical form, so parallel
    and serial runs agree).
    """
    p = tree.n_params
    compiled = CompiledTree(tree)
    if p == 0:
        ll = _residual_loglike(compiled(np.empty(0), data.x, config.abs_pow), data)
        status = FitStatus.OK if math.isfinite(ll) else FitStatus.INVALID_DOMAIN
        return FitResult(np.empty(0), ll, np.empty((0, 0)), data.n, status)

    f = _objective(compiled, data, config.abs_pow)
    best_x, best_val, best_success = None, math.inf, False
    for start in _starts(p, config, canonical_form(tree)):
        if f(start) >= _PENALTY:
            continue
        res = _opt.minimize(f, start, method="Nelder-Mead",
                            options={"maxiter": config.max_iters * p,
                                     "xatol": 1e-6, "fatol": config.tol})
        if res.fun < best_val:
            best_x, best_val, best_success = np.asarray(res.x), float(res.fun), bool(res.success)
    if best_x is None or best_val >= _PENALTY:
        return FitResult(np.full(p, np.nan), -math.inf, np.full((p, p), np.nan),
                         data.n, FitStatus.INVALID_DOMAIN, "no start with finite likelihood")
    try:
        polish = _opt.minimize(f, best_x, method="BFGS",
                               options={"gtol": 1e-8, "maxiter": 200})
        if math.isfinite(polish.fun) and polish.fun < best_val:
            best_x, best_val = np.asarray(polish.x), float(polish.fun)
            best_success = best_success or bool(polish.success)
    except (ValueError, FloatingPointError):
        pass

    theta_hat = best_x
    logl = -best_val
    info = observed_information(tree, theta_hat, data, abs_pow=config.abs_pow)
    status = FitStatus.OK
    message = ""
    if not np.all(np.isfinite(info)) or np.any(np.diag(info) <= 0):
        status = FitStatus.DEGENERATE_INFO
        message = "non-finite or non-positive observed information"
    elif not best_success:
        status = FitStatus.NO_CONVERGENCE
        message = "no optimizer run reported convergence"
    return FitResult(theta_hat, logl, info, data.n, status, message)


def negative_hessian(f: Callable[[np.ndarray], float], theta: np.ndarray,
                     steps: np.ndarray | None = None) -> np.ndarray:
    """-d2 f via central differences with one Richardson refinement.

    Step sizes default to max(1e-4 |theta_i|, 1e-6), the rounding/truncation
    balance point for second differences in double precision (quartic root
    of machine epsilon); quadratic targets come out exact to ~1e-7
    relative. Symmetry is enforced by averaging with the transpose.
    """
    theta = np.asarray(theta, dtype=float)
    p = theta.shape[0]
    if steps is None:
        steps = np.maximum(1e-4 * np.abs(theta), 1e-6)

    def hess_at(h: np.ndarray) -> np.ndarray:
        out = np.empty((p, p))
        f0 = f(theta)
        for i in range(p):
            ei = np.zeros(p)
            ei[i] = h[i]
            out[i, i] = (f(theta + ei) - 2.0 * f0 + f(theta - ei)) / (h[i] * h[i])
            for j in range(i + 1, p):
                ej = np.zeros(p)
                ej[j] = h[j]
                out[i, j] = out[j, i] = (
                    f(theta + ei + ej) - f(theta + ei - ej)
                    - f(theta - ei + ej) + f(theta - ei - ej)
                ) / (4.0 * h[i] * h[j])
        return out

    coarse = hess_at(steps)
    fine = hess_at(steps / 2.0)
    hess = (4.0 * fine - coarse) / 3.0
    hess = 0.5 * (hess + hess.T)
    return -hess


def observed_information(tree: ExprTree, theta_hat: np.ndarray, data: Dataset, *,
                         at: str = "likelihood",
                         log_prior: Callable[[np.ndarray], float] | None = None,
                         abs_pow: bool = False) -> np.ndarray:
    """Observed information of the log-likelihood or log-posterior."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    if theta_hat.shape[0] == 0:
        return np.empty((0, 0))
    compiled = CompiledTree(tree)

    def target(theta: np.ndarray) -> float:
        ll = _residual_loglike(compiled(theta, data.x, abs_pow), data)
        if at == "posterior":
            if log_prior is None:
                raise ValueError("posterior information needs a log_prior callable")
            ll = ll + log_prior(theta)
        return ll if math.isfinite(ll) else -_PENALTY

    return negative_hessian(target, theta_hat)


def _fit_worker(tree: ExprTree) -> FitResult:
    return fit_params(tree, _WORKER_DATA, _WORKER_CONFIG)


_WORKER_DATA: Dataset | None = None
_WORKER_CONFIG: FitConfig | None = None


def _init_worker(data: Dataset, config: FitConfig) -> None:
    global _WORKER_DATA, _WORKER_CONFIG
    _WORKER_DATA = data
    _WORKER_CONFIG = config


def fit_many(trees: Sequence[ExprTree], data: Dataset, config: FitConfig = FitConfig(),
             workers: int | None = None) -> list[FitResult]:
    """Fit a batch of candidates, optionally across worker processes.

    Results are order-aligned with `trees` and identical for any worker
    count (per-tree deterministic seeding).
    """
    if workers is None or workers <= 1 or len(trees) < 32:
        return [fit_params(t, data, config) for t in trees]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                             initargs=(data, config)) as pool:
        chunk = max(8, len(trees) // (8 * workers))
        return list(pool.map(_fit_worker, trees, chunksize=chunk))
