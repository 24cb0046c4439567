"""Gaussian-process Bayesian optimization with expected improvement."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.special import ndtr

from ..errors import NumericalFailure
from ..searchspace import decode_unit, encode_unit
from .base import Optimizer

log = logging.getLogger(__name__)

LENGTHSCALES = (0.1, 0.2, 0.5, 1.0)
JITTERS = (1e-6, 1e-5, 1e-4, 1e-3)
N_CANDIDATES = 1024
N_STARTUP = 5
XI = 0.01

_SQRT5 = math.sqrt(5.0)


def matern52(a: np.ndarray, b: np.ndarray, lengthscale: float) -> np.ndarray:
    d = np.sqrt(np.maximum(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1), 0.0))
    r = _SQRT5 * d / lengthscale
    return (1.0 + r + r * r / 3.0) * np.exp(-r)


def _factor(k: np.ndarray):
    n = k.shape[0]
    for jitter in JITTERS:
        try:
            return cholesky(k + jitter * np.eye(n), lower=True), jitter
        except LinAlgError:
            continue
    raise NumericalFailure("kernel matrix not positive definite after jitter escalation")


class GaussianProcess:
    """Zero-mean GP with unit signal variance on standardized targets.

    The isotropic Matérn-5/2 lengthscale is picked from a fixed grid by
    log marginal likelihood (first grid value wins ties).
    """

    def __init__(self, lengthscales=LENGTHSCALES):
        self.lengthscales = tuple(lengthscales)

    def fit(self, x, y) -> "GaussianProcess":
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if x.shape[0] == 0:
            raise ValueError("need at least one observation")
        best = None
        for ell in self.lengthscales:
            chol, jitter = _factor(matern52(x, x, ell))
            alpha = solve_triangular(chol.T, solve_triangular(chol, y, lower=True), lower=False)
            lml = (-0.5 * float(y @ alpha) - float(np.log(np.diag(chol)).sum())
                   - 0.5 * len(y) * math.log(2 * math.pi))
            if best is None or lml > best[0]:
                best = (lml, ell, chol, alpha, jitter)
        self.log_marginal_likelihood, self.lengthscale, self._chol, self._alpha, self.jitter = best
        self._x = x
        return self

    def predict(self, xq) -> tuple[np.ndarray, np.ndarray]:
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        ks = matern52(xq, self._x, self.lengthscale)
        mean = ks @ self._alpha
        v = solve_triangular(self._chol, ks.T, lower=True)
        var = np.maximum(1.0 - (v * v).sum(axis=0), 0.0)
        return mean, var


def fit_gp_posterior(x, y, xq) -> tuple[np.ndarray, np.ndarray]:
    return GaussianProcess().fit(x, y).predict(xq)


def expected_improvement(mean, std, best: float, xi: float = XI):
    """EI for minimization; reduces to ``max(0, best - mean - xi)`` where std is 0."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    improve = best - mean - xi
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(std > 0, improve / np.where(std > 0, std, 1.0), 0.0)
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    ei = np.where(std > 0, improve * ndtr(z) + std * pdf, np.maximum(improve, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def standardize(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    sd = float(y.std())
    return (y - y.mean()) / (sd if sd > 0 else 1.0)


@dataclass
class GPBO(Optimizer):
    algorithm = "gpbo"
    n_candidates: int = N_CANDIDATES
    n_startup: int = N_STARTUP
    xi: float = XI

    def suggest(self) -> tuple[dict, int]:
        data = self.model_data()
        self.n_suggested += 1
        if len(data) < self.n_startup:
            return self._random(), self.b_max
        x = np.array([encode_unit(self.space, t.config) for t in data])
        y = standardize([t.objective for t in data])
        candidates = self.rng.random((self.n_candidates, len(self.space)))
        try:
            gp = GaussianProcess().fit(x, y)
        except NumericalFailure as exc:
            log.warning("GP fit failed (%s); falling back to a random suggestion", exc)
            return self._random(), self.b_max
        idx = self.acquire(gp, candidates, float(y.min()))
        return decode_unit(self.space, candidates[idx]), self.b_max

    def acquire(self, gp: GaussianProcess, candidates: np.ndarray, best: float) -> int:
        mean, var = gp.predict(candidates)
        return int(np.argmax(expected_improvement(mean, np.sqrt(var), best, self.xi)))
