"""Uncertainty quantification and uncertainty-weight iteration.

Points are (state, action) pairs given as an (n, 2) integer array. Weights
are the squared values sigma_i^2 >= 1 that downweight a record in the
regression.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular

from .const import CHOLESKY_JITTER, LINEAR_COVERING_CONSTANT, MAX_FINITE_CLASS_SIZE
from .errors import BackendError, WeightIterationError
from .helpers import dumps

_LOGGER = logging.getLogger(__name__)

MONOTONE_TOL = 1e-9


def as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.int64)
    if pts.ndim == 1 and pts.shape[0] == 2:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise BackendError(f"points must be (n, 2) state/action pairs, got shape {pts.shape}")
    return pts


def _check_lam(lam: float) -> None:
    if not lam > 0:
        raise BackendError(f"lambda must be > 0, got {lam}")


def _weights_for(points: np.ndarray, sigma_sq) -> np.ndarray:
    if sigma_sq is None:
        return np.ones(len(points))
    sigma_sq = np.asarray(sigma_sq, dtype=float)
    if sigma_sq.shape != (len(points),):
        raise BackendError(f"{len(sigma_sq)} weights for {len(points)} points")
    if (sigma_sq <= 0).any():
        raise BackendError("weights must be positive")
    return sigma_sq


def spd_factor(matrix: np.ndarray):
    """Cholesky factor of a symmetric positive-definite matrix, retried once with jitter."""
    try:
        return cho_factor(matrix, lower=True)
    except np.linalg.LinAlgError:
        _LOGGER.debug("Cholesky failed, retrying with jitter %s", CHOLESKY_JITTER)
        return cho_factor(matrix + CHOLESKY_JITTER * np.eye(len(matrix)), lower=True)


class FunctionClassBackend(ABC):
    """A function class over (state, action) pairs with values in [0, 1]."""

    kind: str

    @abstractmethod
    def log_covering(self, gamma: float) -> float:
        """Analytic ln N(gamma) of the class."""

    @abstractmethod
    def uncertainties(self, queries, points, sigma_sq, lam: float) -> np.ndarray:
        """Uncertainty of every query pair against the weighted points."""

    @abstractmethod
    def value(self, f, s: int, a: int) -> float:
        """Value of member f at (s, a)."""


class LinearBackend(FunctionClassBackend):
    """Linear class w^T phi(s, a) over a fixed feature map phi[s, a]."""

    kind = "linear"

    def __init__(self, phi: np.ndarray) -> None:
        phi = np.asarray(phi, dtype=float)
        if phi.ndim != 3:
            raise BackendError(f"phi must be indexed [s][a][k], got shape {phi.shape}")
        if (np.linalg.norm(phi, axis=-1) > 1 + 1e-12).any():
            raise BackendError("feature norms must be <= 1")
        self.phi = phi
        self.S, self.A, self.d = phi.shape

    @classmethod
    def one_hot(cls, S: int, A: int) -> LinearBackend:
        return cls(np.eye(S * A).reshape(S, A, S * A))

    def features(self, points) -> np.ndarray:
        pts = as_points(points)
        return self.phi[pts[:, 0], pts[:, 1]]

    def gram(self, points, sigma_sq, lam: float) -> np.ndarray:
        """Lambda = lam I + sum_i phi_i phi_i^T / sigma_i^2."""
        _check_lam(lam)
        pts = as_points(points)
        feats = self.features(pts)
        w = 1.0 / _weights_for(pts, sigma_sq)
        return lam * np.eye(self.d) + (feats * w[:, None]).T @ feats

    def log_covering(self, gamma: float) -> float:
        if not gamma > 0:
            raise BackendError(f"gamma must be > 0, got {gamma}")
        return LINEAR_COVERING_CONSTANT * self.d**2 * math.log(1.0 + 1.0 / gamma)

    def uncertainties(self, queries, points, sigma_sq, lam: float) -> np.ndarray:
        factor = spd_factor(self.gram(points, sigma_sq, lam))
        return self.uncertainties_from(factor, self.features(queries))

    @staticmethod
    def uncertainties_from(factor, feats: np.ndarray) -> np.ndarray:
        """sqrt(phi^T Lambda^-1 phi) for each row of feats, given a Cholesky factor of Lambda."""
        solved = cho_solve(factor, feats.T).T
        return np.sqrt(np.maximum((feats * solved).sum(axis=-1), 0.0))

    def value(self, f, s: int, a: int) -> float:
        return float(self.phi[s, a] @ np.asarray(f, dtype=float))


class FiniteBackend(FunctionClassBackend):
    """Explicit finite class of Q-tables tables[k, s, a]."""

    kind = "finite"

    def __init__(self, tables: np.ndarray) -> None:
        tables = np.asarray(tables, dtype=float)
        if tables.ndim != 3 or len(tables) == 0:
            raise BackendError(f"tables must be indexed [k][s][a], got shape {tables.shape}")
        if (tables < -1e-12).any() or (tables > 1 + 1e-12).any():
            raise BackendError("class members must map into [0, 1]")
        if len(tables) > MAX_FINITE_CLASS_SIZE:
            _LOGGER.warning(
                "Finite class of %s members exceeds %s, pair enumeration will be slow",
                len(tables),
                MAX_FINITE_CLASS_SIZE,
            )
        self.tables = np.clip(tables, 0.0, 1.0)
        self.K, self.S, self.A = tables.shape

    @classmethod
    def from_directions(cls, phi: np.ndarray, directions: np.ndarray) -> FiniteBackend:
        """Members 0.5 + 0.5 phi^T u for each direction u with |u| <= 1."""
        directions = np.atleast_2d(np.asarray(directions, dtype=float))
        if (np.linalg.norm(directions, axis=-1) > 1 + 1e-12).any():
            raise BackendError("directions must have norm <= 1")
        tables = 0.5 + 0.5 * np.einsum("sak,mk->msa", np.asarray(phi, dtype=float), directions)
        return cls(tables)

    def log_covering(self, gamma: float) -> float:
        return math.log(self.K)

    def evaluate(self, points) -> np.ndarray:
        """Member values at the points, shape (K, n)."""
        pts = as_points(points)
        return self.tables[:, pts[:, 0], pts[:, 1]]

    def pair_denominators(self, points, sigma_sq, lam: float) -> np.ndarray:
        """sqrt(lam + sum_j (f(z_j) - f'(z_j))^2 / sigma_j^2) for every ordered pair."""
        _check_lam(lam)
        pts = as_points(points)
        w = 1.0 / _weights_for(pts, sigma_sq)
        vals = self.evaluate(pts)
        denom = np.full((self.K, self.K), lam)
        for i in range(self.K - 1):
            diff = vals[i] - vals[i + 1 :]
            sq = lam + (diff * diff * w).sum(axis=-1)
            denom[i, i + 1 :] = sq
            denom[i + 1 :, i] = sq
        return np.sqrt(denom)

    def uncertainties(self, queries, points, sigma_sq, lam: float) -> np.ndarray:
        denom = self.pair_denominators(points, sigma_sq, lam)
        return self.uncertainties_from(denom, queries)

    def uncertainties_from(self, denom: np.ndarray, queries) -> np.ndarray:
        q = self.evaluate(queries)
        if self.K == 1:
            return np.zeros(q.shape[1])
        out = np.zeros(q.shape[1])
        for i in range(self.K - 1):
            ratio = np.abs(q[i] - q[i + 1 :]) / denom[i, i + 1 :, None]
            out = np.maximum(out, ratio.max(axis=0))
        return out

    def weighted_argmin(self, points, targets: np.ndarray, sigma_sq) -> int:
        """Member minimizing sum_i (f(z_i) - y_i)^2 / sigma_i^2, first index on ties."""
        pts = as_points(points)
        w = 1.0 / _weights_for(pts, sigma_sq)
        loss = (((self.evaluate(pts) - np.asarray(targets, dtype=float)[None, :]) ** 2) * w).sum(axis=-1)
        return int(np.argmin(loss))

    def value(self, f, s: int, a: int) -> float:
        return float(self.tables[int(f), s, a])


def uncertainty(z, points, sigma_sq, backend: FunctionClassBackend, lam: float) -> float:
    """Uncertainty of the single pair z = (s, a) against the weighted points."""
    return float(backend.uncertainties(as_points(z), points, sigma_sq, lam)[0])


# ─────────────────────────────────────────────
# SECTION WEIGHT ITERATION
# ─────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class WeightVector:
    sigma_sq: np.ndarray
    alpha: float
    lam: float
    iterations: int
    rho: np.ndarray | None = None
    history: tuple[np.ndarray, ...] = field(default=(), repr=False)

    def __len__(self) -> int:
        return len(self.sigma_sq)

    @property
    def upper_bound(self) -> np.ndarray:
        """Largest reachable weight, max(1, 1 / (alpha rho sqrt(lam)))."""
        rho = np.ones(len(self)) if self.rho is None else self.rho
        return np.maximum(1.0, 1.0 / (self.alpha * rho * math.sqrt(self.lam)))

    def to_document(self) -> dict:
        return {
            "alpha": self.alpha,
            "lambda": self.lam,
            "iterations": self.iterations,
            "sigma_sq": self.sigma_sq,
        }

    def to_json(self) -> str:
        return dumps(self.to_document())


def iteration_cap(alpha: float, lam: float) -> int:
    return 10 * math.ceil(max(0.0, math.log2(1.0 / (alpha * math.sqrt(lam))))) + 10


def _iterate(points, backend: FunctionClassBackend, alpha: float, lam: float, rho: np.ndarray | None) -> WeightVector:
    if not alpha > 0 or not lam > 0:
        raise WeightIterationError(f"alpha and lambda must be > 0, got alpha={alpha} lambda={lam}")
    pts = as_points(points)
    scale = alpha if rho is None else alpha * rho
    sigma_sq = np.ones(len(pts))
    history = [sigma_sq]
    cap = iteration_cap(alpha, lam)
    for t in range(1, cap + 1):
        new = np.maximum(1.0, backend.uncertainties(pts, pts, sigma_sq, lam) / scale)
        if (new < sigma_sq * (1.0 - MONOTONE_TOL)).any():
            raise WeightIterationError(f"weights decreased at pass {t}")
        growth = float((new / sigma_sq).max())
        sigma_sq = new
        history.append(sigma_sq)
        _LOGGER.debug("Weight pass %s: max growth %s", t, growth)
        if growth <= 2.0:
            return WeightVector(sigma_sq, alpha, lam, t, rho, tuple(history))
    raise WeightIterationError(f"weight iteration did not stop within {cap} passes")


def iterate_weights(points, backend: FunctionClassBackend, alpha: float, lam: float) -> WeightVector:
    """Fixed-point iteration sigma_i^2 <- max(1, u_i(sigma) / alpha) from sigma = 1.

    Stops once no weight grew by more than a factor 2 in the last pass.
    """
    return _iterate(points, backend, alpha, lam, None)


def iterate_weights_shifted(points, rho, backend: FunctionClassBackend, alpha: float, lam: float) -> WeightVector:
    """Same iteration with the uncertainty of record i divided by alpha * rho_i."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (len(as_points(points)),):
        raise WeightIterationError(f"{rho.shape} shift weights for {len(as_points(points))} points")
    if (rho <= 0).any() or not np.isfinite(rho).all():
        raise WeightIterationError("shift weights rho must be positive and finite")
    return _iterate(points, backend, alpha, lam, rho)


def sandwich_bounds(points, backend: FunctionClassBackend, weights: WeightVector) -> tuple[np.ndarray, np.ndarray]:
    """(max(1, psi/2), max(1, psi)) with psi recomputed at the output weights."""
    pts = as_points(points)
    scale = weights.alpha if weights.rho is None else weights.alpha * weights.rho
    psi = backend.uncertainties(pts, pts, weights.sigma_sq, weights.lam) / scale
    return np.maximum(1.0, psi / 2.0), np.maximum(1.0, psi)


# ─────────────────────────────────────────────
# SECTION BOOTSTRAP
# ─────────────────────────────────────────────


def posterior_draws(points, targets, lam: float, K: int, seed: int, backend: LinearBackend, sigma_sq=None):
    """K draws from N(mu, Lambda^-1) for weighted ridge with unit noise, shape (K, d)."""
    if not isinstance(backend, LinearBackend):
        raise BackendError("posterior draws need a linear backend")
    if K < 2:
        raise BackendError(f"need at least 2 draws, got K={K}")
    pts = as_points(points)
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (len(pts),):
        raise BackendError(f"{len(targets)} targets for {len(pts)} points")
    w = 1.0 / _weights_for(pts, sigma_sq)
    gram = backend.gram(pts, sigma_sq, lam)
    lower = cholesky(gram, lower=True)
    feats = backend.features(pts)
    mean = cho_solve((lower, True), feats.T @ (w * targets))
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((backend.d, K))
    return mean[None, :] + solve_triangular(lower, noise, trans="T", lower=True).T


def bootstrap_variance(
    z, points, targets, lam: float, K: int, seed: int, backend: LinearBackend, sigma_sq=None
) -> float:
    """Sample variance of phi(z)^T w over K posterior draws; tends to phi^T Lambda^-1 phi."""
    draws = posterior_draws(points, targets, lam, K, seed, backend, sigma_sq)
    preds = draws @ backend.features(z)[0]
    return float(np.var(preds, ddof=1))
