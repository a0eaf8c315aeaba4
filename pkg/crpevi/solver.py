"""Weighted ridge regression and pessimistic value iteration (CR-PEVI, PEVI, CORDS-PEVI)."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import voluptuous as vol
from scipy.linalg import cho_solve

from .const import (
    ALGO_CORDS_PEVI,
    ALGO_CR_PEVI,
    ALGO_PEVI,
    BETA_THEORY,
    BETA_TUNED,
    BONUS_BOOTSTRAP,
    BONUS_EXACT,
    WEIGHTING_UNCERTAINTY,
    WEIGHTING_UNIT,
)
from .dataset import OfflineDataset
from .envs import Policy
from .errors import SolverError
from .helpers import dumps
from .schema import DEFAULT_BETA_SCALE, SOLVER_CONFIG_SCHEMA
from .weights import (
    FiniteBackend,
    FunctionClassBackend,
    LinearBackend,
    WeightVector,
    as_points,
    iterate_weights,
    iterate_weights_shifted,
    posterior_draws,
    spd_factor,
    uncertainty,
)

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Solver parameters. alpha, lam and log_n left as None are filled in by resolve()."""

    alpha: float | None = None
    lam: float | None = None
    beta_scale: float = DEFAULT_BETA_SCALE
    delta: float = 0.1
    zeta_per_h: tuple[float, ...] | None = None
    weighting: str = WEIGHTING_UNCERTAINTY
    rho: tuple[float, ...] | None = None
    beta_mode: str = BETA_TUNED
    bonus_source: str = BONUS_EXACT
    bootstrap_draws: int = 2000
    log_n: float | None = None
    gamma: float | None = None
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        data = dataclasses.asdict(self)
        for key in ("zeta_per_h", "rho"):
            if data[key] is not None:
                data[key] = [float(v) for v in data[key]]
        try:
            clean = SOLVER_CONFIG_SCHEMA(data)
        except vol.Invalid as err:
            raise SolverError(f"invalid solver config: {err}") from err
        for key, value in clean.items():
            if isinstance(value, list):
                value = tuple(value)
            object.__setattr__(self, key, value)

    @classmethod
    def from_dict(cls, data: dict) -> SolverConfig:
        return cls(**data)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key in ("zeta_per_h", "rho"):
            if out[key] is not None:
                out[key] = list(out[key])
        return out

    @property
    def zeta_total(self) -> float:
        return float(sum(self.zeta_per_h)) if self.zeta_per_h else 0.0

    def zeta_at(self, h: int) -> float:
        """Corruption budget at 1-based step h, zero when none was supplied."""
        return float(self.zeta_per_h[h - 1]) if self.zeta_per_h else 0.0


@dataclass(frozen=True, eq=False)
class LinearFit:
    w: np.ndarray
    Lambda: np.ndarray
    residual_norm: float
    factor: tuple = field(default=(), repr=False)


@dataclass(frozen=True, eq=False)
class SolveReport:
    algorithm: str
    policy: Policy
    f: np.ndarray
    beta: np.ndarray
    weights: tuple[WeightVector, ...]
    config: SolverConfig
    diagnostics: dict

    def to_document(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "policy": self.policy.actions,
            "beta": self.beta,
            "config": self.config.to_dict(),
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return dumps(self.to_document())


# ─────────────────────────────────────────────
# SECTION REGRESSION AND RADII
# ─────────────────────────────────────────────


def weighted_ridge(points, targets, sigma_sq, backend: LinearBackend, lam: float) -> LinearFit:
    """w = Lambda^-1 sum_i phi_i y_i / sigma_i^2 with Lambda = lam I + sum_i phi_i phi_i^T / sigma_i^2."""
    if not isinstance(backend, LinearBackend):
        raise SolverError("weighted ridge needs a linear backend")
    pts = as_points(points)
    targets = np.asarray(targets, dtype=float)
    sigma_sq = np.asarray(sigma_sq, dtype=float)
    if targets.shape != (len(pts),) or sigma_sq.shape != (len(pts),):
        raise SolverError(f"{len(pts)} points, {targets.size} targets and {sigma_sq.size} weights")
    gram = backend.gram(pts, sigma_sq, lam)
    factor = spd_factor(gram)
    feats = backend.features(pts)
    w = cho_solve(factor, feats.T @ (targets / sigma_sq))
    resid = feats @ w - targets
    return LinearFit(w, gram, float(np.sqrt((resid * resid / sigma_sq).sum())), factor)


def bonus(z, points, sigma_sq, backend: FunctionClassBackend, lam: float) -> float:
    """Bonus at z; identical to the uncertainty of z against the weighted points."""
    return uncertainty(z, points, sigma_sq, backend, lam)


def confidence_radius(h: int, cfg: SolverConfig, log_n: float, horizon: int, ratio: float | None = None) -> float:
    """beta^h = beta_scale * (ratio zeta^h + sqrt(ln H + ln N + ln(1/delta))).

    ratio bounds u_i / sigma_i^2 over the records of step h and defaults to
    alpha, which the weight iteration guarantees.
    """
    if log_n < 0:
        raise SolverError(f"log covering number must be >= 0, got {log_n}")
    zeta = cfg.zeta_at(h)
    corruption = 0.0
    if zeta > 0:
        if cfg.alpha is None:
            raise SolverError("alpha must be resolved before computing a radius with a corruption budget")
        corruption = (cfg.alpha if ratio is None else ratio) * zeta
    return cfg.beta_scale * (corruption + math.sqrt(math.log(horizon) + log_n + math.log(1.0 / cfg.delta)))


def theory_radius(
    h: int, cfg: SolverConfig, log_n: float, horizon: int, n: int, beta_next: float, ratio: float | None = None
) -> float:
    """Confidence radius with the explicit constants of the concentration argument.

    The per-record gaps are unknown to the solver, so sum_i (zeta_i^h)^2 is
    bounded by (zeta^h)^2.
    """
    if cfg.alpha is None or cfg.lam is None or cfg.gamma is None:
        raise SolverError("theory radius needs alpha, lambda and gamma resolved")
    zeta = cfg.zeta_at(h)
    eta = cfg.noise_scale
    c1 = 2.0 * (zeta**2 + 2 * n * eta**2 + 3 * eta**2 * math.log(2.0 / cfg.delta))
    inner = (
        12 * cfg.lam
        + 12 * (math.log(2.0 * horizon / cfg.delta) + log_n)
        + 12 * (5 * beta_next * cfg.gamma) ** 2 * n
        + 60 * beta_next * cfg.gamma * math.sqrt(n * c1)
    )
    return 24 * (cfg.alpha if ratio is None else ratio) * zeta + math.sqrt(inner)


def _default_alpha(n: int, horizon: int, log_n: float, zeta_total: float) -> float:
    if zeta_total > 0:
        return horizon * math.sqrt(max(log_n, 1.0)) / zeta_total
    return 1.0 / math.sqrt(n)


def resolve(cfg: SolverConfig, n: int, horizon: int, backend: FunctionClassBackend) -> SolverConfig:
    """Fill alpha, lambda, gamma and log N that were left unset."""
    gamma = cfg.gamma if cfg.gamma is not None else 1.0 / n
    log_n = cfg.log_n if cfg.log_n is not None else backend.log_covering(gamma)
    lam = cfg.lam if cfg.lam is not None else (log_n if log_n > 0 else 1.0)
    alpha = cfg.alpha if cfg.alpha is not None else _default_alpha(n, horizon, log_n, cfg.zeta_total)
    return dataclasses.replace(cfg, alpha=alpha, lam=lam, gamma=gamma, log_n=log_n)


def theorem_defaults(
    n: int,
    horizon: int,
    backend: FunctionClassBackend,
    zeta_per_h=None,
    delta: float = 0.1,
    beta_scale: float = 1.0,
) -> tuple[SolverConfig, np.ndarray]:
    """alpha = H sqrt(ln N)/zeta, lambda = ln N, gamma = 1/(n max_h beta^h zeta^h).

    gamma depends on beta and beta on gamma through ln N; one pass is taken:
    beta from gamma = 1/n, then gamma from that beta, then beta again.
    """
    zeta = tuple(float(z) for z in zeta_per_h) if zeta_per_h is not None else None
    cfg = resolve(SolverConfig(beta_scale=beta_scale, delta=delta, zeta_per_h=zeta, gamma=1.0 / n), n, horizon, backend)
    beta = np.array([confidence_radius(h, cfg, cfg.log_n, horizon) for h in range(1, horizon + 1)])
    spread = max(beta[h - 1] * cfg.zeta_at(h) for h in range(1, horizon + 1))
    if spread > 0:
        cfg = dataclasses.replace(cfg, alpha=None, lam=None, log_n=None, gamma=1.0 / (n * spread))
        cfg = resolve(cfg, n, horizon, backend)
        beta = np.array([confidence_radius(h, cfg, cfg.log_n, horizon) for h in range(1, horizon + 1)])
    return cfg, beta


# ─────────────────────────────────────────────
# SECTION VALUE ITERATION
# ─────────────────────────────────────────────


def _check_inputs(ds: OfflineDataset, backend: FunctionClassBackend) -> None:
    if ds.n < 1 or len(ds) == 0:
        raise SolverError("empty dataset")
    S, A = backend.S, backend.A  # type: ignore[attr-defined]
    if ds.x.max() >= S or ds.x_next.max() >= S or ds.a.max() >= A:
        raise SolverError(f"dataset states/actions exceed the backend's S={S}, A={A}")


def corruption_ratio(backend, points, fit, cfg: SolverConfig, h: int) -> float:
    """Bound on u_i / sigma_i^2 over the records of step h.

    Weighted runs keep it at alpha. Unit weights give max(alpha, max_i u_i):
    the ridge bias of the corrupted targets is at most zeta^h max_i u_i in
    the Lambda^-1 norm, so a rare, high leverage record widens the radius.
    """
    if cfg.weighting != WEIGHTING_UNIT or cfg.zeta_at(h) <= 0:
        return cfg.alpha
    if isinstance(backend, LinearBackend):
        u = LinearBackend.uncertainties_from(fit.factor, backend.features(points))
    else:
        u = backend.uncertainties(points, points, None, cfg.lam)
    return max(cfg.alpha, float(u.max()))


def _bonus_table(backend, points, sigma_sq, lam, fit, cfg, targets, h) -> np.ndarray:
    all_pairs = np.stack(np.meshgrid(np.arange(backend.S), np.arange(backend.A), indexing="ij"), axis=-1).reshape(-1, 2)
    if cfg.bonus_source == BONUS_BOOTSTRAP:
        if not isinstance(backend, LinearBackend):
            raise SolverError("bootstrap bonus needs a linear backend")
        draws = posterior_draws(points, targets, lam, cfg.bootstrap_draws, cfg.seed + h, backend, sigma_sq)
        preds = backend.features(all_pairs) @ draws.T
        b = np.sqrt(np.var(preds, axis=1, ddof=1))
    elif isinstance(backend, LinearBackend):
        b = LinearBackend.uncertainties_from(fit.factor, backend.features(all_pairs))
    else:
        b = backend.uncertainties(all_pairs, points, sigma_sq, lam)
    return b.reshape(backend.S, backend.A)


def cr_pevi(ds: OfflineDataset, backend: FunctionClassBackend, cfg: SolverConfig) -> SolveReport:
    """Weighted pessimistic value iteration, backward from step H.

    weighting="unit" gives PEVI; a rho vector gives the CORDS-PEVI weights.
    """
    _check_inputs(ds, backend)
    cfg = resolve(cfg, ds.n, ds.H, backend)
    if cfg.zeta_per_h is not None and len(cfg.zeta_per_h) != ds.H:
        raise SolverError(f"{len(cfg.zeta_per_h)} corruption budgets for horizon {ds.H}")
    if cfg.rho is not None and len(cfg.rho) != ds.n:
        raise SolverError(f"{len(cfg.rho)} shift weights for {ds.n} episodes")
    if cfg.rho is not None and cfg.weighting == WEIGHTING_UNIT:
        raise SolverError("shift weights need uncertainty weighting")
    algorithm = ALGO_PEVI if cfg.weighting == WEIGHTING_UNIT else ALGO_CORDS_PEVI if cfg.rho else ALGO_CR_PEVI
    start = time.perf_counter()

    S, A, H = backend.S, backend.A, ds.H  # type: ignore[attr-defined]
    f = np.zeros((H + 1, S, A))
    beta = np.zeros(H)
    weights: list[WeightVector] = [None] * H  # type: ignore[list-item]
    per_step: list[dict] = [{}] * H
    beta_next = 0.0
    for h in range(H, 0, -1):
        x, a, r, x_next = ds.step(h)
        points = np.stack([x, a], axis=1)
        targets = r + f[h].max(axis=-1)[x_next]

        if cfg.weighting == WEIGHTING_UNIT:
            wv = WeightVector(np.ones(len(points)), cfg.alpha, cfg.lam, 0)
        elif cfg.rho is not None:
            wv = iterate_weights_shifted(points, np.asarray(cfg.rho), backend, cfg.alpha, cfg.lam)
        else:
            wv = iterate_weights(points, backend, cfg.alpha, cfg.lam)
        weights[h - 1] = wv

        fit = None
        if isinstance(backend, LinearBackend):
            fit = weighted_ridge(points, targets, wv.sigma_sq, backend, cfg.lam)
            fhat = backend.phi @ fit.w
            fit_err = fit.residual_norm
        elif isinstance(backend, FiniteBackend):
            member = backend.weighted_argmin(points, targets, wv.sigma_sq)
            fhat = backend.tables[member]
            resid = fhat[x, a] - targets
            fit_err = float(np.sqrt((resid * resid / wv.sigma_sq).sum()))
        else:
            raise SolverError(f"unsupported backend {type(backend).__name__}")

        ratio = corruption_ratio(backend, points, fit, cfg, h)
        if cfg.beta_mode == BETA_THEORY:
            beta[h - 1] = theory_radius(h, cfg, cfg.log_n, H, ds.n, beta_next, ratio)
        else:
            beta[h - 1] = confidence_radius(h, cfg, cfg.log_n, H, ratio)
        beta_next = beta[h - 1]

        b = _bonus_table(backend, points, wv.sigma_sq, cfg.lam, fit, cfg, targets, h)
        f[h - 1] = np.clip(fhat - beta[h - 1] * b, 0.0, 1.0)
        per_step[h - 1] = {
            "h": h,
            "weighted_fit_error": fit_err,
            "bonus_mean": float(b.mean()),
            "bonus_max": float(b.max()),
            "weight_iterations": wv.iterations,
            "max_sigma_sq": float(wv.sigma_sq.max()),
            "corruption_ratio": ratio,
        }
        _LOGGER.debug("Step %s: beta=%s, mean bonus=%s, max weight=%s", h, beta[h - 1], b.mean(), wv.sigma_sq.max())

    policy = Policy.deterministic(np.argmax(f[:H], axis=-1), A)
    diagnostics = {
        "log_n": cfg.log_n,
        "steps": per_step,
        "wall_time_ms": (time.perf_counter() - start) * 1000.0,
    }
    _LOGGER.info("%s finished on %s episodes in %.1f ms", algorithm, ds.n, diagnostics["wall_time_ms"])
    f.setflags(write=False)
    return SolveReport(algorithm, policy, f, beta, tuple(weights), cfg, diagnostics)


def pevi(ds: OfflineDataset, backend: FunctionClassBackend, cfg: SolverConfig) -> SolveReport:
    """Unit-weight baseline."""
    return cr_pevi(ds, backend, dataclasses.replace(cfg, weighting=WEIGHTING_UNIT, rho=None))


def cords_pevi(ds: OfflineDataset, backend: FunctionClassBackend, cfg: SolverConfig, rho) -> SolveReport:
    """CR-PEVI with per-episode shift weights rho in the weight iteration."""
    rho = tuple(float(v) for v in np.asarray(rho, dtype=float).reshape(-1))
    return cr_pevi(ds, backend, dataclasses.replace(cfg, rho=rho))
