"""Exact evaluation oracles: suboptimality, Bellman residuals and coverage coefficients."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh, null_space

from .const import EXACT_OCCUPANCY_MAX_STATES, WELL_EXPLORED_PAIRS
from .dataset import OfflineDataset
from .envs import LinearMDP, Policy, TabularMDP, ValueTables, base_mdp, evaluate_policy, occupancy, solve_optimal
from .errors import BackendError, PolicyMismatchError
from .helpers import dumps
from .solver import SolverConfig, resolve
from .weights import FiniteBackend, FunctionClassBackend, LinearBackend, iterate_weights

_LOGGER = logging.getLogger(__name__)

COVERED_TOL = 1e-9


def suboptimality(mdp: TabularMDP | LinearMDP, pi: Policy, x1=None) -> float:
    """V*(x1) - V_pi(x1) in the clean MDP."""
    env = base_mdp(mdp)
    _, values = solve_optimal(env)
    start = env.x1 if x1 is None else x1
    optimal = evaluate_policy(env, Policy.deterministic(np.argmax(values.Q[: env.H], axis=-1), env.A), start)
    return max(0.0, optimal - evaluate_policy(env, pi, start))


def bellman_residual(mdp: TabularMDP | LinearMDP, f, h: int, s: int, a: int) -> float:
    """f^h(s, a) - (T^h f^{h+1})(s, a) with the true backup, 1-based h."""
    env = base_mdp(mdp)
    q = f.Q if isinstance(f, ValueTables) else np.asarray(f, dtype=float)
    if q.shape[1:] != (env.S, env.A) or len(q) < h + 1:
        raise PolicyMismatchError(f"value tables of shape {q.shape} do not cover step {h + 1}")
    backup = env.backup(h, q[h].max(axis=-1))
    return float(q[h - 1, s, a] - backup[s, a])


@dataclass(frozen=True)
class WellExplored:
    min_eig_per_h: tuple[float, ...]
    C_est: float
    C_sampled: float


@dataclass(frozen=True)
class CoverageReport:
    cc_weighted: float
    cc_unweighted: float
    per_h: tuple[float, ...]
    mc_episodes: int
    min_eig_per_h: tuple[float, ...]
    C_est: float
    C_sampled: float
    c_dagger: float
    weighted: bool = True

    @property
    def value(self) -> float:
        return self.cc_weighted if self.weighted else self.cc_unweighted

    def to_json(self) -> str:
        return dumps(self.__dict__)


def well_explored_diagnostics(
    ds: OfflineDataset, backend: FunctionClassBackend, n_pairs: int = WELL_EXPLORED_PAIRS, seed: int = 0
) -> WellExplored:
    """Minimum eigenvalues of the empirical feature covariance and the well-explored constant.

    For a linear class C_est is min_h lambda_min((1/n) sum phi phi^T), which
    lower-bounds E_mu[(f - f')^2] / |f - f'|_inf^2 over every pair;
    C_sampled is the same ratio minimized over n_pairs random pairs.
    """
    rng = np.random.default_rng(seed)
    if isinstance(backend, LinearBackend):
        eigs = []
        sampled = math.inf
        dirs = rng.standard_normal((n_pairs, backend.d))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        sup = np.abs(backend.phi.reshape(-1, backend.d) @ dirs.T).max(axis=0) ** 2
        for h in range(1, ds.H + 1):
            x, a, _, _ = ds.step(h)
            feats = backend.features(np.stack([x, a], axis=1))
            cov = feats.T @ feats / ds.n
            low = float(np.linalg.eigvalsh(cov)[0])
            if ds.n < backend.d or low <= 1e-12:
                _LOGGER.warning("Step %s: feature covariance is rank deficient (min eigenvalue %s)", h, low)
            eigs.append(max(low, 0.0))
            mean_sq = ((feats @ dirs.T) ** 2).mean(axis=0)
            ok = sup > 0
            if ok.any():
                sampled = min(sampled, float((mean_sq[ok] / sup[ok]).min()))
        return WellExplored(tuple(eigs), min(eigs), sampled)

    if isinstance(backend, FiniteBackend):
        pairs = [(i, j) for i in range(backend.K) for j in range(i + 1, backend.K)]
        if len(pairs) > n_pairs:
            pick = rng.choice(len(pairs), size=n_pairs, replace=False)
            pairs = [pairs[k] for k in np.sort(pick)]
        sampled = math.inf
        for h in range(1, ds.H + 1):
            x, a, _, _ = ds.step(h)
            vals = backend.evaluate(np.stack([x, a], axis=1))
            for i, j in pairs:
                sup = float(np.abs(backend.tables[i] - backend.tables[j]).max()) ** 2
                if sup > 0:
                    sampled = min(sampled, float(((vals[i] - vals[j]) ** 2).mean()) / sup)
        return WellExplored(tuple(math.nan for _ in range(ds.H)), sampled, sampled)
    raise BackendError(f"unsupported backend {type(backend).__name__}")


def _optimal_occupancy(env: TabularMDP, mc_episodes: int, seed: int) -> tuple[np.ndarray, int]:
    policy, _ = solve_optimal(env)
    if mc_episodes <= 0 or env.S <= EXACT_OCCUPANCY_MAX_STATES:
        return occupancy(env, policy), 0
    rng = np.random.default_rng(seed)
    occ = np.zeros((env.H, env.S, env.A))
    state = np.minimum((rng.random(mc_episodes)[:, None] >= np.cumsum(env.x1)).sum(axis=-1), env.S - 1)
    for h in range(1, env.H + 1):
        act = policy.sample(h, state, rng)
        np.add.at(occ[h - 1], (state, act), 1.0 / mc_episodes)
        state = env.sample_next_states(h, state, act, rng)
    return occ, mc_episodes


def _uncovered(backend: FunctionClassBackend, points: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Queries on which some pair of class members differs while agreeing on every data point."""
    if isinstance(backend, LinearBackend):
        null = null_space(backend.features(points))
        if null.size == 0:
            return np.zeros(len(queries), dtype=bool)
        return np.linalg.norm(backend.features(queries) @ null, axis=-1) > COVERED_TOL
    vals = backend.evaluate(points)  # type: ignore[attr-defined]
    qvals = backend.evaluate(queries)  # type: ignore[attr-defined]
    out = np.zeros(len(queries), dtype=bool)
    for i in range(backend.K - 1):  # type: ignore[attr-defined]
        same = np.abs(vals[i] - vals[i + 1 :]).max(axis=-1) <= COVERED_TOL
        if same.any():
            out |= (np.abs(qvals[i] - qvals[i + 1 :][same]) > COVERED_TOL).any(axis=0)
    return out


def _dominance_constant(gram: np.ndarray, second_moment: np.ndarray) -> float:
    """Largest c with gram - I >= c * second_moment, zero when gram - I is not positive definite."""
    slack = gram - np.eye(len(gram))
    if np.linalg.eigvalsh(slack)[0] <= 0:
        return 0.0
    top = float(eigh(second_moment, slack, eigvals_only=True)[-1])
    return math.inf if top <= 0 else 1.0 / top


def coverage_coefficient(
    mdp: TabularMDP | LinearMDP,
    ds: OfflineDataset,
    backend: FunctionClassBackend,
    cfg: SolverConfig,
    weighted: bool = True,
    mc_episodes: int = 0,
    seed: int = 0,
) -> CoverageReport:
    """Weighted and unweighted coverage of the optimal policy's occupancy by the dataset.

    The per-pair quantity is n * u(z)^2 / sigma(z)^2 with u the uncertainty
    against the dataset and sigma(z)^2 = max(1, u(z) / alpha) (1 when
    unweighted). The occupancy is propagated in the clean MDP.
    """
    env = base_mdp(mdp)
    cfg = resolve(cfg, ds.n, ds.H, backend)
    occ, used_mc = _optimal_occupancy(env, mc_episodes, seed)
    explored = well_explored_diagnostics(ds, backend, seed=seed)

    per_w, per_u, daggers = [], [], []
    for h in range(1, ds.H + 1):
        x, a, _, _ = ds.step(h)
        points = np.stack([x, a], axis=1)
        support = np.argwhere(occ[h - 1] > 0)
        mass = occ[h - 1][support[:, 0], support[:, 1]]
        if _uncovered(backend, points, support).any():
            per_w.append(math.inf)
            per_u.append(math.inf)
            daggers.append(0.0)
            continue
        u_unit = backend.uncertainties(support, points, np.ones(len(points)), cfg.lam)
        per_u.append(float(mass @ (ds.n * u_unit**2)))
        wv = iterate_weights(points, backend, cfg.alpha, cfg.lam)
        u_w = backend.uncertainties(support, points, wv.sigma_sq, cfg.lam)
        sigma_z_sq = np.maximum(1.0, u_w / cfg.alpha)
        per_w.append(float(mass @ (ds.n * u_w**2 / sigma_z_sq)))
        if isinstance(backend, LinearBackend):
            feats = backend.features(support)
            second = ds.n * (feats * mass[:, None]).T @ feats
            daggers.append(_dominance_constant(backend.gram(points, None, cfg.lam), second))

    report = CoverageReport(
        cc_weighted=max(per_w),
        cc_unweighted=max(per_u),
        per_h=tuple(per_w if weighted else per_u),
        mc_episodes=used_mc,
        min_eig_per_h=explored.min_eig_per_h,
        C_est=explored.C_est,
        C_sampled=explored.C_sampled,
        c_dagger=min(daggers) if daggers else 0.0,
        weighted=weighted,
    )
    _LOGGER.debug("Coverage: weighted %s, unweighted %s", report.cc_weighted, report.cc_unweighted)
    return report
