"""Ground-truth MDPs, exact dynamic programming and policy evaluation.

Arrays are 0-based: step h (1-based in records and public ``h`` arguments)
lives at index ``h - 1``. Value tables carry one extra terminal slot at
index ``H`` that is always zero.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
import voluptuous as vol

from .const import (
    BRANCHING_EDGE,
    BRANCHING_UNIFORM,
    CERTIFICATE_TOL,
    REWARD_BERNOULLI,
    REWARD_UNIFORM,
    ROW_SUM_TOL,
)
from .errors import InvalidMdpError, PolicyMismatchError
from .helpers import dumps, sha256_text
from .schema import MDP_DOCUMENT_SCHEMA

_LOGGER = logging.getLogger(__name__)


def _frozen(array, dtype=float) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def max_trajectory_return(P: np.ndarray, R: np.ndarray) -> float:
    """Largest total mean reward along any trajectory with positive probability."""
    H, S = R.shape[0], R.shape[1]
    best = np.zeros(S)
    for h in range(H - 1, -1, -1):
        reach = np.where(P[h] > 0, best[None, None, :], -np.inf).max(axis=-1)
        best = (R[h] + reach).max(axis=-1)
    return float(best.max())


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Finite-horizon MDP with transition tensor P[h, s, a, s'] and mean rewards R[h, s, a].

    reward_dist "uniform" observes R + U[-reward_noise, reward_noise];
    "bernoulli" observes reward_scale * Bernoulli(R / reward_scale).
    """

    S: int
    A: int
    H: int
    P: np.ndarray
    R: np.ndarray
    x1: np.ndarray
    reward_noise: float = 0.0
    reward_dist: str = REWARD_UNIFORM
    reward_scale: float = 1.0

    def __post_init__(self) -> None:
        P = _frozen(self.P)
        R = np.array(self.R, dtype=float, copy=True)
        x1 = _frozen(self.x1)
        S, A, H = self.S, self.A, self.H
        if min(S, A, H) < 1:
            raise InvalidMdpError(f"S, A and H must be >= 1, got S={S} A={A} H={H}")
        if P.shape != (H, S, A, S):
            raise InvalidMdpError(f"P has shape {P.shape}, expected {(H, S, A, S)}")
        if R.shape != (H, S, A):
            raise InvalidMdpError(f"R has shape {R.shape}, expected {(H, S, A)}")
        if x1.shape != (S,):
            raise InvalidMdpError(f"x1 has shape {x1.shape}, expected {(S,)}")
        if (P < 0).any():
            raise InvalidMdpError("P has negative entries")
        worst = float(np.abs(P.sum(axis=-1) - 1.0).max())
        if worst > ROW_SUM_TOL:
            raise InvalidMdpError(f"P rows must sum to 1, worst deviation {worst:.3g}")
        if (x1 < 0).any() or abs(float(x1.sum()) - 1.0) > ROW_SUM_TOL:
            raise InvalidMdpError("x1 must be a probability vector")
        if not np.isfinite(R).all() or (R < 0).any():
            raise InvalidMdpError("R must be finite and nonnegative")
        if self.reward_noise < 0:
            raise InvalidMdpError("reward_noise must be >= 0")
        if self.reward_dist not in (REWARD_UNIFORM, REWARD_BERNOULLI):
            raise InvalidMdpError(f"unknown reward_dist '{self.reward_dist}'")
        if self.reward_dist == REWARD_BERNOULLI and (R > self.reward_scale * (1 + ROW_SUM_TOL)).any():
            raise InvalidMdpError("Bernoulli mean rewards exceed reward_scale")

        top = max_trajectory_return(P, R)
        if top > 1.0 + ROW_SUM_TOL:
            _LOGGER.warning("Rescaling rewards by 1/%s so every trajectory return is <= 1", top)
            R = R / top
        R.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "reward_noise", float(self.reward_noise))
        object.__setattr__(self, "reward_scale", float(self.reward_scale))

    def backup(self, h: int, g: np.ndarray) -> np.ndarray:
        """Bellman backup (T^h g)(s, a) = R[h] + P[h] g, for 1-based step h."""
        return self.R[h - 1] + self.P[h - 1] @ np.asarray(g, dtype=float)

    def sample_rewards(self, h: int, states: np.ndarray, actions: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        mean = self.R[h - 1, states, actions]
        if self.reward_dist == REWARD_BERNOULLI:
            hits = rng.random(mean.shape) < mean / self.reward_scale
            return np.where(hits, self.reward_scale, 0.0)
        if self.reward_noise > 0:
            return mean + rng.uniform(-self.reward_noise, self.reward_noise, size=mean.shape)
        return mean.astype(float)

    def sample_next_states(
        self, h: int, states: np.ndarray, actions: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        cdf = np.cumsum(self.P[h - 1, states, actions], axis=-1)
        u = rng.random(len(states))
        return np.minimum((u[:, None] >= cdf).sum(axis=-1), self.S - 1)

    def to_document(self) -> dict:
        return {
            "S": self.S,
            "A": self.A,
            "H": self.H,
            "P": self.P,
            "R": self.R,
            "x1": self.x1,
            "reward_noise": self.reward_noise,
            "reward_dist": self.reward_dist,
            "reward_scale": self.reward_scale,
        }

    def to_json(self) -> str:
        return dumps(self.to_document())

    def fingerprint(self) -> str:
        return sha256_text(self.to_json())


@dataclass(frozen=True, eq=False)
class LinearMDP:
    """Tabular MDP together with a feature map phi[s, a] in which every backup is linear."""

    base: TabularMDP
    d: int
    phi: np.ndarray

    def __post_init__(self) -> None:
        phi = _frozen(self.phi)
        if phi.shape != (self.base.S, self.base.A, self.d):
            raise InvalidMdpError(f"phi has shape {phi.shape}, expected {(self.base.S, self.base.A, self.d)}")
        if (np.linalg.norm(phi, axis=-1) > 1 + 1e-12).any():
            raise InvalidMdpError("feature norms must be <= 1")
        object.__setattr__(self, "phi", phi)

    def to_document(self) -> dict:
        doc = self.base.to_document()
        ordered = {k: doc[k] for k in ("S", "A", "H", "P", "R")}
        ordered["phi"] = self.phi
        ordered.update({k: doc[k] for k in ("x1", "reward_noise", "reward_dist", "reward_scale")})
        return ordered

    def to_json(self) -> str:
        return dumps(self.to_document())

    def fingerprint(self) -> str:
        return sha256_text(self.to_json())


@dataclass(frozen=True, eq=False)
class ValueTables:
    """V[h, s] and Q[h, s, a] for h = 0..H, with the terminal slot zero."""

    V: np.ndarray
    Q: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "V", _frozen(self.V))
        object.__setattr__(self, "Q", _frozen(self.Q))


@dataclass(frozen=True, eq=False)
class Policy:
    """Per-step action distributions probs[h, s, a]."""

    probs: np.ndarray
    deterministic_actions: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        probs = _frozen(self.probs)
        if probs.ndim != 3:
            raise PolicyMismatchError(f"policy table must be (H, S, A), got shape {probs.shape}")
        if (probs < 0).any() or np.abs(probs.sum(axis=-1) - 1.0).max() > ROW_SUM_TOL:
            raise PolicyMismatchError("policy rows must be probability vectors")
        object.__setattr__(self, "probs", probs)
        if self.deterministic_actions is not None:
            object.__setattr__(self, "deterministic_actions", _frozen(self.deterministic_actions, dtype=np.int64))

    @classmethod
    def deterministic(cls, actions: np.ndarray, A: int) -> Policy:
        actions = np.asarray(actions, dtype=np.int64)
        probs = np.zeros(actions.shape + (A,))
        np.put_along_axis(probs, actions[..., None], 1.0, axis=-1)
        return cls(probs, actions)

    @classmethod
    def uniform(cls, H: int, S: int, A: int) -> Policy:
        return cls(np.full((H, S, A), 1.0 / A))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.probs.shape  # type: ignore[return-value]

    @property
    def is_deterministic(self) -> bool:
        return self.deterministic_actions is not None

    @property
    def actions(self) -> np.ndarray:
        """Greedy action per (h, s), smallest index on ties."""
        if self.deterministic_actions is not None:
            return self.deterministic_actions
        return np.argmax(self.probs, axis=-1)

    def sample(self, h: int, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.deterministic_actions is not None:
            return self.deterministic_actions[h - 1, states]
        cdf = np.cumsum(self.probs[h - 1, states], axis=-1)
        u = rng.random(len(states))
        return np.minimum((u[:, None] >= cdf).sum(axis=-1), self.probs.shape[-1] - 1)

    def to_document(self) -> dict:
        if self.deterministic_actions is not None:
            return {"actions": self.deterministic_actions}
        return {"probs": self.probs}

    def fingerprint(self) -> str:
        return sha256_text(dumps(self.to_document()))


def _check_policy(mdp: TabularMDP, pi: Policy) -> None:
    if pi.shape != (mdp.H, mdp.S, mdp.A):
        raise PolicyMismatchError(f"policy shape {pi.shape} does not match MDP {(mdp.H, mdp.S, mdp.A)}")


def _initial_distribution(mdp: TabularMDP, x1) -> np.ndarray:
    if x1 is None:
        return mdp.x1
    if np.isscalar(x1):
        s = int(x1)
        if not 0 <= s < mdp.S:
            raise PolicyMismatchError(f"initial state {s} outside 0..{mdp.S - 1}")
        dist = np.zeros(mdp.S)
        dist[s] = 1.0
        return dist
    dist = np.asarray(x1, dtype=float)
    if dist.shape != (mdp.S,) or abs(float(dist.sum()) - 1.0) > ROW_SUM_TOL:
        raise PolicyMismatchError("initial distribution must be a probability vector over S")
    return dist


def solve_optimal(mdp: TabularMDP) -> tuple[Policy, ValueTables]:
    """Backward dynamic programming; greedy policy breaks ties towards the smallest action."""
    V = np.zeros((mdp.H + 1, mdp.S))
    Q = np.zeros((mdp.H + 1, mdp.S, mdp.A))
    for h in range(mdp.H - 1, -1, -1):
        Q[h] = mdp.R[h] + mdp.P[h] @ V[h + 1]
        V[h] = Q[h].max(axis=-1)
    actions = np.argmax(Q[: mdp.H], axis=-1)
    return Policy.deterministic(actions, mdp.A), ValueTables(V, Q)


def policy_values(mdp: TabularMDP, pi: Policy) -> ValueTables:
    _check_policy(mdp, pi)
    V = np.zeros((mdp.H + 1, mdp.S))
    Q = np.zeros((mdp.H + 1, mdp.S, mdp.A))
    for h in range(mdp.H - 1, -1, -1):
        Q[h] = mdp.R[h] + mdp.P[h] @ V[h + 1]
        V[h] = (pi.probs[h] * Q[h]).sum(axis=-1)
    return ValueTables(V, Q)


def evaluate_policy(mdp: TabularMDP, pi: Policy, x1=None) -> float:
    """Exact V_pi at step 1 from a state, a distribution, or the MDP's own x1."""
    dist = _initial_distribution(mdp, x1)
    return float(dist @ policy_values(mdp, pi).V[0])


def occupancy(mdp: TabularMDP, pi: Policy, x1=None) -> np.ndarray:
    """Forward state-action occupancy d[h, s, a] of pi."""
    _check_policy(mdp, pi)
    out = np.zeros((mdp.H, mdp.S, mdp.A))
    state = _initial_distribution(mdp, x1)
    for h in range(mdp.H):
        out[h] = state[:, None] * pi.probs[h]
        state = np.einsum("sa,sat->t", out[h], mdp.P[h])
    return out


# ─────────────────────────────────────────────
# SECTION GENERATORS
# ─────────────────────────────────────────────


def build_tabular_mdp(S: int, A: int, H: int, seed: int, reward_noise: float = 0.0) -> TabularMDP:
    """Dirichlet transitions, rewards uniform in [0, 1/H], start state 0."""
    if min(S, A, H) < 1:
        raise InvalidMdpError(f"S, A and H must be >= 1, got S={S} A={A} H={H}")
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(S), size=(H, S, A))
    P = P / P.sum(axis=-1, keepdims=True)
    R = rng.uniform(0.0, 1.0 / H, size=(H, S, A))
    x1 = np.zeros(S)
    x1[0] = 1.0
    return TabularMDP(S=S, A=A, H=H, P=P, R=R, x1=x1, reward_noise=reward_noise)


def build_linear_mdp(d: int, S: int, A: int, H: int, seed: int, reward_noise: float = 0.0) -> LinearMDP:
    """Random low-rank MDP with P = phi mu and R = phi theta.

    Every phi[s, a] is a point of the probability simplex in R^d, so P built
    as a mixture of the d next-state distributions mu_k is a valid kernel and
    the Bellman backup of any value table is linear in phi. d = S*A gives the
    one-hot (tabular) features.
    """
    if min(S, A, H, d) < 1:
        raise InvalidMdpError(f"d, S, A and H must be >= 1, got d={d} S={S} A={A} H={H}")
    if d > S * A:
        raise InvalidMdpError(f"feature dimension d={d} exceeds S*A={S * A}")
    rng = np.random.default_rng(seed)
    index = (np.arange(S * A) % d).reshape(S, A)
    phi = np.eye(d)[index]
    if d < S * A:
        mix = rng.dirichlet(np.ones(d), size=(S, A))
        phi = 0.5 * phi + 0.5 * mix
        phi = phi / phi.sum(axis=-1, keepdims=True)
    mu = rng.dirichlet(np.ones(S), size=(H, d))
    theta = rng.uniform(0.0, 1.0 / H, size=(H, d))
    P = np.einsum("sak,hkt->hsat", phi, mu)
    P = P / P.sum(axis=-1, keepdims=True)
    R = np.einsum("sak,hk->hsa", phi, theta)
    x1 = np.zeros(S)
    x1[0] = 1.0
    base = TabularMDP(S=S, A=A, H=H, P=P, R=R, x1=x1, reward_noise=reward_noise)
    return LinearMDP(base=base, d=d, phi=phi)


def linear_certificate_residual(lmdp: LinearMDP, num_tables: int = 100, seed: int = 0) -> float:
    """Largest least-squares residual of Bellman backups of random value tables onto phi."""
    mdp = lmdp.base
    rng = np.random.default_rng(seed)
    G = rng.random((num_tables, mdp.S))
    design = lmdp.phi.reshape(mdp.S * mdp.A, lmdp.d)
    worst = 0.0
    for h in range(1, mdp.H + 1):
        targets = np.stack([mdp.backup(h, g).reshape(-1) for g in G], axis=1)
        w, *_ = np.linalg.lstsq(design, targets, rcond=None)
        worst = max(worst, float(np.abs(design @ w - targets).max()))
    if worst >= CERTIFICATE_TOL:
        _LOGGER.warning("Linear certificate residual %s above %s", worst, CERTIFICATE_TOL)
    return worst


# ─────────────────────────────────────────────
# SECTION LOWER-BOUND TREE PAIR
# ─────────────────────────────────────────────


def tree_size(A: int, L: int) -> int:
    return (A**L - 1) // (A - 1)


def _level_offset(A: int, level: int) -> int:
    return (A**level - 1) // (A - 1)


def build_lower_bound_pair(
    A: int, L: int, H: int, eps: float, branching: str = BRANCHING_EDGE
) -> tuple[TabularMDP, TabularMDP]:
    """Two depth-L trees with identical dynamics and one extra rewarding leaf pair in the second.

    Leaves sit at level L-1 and are absorbing. M pays reward_scale=1/H with
    probability A^(L-1) eps / 2 at (first leaf, action 0); M' also pays with
    probability A^(L-1) eps at (last leaf, action 0), or action 1 when the
    tree has a single leaf.
    """
    if A <= 2:
        raise InvalidMdpError(f"lower-bound construction needs A > 2, got A={A}")
    if L < 1 or H < L:
        raise InvalidMdpError(f"need 1 <= L <= H, got L={L} H={H}")
    if not 0 < eps < 1:
        raise InvalidMdpError(f"eps must lie in (0, 1), got {eps}")
    width = A ** (L - 1)
    if width * eps > 1:
        raise InvalidMdpError(f"A^(L-1)*eps = {width * eps} exceeds 1")
    if branching not in (BRANCHING_EDGE, BRANCHING_UNIFORM):
        raise InvalidMdpError(f"unknown branching '{branching}'")

    S = tree_size(A, L)
    P = np.zeros((H, S, A, S))
    for level in range(L - 1):
        for j in range(A**level):
            node = _level_offset(A, level) + j
            children = _level_offset(A, level + 1) + j * A + np.arange(A)
            if branching == BRANCHING_EDGE:
                P[:, node, np.arange(A), children] = 1.0
            else:
                P[:, node, :, children] = 1.0 / A
    leaves = _level_offset(A, L - 1) + np.arange(width)
    P[:, leaves, :, leaves] = 1.0

    scale = 1.0 / H
    first, last = int(leaves[0]), int(leaves[-1])
    second_action = 0 if last != first else 1
    R = np.zeros((H, S, A))
    R[:, first, 0] = scale * width * eps / 2
    R_prime = R.copy()
    R_prime[:, last, second_action] = scale * width * eps
    x1 = np.zeros(S)
    x1[0] = 1.0
    kwargs = dict(S=S, A=A, H=H, P=P, x1=x1, reward_dist=REWARD_BERNOULLI, reward_scale=scale)
    return TabularMDP(R=R, **kwargs), TabularMDP(R=R_prime, **kwargs)  # type: ignore[arg-type]


def enumerate_leaf_policies(A: int, L: int, H: int) -> Iterator[Policy]:
    """Every deterministic policy that walks edges to one leaf and then plays a fixed action sequence."""
    S = tree_size(A, L)
    for leaf in range(A ** (L - 1)):
        digits = [(leaf // A ** (L - 2 - k)) % A for k in range(L - 1)]
        path = [0]
        for level, digit in enumerate(digits):
            path.append(_level_offset(A, level + 1) + (path[-1] - _level_offset(A, level)) * A + digit)
        for tail in itertools.product(range(A), repeat=H - L + 1):
            actions = np.zeros((H, S), dtype=np.int64)
            for h, digit in enumerate(digits):
                actions[h, path[h]] = digit
            for k, action in enumerate(tail):
                actions[L - 1 + k, path[-1]] = action
            yield Policy.deterministic(actions, A)


def lower_bound_gap(M: TabularMDP, M_prime: TabularMDP, policies) -> float:
    """min over policies of max(SubOpt on M, SubOpt on M')."""
    v_m = solve_optimal(M)[1].V[0] @ M.x1
    v_mp = solve_optimal(M_prime)[1].V[0] @ M_prime.x1
    best = np.inf
    for pi in policies:
        gap = max(v_m - evaluate_policy(M, pi), v_mp - evaluate_policy(M_prime, pi))
        best = min(best, gap)
    return float(best)


def lower_bound_threshold(A: int, L: int, H: int, eps: float) -> float:
    return (H - L + 1) * A ** (L - 1) * eps / (4 * H)


# ─────────────────────────────────────────────
# SECTION JSON
# ─────────────────────────────────────────────


def mdp_from_json(text: str) -> TabularMDP | LinearMDP:
    try:
        doc = MDP_DOCUMENT_SCHEMA(json.loads(text))
    except (ValueError, vol.Invalid) as err:
        raise InvalidMdpError(f"bad MDP document: {err}") from err
    base = TabularMDP(
        S=doc["S"],
        A=doc["A"],
        H=doc["H"],
        P=np.asarray(doc["P"], dtype=float),
        R=np.asarray(doc["R"], dtype=float),
        x1=np.asarray(doc["x1"], dtype=float),
        reward_noise=doc["reward_noise"],
        reward_dist=doc["reward_dist"],
        reward_scale=doc["reward_scale"],
    )
    if "phi" not in doc:
        return base
    phi = np.asarray(doc["phi"], dtype=float)
    if phi.ndim != 3:
        raise InvalidMdpError("phi must be indexed [s][a][k]")
    return LinearMDP(base=base, d=phi.shape[-1], phi=phi)


def save_mdp(path: str, mdp: TabularMDP | LinearMDP) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(mdp.to_json())
        f.write("\n")


def load_mdp(path: str) -> TabularMDP | LinearMDP:
    with open(path, encoding="utf-8") as f:
        return mdp_from_json(f.read())


def base_mdp(mdp: TabularMDP | LinearMDP) -> TabularMDP:
    return mdp.base if isinstance(mdp, LinearMDP) else mdp
