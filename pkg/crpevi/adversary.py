"""Data-corruption operators and corruption accounting."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import voluptuous as vol

from .const import (
    DYNAMICS_MODES,
    MODE_ADVERSARIAL_DYNAMICS,
    MODE_ADVERSARIAL_REWARD,
    MODE_RANDOM_DYNAMICS,
    MODE_RANDOM_REWARD,
    TIMING_POST_HOC,
)
from .envs import LinearMDP, TabularMDP, ValueTables, base_mdp
from .errors import AttackSpecError, MissingTruthError
from .schema import ATTACK_SPEC_SCHEMA

if TYPE_CHECKING:
    from .dataset import OfflineDataset, TruthSidecar

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttackSpec:
    mode: str
    c: float
    eps: float
    timing: str = TIMING_POST_HOC
    seed: int = 0

    def __post_init__(self) -> None:
        try:
            clean = ATTACK_SPEC_SCHEMA(dataclasses.asdict(self))
        except vol.Invalid as err:
            raise AttackSpecError(f"invalid attack spec: {err}") from err
        for key, value in clean.items():
            object.__setattr__(self, key, value)

    @classmethod
    def from_dict(cls, data: dict) -> AttackSpec:
        try:
            return cls(**ATTACK_SPEC_SCHEMA(dict(data)))
        except vol.Invalid as err:
            raise AttackSpecError(f"invalid attack spec: {err}") from err

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def radius(self) -> int:
        """Neighborhood radius in state-index distance."""
        return math.ceil(self.eps)

    def count(self, num_records: int) -> int:
        """Number of records to corrupt out of num_records."""
        target = self.c * num_records
        if target < 1:
            if self.c > 0:
                _LOGGER.warning("c*|D| = %s < 1, no record is corrupted", target)
            return 0
        return min(num_records, math.floor(target + 0.5))


@dataclass(frozen=True)
class CorruptionReport:
    num_corrupted: int
    zeta_approx: float
    zeta_exact_per_h: tuple[float, ...] | None
    attack: AttackSpec | None

    @property
    def zeta_exact(self) -> float:
        return float(sum(self.zeta_exact_per_h)) if self.zeta_exact_per_h is not None else 0.0

    def to_dict(self) -> dict:
        return {
            "num_corrupted": self.num_corrupted,
            "zeta_approx": self.zeta_approx,
            "zeta_exact": self.zeta_exact,
            "zeta_exact_per_h": list(self.zeta_exact_per_h) if self.zeta_exact_per_h is not None else None,
            "attack": self.attack.to_dict() if self.attack is not None else None,
        }


def approximate_zeta(num_records: int, c: float, eps: float) -> float:
    """Bookkeeping estimate |D| * c * eps."""
    return float(num_records) * c * eps


def neighborhood(s: int, eps: float, S: int) -> np.ndarray:
    """States within index distance ceil(eps) of s, s included."""
    r = math.ceil(eps)
    return np.arange(max(0, s - r), min(S - 1, s + r) + 1)


def check_compatible(spec: AttackSpec, S: int, qoracle: ValueTables | None) -> None:
    if spec.mode in DYNAMICS_MODES and S < 2:
        raise AttackSpecError(f"{spec.mode} needs at least 2 states to redirect to, MDP has {S}")
    if spec.mode == MODE_ADVERSARIAL_DYNAMICS and qoracle is None:
        raise AttackSpecError("adversarial_dynamics needs a Q oracle")


def perturb_rewards(spec: AttackSpec, rewards: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if spec.mode == MODE_RANDOM_REWARD:
        return rng.uniform(-spec.eps, spec.eps, size=rewards.shape)
    if spec.mode == MODE_ADVERSARIAL_REWARD:
        return -spec.eps * rewards
    return rewards


def adversarial_targets(spec: AttackSpec, next_values: np.ndarray) -> np.ndarray:
    """For each clean next state, the neighbor with the lowest next-step value.

    Ties keep the clean state when it is a minimizer, otherwise the smallest index.
    """
    S = len(next_values)
    target = np.arange(S)
    for s in range(S):
        ball = neighborhood(s, spec.eps, S)
        vals = next_values[ball]
        lowest = vals.min()
        if next_values[s] <= lowest:
            continue
        target[s] = ball[np.flatnonzero(vals == lowest)[0]]
    return target


def perturb_next_states(
    spec: AttackSpec,
    x_next: np.ndarray,
    h: int,
    S: int,
    qoracle: ValueTables | None,
    rng: np.random.Generator,
) -> np.ndarray:
    """Redirect next states of records at 1-based step h."""
    if len(x_next) == 0:
        return x_next
    if spec.mode == MODE_RANDOM_DYNAMICS:
        r = spec.radius
        lo = np.maximum(0, x_next - r)
        hi = np.minimum(S - 1, x_next + r)
        pick = lo + rng.integers(0, hi - lo)
        return np.where(pick >= x_next, pick + 1, pick)
    if spec.mode == MODE_ADVERSARIAL_DYNAMICS:
        assert qoracle is not None
        next_values = qoracle.Q[h].max(axis=-1)
        return adversarial_targets(spec, next_values)[x_next]
    return x_next


def record_gaps(
    r: np.ndarray, x_next: np.ndarray, clean_r: np.ndarray, clean_x_next: np.ndarray
) -> np.ndarray:
    """Per-record Bellman-gap bound |r - clean_r| + TV between the observed and clean next-state point masses."""
    return np.abs(r - clean_r) + (x_next != clean_x_next).astype(float)


def corrupt(
    ds: OfflineDataset,
    sidecar: TruthSidecar | None,
    spec: AttackSpec,
    mdp: TabularMDP | LinearMDP,
    qoracle: ValueTables | None = None,
) -> tuple[OfflineDataset, TruthSidecar, CorruptionReport]:
    """Apply a post-hoc attack to a saved dataset. Episodes are not re-simulated."""
    from .dataset import TruthSidecar

    if spec.timing != TIMING_POST_HOC:
        raise AttackSpecError("on_the_fly attacks are applied during collection")
    env = base_mdp(mdp)
    check_compatible(spec, env.S, qoracle)
    if sidecar is None:
        sidecar = TruthSidecar.clean(ds)

    N = len(ds)
    k = spec.count(N)
    rng = np.random.default_rng(spec.seed)
    selected = np.zeros(N, dtype=bool)
    selected[rng.choice(N, size=k, replace=False)] = True
    _LOGGER.debug("Corrupting %s of %s records with %s", k, N, spec.mode)

    r = ds.r.copy()
    x_next = ds.x_next.copy()
    if spec.mode in (MODE_RANDOM_REWARD, MODE_ADVERSARIAL_REWARD):
        r[selected] = perturb_rewards(spec, r[selected], rng)
    else:
        for h in range(1, ds.H + 1):
            mask = selected & (ds.h == h)
            x_next[mask] = perturb_next_states(spec, x_next[mask], h, env.S, qoracle, rng)

    new_ds = ds.with_columns(r=r, x_next=x_next, meta={**ds.meta, "adversary": spec.to_dict()})
    new_sidecar = dataclasses.replace(
        sidecar,
        corrupted=sidecar.corrupted | selected,
        zeta=record_gaps(r, x_next, sidecar.clean_r, sidecar.clean_x_next),
    )
    report = account_corruption(env, new_ds, new_sidecar, spec=spec)
    return new_ds, new_sidecar, report


def account_corruption(
    clean_mdp: TabularMDP | LinearMDP,
    ds: OfflineDataset,
    sidecar: TruthSidecar | None,
    spec: AttackSpec | None = None,
    rho: np.ndarray | None = None,
) -> CorruptionReport:
    """Per-step corruption from the sidecar, optionally weighted by per-episode rho."""
    if sidecar is None:
        raise MissingTruthError("corruption accounting needs the truth sidecar")
    env = base_mdp(clean_mdp)
    if ds.H != env.H:
        raise AttackSpecError(f"dataset horizon {ds.H} does not match MDP horizon {env.H}")
    gaps = record_gaps(ds.r, ds.x_next, sidecar.clean_r, sidecar.clean_x_next)
    if rho is not None:
        rho = np.asarray(rho, dtype=float)
        if rho.shape != (ds.n,) or (rho <= 0).any():
            raise AttackSpecError(f"rho must hold {ds.n} positive per-episode weights")
        gaps = gaps * rho[ds.episode]
    per_h = tuple(float(gaps[ds.h == h].sum()) for h in range(1, ds.H + 1))

    if spec is None and ds.meta.get("adversary"):
        spec = AttackSpec.from_dict(ds.meta["adversary"])
    zeta_approx = approximate_zeta(len(ds), spec.c, spec.eps) if spec is not None else 0.0
    return CorruptionReport(
        num_corrupted=int(sidecar.corrupted.sum()),
        zeta_approx=zeta_approx,
        zeta_exact_per_h=per_h,
        attack=spec,
    )
