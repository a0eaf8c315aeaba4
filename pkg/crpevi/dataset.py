"""Offline dataset collection and persistence.

A dataset is written as three files sharing one prefix:
``<prefix>.jsonl`` holds the records a solver may see, ``<prefix>.truth.jsonl``
the hidden clean values and corruption flags, and ``<prefix>.meta.json`` the
provenance. Solvers are handed the first file alone.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import voluptuous as vol

from .adversary import AttackSpec, check_compatible, corrupt, perturb_next_states, perturb_rewards, record_gaps
from .const import (
    MODE_ADVERSARIAL_DYNAMICS,
    MODE_ADVERSARIAL_REWARD,
    MODE_RANDOM_REWARD,
    RECORD_FIELDS,
    TIMING_ON_THE_FLY,
    TRUTH_FIELDS,
)
from .envs import LinearMDP, Policy, TabularMDP, ValueTables, base_mdp, solve_optimal
from .errors import DatasetError, DatasetParseError, PolicyMismatchError
from .helpers import dumps
from .schema import META_SCHEMA, RECORD_SCHEMA, TRUTH_SCHEMA

_LOGGER = logging.getLogger(__name__)

DATASET_SUFFIX = ".jsonl"
TRUTH_SUFFIX = ".truth.jsonl"
META_SUFFIX = ".meta.json"


@dataclass(frozen=True)
class TransitionRecord:
    episode: int
    h: int
    x: int
    a: int
    r: float
    x_next: int


def _column(values, dtype) -> np.ndarray:
    out = np.array(values, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class OfflineDataset:
    """n episodes of H steps stored column-wise, record i = (episode i // H, step i % H + 1)."""

    x: np.ndarray
    a: np.ndarray
    r: np.ndarray
    x_next: np.ndarray
    n: int
    H: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, dtype in (("x", np.int64), ("a", np.int64), ("r", float), ("x_next", np.int64)):
            object.__setattr__(self, name, _column(getattr(self, name), dtype))
        expected = self.n * self.H
        for name in ("x", "a", "r", "x_next"):
            if len(getattr(self, name)) != expected:
                raise DatasetError(f"column {name} has {len(getattr(self, name))} entries, expected n*H = {expected}")
        if not np.isfinite(self.r).all():
            raise DatasetError("rewards must be finite")

    @cached_property
    def episode(self) -> np.ndarray:
        return _column(np.repeat(np.arange(self.n), self.H), np.int64)

    @cached_property
    def h(self) -> np.ndarray:
        return _column(np.tile(np.arange(1, self.H + 1), self.n), np.int64)

    @cached_property
    def records(self) -> tuple[TransitionRecord, ...]:
        return tuple(
            TransitionRecord(int(e), int(h), int(x), int(a), float(r), int(xn))
            for e, h, x, a, r, xn in zip(self.episode, self.h, self.x, self.a, self.r, self.x_next)
        )

    def __len__(self) -> int:
        return self.n * self.H

    def step(self, h: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(x, a, r, x_next) of every episode at 1-based step h."""
        sl = slice(h - 1, None, self.H)
        return self.x[sl], self.a[sl], self.r[sl], self.x_next[sl]

    def is_chained(self) -> bool:
        """True when x at step h+1 equals x_next at step h in every episode."""
        if self.H < 2:
            return True
        x = self.x.reshape(self.n, self.H)
        xn = self.x_next.reshape(self.n, self.H)
        return bool((x[:, 1:] == xn[:, :-1]).all())

    def with_columns(self, **changes) -> OfflineDataset:
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class TruthSidecar:
    clean_r: np.ndarray
    clean_x_next: np.ndarray
    corrupted: np.ndarray
    zeta: np.ndarray

    def __post_init__(self) -> None:
        for name, dtype in (("clean_r", float), ("clean_x_next", np.int64), ("corrupted", bool), ("zeta", float)):
            object.__setattr__(self, name, _column(getattr(self, name), dtype))
        if len({len(self.clean_r), len(self.clean_x_next), len(self.corrupted), len(self.zeta)}) != 1:
            raise DatasetError("sidecar columns differ in length")

    @classmethod
    def clean(cls, ds: OfflineDataset) -> TruthSidecar:
        return cls(ds.r, ds.x_next, np.zeros(len(ds), dtype=bool), np.zeros(len(ds)))

    def __len__(self) -> int:
        return len(self.clean_r)


def collect(
    mdp: TabularMDP | LinearMDP,
    behavior: Policy,
    n: int,
    seed: int,
    adversary: AttackSpec | None = None,
    qoracle: ValueTables | None = None,
) -> tuple[OfflineDataset, TruthSidecar]:
    """Roll out n episodes of the behavior policy.

    An on-the-fly adversary corrupts (r, x_next) before the record is
    appended and the episode continues from the corrupted state. A post-hoc
    adversary is applied to the finished clean dataset. Adversarial dynamics
    use the MDP's own optimal Q when no oracle is given.
    """
    env = base_mdp(mdp)
    if n < 1:
        raise DatasetError(f"n must be >= 1, got {n}")
    if behavior.shape != (env.H, env.S, env.A):
        raise PolicyMismatchError(f"behavior shape {behavior.shape} does not match MDP {(env.H, env.S, env.A)}")

    live = adversary is not None and adversary.timing == TIMING_ON_THE_FLY
    if adversary is not None:
        if qoracle is None and adversary.mode == MODE_ADVERSARIAL_DYNAMICS:
            qoracle = solve_optimal(env)[1]
        check_compatible(adversary, env.S, qoracle)

    rng = np.random.default_rng([seed, 0])
    x = np.zeros((n, env.H), dtype=np.int64)
    a = np.zeros((n, env.H), dtype=np.int64)
    r = np.zeros((n, env.H))
    x_next = np.zeros((n, env.H), dtype=np.int64)
    clean_r = np.zeros((n, env.H))
    clean_x_next = np.zeros((n, env.H), dtype=np.int64)
    selected = np.zeros((n, env.H), dtype=bool)
    if live:
        adv_rng = np.random.default_rng(adversary.seed)
        k = adversary.count(n * env.H)
        selected.reshape(-1)[adv_rng.choice(n * env.H, size=k, replace=False)] = True

    state = np.minimum((rng.random(n)[:, None] >= np.cumsum(env.x1)).sum(axis=-1), env.S - 1)
    for h in range(1, env.H + 1):
        col = h - 1
        act = behavior.sample(h, state, rng)
        rew = env.sample_rewards(h, state, act, rng)
        nxt = env.sample_next_states(h, state, act, rng)
        x[:, col], a[:, col] = state, act
        clean_r[:, col], clean_x_next[:, col] = rew, nxt
        if live:
            hit = selected[:, col]
            rew = rew.copy()
            nxt = nxt.copy()
            if adversary.mode in (MODE_RANDOM_REWARD, MODE_ADVERSARIAL_REWARD):
                rew[hit] = perturb_rewards(adversary, rew[hit], adv_rng)
            else:
                nxt[hit] = perturb_next_states(adversary, nxt[hit], h, env.S, qoracle, adv_rng)
        r[:, col], x_next[:, col] = rew, nxt
        state = nxt

    meta = {
        "n": n,
        "H": env.H,
        "mdp_sha256": mdp.fingerprint(),
        "behavior_sha256": behavior.fingerprint(),
        "seed": seed,
        "adversary": adversary.to_dict() if live else None,
    }
    ds = OfflineDataset(x.reshape(-1), a.reshape(-1), r.reshape(-1), x_next.reshape(-1), n, env.H, meta)
    sidecar = TruthSidecar(
        clean_r.reshape(-1),
        clean_x_next.reshape(-1),
        selected.reshape(-1),
        record_gaps(ds.r, ds.x_next, clean_r.reshape(-1), clean_x_next.reshape(-1)),
    )
    _LOGGER.info("Collected %s episodes of %s steps (%s corrupted records)", n, env.H, int(selected.sum()))
    if adversary is not None and not live:
        ds, sidecar, _ = corrupt(ds, sidecar, adversary, env, qoracle)
    return ds, sidecar


# ─────────────────────────────────────────────
# SECTION FILES
# ─────────────────────────────────────────────


def _prefix(path: str) -> str:
    for suffix in (TRUTH_SUFFIX, META_SUFFIX, DATASET_SUFFIX):
        if path.endswith(suffix):
            return path[: -len(suffix)]
    return path


def serialize_dataset(ds: OfflineDataset, sidecar: TruthSidecar | None, path_prefix: str) -> list[str]:
    """Write dataset, sidecar and meta files; returns the paths written."""
    prefix = _prefix(path_prefix)
    written = [prefix + DATASET_SUFFIX]
    with open(prefix + DATASET_SUFFIX, "w", encoding="utf-8", newline="\n") as f:
        for rec in ds.records:
            f.write(dumps({k: getattr(rec, k) for k in RECORD_FIELDS}) + "\n")
    if sidecar is not None:
        if len(sidecar) != len(ds):
            raise DatasetError(f"sidecar has {len(sidecar)} rows for {len(ds)} records")
        written.append(prefix + TRUTH_SUFFIX)
        with open(prefix + TRUTH_SUFFIX, "w", encoding="utf-8", newline="\n") as f:
            for i in range(len(sidecar)):
                row = dict(
                    zip(
                        TRUTH_FIELDS,
                        (
                            float(sidecar.clean_r[i]),
                            int(sidecar.clean_x_next[i]),
                            bool(sidecar.corrupted[i]),
                            float(sidecar.zeta[i]),
                        ),
                    )
                )
                f.write(dumps(row) + "\n")
    written.append(prefix + META_SUFFIX)
    with open(prefix + META_SUFFIX, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps({**ds.meta, "n": ds.n, "H": ds.H}) + "\n")
    _LOGGER.debug("Wrote %s", ", ".join(written))
    return written


def _read_lines(path: str, schema: vol.Schema):
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.endswith("\n"):
                raise DatasetParseError(path, lineno, "truncated line")
            try:
                yield lineno, schema(json.loads(line))
            except json.JSONDecodeError as err:
                raise DatasetParseError(path, lineno, f"invalid JSON ({err.msg})") from err
            except vol.Invalid as err:
                raise DatasetParseError(path, lineno, str(err)) from err


def load_dataset(path_prefix: str, with_truth: bool = True) -> tuple[OfflineDataset, TruthSidecar | None]:
    """Load a dataset; the sidecar is None when absent or not requested."""
    prefix = _prefix(path_prefix)
    data_path = prefix + DATASET_SUFFIX
    meta: dict = {}
    if os.path.exists(prefix + META_SUFFIX):
        with open(prefix + META_SUFFIX, encoding="utf-8") as f:
            try:
                meta = META_SCHEMA(json.loads(f.read()))
            except (json.JSONDecodeError, vol.Invalid) as err:
                raise DatasetParseError(prefix + META_SUFFIX, 1, str(err)) from err

    rows = [row for _, row in _read_lines(data_path, RECORD_SCHEMA)]
    if not rows:
        raise DatasetParseError(data_path, 1, "empty dataset")
    H = meta.get("H") or max(row["h"] for row in rows)
    n = meta.get("n") or -(-len(rows) // H)
    for i, row in enumerate(rows):
        if row["episode"] != i // H or row["h"] != i % H + 1:
            raise DatasetParseError(
                data_path, i + 1, f"expected episode {i // H} step {i % H + 1}, got {row['episode']}/{row['h']}"
            )
    if len(rows) != n * H:
        raise DatasetParseError(data_path, len(rows) + 1, f"missing record, expected {n * H} lines")

    ds = OfflineDataset(
        x=[row["x"] for row in rows],
        a=[row["a"] for row in rows],
        r=[row["r"] for row in rows],
        x_next=[row["x_next"] for row in rows],
        n=n,
        H=H,
        meta=meta,
    )
    truth_path = prefix + TRUTH_SUFFIX
    if not with_truth or not os.path.exists(truth_path):
        return ds, None
    truth = [row for _, row in _read_lines(truth_path, TRUTH_SCHEMA)]
    if len(truth) != len(ds):
        raise DatasetParseError(truth_path, len(truth) + 1, f"sidecar has {len(truth)} lines for {len(ds)} records")
    sidecar = TruthSidecar(
        clean_r=[row["clean_r"] for row in truth],
        clean_x_next=[row["clean_x_next"] for row in truth],
        corrupted=[row["corrupted"] for row in truth],
        zeta=[row["zeta"] for row in truth],
    )
    return ds, sidecar
