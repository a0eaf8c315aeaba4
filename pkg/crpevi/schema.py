"""Schemas for MDP documents, dataset lines, attacks, solver configs and sweep cells."""

from __future__ import annotations

import math

import voluptuous as vol

from .const import (
    ALGORITHMS,
    ATTACK_MODES,
    ATTACK_TIMINGS,
    ATTR_A,
    ATTR_CLEAN_R,
    ATTR_CLEAN_X_NEXT,
    ATTR_CORRUPTED,
    ATTR_EPISODE,
    ATTR_H,
    ATTR_R,
    ATTR_X,
    ATTR_X_NEXT,
    ATTR_ZETA,
    BETA_THEORY,
    BETA_TUNED,
    BONUS_BOOTSTRAP,
    BONUS_EXACT,
    CONF_ALGORITHMS,
    CONF_ATTACK_C,
    CONF_ATTACK_EPS,
    CONF_ATTACK_MODE,
    CONF_ATTACK_TIMING,
    CONF_DATA_N,
    CONF_EVAL_COVERAGE,
    CONF_MASTER_SEED,
    CONF_MDP_A,
    CONF_MDP_D,
    CONF_MDP_H,
    CONF_MDP_KIND,
    CONF_MDP_REWARD_NOISE,
    CONF_MDP_S,
    CONF_MDP_SEED,
    CONF_RECORD_TIMING,
    CONF_SEEDS,
    CONF_SOLVER_ALPHA,
    CONF_SOLVER_BETA_MODE,
    CONF_SOLVER_BETA_SCALE,
    CONF_SOLVER_BONUS,
    CONF_SOLVER_DELTA,
    CONF_SOLVER_LAMBDA,
    CONF_SOLVER_RHO,
    CONF_SOLVER_ZETA,
    MODE_NONE,
    REWARD_BERNOULLI,
    REWARD_UNIFORM,
    TIMING_POST_HOC,
    WEIGHTING_UNCERTAINTY,
    WEIGHTING_UNIT,
)

"""Default parameters values."""

DEFAULT_REWARD_NOISE = 0.0
DEFAULT_DELTA = 0.1
DEFAULT_BETA_SCALE = 0.05
DEFAULT_LAMBDA = 1.0
DEFAULT_NOISE_SCALE = 1.0
DEFAULT_BOOTSTRAP_DRAWS = 2000
DEFAULT_MASTER_SEED = 0
DEFAULT_SEEDS = 1
DEFAULT_N = 1000
DEFAULT_D = 4
DEFAULT_S = 4
DEFAULT_A = 2
DEFAULT_H = 3
DEFAULT_ALGORITHMS = f"{ALGORITHMS[0]},{ALGORITHMS[1]}"
AUTO = "auto"

MDP_KINDS = ["linear", "tabular"]


def finite_real(value):
    """Coerce to float and reject nan/inf."""
    value = float(value)
    if not math.isfinite(value):
        raise vol.Invalid("not a finite number")
    return value


def positive_real(value):
    value = finite_real(value)
    if value <= 0:
        raise vol.Invalid("must be > 0")
    return value


def strict_int(value):
    """JSON integer; rejects booleans and floats."""
    if isinstance(value, bool) or not isinstance(value, int):
        raise vol.Invalid("expected integer")
    return value


def _algorithm_list(value):
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    if not value:
        raise vol.Invalid("at least one algorithm")
    for algo in value:
        if algo not in ALGORITHMS:
            raise vol.Invalid(f"unknown algorithm '{algo}'")
    return list(value)


NONNEG_INT = vol.All(strict_int, vol.Range(min=0))
POSITIVE_INT = vol.All(strict_int, vol.Range(min=1))

"""Dataset line schemas."""

RECORD_SCHEMA = vol.Schema(
    {
        vol.Required(ATTR_EPISODE): NONNEG_INT,
        vol.Required(ATTR_H): POSITIVE_INT,
        vol.Required(ATTR_X): NONNEG_INT,
        vol.Required(ATTR_A): NONNEG_INT,
        vol.Required(ATTR_R): finite_real,
        vol.Required(ATTR_X_NEXT): NONNEG_INT,
    },
    extra=vol.PREVENT_EXTRA,
)

TRUTH_SCHEMA = vol.Schema(
    {
        vol.Required(ATTR_CLEAN_R): finite_real,
        vol.Required(ATTR_CLEAN_X_NEXT): NONNEG_INT,
        vol.Required(ATTR_CORRUPTED): bool,
        vol.Required(ATTR_ZETA): vol.All(finite_real, vol.Range(min=0)),
    },
    extra=vol.PREVENT_EXTRA,
)

META_SCHEMA = vol.Schema(
    {
        vol.Required("n"): POSITIVE_INT,
        vol.Required("H"): POSITIVE_INT,
        vol.Optional("mdp_sha256"): vol.Any(None, str),
        vol.Optional("behavior_sha256"): vol.Any(None, str),
        vol.Optional("seed"): vol.Any(None, int),
        vol.Optional("adversary"): vol.Any(None, dict),
    },
    extra=vol.ALLOW_EXTRA,
)

"""MDP document schema."""

MDP_DOCUMENT_SCHEMA = vol.Schema(
    {
        vol.Required("S"): POSITIVE_INT,
        vol.Required("A"): POSITIVE_INT,
        vol.Required("H"): POSITIVE_INT,
        vol.Required("P"): list,
        vol.Required("R"): list,
        vol.Optional("phi"): list,
        vol.Required("x1"): list,
        vol.Optional("reward_noise", default=DEFAULT_REWARD_NOISE): vol.All(finite_real, vol.Range(min=0)),
        vol.Optional("reward_dist", default=REWARD_UNIFORM): vol.In([REWARD_UNIFORM, REWARD_BERNOULLI]),
        vol.Optional("reward_scale", default=1.0): positive_real,
    },
    extra=vol.PREVENT_EXTRA,
)

"""Attack and solver schemas."""

ATTACK_SPEC_SCHEMA = vol.Schema(
    {
        vol.Required("mode"): vol.In(ATTACK_MODES),
        vol.Required("c"): vol.All(finite_real, vol.Range(min=0, max=1)),
        vol.Required("eps"): positive_real,
        vol.Optional("timing", default=TIMING_POST_HOC): vol.In(ATTACK_TIMINGS),
        vol.Optional("seed", default=0): vol.Coerce(int),
    }
)

SOLVER_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional("alpha", default=None): vol.Any(None, positive_real),
        vol.Optional("lam", default=None): vol.Any(None, positive_real),
        vol.Optional("beta_scale", default=DEFAULT_BETA_SCALE): positive_real,
        vol.Optional("delta", default=DEFAULT_DELTA): vol.All(positive_real, vol.Range(max=1)),
        vol.Optional("zeta_per_h", default=None): vol.Any(None, [vol.All(finite_real, vol.Range(min=0))]),
        vol.Optional("weighting", default=WEIGHTING_UNCERTAINTY): vol.In([WEIGHTING_UNCERTAINTY, WEIGHTING_UNIT]),
        vol.Optional("rho", default=None): vol.Any(None, [positive_real]),
        vol.Optional("beta_mode", default=BETA_TUNED): vol.In([BETA_TUNED, BETA_THEORY]),
        vol.Optional("bonus_source", default=BONUS_EXACT): vol.In([BONUS_EXACT, BONUS_BOOTSTRAP]),
        vol.Optional("bootstrap_draws", default=DEFAULT_BOOTSTRAP_DRAWS): vol.All(vol.Coerce(int), vol.Range(min=2)),
        vol.Optional("log_n", default=None): vol.Any(None, vol.All(finite_real, vol.Range(min=0))),
        vol.Optional("gamma", default=None): vol.Any(None, positive_real),
        vol.Optional("noise_scale", default=DEFAULT_NOISE_SCALE): positive_real,
        vol.Optional("seed", default=0): vol.Coerce(int),
    }
)

"""Sweep cell schema, applied to each expanded grid cell."""

SWEEP_CELL_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_MASTER_SEED, default=DEFAULT_MASTER_SEED): vol.Coerce(int),
        vol.Optional(CONF_SEEDS, default=DEFAULT_SEEDS): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_ALGORITHMS, default=DEFAULT_ALGORITHMS): _algorithm_list,
        vol.Optional(CONF_RECORD_TIMING, default=False): vol.Boolean(),
        vol.Optional(CONF_MDP_KIND, default="linear"): vol.In(MDP_KINDS),
        vol.Optional(CONF_MDP_D, default=DEFAULT_D): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_MDP_S, default=DEFAULT_S): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_MDP_A, default=DEFAULT_A): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_MDP_H, default=DEFAULT_H): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_MDP_SEED, default=None): vol.Any(None, vol.Coerce(int)),
        vol.Optional(CONF_MDP_REWARD_NOISE, default=DEFAULT_REWARD_NOISE): vol.All(
            vol.Coerce(float), vol.Range(min=0)
        ),
        vol.Optional(CONF_DATA_N, default=DEFAULT_N): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_ATTACK_MODE, default=MODE_NONE): vol.In([MODE_NONE] + ATTACK_MODES),
        vol.Optional(CONF_ATTACK_C, default=0.0): vol.All(vol.Coerce(float), vol.Range(min=0, max=1)),
        vol.Optional(CONF_ATTACK_EPS, default=1.0): vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False)),
        vol.Optional(CONF_ATTACK_TIMING, default=TIMING_POST_HOC): vol.In(ATTACK_TIMINGS),
        vol.Optional(CONF_SOLVER_ALPHA, default=AUTO): vol.Any(AUTO, vol.All(vol.Coerce(float), positive_real)),
        vol.Optional(CONF_SOLVER_LAMBDA, default=DEFAULT_LAMBDA): vol.Any(
            AUTO, vol.All(vol.Coerce(float), positive_real)
        ),
        vol.Optional(CONF_SOLVER_BETA_SCALE, default=DEFAULT_BETA_SCALE): vol.All(vol.Coerce(float), positive_real),
        vol.Optional(CONF_SOLVER_DELTA, default=DEFAULT_DELTA): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=1, min_included=False)
        ),
        vol.Optional(CONF_SOLVER_ZETA, default=AUTO): vol.Any(AUTO, vol.All(vol.Coerce(float), vol.Range(min=0))),
        vol.Optional(CONF_SOLVER_RHO, default=1.0): vol.All(vol.Coerce(float), positive_real),
        vol.Optional(CONF_SOLVER_BETA_MODE, default=BETA_TUNED): vol.In([BETA_TUNED, BETA_THEORY]),
        vol.Optional(CONF_SOLVER_BONUS, default=BONUS_EXACT): vol.In([BONUS_EXACT, BONUS_BOOTSTRAP]),
        vol.Optional(CONF_EVAL_COVERAGE, default=True): vol.Boolean(),
    },
    extra=vol.PREVENT_EXTRA,
)
