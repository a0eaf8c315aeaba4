"""Constants for the crpevi testbed."""

import json
import pathlib

# Base package constants, some loaded directly from the manifest
_MANIFEST_PATH = pathlib.Path(__file__).parent / "manifest.json"
with pathlib.Path.open(_MANIFEST_PATH, encoding="utf-8") as json_file:
    data = json.load(json_file)
NAME = f"{data['name']}"
DOMAIN = f"{data['domain']}"
VERSION = f"{data['version']}"
ISSUE_URL = f"{data['issue_tracker']}"
DOC_URL = f"{data['documentation']}"

STARTUP_MESSAGE = f"""
-------------------------------------------------------------------
{NAME} ({DOMAIN})
Version: {VERSION}
If you have any issues with this you need to open an issue here:
{ISSUE_URL}
Documentation: {DOC_URL}
-------------------------------------------------------------------
"""

# Sweep config keys
CONF_MASTER_SEED = "master_seed"
CONF_SEEDS = "seeds"
CONF_ALGORITHMS = "algorithms"
CONF_RECORD_TIMING = "record_timing"
CONF_MDP_KIND = "mdp.kind"
CONF_MDP_D = "mdp.d"
CONF_MDP_S = "mdp.S"
CONF_MDP_A = "mdp.A"
CONF_MDP_H = "mdp.H"
CONF_MDP_SEED = "mdp.seed"
CONF_MDP_REWARD_NOISE = "mdp.reward_noise"
CONF_DATA_N = "data.n"
CONF_ATTACK_MODE = "attack.mode"
CONF_ATTACK_C = "attack.c"
CONF_ATTACK_EPS = "attack.eps"
CONF_ATTACK_TIMING = "attack.timing"
CONF_SOLVER_ALPHA = "solver.alpha"
CONF_SOLVER_LAMBDA = "solver.lambda"
CONF_SOLVER_BETA_SCALE = "solver.beta_scale"
CONF_SOLVER_DELTA = "solver.delta"
CONF_SOLVER_ZETA = "solver.zeta"
CONF_SOLVER_RHO = "solver.rho"
CONF_SOLVER_BETA_MODE = "solver.beta_mode"
CONF_SOLVER_BONUS = "solver.bonus"
CONF_EVAL_COVERAGE = "eval.coverage"

# Record and sidecar fields, in serialization order
ATTR_EPISODE = "episode"
ATTR_H = "h"
ATTR_X = "x"
ATTR_A = "a"
ATTR_R = "r"
ATTR_X_NEXT = "x_next"
ATTR_CLEAN_R = "clean_r"
ATTR_CLEAN_X_NEXT = "clean_x_next"
ATTR_CORRUPTED = "corrupted"
ATTR_ZETA = "zeta"

RECORD_FIELDS = (ATTR_EPISODE, ATTR_H, ATTR_X, ATTR_A, ATTR_R, ATTR_X_NEXT)
TRUTH_FIELDS = (ATTR_CLEAN_R, ATTR_CLEAN_X_NEXT, ATTR_CORRUPTED, ATTR_ZETA)

# MDP document fields, in serialization order
MDP_FIELDS = ("S", "A", "H", "P", "R", "phi", "x1")

# Attack modes and timings
MODE_NONE = "none"
MODE_RANDOM_REWARD = "random_reward"
MODE_RANDOM_DYNAMICS = "random_dynamics"
MODE_ADVERSARIAL_REWARD = "adversarial_reward"
MODE_ADVERSARIAL_DYNAMICS = "adversarial_dynamics"
ATTACK_MODES = [MODE_RANDOM_REWARD, MODE_RANDOM_DYNAMICS, MODE_ADVERSARIAL_REWARD, MODE_ADVERSARIAL_DYNAMICS]
DYNAMICS_MODES = {MODE_RANDOM_DYNAMICS, MODE_ADVERSARIAL_DYNAMICS}

TIMING_ON_THE_FLY = "on_the_fly"
TIMING_POST_HOC = "post_hoc"
ATTACK_TIMINGS = [TIMING_ON_THE_FLY, TIMING_POST_HOC]

# Solver variants
ALGO_CR_PEVI = "cr_pevi"
ALGO_PEVI = "pevi"
ALGO_CORDS_PEVI = "cords_pevi"
ALGORITHMS = [ALGO_CR_PEVI, ALGO_PEVI, ALGO_CORDS_PEVI]

WEIGHTING_UNCERTAINTY = "uncertainty"
WEIGHTING_UNIT = "unit"
BETA_TUNED = "tuned"
BETA_THEORY = "theory"
BONUS_EXACT = "exact"
BONUS_BOOTSTRAP = "bootstrap"

REWARD_UNIFORM = "uniform"
REWARD_BERNOULLI = "bernoulli"

BRANCHING_EDGE = "edge"
BRANCHING_UNIFORM = "uniform"

# Results table
CSV_COLUMNS = [
    "seed",
    "n",
    "H",
    "d",
    "S",
    "A",
    "attack_mode",
    "c",
    "eps",
    "zeta_exact",
    "zeta_approx",
    "alpha",
    "lambda",
    "beta_scale",
    "weighting",
    "algorithm",
    "suboptimality",
    "cc_weighted",
    "cc_unweighted",
    "min_eig",
    "wall_time_ms",
]

# Numeric limits
ROW_SUM_TOL = 1e-12
CERTIFICATE_TOL = 1e-10
CHOLESKY_JITTER = 1e-12
# ln N(gamma) = c d^2 ln(1 + 1/gamma) for the linear class. The +1 keeps ln N
# positive once gamma >= 1; for small gamma it matches d^2 ln(1/gamma).
LINEAR_COVERING_CONSTANT = 1.0
MAX_FINITE_CLASS_SIZE = 64
WELL_EXPLORED_PAIRS = 200
EXACT_OCCUPANCY_MAX_STATES = 5000
REAL_FORMAT = ".17g"
