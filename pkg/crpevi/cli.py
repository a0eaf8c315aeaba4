"""Command line front end for the crpevi testbed."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .adversary import AttackSpec, account_corruption, corrupt
from .const import (
    ALGO_CORDS_PEVI,
    ALGO_PEVI,
    ALGORITHMS,
    ATTACK_MODES,
    ATTACK_TIMINGS,
    BETA_THEORY,
    BETA_TUNED,
    BONUS_BOOTSTRAP,
    BONUS_EXACT,
    BRANCHING_EDGE,
    BRANCHING_UNIFORM,
    DOMAIN,
    MODE_ADVERSARIAL_DYNAMICS,
    STARTUP_MESSAGE,
    TIMING_POST_HOC,
    VERSION,
)
from .dataset import collect, load_dataset, serialize_dataset
from .envs import (
    LinearMDP,
    Policy,
    base_mdp,
    build_linear_mdp,
    build_lower_bound_pair,
    build_tabular_mdp,
    load_mdp,
    lower_bound_threshold,
    save_mdp,
    solve_optimal,
)
from .errors import CrPeviError, SolverError
from .evaluation import coverage_coefficient, suboptimality
from .harness import emit_plots, run_sweep
from .helpers import derive_seed, dumps, setup_logger
from .schema import DEFAULT_A, DEFAULT_BETA_SCALE, DEFAULT_D, DEFAULT_DELTA, DEFAULT_H, DEFAULT_N, DEFAULT_S
from .solver import SolverConfig, cords_pevi, cr_pevi, pevi
from .weights import LinearBackend

_LOGGER = logging.getLogger(__name__)

EXIT_ERROR = 1
LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


def _backend_for(mdp) -> LinearBackend:
    if isinstance(mdp, LinearMDP):
        return LinearBackend(mdp.phi)
    return LinearBackend.one_hot(mdp.S, mdp.A)


def _attack_from(args, seed: int) -> AttackSpec | None:
    if args.attack_mode is None:
        return None
    return AttackSpec(mode=args.attack_mode, c=args.c, eps=args.eps, timing=args.timing, seed=derive_seed(seed, 1))


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text + "\n")
        return
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        f.write(text + "\n")
    _LOGGER.info("Wrote %s", out)


def _require_out(args) -> str:
    if not args.out:
        raise CrPeviError(f"'{args.command}' needs --out")
    return args.out


# ─────────────────────────────────────────────
# SECTION COMMANDS
# ─────────────────────────────────────────────


def cmd_gen_mdp(args) -> int:
    out = _require_out(args)
    if args.kind == "lower-bound":
        M, M_prime = build_lower_bound_pair(args.A, args.L, args.H, args.tree_eps, args.branching)
        prime_path = out[: -len(".json")] if out.endswith(".json") else out
        prime_path += ".prime.json"
        save_mdp(out, M)
        save_mdp(prime_path, M_prime)
        _LOGGER.info(
            "Wrote tree pair to %s and %s, suboptimality floor %s",
            out,
            prime_path,
            lower_bound_threshold(args.A, args.L, args.H, args.tree_eps),
        )
        return 0
    if args.kind == "linear":
        mdp = build_linear_mdp(args.d, args.S, args.A, args.H, args.seed, args.reward_noise)
    else:
        mdp = build_tabular_mdp(args.S, args.A, args.H, args.seed, args.reward_noise)
    save_mdp(out, mdp)
    _LOGGER.info("Wrote %s MDP to %s", args.kind, out)
    return 0


def cmd_collect(args) -> int:
    out = _require_out(args)
    mdp = load_mdp(args.mdp)
    env = base_mdp(mdp)
    ds, sidecar = collect(mdp, Policy.uniform(env.H, env.S, env.A), args.n, args.seed, _attack_from(args, args.seed))
    serialize_dataset(ds, sidecar, out)
    return 0


def cmd_corrupt(args) -> int:
    out = _require_out(args)
    mdp = load_mdp(args.mdp)
    ds, sidecar = load_dataset(args.data)
    spec = AttackSpec(
        mode=args.attack_mode, c=args.c, eps=args.eps, timing=TIMING_POST_HOC, seed=derive_seed(args.seed, 1)
    )
    qoracle = solve_optimal(base_mdp(mdp))[1] if spec.mode == MODE_ADVERSARIAL_DYNAMICS else None
    ds, sidecar, report = corrupt(ds, sidecar, spec, mdp, qoracle)
    serialize_dataset(ds, sidecar, out)
    _LOGGER.info("Corrupted %s records, zeta %s", report.num_corrupted, report.zeta_exact)
    return 0


def cmd_solve(args) -> int:
    mdp = load_mdp(args.mdp)
    backend = _backend_for(mdp)
    ds, _ = load_dataset(args.data, with_truth=False)
    zeta = None if args.zeta is None else (args.zeta / ds.H,) * ds.H
    cfg = SolverConfig(
        alpha=args.alpha,
        lam=args.lam,
        beta_scale=args.beta_scale,
        delta=args.delta,
        zeta_per_h=zeta,
        beta_mode=args.beta_mode,
        bonus_source=args.bonus,
        seed=args.seed,
    )
    if args.algorithm == ALGO_PEVI:
        report = pevi(ds, backend, cfg)
    elif args.algorithm == ALGO_CORDS_PEVI:
        report = cords_pevi(ds, backend, cfg, np.full(ds.n, args.rho))
    else:
        report = cr_pevi(ds, backend, cfg)
    _write(report.to_json(), args.out)
    return 0


def cmd_eval(args) -> int:
    mdp = load_mdp(args.mdp)
    env = base_mdp(mdp)
    result: dict = {}
    cfg = SolverConfig()
    if args.solution:
        with open(args.solution, encoding="utf-8") as f:
            doc = json.load(f)
        try:
            policy = Policy.deterministic(np.asarray(doc["policy"], dtype=np.int64), env.A)
            cfg = SolverConfig.from_dict(doc["config"])
        except (KeyError, TypeError) as err:
            raise SolverError(f"{args.solution} is not a solver report: {err}") from err
        result["algorithm"] = doc.get("algorithm")
        result["suboptimality"] = suboptimality(mdp, policy)
    if args.data:
        ds, sidecar = load_dataset(args.data)
        if sidecar is not None:
            result["corruption"] = account_corruption(mdp, ds, sidecar).to_dict()
        if args.coverage:
            result["coverage"] = coverage_coefficient(
                mdp, ds, _backend_for(mdp), cfg, mc_episodes=args.mc_episodes, seed=args.seed
            ).__dict__
    if not result:
        raise CrPeviError("'eval' needs --solution and/or --data")
    _write(dumps(result), args.out)
    return 0


def cmd_sweep(args) -> int:
    if not args.config:
        raise CrPeviError("'sweep' needs --config")
    _, code = run_sweep(args.config, args.out or ".", args.jobs)
    return code


def cmd_plot(args) -> int:
    axes = ("n", "zeta") if args.x == "both" else (args.x,)
    emit_plots(args.results, args.out or ".", axes)
    return 0


# ─────────────────────────────────────────────
# SECTION PARSER
# ─────────────────────────────────────────────


def _global_flags(parser: argparse.ArgumentParser, default) -> None:
    """Flags accepted before or after the subcommand; subparsers use SUPPRESS so they don't reset values."""
    parser.add_argument("--seed", type=int, default=default(0), help="master seed")
    parser.add_argument("--out", default=default(None), help="output file, prefix or directory")
    parser.add_argument("--jobs", type=int, default=default(1), help="parallel sweep cells")
    parser.add_argument("--config", default=default(None), help="sweep config file")
    parser.add_argument("--log-level", choices=LOG_LEVELS, default=default("INFO"))
    parser.add_argument("--log-file", default=default(None), help="rotating log file")


def _attack_flags(parser: argparse.ArgumentParser, required: bool) -> None:
    parser.add_argument("--attack-mode", choices=ATTACK_MODES, required=required, default=None)
    parser.add_argument("--c", type=float, default=0.1, help="fraction of records to corrupt")
    parser.add_argument("--eps", type=float, default=1.0, help="perturbation magnitude")
    if not required:
        parser.add_argument("--timing", choices=ATTACK_TIMINGS, default=TIMING_POST_HOC)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=DOMAIN, description="Corruption-robust offline RL desk testbed.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    _global_flags(parser, lambda value: value)
    shared = argparse.ArgumentParser(add_help=False)
    _global_flags(shared, lambda _value: argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-mdp", parents=[shared], help="generate an MDP JSON document")
    p.add_argument("--kind", choices=["linear", "tabular", "lower-bound"], default="linear")
    p.add_argument("--d", type=int, default=DEFAULT_D)
    p.add_argument("--S", type=int, default=DEFAULT_S)
    p.add_argument("--A", type=int, default=DEFAULT_A)
    p.add_argument("--H", type=int, default=DEFAULT_H)
    p.add_argument("--reward-noise", type=float, default=0.0)
    p.add_argument("--L", type=int, default=2, help="tree depth")
    p.add_argument("--tree-eps", type=float, default=0.1, help="reward gap of the tree pair")
    p.add_argument("--branching", choices=[BRANCHING_EDGE, BRANCHING_UNIFORM], default=BRANCHING_EDGE)
    p.set_defaults(func=cmd_gen_mdp)

    p = sub.add_parser("collect", parents=[shared], help="roll out the uniform behavior policy")
    p.add_argument("--mdp", required=True)
    p.add_argument("--n", type=int, default=DEFAULT_N)
    _attack_flags(p, required=False)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("corrupt", parents=[shared], help="apply a post-hoc attack to a saved dataset")
    p.add_argument("--mdp", required=True)
    p.add_argument("--data", required=True)
    _attack_flags(p, required=True)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("solve", parents=[shared], help="run a pessimistic solver on a dataset")
    p.add_argument("--mdp", required=True, help="MDP document providing the features")
    p.add_argument("--data", required=True)
    p.add_argument("--algorithm", choices=ALGORITHMS, default=ALGORITHMS[0])
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--beta-scale", type=float, default=DEFAULT_BETA_SCALE)
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    p.add_argument("--zeta", type=float, default=None, help="known total corruption budget")
    p.add_argument("--beta-mode", choices=[BETA_TUNED, BETA_THEORY], default=BETA_TUNED)
    p.add_argument("--bonus", choices=[BONUS_EXACT, BONUS_BOOTSTRAP], default=BONUS_EXACT)
    p.add_argument("--rho", type=float, default=1.0, help="shift weight for cords_pevi")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", parents=[shared], help="suboptimality, corruption and coverage")
    p.add_argument("--mdp", required=True)
    p.add_argument("--solution", default=None, help="solver report JSON")
    p.add_argument("--data", default=None)
    p.add_argument("--coverage", action="store_true")
    p.add_argument("--mc-episodes", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[shared], help="run a config grid into results.csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", parents=[shared], help="SVG charts from results.csv")
    p.add_argument("--results", required=True)
    p.add_argument("--x", choices=["n", "zeta", "both"], default="both")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_file:
        setup_logger(DOMAIN, args.log_file, args.log_level)
    else:
        logging.basicConfig(
            level=args.log_level,
            format="%(asctime)s.%(msecs)03d %(levelname)s [%(name)s] %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
        )
        logging.getLogger(DOMAIN).setLevel(args.log_level)
    _LOGGER.info(STARTUP_MESSAGE)
    try:
        return args.func(args)
    except CrPeviError as err:
        _LOGGER.error("%s failed: %s", args.command, err)
        return EXIT_ERROR
    except OSError as err:
        _LOGGER.error("%s failed: %s", args.command, err)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
