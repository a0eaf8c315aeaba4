"""Seeded experiment sweeps, results tables and SVG plots."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import os
import re
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import voluptuous as vol

from .adversary import AttackSpec, account_corruption
from .const import (
    ALGO_CORDS_PEVI,
    ALGO_CR_PEVI,
    ALGO_PEVI,
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
    CSV_COLUMNS,
    MODE_ADVERSARIAL_DYNAMICS,
    MODE_NONE,
    WEIGHTING_UNCERTAINTY,
    WEIGHTING_UNIT,
)
from .dataset import collect
from .envs import Policy, build_linear_mdp, build_tabular_mdp, solve_optimal
from .errors import ConfigError, CrPeviError, PlotError
from .evaluation import coverage_coefficient, suboptimality
from .helpers import derive_seed, format_real
from .schema import AUTO, SWEEP_CELL_SCHEMA
from .solver import SolverConfig, cords_pevi, cr_pevi, pevi
from .weights import LinearBackend

_LOGGER = logging.getLogger(__name__)

RESULTS_FILE = "results.csv"
EXIT_OK = 0
EXIT_CELL_FAILED = 2

# Keys whose comma lists are values, not grid axes
LIST_KEYS = {CONF_ALGORITHMS}
KEY_PATTERN = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")


# ─────────────────────────────────────────────
# SECTION CONFIG
# ─────────────────────────────────────────────


@dataclass(frozen=True)
class SweepConfig:
    """Fixed settings plus grid axes in order of appearance."""

    fixed: dict
    axes: tuple[tuple[str, tuple[str, ...]], ...]
    lines: dict = field(default_factory=dict)


def _check_value(key: str, value: str, line: int) -> None:
    try:
        SWEEP_CELL_SCHEMA({key: value})
    except vol.Invalid as err:
        raise ConfigError(key, line, err.msg) from err


def parse_config(text: str) -> SweepConfig:
    """Parse flat 'key = value' lines; comma-separated values declare a grid axis."""
    known = {str(k) for k in SWEEP_CELL_SCHEMA.schema}
    fixed: dict = {}
    axes: list[tuple[str, tuple[str, ...]]] = []
    lines: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(None, lineno, f"expected 'key = value', got '{line}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not KEY_PATTERN.match(key):
            raise ConfigError(key, lineno, "malformed key")
        if key not in known:
            raise ConfigError(key, lineno, "unknown key")
        if key in lines:
            raise ConfigError(key, lineno, f"duplicate key, first set on line {lines[key]}")
        if not value:
            raise ConfigError(key, lineno, "missing value")
        lines[key] = lineno
        values = [v.strip() for v in value.split(",")]
        if key in LIST_KEYS or len(values) == 1:
            _check_value(key, value, lineno)
            fixed[key] = value
            continue
        if any(not v for v in values):
            raise ConfigError(key, lineno, "empty grid value")
        for v in values:
            _check_value(key, v, lineno)
        axes.append((key, tuple(values)))
    return SweepConfig(fixed, tuple(axes), lines)


def load_config(path: str) -> SweepConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


@dataclass(frozen=True)
class ExperimentCell:
    cell_id: int
    params: dict
    replicate: int
    derived_seed: int
    mdp_seed: int

    @property
    def n(self) -> int:
        return self.params[CONF_DATA_N]

    @property
    def attack(self) -> AttackSpec | None:
        if self.params[CONF_ATTACK_MODE] == MODE_NONE:
            return None
        return AttackSpec(
            mode=self.params[CONF_ATTACK_MODE],
            c=self.params[CONF_ATTACK_C],
            eps=self.params[CONF_ATTACK_EPS],
            timing=self.params[CONF_ATTACK_TIMING],
            seed=derive_seed(self.derived_seed, 1),
        )


def _instance_seed(base: dict, params: dict, replicate: int) -> int:
    """Seed of the generated MDP: fixed by mdp.seed, else shared by every cell of a replicate."""
    if params[CONF_MDP_SEED] is not None:
        return params[CONF_MDP_SEED]
    return derive_seed(derive_seed(base[CONF_MASTER_SEED], replicate), 2)


def expand_cells(config: SweepConfig) -> list[ExperimentCell]:
    """Cartesian product of the axes in order of appearance, replicates innermost."""
    try:
        base = SWEEP_CELL_SCHEMA(dict(config.fixed))
    except vol.Invalid as err:
        key = str(err.path[0]) if err.path else None
        raise ConfigError(key, config.lines.get(key), err.msg) from err
    keys = [key for key, _ in config.axes]
    cells = []
    for combo in itertools.product(*(values for _, values in config.axes)):
        raw = {**config.fixed, **dict(zip(keys, combo))}
        params = SWEEP_CELL_SCHEMA(raw)
        for replicate in range(base[CONF_SEEDS]):
            cell_id = len(cells)
            seed = derive_seed(base[CONF_MASTER_SEED], cell_id)
            cells.append(ExperimentCell(cell_id, params, replicate, seed, _instance_seed(base, params, replicate)))
    return cells


# ─────────────────────────────────────────────
# SECTION CELLS
# ─────────────────────────────────────────────


@dataclass(frozen=True)
class ResultsRow:
    cell_id: int
    seed: int
    n: int
    H: int
    d: int
    S: int
    A: int
    attack_mode: str
    c: float
    eps: float
    zeta_exact: float
    zeta_approx: float
    alpha: float
    lam: float
    beta_scale: float
    weighting: str
    algorithm: str
    suboptimality: float
    cc_weighted: float
    cc_unweighted: float
    min_eig: float
    wall_time_ms: float

    def to_csv(self) -> list[str]:
        values = {**self.__dict__, "lambda": self.lam}
        out = []
        for column in CSV_COLUMNS:
            value = values[column]
            out.append(format_real(value) if isinstance(value, float) else str(value))
        return out


def run_cell(cell: ExperimentCell) -> list[ResultsRow]:
    """Generate, collect, corrupt, solve and evaluate one cell."""
    p = cell.params
    seed = cell.derived_seed
    mdp_seed = cell.mdp_seed
    if p[CONF_MDP_KIND] == "linear":
        lmdp = build_linear_mdp(
            p[CONF_MDP_D], p[CONF_MDP_S], p[CONF_MDP_A], p[CONF_MDP_H], mdp_seed, p[CONF_MDP_REWARD_NOISE]
        )
        mdp, backend = lmdp.base, LinearBackend(lmdp.phi)
    else:
        mdp = build_tabular_mdp(p[CONF_MDP_S], p[CONF_MDP_A], p[CONF_MDP_H], mdp_seed, p[CONF_MDP_REWARD_NOISE])
        backend = LinearBackend.one_hot(mdp.S, mdp.A)

    attack = cell.attack
    qoracle = solve_optimal(mdp)[1] if attack is not None and attack.mode == MODE_ADVERSARIAL_DYNAMICS else None
    behavior = Policy.uniform(mdp.H, mdp.S, mdp.A)
    ds, sidecar = collect(mdp, behavior, cell.n, derive_seed(seed, 0), attack, qoracle)
    report = account_corruption(mdp, ds, sidecar, spec=attack)

    if p[CONF_SOLVER_ZETA] == AUTO:
        zeta_per_h = report.zeta_exact_per_h if attack is not None else None
    else:
        zeta_per_h = (float(p[CONF_SOLVER_ZETA]) / mdp.H,) * mdp.H
    cfg = SolverConfig(
        alpha=None if p[CONF_SOLVER_ALPHA] == AUTO else p[CONF_SOLVER_ALPHA],
        lam=None if p[CONF_SOLVER_LAMBDA] == AUTO else p[CONF_SOLVER_LAMBDA],
        beta_scale=p[CONF_SOLVER_BETA_SCALE],
        delta=p[CONF_SOLVER_DELTA],
        zeta_per_h=zeta_per_h,
        beta_mode=p[CONF_SOLVER_BETA_MODE],
        bonus_source=p[CONF_SOLVER_BONUS],
        seed=seed % (2**32),
    )

    if p[CONF_EVAL_COVERAGE]:
        coverage = coverage_coefficient(mdp, ds, backend, cfg)
        cc_w, cc_u, min_eig = coverage.cc_weighted, coverage.cc_unweighted, min(coverage.min_eig_per_h)
    else:
        cc_w = cc_u = min_eig = math.nan

    rows = []
    for algorithm in p[CONF_ALGORITHMS]:
        if algorithm == ALGO_PEVI:
            solved = pevi(ds, backend, cfg)
        elif algorithm == ALGO_CORDS_PEVI:
            solved = cords_pevi(ds, backend, cfg, [p[CONF_SOLVER_RHO]] * ds.n)
        else:
            solved = cr_pevi(ds, backend, cfg)
        rows.append(
            ResultsRow(
                cell_id=cell.cell_id,
                seed=seed,
                n=ds.n,
                H=mdp.H,
                d=backend.d,
                S=mdp.S,
                A=mdp.A,
                attack_mode=p[CONF_ATTACK_MODE],
                c=float(attack.c) if attack else 0.0,
                eps=float(attack.eps) if attack else 0.0,
                zeta_exact=report.zeta_exact,
                zeta_approx=report.zeta_approx,
                alpha=float(solved.config.alpha),
                lam=float(solved.config.lam),
                beta_scale=float(solved.config.beta_scale),
                weighting=WEIGHTING_UNIT if algorithm == ALGO_PEVI else WEIGHTING_UNCERTAINTY,
                algorithm=algorithm,
                suboptimality=suboptimality(mdp, solved.policy),
                cc_weighted=float(cc_w),
                cc_unweighted=float(cc_u),
                min_eig=float(min_eig),
                wall_time_ms=float(solved.diagnostics["wall_time_ms"]) if p[CONF_RECORD_TIMING] else 0.0,
            )
        )
    return rows


def _run_cell_isolated(cell: ExperimentCell) -> tuple[int, list[ResultsRow], str | None]:
    try:
        return cell.cell_id, run_cell(cell), None
    except CrPeviError as err:
        return cell.cell_id, [], f"{type(err).__name__}: {err}"
    except Exception as err:
        _LOGGER.exception("Unexpected error in cell %s (replicate %s)", cell.cell_id, cell.replicate)
        return cell.cell_id, [], f"{type(err).__name__}: {err}"


def write_results(rows: list[ResultsRow], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.to_csv())


def run_sweep(config: SweepConfig | str, out_dir: str, jobs: int = 1) -> tuple[str, int]:
    """Run every cell and write out_dir/results.csv; returns (path, exit code).

    Rows are ordered by cell id, then by the configured algorithm order, so
    the file does not depend on scheduling.
    """
    if isinstance(config, str):
        config = load_config(config)
    cells = expand_cells(config)
    os.makedirs(out_dir, exist_ok=True)
    _LOGGER.info("Running %s cells with %s job(s)", len(cells), jobs)
    start = time.perf_counter()
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_cell_isolated, cells))
    else:
        outcomes = [_run_cell_isolated(cell) for cell in cells]

    rows: list[ResultsRow] = []
    failed = 0
    for cell_id, cell_rows, error in sorted(outcomes, key=lambda item: item[0]):
        if error is not None:
            failed += 1
            _LOGGER.error("Cell %s failed: %s", cell_id, error)
            continue
        rows.extend(cell_rows)
    path = os.path.join(out_dir, RESULTS_FILE)
    write_results(rows, path)
    elapsed = time.perf_counter() - start
    _LOGGER.info("Wrote %s rows to %s in %.1f s (%s failed cells)", len(rows), path, elapsed, failed)
    return path, EXIT_CELL_FAILED if failed else EXIT_OK


# ─────────────────────────────────────────────
# SECTION PLOTS
# ─────────────────────────────────────────────

PLOT_AXES = {"n": "n", "zeta": "zeta_approx"}
PLOT_LABELS = {"n": "episodes n", "zeta": "corruption level"}
SERIES_ORDER = [ALGO_CR_PEVI, ALGO_PEVI, ALGO_CORDS_PEVI]


def _tick_label(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else format(value, ".3g")


def read_results(path: str) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        rows = list(reader)
    if not rows:
        raise PlotError(f"{path} holds no result rows")
    missing = [col for col in ("algorithm", "suboptimality", *PLOT_AXES.values()) if col not in header]
    if missing:
        raise PlotError(f"{path} is missing columns: {', '.join(missing)}")
    return rows


def series(rows: list[dict], column: str) -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Per algorithm: (x values, mean, low, high) of suboptimality across seeds, positive x only."""
    grouped: dict[str, dict[float, list[float]]] = defaultdict(lambda: defaultdict(list))
    for row in rows:
        x = float(row[column])
        if x > 0:
            grouped[row["algorithm"]][x].append(float(row["suboptimality"]))
    ordered = sorted(grouped, key=lambda a: (SERIES_ORDER.index(a) if a in SERIES_ORDER else len(SERIES_ORDER), a))
    out = {}
    for algorithm in ordered:
        xs = np.array(sorted(grouped[algorithm]))
        vals = [np.array(grouped[algorithm][x]) for x in xs]
        out[algorithm] = (
            xs,
            np.array([v.mean() for v in vals]),
            np.array([v.min() for v in vals]),
            np.array([v.max() for v in vals]),
        )
    return out


def emit_plots(results_csv: str, out_dir: str, axes: tuple[str, ...] = ("n", "zeta")) -> list[str]:
    """Log-log suboptimality charts, one SVG per x axis, one line and seed band per algorithm."""
    import matplotlib
    from matplotlib.figure import Figure
    from matplotlib.ticker import NullLocator

    rows = read_results(results_csv)
    for axis in axes:
        if axis not in PLOT_AXES:
            raise PlotError(f"unknown plot axis '{axis}'")
    written = []
    os.makedirs(out_dir, exist_ok=True)
    with matplotlib.rc_context({"svg.fonttype": "none", "svg.hashsalt": "crpevi"}):
        for axis in axes:
            data = series(rows, PLOT_AXES[axis])
            if not data:
                _LOGGER.warning("No positive %s values to plot, skipping", PLOT_AXES[axis])
                continue
            fig = Figure(figsize=(6, 4))
            ax = fig.add_subplot()
            ticks: set[float] = set()
            for algorithm, (xs, mean, low, high) in data.items():
                ax.plot(xs, mean, marker="o", label=algorithm, gid=f"series-{algorithm}")
                ax.fill_between(xs, low, high, alpha=0.2, gid=f"band-{algorithm}")
                ticks.update(xs.tolist())
            ax.set_xscale("log")
            ax.set_yscale("log", nonpositive="clip")
            values = sorted(ticks)
            ax.set_xticks(values)
            ax.set_xticklabels([_tick_label(v) for v in values])
            ax.xaxis.set_minor_locator(NullLocator())
            ax.set_xlabel(PLOT_LABELS[axis])
            ax.set_ylabel("suboptimality")
            ax.legend()
            path = os.path.join(out_dir, f"suboptimality_vs_{axis}.svg")
            fig.savefig(path, format="svg", metadata={"Date": None})
            written.append(path)
            _LOGGER.info("Wrote %s", path)
    if not written:
        raise PlotError(f"{results_csv} has nothing to plot on a log axis")
    return written
