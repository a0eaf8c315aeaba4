"""End-to-end checks of the guarantees the testbed is built to exhibit.

Marked slow; run with ``tox -e acceptance`` or ``pytest -m slow``.
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from crpevi.adversary import AttackSpec, account_corruption, approximate_zeta
from crpevi.const import MODE_ADVERSARIAL_REWARD
from crpevi.dataset import collect
from crpevi.envs import (
    LinearMDP,
    Policy,
    TabularMDP,
    build_linear_mdp,
    build_lower_bound_pair,
    enumerate_leaf_policies,
    lower_bound_gap,
    lower_bound_threshold,
)
from crpevi.evaluation import coverage_coefficient, suboptimality
from crpevi.harness import run_sweep
from crpevi.solver import SolverConfig, cords_pevi, cr_pevi, pevi
from crpevi.weights import FiniteBackend, LinearBackend, bootstrap_variance, iterate_weights, sandwich_bounds

pytestmark = pytest.mark.slow

# (|D|, c, eps, reported zeta): four settings on each of three locomotion datasets
CORRUPTION_TABLE = [
    (999000, 0.2, 30.0, 5.99e6),
    (999000, 0.2, 2.0, 4.00e5),
    (999000, 0.2, 3.0, 5.99e5),
    (999000, 0.3, 1.2, 3.60e5),
    (301698, 0.3, 30.0, 2.72e6),
    (301698, 0.1, 0.5, 1.51e4),
    (301698, 0.2, 3.0, 1.81e5),
    (301698, 0.1, 0.3, 9.05e3),
    (402000, 0.2, 30.0, 2.41e6),
    (402000, 0.1, 0.5, 2.01e4),
    (402000, 0.1, 5.0, 2.01e5),
    (402000, 0.1, 0.5, 2.01e4),
]


def random_features(rng, S, A, d):
    """Gaussian directions rescaled to norms in [0.5, 1]."""
    raw = rng.standard_normal((S, A, d))
    return raw / np.linalg.norm(raw, axis=-1, keepdims=True) * rng.uniform(0.5, 1.0, (S, A, 1))


def all_pairs(S, A):
    return np.array([(s, a) for s in range(S) for a in range(A)])


@pytest.mark.timeout(10)
def test_weight_iteration_sandwich():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n, d = int(rng.integers(1, 51)), int(rng.integers(1, 6))
        alpha, lam = rng.uniform(0.05, 2.0), rng.uniform(0.25, 4.0)
        backend = LinearBackend(random_features(rng, n, 1, d))
        points = np.stack([np.arange(n), np.zeros(n, dtype=int)], axis=1)
        wv = iterate_weights(points, backend, alpha, lam)
        lower, upper = sandwich_bounds(points, backend, wv)
        assert (lower - 1e-9 <= wv.sigma_sq).all()
        assert (wv.sigma_sq <= upper + 1e-9).all()
        for before, after in zip(wv.history, wv.history[1:]):
            assert (after >= before).all()


@pytest.mark.timeout(60)
def test_finite_class_bonus_sits_within_linear_bonus():
    rng = np.random.default_rng(7)
    S, A = 25, 2
    queries = all_pairs(S, A)
    for _ in range(20):
        d, lam = int(rng.integers(2, 6)), rng.uniform(0.25, 4.0)
        backend = LinearBackend(random_features(rng, S, A, d))
        sigma_sq = rng.uniform(1.0, 3.0, len(queries))
        gram = backend.gram(queries, sigma_sq, lam)
        feats = backend.features(queries)
        # one member pair per query along Lambda^-1 phi(z), long enough in the Lambda norm
        best = np.linalg.solve(gram, feats.T).T
        best /= np.linalg.norm(best, axis=-1, keepdims=True)
        energy = np.einsum("qk,kl,ql->q", best, gram, best)
        scale = np.maximum(rng.uniform(0.6, 1.0, len(queries)), np.sqrt(math.sqrt(lam) / energy))
        assert (scale <= 1.0).all()
        decoys = rng.standard_normal((10, d))
        decoys /= np.linalg.norm(decoys, axis=-1, keepdims=True) / rng.uniform(0.1, 1.0, (10, 1))
        directions = np.vstack([best * scale[:, None], -best * scale[:, None], decoys])
        finite = FiniteBackend.from_directions(backend.phi, directions)

        b_finite = finite.uncertainties(queries, queries, sigma_sq, lam)
        b_linear = backend.uncertainties(queries, queries, sigma_sq, lam)
        assert (b_finite <= b_linear + 1e-8).all()
        assert (b_linear / (lam**0.25 + 1.0) <= b_finite + 1e-8).all()


@pytest.mark.timeout(30)
def test_bootstrap_variance_matches_closed_form():
    rng = np.random.default_rng(11)
    for seed in range(10):
        S, d = int(rng.integers(3, 8)), int(rng.integers(1, 6))
        lam = rng.uniform(0.25, 4.0)
        backend = LinearBackend(random_features(rng, S, 2, d))
        points = rng.integers(0, [S, 2], size=(int(rng.integers(5, 40)), 2))
        targets = rng.random(len(points))
        z = rng.integers(0, [S, 2], size=(1, 2))
        exact = backend.uncertainties(z, points, None, lam)[0] ** 2
        estimate = bootstrap_variance(z, points, targets, lam, 100_000, seed, backend)
        assert estimate == pytest.approx(exact, rel=0.02)


@pytest.mark.timeout(60)
@pytest.mark.parametrize("seed", range(5))
def test_degenerate_reductions_are_exact(seed):
    lmdp = build_linear_mdp(d=4, S=6, A=3, H=3, seed=seed)
    ds, _ = collect(lmdp, Policy.uniform(3, 6, 3), 150, seed=seed)
    backend = LinearBackend(lmdp.phi)
    lam = float(np.random.default_rng(seed).uniform(0.25, 4.0))

    cfg = SolverConfig(alpha=1.0 / math.sqrt(lam), lam=lam)
    assert_array_equal(cr_pevi(ds, backend, cfg).policy.actions, pevi(ds, backend, cfg).policy.actions)

    cfg = SolverConfig(alpha=0.05, lam=lam)
    plain = cr_pevi(ds, backend, cfg)
    shifted = cords_pevi(ds, backend, cfg, np.ones(ds.n))
    assert_array_equal(plain.f, shifted.f)
    assert_array_equal(plain.policy.actions, shifted.policy.actions)


@pytest.mark.timeout(10)
def test_lower_bound_pair_defeats_every_policy():
    M, M_prime = build_lower_bound_pair(3, 2, 3, 0.1)
    gap = lower_bound_gap(M, M_prime, enumerate_leaf_policies(3, 2, 3))
    threshold = lower_bound_threshold(3, 2, 3, 0.1)
    assert threshold == pytest.approx(0.05)
    assert gap >= threshold - 1e-12


@pytest.mark.parametrize("records, c, eps, reported", CORRUPTION_TABLE)
def test_corruption_accounting_reproduces_reported_budgets(records, c, eps, reported):
    assert float(f"{approximate_zeta(records, c, eps):.2e}") == reported


@pytest.mark.timeout(60)
def test_coverage_bounds_on_well_explored_data():
    for seed in range(20):
        lmdp = build_linear_mdp(d=4, S=4, A=2, H=2, seed=seed)
        ds, _ = collect(lmdp, Policy.uniform(2, 4, 2), 500, seed=seed)
        report = coverage_coefficient(lmdp, ds, LinearBackend(lmdp.phi), SolverConfig(alpha=1.0, lam=1.0))
        assert report.c_dagger > 0 and report.C_est > 0
        assert report.cc_unweighted <= 4 / report.c_dagger + 1e-6
        assert report.cc_weighted <= 1.05 / report.C_est


SWEEP = """
master_seed = 99
algorithms = cr_pevi, pevi, cords_pevi
mdp.kind = linear
mdp.H = 2
data.n = 100, 300
attack.mode = adversarial_reward
attack.c = 0.2
attack.eps = 3
seeds = 2
"""


@pytest.mark.timeout(120)
def test_sweep_is_byte_identical_across_runs_and_workers(tmp_path):
    config = tmp_path / "determinism.cfg"
    config.write_text(SWEEP, encoding="utf-8")
    first, code = run_sweep(str(config), str(tmp_path / "serial"))
    assert code == 0
    second, _ = run_sweep(str(config), str(tmp_path / "parallel"), jobs=2)
    with open(first, "rb") as a, open(second, "rb") as b:
        assert a.read() == b.read()


def graded_linear_mdp(H: int = 3) -> LinearMDP:
    """d=4 instance whose action gaps halve over twelve levels.

    Features are p +- v/2 for a base point p and a per-state offset v, with
    transitions and start uniform over the 44 states. Anchor states pin the
    rewarded direction u1; graded states add a direction u2 that pays
    nothing, so the smaller gaps are decided by estimation noise and the
    regret tracks the estimation error.
    """
    p = np.full(4, 0.25)
    u1, u2, u3 = np.array([1.0, -1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0, -1.0]), np.array([1.0, 1.0, -1.0, -1.0])
    rows = [[p - u1 / 4, p + u1 / 4]] * 16
    for k in range(12):
        for c in (0.5, -0.5):
            v = (0.5 * 2.0**-k * u1 + c * u2) / 2
            rows.append([p - v, p + v])
    for sign in (1.0, -1.0, 1.0, -1.0):
        rows.append([p + sign * u3 / 4] * 2)
    phi = np.array(rows)
    S = len(phi)
    theta = np.array([0.4, 0.0, 0.2, 0.2])
    R = np.broadcast_to(phi @ theta, (H, S, 2))
    P = np.full((H, S, 2, S), 1.0 / S)
    base = TabularMDP(S=S, A=2, H=H, P=P, R=R, x1=np.full(S, 1.0 / S), reward_noise=0.2)
    return LinearMDP(base=base, d=4, phi=phi)


@pytest.mark.timeout(300)
def test_clean_suboptimality_shrinks_at_square_root_rate():
    lmdp = graded_linear_mdp()
    mdp, backend = lmdp.base, LinearBackend(lmdp.phi)
    behavior = Policy.uniform(mdp.H, mdp.S, mdp.A)
    sizes = (100, 400, 1600, 6400)
    means = []
    for n in sizes:
        losses = [
            suboptimality(mdp, cr_pevi(collect(mdp, behavior, n, seed=seed)[0], backend, SolverConfig(lam=1.0)).policy)
            for seed in range(10)
        ]
        means.append(np.mean(losses))
    assert min(means) > 0
    slope = np.polyfit(np.log(sizes), np.log(means), 1)[0]
    assert -0.75 <= slope <= -0.30


def rare_context_mdp(seed: int) -> LinearMDP:
    """One-step problem with two contexts; context 1 shows up once in 250 episodes.

    Action 1 is far better in the common context and the rare context pays
    0.5 for either action. One-hot features give the rare records high
    leverage in the unweighted regression.
    """
    rng = np.random.default_rng(seed)
    R = np.full((1, 2, 2), 0.5)
    R[0, 0] = rng.uniform(0.0, 0.2), rng.uniform(0.8, 1.0)
    base = TabularMDP(S=2, A=2, H=1, P=np.full((1, 2, 2, 2), 0.5), R=R, x1=np.array([0.996, 0.004]))
    return LinearMDP(base=base, d=4, phi=np.eye(4).reshape(2, 2, 4))


@pytest.mark.timeout(120)
def test_uncertainty_weighting_beats_pevi_under_reward_flips():
    weighted, plain = [], []
    for seed in range(20):
        mdp = rare_context_mdp(seed).base
        backend = LinearBackend.one_hot(2, 2)
        spec = AttackSpec(MODE_ADVERSARIAL_REWARD, c=0.2, eps=3.0, seed=seed)
        ds, sidecar = collect(mdp, Policy.uniform(1, 2, 2), 2000, seed=seed, adversary=spec)
        budget = account_corruption(mdp, ds, sidecar, spec=spec).zeta_exact_per_h
        cfg = SolverConfig(lam=1.0, zeta_per_h=budget)
        weighted.append(suboptimality(mdp, cr_pevi(ds, backend, cfg).policy))
        plain.append(suboptimality(mdp, pevi(ds, backend, cfg).policy))
    weighted, plain = np.array(weighted), np.array(plain)
    assert (weighted < plain).sum() >= 16
    assert weighted.mean() <= 0.7 * plain.mean()
