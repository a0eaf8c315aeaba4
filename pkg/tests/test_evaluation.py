import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from crpevi.dataset import collect
from crpevi.envs import Policy, TabularMDP, solve_optimal
from crpevi.errors import PolicyMismatchError
from crpevi.evaluation import bellman_residual, coverage_coefficient, suboptimality, well_explored_diagnostics
from crpevi.solver import SolverConfig, cr_pevi
from crpevi.weights import FiniteBackend, LinearBackend


def arm_mdp():
    R = np.zeros((1, 2, 2))
    R[0, 0, 0] = 1.0
    return TabularMDP(S=2, A=2, H=1, P=np.full((1, 2, 2, 2), 0.5), R=R, x1=[1.0, 0.0])


@pytest.fixture
def mixing_data(mixing):
    ds, _ = collect(mixing, Policy.uniform(mixing.H, 2, 2), 400, seed=0)
    return ds


def counts(ds, h, S=2, A=2):
    x, a, _, _ = ds.step(h)
    return np.bincount(x * A + a, minlength=S * A).reshape(S, A)


class TestSuboptimality:
    def test_optimal_policy_has_none(self, linear_mdp):
        assert suboptimality(linear_mdp, solve_optimal(linear_mdp.base)[0]) == 0.0

    def test_zero_rewards(self):
        mdp = TabularMDP(S=2, A=2, H=2, P=np.full((2, 2, 2, 2), 0.5), R=np.zeros((2, 2, 2)), x1=[0.5, 0.5])
        assert suboptimality(mdp, Policy.uniform(2, 2, 2)) == 0.0

    def test_wrong_arm_loses_its_reward(self):
        assert suboptimality(arm_mdp(), Policy.deterministic(np.array([[1, 0]]), 2)) == pytest.approx(1.0)

    def test_never_negative(self, linear_mdp):
        assert suboptimality(linear_mdp, Policy.uniform(3, 4, 2)) >= 0.0


class TestBellmanResidual:
    def test_optimal_q_is_a_fixed_point(self, linear_mdp):
        _, values = solve_optimal(linear_mdp.base)
        for h in range(1, 4):
            for s in range(4):
                for a in range(2):
                    assert abs(bellman_residual(linear_mdp, values, h, s, a)) < 1e-12

    def test_zero_tables_give_minus_reward(self, steer):
        f = np.zeros((3, 2, 2))
        assert bellman_residual(steer, f, 1, 0, 0) == pytest.approx(-0.3)
        assert bellman_residual(steer, f, 2, 0, 1) == 0.0

    def test_pessimistic_tables_sit_below_the_backup(self, parity):
        ds, _ = collect(parity, Policy.uniform(2, 4, 2), 2000, seed=3)
        backend = LinearBackend(parity.phi)
        report = cr_pevi(ds, backend, SolverConfig(lam=1.0))
        pairs = np.array([(s, a) for s in range(4) for a in range(2)])
        for h in (1, 2):
            x, a, _, _ = ds.step(h)
            points = np.stack([x, a], axis=1)
            b = backend.uncertainties(pairs, points, report.weights[h - 1].sigma_sq, report.config.lam)
            for (s, act), width in zip(pairs, 2 * report.beta[h - 1] * b):
                if not ((x == s) & (a == act)).any():
                    continue
                residual = bellman_residual(parity, report.f, h, int(s), int(act))
                assert -width - 1e-12 <= residual <= 1e-12

    def test_short_tables_are_rejected(self, steer):
        with pytest.raises(PolicyMismatchError):
            bellman_residual(steer, np.zeros((2, 2, 2)), 2, 0, 0)


class TestCoverage:
    def test_one_hot_unweighted_coverage(self, mixing, mixing_data):
        cfg = SolverConfig(alpha=1.0, lam=1.0)
        report = coverage_coefficient(mixing, mixing_data, LinearBackend.one_hot(2, 2), cfg)
        expected = max(
            sum(0.5 * 400 / (1.0 + counts(mixing_data, h)[s, 0]) for s in range(2)) for h in range(1, 3)
        )
        assert report.cc_unweighted == pytest.approx(expected)
        assert report.cc_weighted == pytest.approx(expected)
        assert report.mc_episodes == 0

    def test_well_explored_constant_is_smallest_visit_rate(self, mixing_data):
        diag = well_explored_diagnostics(mixing_data, LinearBackend.one_hot(2, 2))
        expected = min(counts(mixing_data, h).min() / 400 for h in range(1, 3))
        assert diag.C_est == pytest.approx(expected)
        assert diag.C_sampled >= diag.C_est - 1e-12

    def test_bounds_on_well_explored_data(self, mixing, mixing_data):
        cfg = SolverConfig(alpha=1.0, lam=1.0)
        report = coverage_coefficient(mixing, mixing_data, LinearBackend.one_hot(2, 2), cfg)
        assert report.c_dagger > 0
        assert report.cc_unweighted <= 4 / report.c_dagger + 1e-6
        assert report.cc_weighted <= 1.05 / report.C_est

    def test_uncovered_optimal_action_is_infinite(self, steer):
        behavior = Policy.deterministic(np.ones((2, 2), dtype=int), 2)
        ds, _ = collect(steer, behavior, 50, seed=0)
        report = coverage_coefficient(steer, ds, LinearBackend.one_hot(2, 2), SolverConfig(lam=1.0))
        assert math.isinf(report.cc_weighted)
        assert math.isinf(report.cc_unweighted)
        assert report.c_dagger == 0.0

    def test_finite_class_coverage_is_finite_when_covered(self, mixing, mixing_data):
        tables = np.random.default_rng(0).uniform(0.0, 1.0, size=(6, 2, 2))
        report = coverage_coefficient(mixing, mixing_data, FiniteBackend(tables), SolverConfig(alpha=1.0, lam=1.0))
        assert math.isfinite(report.cc_unweighted)
        assert report.cc_unweighted >= 0
        assert math.isnan(report.min_eig_per_h[0])

    def test_report_serializes(self, mixing, mixing_data):
        report = coverage_coefficient(mixing, mixing_data, LinearBackend.one_hot(2, 2), SolverConfig(lam=1.0))
        assert '"cc_weighted":' in report.to_json()
        assert_allclose(report.value, report.cc_weighted)
