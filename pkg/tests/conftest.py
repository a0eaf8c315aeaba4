"""Shared fixtures: small hand-built MDPs and a random linear instance."""

from __future__ import annotations

import numpy as np
import pytest

from crpevi.envs import LinearMDP, Policy, TabularMDP, build_linear_mdp


def steer_mdp(H: int = 2, x1=(1.0, 0.0)) -> TabularMDP:
    """Two states, two actions; action a moves to state a.

    Action 0 pays 0.3 in state 0, action 1 pays 0.3 in state 1, so the
    optimal policy plays a = s at every step.
    """
    P = np.zeros((H, 2, 2, 2))
    P[:, :, 0, 0] = 1.0
    P[:, :, 1, 1] = 1.0
    R = np.zeros((H, 2, 2))
    R[:, 0, 0] = 0.3
    R[:, 1, 1] = 0.3
    return TabularMDP(S=2, A=2, H=H, P=P, R=R, x1=np.asarray(x1))


def mixing_mdp(H: int = 2) -> TabularMDP:
    """Two states, two actions, uniform transitions and start; action 0 is always better."""
    P = np.full((H, 2, 2, 2), 0.5)
    R = np.zeros((H, 2, 2))
    R[:, :, 0] = 0.3
    R[:, :, 1] = 0.1
    return TabularMDP(S=2, A=2, H=H, P=P, R=R, x1=np.array([0.5, 0.5]))


def parity_mdp(reward_noise: float = 0.1) -> LinearMDP:
    """Four states, two actions, H=2, one-hot features on (a, s mod 2).

    Transitions and start are uniform, so every backup is R plus a constant.
    The best action flips with the state parity and per step, with gaps of
    at least 0.2 between the two actions.
    """
    phi = np.zeros((4, 2, 4))
    for s in range(4):
        for a in range(2):
            phi[s, a, a + 2 * (s % 2)] = 1.0
    theta = np.array([[0.1, 0.4, 0.35, 0.15], [0.3, 0.05, 0.1, 0.45]])
    R = np.einsum("sak,hk->hsa", phi, theta)
    P = np.full((2, 4, 2, 4), 0.25)
    base = TabularMDP(S=4, A=2, H=2, P=P, R=R, x1=np.full(4, 0.25), reward_noise=reward_noise)
    return LinearMDP(base=base, d=4, phi=phi)


@pytest.fixture
def steer():
    return steer_mdp()


@pytest.fixture
def mixing():
    return mixing_mdp()


@pytest.fixture
def parity():
    return parity_mdp()


@pytest.fixture
def linear_mdp():
    return build_linear_mdp(d=4, S=4, A=2, H=3, seed=0)


@pytest.fixture
def uniform_behavior():
    def make(mdp):
        return Policy.uniform(mdp.H, mdp.S, mdp.A)

    return make
