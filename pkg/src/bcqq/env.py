"""CartPole-v1 dynamics (explicit Euler, as in Gym) and observation scaling.

Physics always runs through the vectorised ``dynamics`` so a single
environment and a batch of environments produce bit-identical trajectories.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
TOTAL_MASS = MASS_CART + MASS_POLE
HALF_LENGTH = 0.5
POLEMASS_LENGTH = MASS_POLE * HALF_LENGTH
FORCE_MAG = 10.0
TAU = 0.02
X_THRESHOLD = 2.4
THETA_THRESHOLD = 12 * 2 * math.pi / 360
MAX_STEPS = 500
RESET_BOUND = 0.05

# (x, x_dot, theta, theta_dot); the velocity bounds are a modelling choice,
# Gym leaves them unbounded
DEFAULT_BOUNDS = (2.4, 3.0, 0.2095, 3.0)


class EnvContractError(RuntimeError):
    """Stepping an episode that has already ended."""


@dataclass(frozen=True)
class CartState:
    obs: np.ndarray
    steps: int = 0
    terminated: bool = False
    truncated: bool = False

    @property
    def done(self) -> bool:
        return self.terminated or self.truncated


def dynamics(obs: np.ndarray, action: np.ndarray) -> np.ndarray:
    """One Euler step for a batch of states (N, 4) and actions (N,)."""
    x, x_dot, theta, theta_dot = obs.T
    force = np.where(np.asarray(action) == 1, FORCE_MAG, -FORCE_MAG)
    costheta = np.cos(theta)
    sintheta = np.sin(theta)
    temp = (force + POLEMASS_LENGTH * theta_dot**2 * sintheta) / TOTAL_MASS
    thetaacc = (GRAVITY * sintheta - costheta * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * costheta**2 / TOTAL_MASS)
    )
    xacc = temp - POLEMASS_LENGTH * thetaacc * costheta / TOTAL_MASS
    return np.stack(
        [
            x + TAU * x_dot,
            x_dot + TAU * xacc,
            theta + TAU * theta_dot,
            theta_dot + TAU * thetaacc,
        ],
        axis=-1,
    )


def out_of_bounds(obs: np.ndarray) -> np.ndarray:
    obs = np.asarray(obs)
    return (np.abs(obs[..., 0]) > X_THRESHOLD) | (np.abs(obs[..., 2]) > THETA_THRESHOLD)


def reset_obs(rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    size = (4,) if n is None else (n, 4)
    return rng.uniform(low=-RESET_BOUND, high=RESET_BOUND, size=size)


def reset(rng: np.random.Generator) -> CartState:
    return CartState(reset_obs(rng), 0)


def step(
    state: CartState, action: int, max_steps: int | None = MAX_STEPS
) -> tuple[CartState, float, bool]:
    """Advance one step; reward is 1.0 on every step, including the last.

    ``max_steps=None`` removes the time limit.
    """
    if state.done:
        raise EnvContractError("episode already ended; call reset()")
    if action not in (0, 1):
        raise ValueError(f"action must be 0 or 1, got {action!r}")
    nxt = dynamics(state.obs[None, :], np.array([action]))[0]
    steps = state.steps + 1
    terminated = bool(out_of_bounds(nxt))
    truncated = not terminated and max_steps is not None and steps >= max_steps
    new = CartState(nxt, steps, terminated, truncated)
    return new, 1.0, new.done


def normalize(obs, bounds=DEFAULT_BOUNDS) -> np.ndarray:
    """Clip each component to its bound and map [-b, b] linearly onto [-pi, pi]."""
    b = np.asarray(bounds, dtype=float)
    return np.clip(np.asarray(obs, dtype=float), -b, b) / b * np.pi


def denormalize(z, bounds=DEFAULT_BOUNDS) -> np.ndarray:
    return np.asarray(z, dtype=float) / np.pi * np.asarray(bounds, dtype=float)
