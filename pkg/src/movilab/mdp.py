"""Finite MDPs, Bellman operators, exact solvers, occupancy measures and norms.

Tables are dense numpy arrays:

* q-functions (and every other state-action quantity) have shape ``(S, A)``;
* deterministic policies are integer arrays of shape ``(S,)``;
* state-action distributions have shape ``(S, A)`` and sum to one.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

ROW_SUM_TOL = 1e-12
RESIDUAL_TOL = 1e-10
OPTIMAL_Q_MAX_ITER = 10**6


class ContractError(ValueError):
    """An operation was called with arguments violating its preconditions."""


class NumericalError(RuntimeError):
    """A solver failed to reach its accuracy guarantee."""


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """The quintuple (S, A, P, r, gamma) with ``transition[s, a, s']``."""

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    r_max: Optional[float] = None

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ContractError(f"transition must have shape (S, A, S), got {P.shape}")
        if r.shape != P.shape[:2]:
            raise ContractError(f"reward shape {r.shape} does not match transition {P.shape[:2]}")
        if not 0.0 < self.gamma < 1.0:
            raise ContractError(f"gamma must lie in (0, 1), got {self.gamma}")
        if np.any(P < 0.0) or not np.all(np.isfinite(P)):
            raise ContractError("transition probabilities must be finite and nonnegative")
        if np.max(np.abs(P.sum(axis=2) - 1.0)) > ROW_SUM_TOL:
            raise ContractError("transition rows must sum to 1")
        if not np.all(np.isfinite(r)):
            raise ContractError("reward must be finite")
        r_max = float(np.max(np.abs(r))) if self.r_max is None else float(self.r_max)
        if np.max(np.abs(r)) > r_max:
            raise ContractError(f"|reward| exceeds r_max={r_max}")
        P.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_max", r_max)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def shape(self) -> tuple:
        return self.transition.shape[:2]

    @property
    def q_max(self) -> float:
        return self.r_max / (1.0 - self.gamma)

    def with_gamma(self, gamma: float) -> "FiniteMdp":
        return FiniteMdp(self.transition, self.reward, gamma, self.r_max)


def _check_q(mdp: FiniteMdp, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != mdp.shape:
        raise ContractError(f"q-table shape {q.shape} does not match MDP {mdp.shape}")
    return q


def _check_policy(mdp: FiniteMdp, policy) -> np.ndarray:
    policy = np.asarray(policy)
    if policy.shape != (mdp.n_states,):
        raise ContractError(f"policy shape {policy.shape} does not match {mdp.n_states} states")
    if not np.issubdtype(policy.dtype, np.integer):
        raise ContractError("policy entries must be integers")
    if np.any(policy < 0) or np.any(policy >= mdp.n_actions):
        raise ContractError("policy contains an invalid action index")
    return policy


def _check_distribution(mdp: FiniteMdp, mu, name="mu") -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.shape != mdp.shape:
        raise ContractError(f"{name} shape {mu.shape} does not match MDP {mdp.shape}")
    if np.any(mu < 0.0) or abs(mu.sum() - 1.0) > ROW_SUM_TOL:
        raise ContractError(f"{name} must be a distribution over state-action pairs")
    return mu


def uniform_distribution(mdp: FiniteMdp) -> np.ndarray:
    return np.full(mdp.shape, 1.0 / (mdp.n_states * mdp.n_actions))


def policy_values(q: np.ndarray, policy: np.ndarray) -> np.ndarray:
    """State values ``q(s, pi(s))``."""
    return q[np.arange(q.shape[0]), policy]


def apply_policy_kernel(mdp: FiniteMdp, policy, q) -> np.ndarray:
    """``(P_pi q)(s, a) = sum_s' P(s'|s, a) q(s', pi(s'))``."""
    q = _check_q(mdp, q)
    policy = _check_policy(mdp, policy)
    return mdp.transition @ policy_values(q, policy)


def bellman_eval(mdp: FiniteMdp, policy, q) -> np.ndarray:
    return mdp.reward + mdp.gamma * apply_policy_kernel(mdp, policy, q)


def bellman_opt(mdp: FiniteMdp, q) -> np.ndarray:
    q = _check_q(mdp, q)
    return mdp.reward + mdp.gamma * (mdp.transition @ q.max(axis=1))


def greedy(q) -> np.ndarray:
    """Greedy deterministic policy; ties go to the lowest action index."""
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ContractError("cannot take the greedy policy of a non-finite table")
    return np.argmax(q, axis=-1)


def policy_matrix(mdp: FiniteMdp, policy) -> np.ndarray:
    """Dense ``SA x SA`` matrix of the kernel operator ``P_pi``."""
    policy = _check_policy(mdp, policy)
    S, A = mdp.shape
    M = np.zeros((S * A, S * A))
    cols = np.arange(S) * A + policy
    M[:, cols] = mdp.transition.reshape(S * A, S)
    return M


def resolvent_solve(mdp: FiniteMdp, policy, x, transpose=False) -> np.ndarray:
    """Solve ``(I - gamma P_pi) y = x`` (or the row-vector system ``y (I - gamma P_pi) = x``)."""
    x = _check_q(mdp, x)
    S, A = mdp.shape
    system = np.eye(S * A) - mdp.gamma * policy_matrix(mdp, policy)
    if transpose:
        system = system.T
    try:
        y = linalg.solve(system, x.reshape(-1))
    except linalg.LinAlgError as exc:
        raise NumericalError(f"resolvent solve failed: {exc}") from exc
    return y.reshape(S, A)


def exact_q_of_policy(mdp: FiniteMdp, policy) -> np.ndarray:
    q = resolvent_solve(mdp, policy, mdp.reward)
    residual = np.max(np.abs(bellman_eval(mdp, policy, q) - q))
    if residual > RESIDUAL_TOL * (1.0 + np.max(np.abs(q))):
        raise NumericalError(f"policy evaluation residual {residual:.3e} exceeds tolerance")
    return q


def optimal_q(mdp: FiniteMdp, tol: float = 1e-10, max_iter: int = OPTIMAL_Q_MAX_ITER) -> np.ndarray:
    """Value iteration from zero until ``sup|T_* q - q| <= tol (1 - gamma) / (2 gamma)``.

    The stopping rule guarantees ``sup|q - q_*| <= tol``.
    """
    if not tol > 0.0:
        raise ContractError("tol must be positive")
    threshold = tol * (1.0 - mdp.gamma) / (2.0 * mdp.gamma)
    q = np.zeros(mdp.shape)
    residual = np.inf
    for _ in range(max_iter):
        tq = bellman_opt(mdp, q)
        residual = np.max(np.abs(tq - q))
        if residual <= threshold:
            return tq
        q = tq
    raise NumericalError(
        f"value iteration hit the {max_iter} iteration cap with residual {residual:.3e} "
        f"(needed {threshold:.3e})"
    )


def occupancy(mdp: FiniteMdp, policy, mu) -> np.ndarray:
    """Discounted occupancy ``d = (1 - gamma) mu (I - gamma P_pi)^-1``."""
    mu = _check_distribution(mdp, mu)
    d = (1.0 - mdp.gamma) * resolvent_solve(mdp, policy, mu, transpose=True)
    if abs(d.sum() - 1.0) > RESIDUAL_TOL or d.min() < -RESIDUAL_TOL:
        raise NumericalError("occupancy measure is not a distribution to solver accuracy")
    return np.clip(d, 0.0, None)


def weighted_lp_norm(q, mu, p: float = 1.0) -> float:
    if p < 1:
        raise ContractError("p must be >= 1")
    q = np.asarray(q, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if q.shape != mu.shape:
        raise ContractError("q and mu must have the same shape")
    return float(np.sum(mu * np.abs(q) ** p) ** (1.0 / p))


def sup_norm(q) -> float:
    q = np.asarray(q, dtype=float)
    return float(np.max(np.abs(q))) if q.size else 0.0
