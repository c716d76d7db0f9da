"""AVI, MoVI, SQL and DPP in exact, sampled and noise-injected forms.

Every scheme step pulls one ``Draw`` from its model per iteration.  A draw
fixes the randomness of that iteration (one next state per ``(s, a)`` for a
generative model, one noise table for injected noise), so operators applied
several times inside an iteration (SQL) share the same sample.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .ledger import ErrorLedger
from .mdp import (
    ContractError,
    FiniteMdp,
    apply_policy_kernel,
    bellman_eval,
    exact_q_of_policy,
    greedy,
    policy_values,
    uniform_distribution,
    weighted_lp_norm,
    sup_norm,
)

SCHEME_IDS = ("avi", "movi", "sql", "dpp")
DEFAULT_LEDGER_CAP = 2 * 1024**3


# --------------------------------------------------------------------------
# Models


class Draw:
    """Randomness of one iteration; ``expect(v)`` returns (sampled, exact) ``P v``."""

    def __init__(self, mdp: FiniteMdp, next_states=None, noise=None):
        self.mdp = mdp
        self.next_states = next_states
        self.noise = noise

    def expect(self, v):
        exact = self.mdp.transition @ v
        if self.next_states is None:
            return exact, exact
        return v[self.next_states], exact

    def backup(self, v):
        """``(r + gamma * sampled P v + noise, error)`` for state values ``v``."""
        sampled, exact = self.expect(v)
        gamma = self.mdp.gamma
        value = self.mdp.reward + gamma * sampled
        eps = gamma * (sampled - exact)
        if self.noise is not None:
            value = value + self.noise
            eps = eps + self.noise
        return value, eps


class ExactModel:
    """Exact operators: every draw is error free."""

    def __init__(self, mdp: FiniteMdp):
        self.mdp = mdp

    def draw(self) -> Draw:
        return Draw(self.mdp)


class GenerativeModel:
    """Samples ``s' ~ P(.|s, a)`` for every pair, from a PCG64 stream."""

    def __init__(self, mdp: FiniteMdp, seed: int = 0):
        self.mdp = mdp
        self.rng = np.random.Generator(np.random.PCG64(int(seed)))
        P = mdp.transition
        width = int((P > 0).sum(axis=2).max())
        # Supports sorted by state index; padded slots repeat the last successor.
        order = np.argsort(P <= 0, axis=2, kind="stable")[:, :, :width]
        probs = np.take_along_axis(P, order, axis=2)
        cum = np.cumsum(probs, axis=2)
        valid = probs > 0
        last = valid.sum(axis=2) - 1
        idx = np.arange(width)
        # Pin the cumulative mass to exactly 1 from the last real successor on,
        # so draws can never land on a zero-probability state.
        cum[idx[None, None, :] >= last[:, :, None]] = 1.0
        pad = idx[None, None, :] > last[:, :, None]
        order = np.where(pad, np.take_along_axis(order, last[:, :, None], axis=2), order)
        self._support = order
        self._cum = cum

    def sample_next_states(self) -> np.ndarray:
        u = self.rng.random(self.mdp.shape)
        slot = (self._cum <= u[:, :, None]).sum(axis=2)
        return np.take_along_axis(self._support, slot[:, :, None], axis=2)[:, :, 0]

    def draw(self) -> Draw:
        return Draw(self.mdp, next_states=self.sample_next_states())


class InjectedNoiseModel:
    """Exact operators plus i.i.d. uniform noise in ``[-scale, scale]``."""

    def __init__(self, mdp: FiniteMdp, seed: int = 0, scale: float = 0.1):
        self.mdp = mdp
        self.scale = scale
        self.rng = np.random.Generator(np.random.PCG64(int(seed)))

    def draw(self) -> Draw:
        noise = self.rng.uniform(-self.scale, self.scale, size=self.mdp.shape)
        return Draw(self.mdp, noise=noise)


def make_model(mdp: FiniteMdp, sampled: bool, seed: int = 0):
    return GenerativeModel(mdp, seed) if sampled else ExactModel(mdp)


def sampled_bellman_eval(gen, policy, q):
    """One-sample estimate of ``T_pi q`` and its error against the exact operator."""
    q = np.asarray(q, dtype=float)
    return gen.draw().backup(policy_values(q, np.asarray(policy)))


def sampled_bellman_opt(gen, q):
    q = np.asarray(q, dtype=float)
    return gen.draw().backup(q.max(axis=1))


# --------------------------------------------------------------------------
# Mixture rate


@dataclass(frozen=True)
class BetaSchedule:
    """``empirical_mean`` gives beta_k = k / (k + 1); ``constant`` a fixed beta."""

    kind: str = "empirical_mean"
    value: Optional[float] = None

    def __post_init__(self):
        if self.kind == "empirical_mean":
            if self.value is not None:
                raise ContractError("empirical_mean schedule takes no value")
        elif self.kind == "constant":
            if self.value is None or not 0.0 <= self.value < 1.0:
                raise ContractError("constant beta must lie in [0, 1)")
        else:
            raise ContractError(f"unknown beta schedule {self.kind!r}")

    @classmethod
    def empirical_mean(cls):
        return cls("empirical_mean")

    @classmethod
    def constant(cls, beta: float):
        return cls("constant", float(beta))

    def beta(self, k: int) -> float:
        if self.kind == "empirical_mean":
            return k / (k + 1.0)
        return self.value

    def to_json(self):
        return "empirical_mean" if self.kind == "empirical_mean" else {"constant": self.value}

    @classmethod
    def from_json(cls, data):
        if data == "empirical_mean":
            return cls.empirical_mean()
        if isinstance(data, dict) and set(data) == {"constant"}:
            return cls.constant(data["constant"])
        raise ContractError(f"invalid beta schedule {data!r}")


# --------------------------------------------------------------------------
# Scheme state and steps


@dataclass(frozen=True)
class SchemeState:
    """Iterates after ``k`` steps.

    ``policy`` is the acting policy (greedy in the scheme's driving quantity),
    ``step_policy`` the policy the last step evaluated with, and ``epsilon``
    that step's error.
    """

    k: int
    q: np.ndarray
    h: Optional[np.ndarray] = None
    q_prev: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None
    psi_prev: Optional[np.ndarray] = None
    policy: Optional[np.ndarray] = None
    step_policy: Optional[np.ndarray] = None
    epsilon: Optional[np.ndarray] = None


def init_state(scheme: str, mdp: FiniteMdp, q0=None) -> SchemeState:
    q0 = np.zeros(mdp.shape) if q0 is None else np.array(q0, dtype=float)
    zero = np.zeros(mdp.shape)
    if scheme == "avi":
        return SchemeState(0, q0, policy=greedy(q0), epsilon=zero)
    if scheme == "movi":
        return SchemeState(0, q0, h=q0.copy(), policy=greedy(q0), epsilon=zero)
    if scheme == "sql":
        # q_{-1} := q_0
        return SchemeState(0, q0, q_prev=q0.copy(), policy=greedy(q0), epsilon=zero)
    if scheme == "dpp":
        return SchemeState(0, zero, psi=zero.copy(), policy=greedy(zero), epsilon=zero)
    raise ContractError(f"unknown scheme {scheme!r}; expected one of {SCHEME_IDS}")


def init_psi_state(scheme: str, mdp: FiniteMdp, q0=None) -> SchemeState:
    """Initial state of the psi-form recursions (MoVI: psi_0 = q_0; SQL needs q_0 = 0)."""
    q0 = np.zeros(mdp.shape) if q0 is None else np.array(q0, dtype=float)
    zero = np.zeros(mdp.shape)
    if scheme == "movi":
        return SchemeState(0, q0, psi=q0.copy(), psi_prev=zero, policy=greedy(q0), epsilon=zero)
    if scheme == "sql":
        if np.any(q0 != 0.0):
            raise ContractError("the psi form of SQL is defined for q_0 = 0 only")
        return SchemeState(0, q0, psi=zero, psi_prev=zero.copy(), policy=greedy(zero), epsilon=zero)
    raise ContractError(f"no psi form for scheme {scheme!r}")


def avi_step(model, state: SchemeState) -> SchemeState:
    pi = greedy(state.q)
    q, eps = model.draw().backup(policy_values(state.q, pi))
    return SchemeState(state.k + 1, q, policy=greedy(q), step_policy=pi, epsilon=eps)


def movi_step(model, state: SchemeState, schedule: BetaSchedule = BetaSchedule()) -> SchemeState:
    pi = greedy(state.h)
    q, eps = model.draw().backup(policy_values(state.q, pi))
    beta = schedule.beta(state.k + 1)
    h = beta * state.h + (1.0 - beta) * q
    return SchemeState(state.k + 1, q, h=h, policy=greedy(h), step_policy=pi, epsilon=eps)


def psi_movi_step(mdp: FiniteMdp, state: SchemeState, noise=None) -> SchemeState:
    """``psi_k = psi_{k-1} + T_pi psi_{k-1} - gamma P_pi psi_{k-2} + eps_k``, pi greedy in psi_{k-1}."""
    pi = greedy(state.psi)
    eps = np.zeros(mdp.shape) if noise is None else np.asarray(noise, dtype=float)
    psi = (
        state.psi
        + bellman_eval(mdp, pi, state.psi)
        - mdp.gamma * apply_policy_kernel(mdp, pi, state.psi_prev)
        + eps
    )
    return SchemeState(
        state.k + 1, psi - state.psi, psi=psi, psi_prev=state.psi,
        policy=greedy(psi), step_policy=pi, epsilon=eps,
    )


def sql_step(model, state: SchemeState) -> SchemeState:
    k = state.k + 1
    draw = model.draw()
    t_last, e_last = draw.backup(state.q.max(axis=1))
    t_prev, e_prev = draw.backup(state.q_prev.max(axis=1))
    q = state.q + (t_prev - state.q) / k + (k - 1.0) / k * (t_last - t_prev)
    # Error of the psi_k = k q_k recursion, the quantity SQL's bound accumulates.
    eps = (k - 1.0) * e_last - (k - 2.0) * e_prev
    return SchemeState(
        k, q, q_prev=state.q, policy=greedy(q), step_policy=greedy(state.q), epsilon=eps,
    )


def psi_sql_step(model, state: SchemeState) -> SchemeState:
    """SQL as ``psi_k = psi_{k-1} + T_{pi_k} psi_{k-1} - gamma P_{pi_{k-1}} psi_{k-2} + eps_k``
    with ``psi_k = k q_k``; reads ``q_k`` back as ``psi_k / k``."""
    k = state.k + 1
    pi = greedy(state.psi)
    pi_prev = greedy(state.psi_prev)
    draw = model.draw()
    t_last, e_last = draw.backup(policy_values(state.psi, pi))
    sampled_prev, exact_prev = draw.expect(policy_values(state.psi_prev, pi_prev))
    gamma = model.mdp.gamma
    psi = state.psi + t_last - gamma * sampled_prev
    eps = e_last - gamma * (sampled_prev - exact_prev)
    return SchemeState(
        k, psi / k, psi=psi, psi_prev=state.psi, policy=greedy(psi), step_policy=pi, epsilon=eps,
    )


def dpp_step(model, state: SchemeState) -> SchemeState:
    pi = greedy(state.psi)
    v = policy_values(state.psi, pi)
    t, eps = model.draw().backup(v)
    psi = state.psi + t - v[:, None]
    return SchemeState(state.k + 1, psi, psi=psi, policy=greedy(psi), step_policy=pi, epsilon=eps)


def step(scheme: str, model, state: SchemeState, schedule: BetaSchedule = BetaSchedule()):
    if scheme == "avi":
        return avi_step(model, state)
    if scheme == "movi":
        return movi_step(model, state, schedule)
    if scheme == "sql":
        return sql_step(model, state)
    if scheme == "dpp":
        return dpp_step(model, state)
    raise ContractError(f"unknown scheme {scheme!r}; expected one of {SCHEME_IDS}")


# --------------------------------------------------------------------------
# Driver


def policy_loss_norm(mdp, q_star, policy, norm="l1_uniform", cache=None) -> float:
    key = policy.tobytes()
    if cache is not None and key in cache:
        return cache[key]
    loss = q_star - exact_q_of_policy(mdp, policy)
    if norm == "l1_uniform":
        value = weighted_lp_norm(loss, uniform_distribution(mdp), 1)
    elif norm == "sup":
        value = sup_norm(loss)
    else:
        raise ContractError(f"unknown evaluation norm {norm!r}")
    if cache is not None:
        cache[key] = value
    return value


@dataclass
class SchemeRun:
    """Outcome of ``run_scheme``: losses of the acting policy at each checkpoint."""

    scheme: str
    iterations: int
    seed: int
    sampled: bool
    checkpoints: List[int]
    losses: List[float]
    final: SchemeState
    ledger: Optional[ErrorLedger] = None
    acting_policies: Dict[int, np.ndarray] = field(default_factory=dict)
    wall_time: float = 0.0


def run_scheme(
    mdp: FiniteMdp,
    scheme: str,
    iterations: int,
    beta: BetaSchedule = BetaSchedule(),
    sampled: bool = True,
    seed: int = 0,
    ledger: bool = False,
    checkpoints: Optional[Sequence[int]] = None,
    q_star=None,
    eval_norm: str = "l1_uniform",
    ledger_cap: int = DEFAULT_LEDGER_CAP,
    q0=None,
    model=None,
) -> SchemeRun:
    """Run ``iterations`` steps of a scheme (Sampled MoVI's loop, for any scheme).

    Losses ``||q_* - q_pi||`` of the acting policy are evaluated at the
    checkpoints when ``q_star`` is given.
    """
    if iterations < 1:
        raise ContractError("iterations must be >= 1")
    if scheme not in SCHEME_IDS:
        raise ContractError(f"unknown scheme {scheme!r}; expected one of {SCHEME_IDS}")
    checkpoints = sorted(set(checkpoints or [iterations]))
    if checkpoints[0] < 0 or checkpoints[-1] > iterations:
        raise ContractError("checkpoints must lie in [0, iterations]")
    if ledger:
        need = ErrorLedger.bytes_estimate(iterations, *mdp.shape)
        if need > ledger_cap:
            raise ContractError(
                f"ledger for {iterations} iterations needs ~{need} bytes, above the cap of {ledger_cap}"
            )
    if model is None:
        model = make_model(mdp, sampled, seed)
    start = time.perf_counter()
    state = init_state(scheme, mdp, q0)
    book = ErrorLedger(state.q) if ledger else None
    wanted = set(checkpoints)
    acting = {}
    if 0 in wanted:
        acting[0] = state.policy
    for _ in range(iterations):
        state = step(scheme, model, state, beta)
        if book is not None:
            book.append(state.epsilon, state.step_policy, state.q)
        if state.k in wanted:
            acting[state.k] = state.policy
    losses = []
    if q_star is not None:
        cache = {}
        losses = [policy_loss_norm(mdp, q_star, acting[k], eval_norm, cache) for k in checkpoints]
    return SchemeRun(
        scheme, iterations, int(seed), sampled, checkpoints, losses, state, book, acting,
        time.perf_counter() - start,
    )
