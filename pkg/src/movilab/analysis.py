"""Error bookkeeping and numerical checks of the error-propagation bounds."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .garnet import GarnetSpec, generate
from .ledger import ErrorLedger
from .mdp import (
    ContractError,
    FiniteMdp,
    apply_policy_kernel,
    bellman_eval,
    exact_q_of_policy,
    greedy,
    occupancy,
    policy_values,
    resolvent_solve,
    sup_norm,
    weighted_lp_norm,
)
from .schemes import BetaSchedule, GenerativeModel, init_state, movi_step
from .seeding import derive_seed

SLACK = 1e-8


def cumulative_error(ledger: ErrorLedger, k: int) -> np.ndarray:
    """``E_k = -sum_{j <= k} eps_j``."""
    ledger.require(k)
    total = np.zeros_like(ledger.q0)
    for j in range(1, k + 1):
        total = total + ledger.epsilon(j)
    return -total


def _propagated_error(ledger: ErrorLedger, mdp: FiniteMdp, i: int) -> np.ndarray:
    eps = ledger.epsilon(i)
    return eps - mdp.gamma * apply_policy_kernel(mdp, ledger.policy(i), eps)


def weighted_cumulative_error(ledger: ErrorLedger, mdp: FiniteMdp, k: int, j: int) -> np.ndarray:
    """``E'_{k,j} = -sum_{i=1}^{k-j} P_{i+j:i+1} (I - gamma P_{pi_i}) eps_i``."""
    ledger.require(k)
    if not 0 <= j <= k:
        raise ContractError(f"need 0 <= j <= k, got j={j}, k={k}")
    total = np.zeros_like(ledger.q0)
    for i in range(1, k - j + 1):
        v = _propagated_error(ledger, mdp, i)
        for m in range(i + 1, i + j + 1):
            v = apply_policy_kernel(mdp, ledger.policy(m), v)
        total = total + v
    return -total


def all_weighted_cumulative_errors(ledger: ErrorLedger, mdp: FiniteMdp, k: int) -> np.ndarray:
    """``E'_{k,j}`` for ``j = 0 .. k-1`` stacked along the first axis.

    All error terms are pushed one kernel further per lag in a single
    batched product, O(k^2) kernel applications in total.
    """
    ledger.require(k)
    S, A = mdp.shape
    out = np.zeros((k, S, A))
    if k == 0:
        return out
    states = np.arange(S)
    flat_P = mdp.transition.reshape(S * A, S)
    # rows[i - 1] holds P_{i+j:i+1} u_i for the current lag j
    rows = np.stack([_propagated_error(ledger, mdp, i) for i in range(1, k + 1)])
    policies = np.stack(ledger.policies[:k])
    for j in range(k):
        n = k - j
        out[j] = -rows[:n].sum(axis=0)
        if j + 1 < k:
            n_next = n - 1
            # row i (1-based) needs pi_{i+j+1}
            pis = policies[j + 1 : j + 1 + n_next]
            values = rows[np.arange(n_next)[:, None], states[None, :], pis]
            rows = (values @ flat_P.T).reshape(n_next, S, A)
    return out


def _initial_residual_sum(ledger: ErrorLedger, mdp: FiniteMdp, k: int) -> np.ndarray:
    """``sum_{j=0}^{k} gamma^j P_{j:1} (T_{pi_1} q_0 - q_0)``."""
    q0 = ledger.q0
    v = bellman_eval(mdp, ledger.policy(1), q0) - q0
    total = v.copy()
    for j in range(1, k + 1):
        v = apply_policy_kernel(mdp, ledger.policy(j), v)
        total = total + mdp.gamma**j * v
    return total


def loss(mdp: FiniteMdp, q_star, policy) -> np.ndarray:
    """``q_* - q_pi``."""
    return np.asarray(q_star) - exact_q_of_policy(mdp, policy)


@dataclass
class BoundReport:
    """Bounds on the loss of ``pi_{k+1}`` after ``k + 1`` MoVI iterations."""

    k: int
    loss: np.ndarray
    rhs_componentwise: np.ndarray
    rhs_sup: float
    rhs_l1mu: Optional[float]
    rhs_prop1: float
    loss_sup: float
    loss_l1mu: Optional[float]
    holds_componentwise: bool
    slack_min: float

    @property
    def holds_sup(self) -> bool:
        return self.loss_sup <= self.rhs_sup + SLACK

    @property
    def holds_l1mu(self) -> Optional[bool]:
        if self.rhs_l1mu is None:
            return None
        return self.loss_l1mu <= self.rhs_l1mu + SLACK

    @property
    def holds_prop1(self) -> bool:
        return self.loss_sup <= self.rhs_prop1 + SLACK


def _theorem1_pieces(ledger, mdp, pi_star, k, weighted=None):
    ledger.require(k + 1)
    if weighted is None:
        weighted = all_weighted_cumulative_errors(ledger, mdp, k)
    q_next = ledger.reconstruct_q(mdp, k + 1)
    E_next = cumulative_error(ledger, k + 1)
    discounts = mdp.gamma ** np.arange(k)
    inner = np.tensordot(discounts, weighted, axes=1) + _initial_residual_sum(ledger, mdp, k)
    first = resolvent_solve(mdp, pi_star, E_next + q_next - ledger.q0)
    second = resolvent_solve(mdp, ledger.policy(k + 1), inner)
    return (first - second) / (k + 1), E_next, weighted


def theorem1_rhs(ledger: ErrorLedger, mdp: FiniteMdp, pi_star, k: int) -> np.ndarray:
    """Componentwise upper bound on ``q_* - q_{pi_{k+1}}`` after ``k + 1`` iterations."""
    return _theorem1_pieces(ledger, mdp, pi_star, k)[0]


def _norm_bound(E_next, weighted, mdp, k, norm) -> float:
    discounts = mdp.gamma ** np.arange(k)
    terms = sum(d * norm(w) for d, w in zip(discounts, weighted))
    return (norm(E_next) + terms + 2.0 * mdp.q_max) / ((k + 1) * (1.0 - mdp.gamma))


def sup_norm_rhs(ledger: ErrorLedger, mdp: FiniteMdp, k: int, weighted=None) -> float:
    """Sup-norm consequence of the componentwise bound."""
    ledger.require(k + 1)
    if weighted is None:
        weighted = all_weighted_cumulative_errors(ledger, mdp, k)
    return _norm_bound(cumulative_error(ledger, k + 1), weighted, mdp, k, sup_norm)


def corollary1_rhs(ledger: ErrorLedger, mdp: FiniteMdp, mu, nu, k: int, C: float, weighted=None) -> float:
    """``mu``-weighted l1 bound; assumes the run started from ``h_0 = q_0 = 0``."""
    ledger.require(k + 1)
    if not C > 0:
        raise ContractError("concentrability coefficient must be positive")
    if np.any(ledger.q0 != 0.0):
        raise ContractError("the l1 bound requires q_0 = 0")
    if weighted is None:
        weighted = all_weighted_cumulative_errors(ledger, mdp, k)
    norm = lambda x: weighted_lp_norm(x, nu, 1)
    return C * _norm_bound(cumulative_error(ledger, k + 1), weighted, mdp, k, norm)


def prop1_rhs(k: int, delta: float, r_max: float, gamma: float, n_states: int, n_actions: int) -> float:
    """High-probability sup-norm bound for Sampled MoVI after ``k`` iterations."""
    if k < 1:
        raise ContractError("k must be >= 1")
    if not 0.0 < delta < 1.0:
        raise ContractError("delta must lie in (0, 1)")
    if not 0.0 < gamma < 1.0 or r_max < 0:
        raise ContractError("need 0 < gamma < 1 and r_max >= 0")
    log_term = math.log(4.0 * n_states * n_actions / delta)
    return (2.0 * r_max / (1.0 - gamma) ** 2) * (
        1.0 / k + 3.0 / (1.0 - gamma) * math.sqrt(2.0 * log_term / k)
    )


def sql_dpp_bound_rhs(ledger: ErrorLedger, gamma: float, q_max: float, k: int) -> float:
    """Sup-norm bound shared by SQL and DPP after ``k`` iterations."""
    ledger.require(k)
    if k < 1:
        raise ContractError("k must be >= 1")
    total = 0.0
    E = np.zeros_like(ledger.q0)
    for j in range(1, k + 1):
        E = E - ledger.epsilon(j)
        total += gamma ** (k - j) * sup_norm(E)
    return 2.0 * gamma / (k * (1.0 - gamma)) * (total + 8.0 * gamma * q_max / (1.0 - gamma))


def bound_report(
    ledger: ErrorLedger,
    mdp: FiniteMdp,
    q_star,
    pi_star,
    k: int,
    mu=None,
    nu=None,
    C: Optional[float] = None,
    delta: float = 0.05,
) -> BoundReport:
    rhs, E_next, weighted = _theorem1_pieces(ledger, mdp, pi_star, k)
    gap = loss(mdp, q_star, ledger.policy(k + 1))
    rhs_sup = _norm_bound(E_next, weighted, mdp, k, sup_norm)
    rhs_l1 = loss_l1 = None
    if C is not None:
        rhs_l1 = corollary1_rhs(ledger, mdp, mu, nu, k, C, weighted=weighted)
        loss_l1 = weighted_lp_norm(gap, mu, 1)
    slack = float(np.min(rhs - gap))
    return BoundReport(
        k=k,
        loss=gap,
        rhs_componentwise=rhs,
        rhs_sup=rhs_sup,
        rhs_l1mu=rhs_l1,
        rhs_prop1=prop1_rhs(k + 1, delta, mdp.r_max, mdp.gamma, *mdp.shape),
        loss_sup=sup_norm(gap),
        loss_l1mu=loss_l1,
        holds_componentwise=slack >= -SLACK,
        slack_min=slack,
    )


@dataclass
class Concentrability:
    value: float
    exact: bool
    n_policies: int

    def __float__(self):
        return self.value


def _density_ratio(d, nu):
    support = d > 0.0
    if np.any(support & (nu <= 0.0)):
        raise ContractError("nu vanishes where an occupancy measure has mass: infinite concentrability")
    ratio = np.zeros_like(d)
    ratio[support] = d[support] / nu[support]
    return float(ratio.max())


def concentrability(mdp: FiniteMdp, mu, nu, mode="exact", n_policies: int = 1000, seed: int = 0) -> Concentrability:
    """``max_pi ||d_{pi,mu} / nu||_inf`` over deterministic policies.

    ``mode="exact"`` enumerates all ``A^S`` policies; ``mode="sampled"``
    scans ``n_policies`` random ones and only yields a lower bound.
    """
    nu = np.asarray(nu, dtype=float)
    S, A = mdp.shape
    if mode == "exact":
        if A**S > 10**6:
            raise ContractError(f"{A}^{S} policies is too many to enumerate")
        policies = (np.array(p) for p in itertools.product(range(A), repeat=S))
        count = A**S
    elif mode == "sampled":
        rng = np.random.Generator(np.random.PCG64(seed))
        policies = (rng.integers(0, A, size=S) for _ in range(n_policies))
        count = n_policies
    else:
        raise ContractError(f"unknown concentrability mode {mode!r}")
    best = 0.0
    for policy in policies:
        best = max(best, _density_ratio(occupancy(mdp, policy, mu), nu))
    return Concentrability(best, mode == "exact", count)


# --------------------------------------------------------------------------
# Empirical check of the martingale-type assumption


@dataclass
class AssumptionResult:
    """``epsbar[li, N - 1]`` is the estimate for ``l_values[li]`` over the first ``N`` replicates."""

    l_values: list
    epsbar: np.ndarray
    replicates: np.ndarray  # (n_max, len(l_values), S, A) weighted error tables


def epsbar_from_replicates(replicates: np.ndarray) -> np.ndarray:
    n_max = replicates.shape[0]
    running = np.cumsum(replicates, axis=0) / np.arange(1, n_max + 1)[:, None, None, None]
    return np.abs(running).max(axis=(2, 3)).T


def assumption_check(
    spec: GarnetSpec,
    gamma: float,
    j: int,
    l_values: Sequence[int],
    n_max: int,
    seed: int,
    beta: BetaSchedule = BetaSchedule(),
    mdp: Optional[FiniteMdp] = None,
) -> AssumptionResult:
    """Estimate ``max |mean_n P_{j+l:j+1,n} eps_{j,n}|`` for ``N = 1 .. n_max``.

    MoVI runs ``j`` sampled steps (stream ``(seed, 0)``); replicate ``n``
    restarts from that snapshot with stream ``(seed, n)`` and re-runs
    ``max(l, 1)`` steps.  The error is that of the first re-run step and the
    weighting kernels are the policies of the first ``l`` re-run steps, so the
    first kernel is the snapshot's greedy policy.
    """
    if j < 1 or n_max < 1 or any(l < 0 for l in l_values):
        raise ContractError("need j >= 1, n_max >= 1 and l >= 0")
    if mdp is None:
        mdp = generate(spec, gamma)
    l_values = list(l_values)
    depth = max(l_values)
    model = GenerativeModel(mdp, derive_seed(seed, 0))
    snapshot = init_state("movi", mdp)
    for _ in range(j):
        snapshot = movi_step(model, snapshot, beta)
    tables = np.zeros((n_max, len(l_values)) + mdp.shape)
    for n in range(1, n_max + 1):
        rep_model = GenerativeModel(mdp, derive_seed(seed, n))
        state = movi_step(rep_model, snapshot, beta)
        eps = state.epsilon
        kernels = [state.step_policy]
        while len(kernels) < depth:
            kernels.append(state.policy)
            state = movi_step(rep_model, state, beta)
        weighted = {0: eps}
        v = eps
        for m, policy in enumerate(kernels[:depth], start=1):
            v = mdp.transition @ policy_values(v, policy)
            weighted[m] = v
        for li, l in enumerate(l_values):
            tables[n - 1, li] = weighted[l]
    return AssumptionResult(l_values, epsbar_from_replicates(tables), tables)
