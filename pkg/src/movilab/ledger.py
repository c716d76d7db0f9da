from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .mdp import ContractError, bellman_eval


@dataclass
class ErrorLedger:
    """Append-only record of a run's errors and policies.

    ``epsilons[i - 1]`` is the error of iteration ``i`` and ``policies[i - 1]``
    the policy used by that iteration, so both sequences are 1-indexed in
    the usual notation.  Kernels are rebuilt from the policies on demand.
    """

    q0: np.ndarray
    epsilons: List[np.ndarray] = field(default_factory=list)
    policies: List[np.ndarray] = field(default_factory=list)
    q_latest: np.ndarray = None

    def __post_init__(self):
        self.q0 = np.array(self.q0, dtype=float)
        if self.q_latest is None:
            self.q_latest = self.q0.copy()

    def __len__(self):
        return len(self.epsilons)

    def append(self, epsilon, policy, q):
        epsilon = np.array(epsilon, dtype=float)
        if epsilon.shape != self.q0.shape:
            raise ContractError("epsilon table does not match the ledger dimensions")
        self.epsilons.append(epsilon)
        self.policies.append(np.array(policy))
        self.q_latest = np.array(q, dtype=float)

    def epsilon(self, i: int) -> np.ndarray:
        return self.epsilons[i - 1]

    def policy(self, i: int) -> np.ndarray:
        return self.policies[i - 1]

    def require(self, k: int):
        if not 0 <= k <= len(self):
            raise ContractError(f"ledger holds {len(self)} iterations, index {k} requested")

    @staticmethod
    def bytes_estimate(iterations: int, n_states: int, n_actions: int) -> int:
        return iterations * (n_states * n_actions * 8 + n_states * 8)

    def reconstruct_q(self, mdp, j: int) -> np.ndarray:
        """Rebuild ``q_j = T_{pi_j} q_{j-1} + eps_j`` from ``q0`` (AVI/MoVI ledgers)."""
        self.require(j)
        q = self.q0
        for i in range(1, j + 1):
            q = bellman_eval(mdp, self.policy(i), q) + self.epsilon(i)
        return q
