"""Random Garnet MDPs.

All randomness comes from numpy's PCG64 bit generator seeded with the
64-bit ``GarnetSpec.seed``.  Draw order is fixed: for each ``(s, a)`` in
row-major order, the successor set and then the cut points; the state
rewards come last.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .mdp import ContractError, FiniteMdp


@dataclass(frozen=True)
class GarnetSpec:
    n_states: int
    n_actions: int
    branching: int
    seed: int = 0

    def __post_init__(self):
        for name in ("n_states", "n_actions", "branching"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ContractError(f"{name} must be a positive integer, got {value!r}")
        if self.branching > self.n_states:
            raise ContractError(
                f"branching ({self.branching}) cannot exceed n_states ({self.n_states})"
            )
        if not 0 <= int(self.seed) < 2**64:
            raise ContractError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GarnetSpec":
        return cls(**data)


def garnet_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def _cut_points(rng: np.random.Generator, branching: int) -> np.ndarray:
    # Redraw the whole set when two cut points coincide (or hit 0), so that
    # every successor keeps a strictly positive probability.
    while True:
        cuts = np.sort(rng.random(branching - 1))
        bounds = np.concatenate(([0.0], cuts, [1.0]))
        probs = np.diff(bounds)
        if np.all(probs > 0.0):
            return probs


def generate(spec: GarnetSpec, gamma: float = 0.9) -> FiniteMdp:
    rng = garnet_rng(spec.seed)
    S, A, B = spec.n_states, spec.n_actions, spec.branching
    P = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            successors = rng.choice(S, size=B, replace=False)
            P[s, a, successors] = _cut_points(rng, B)
    rewards = rng.uniform(-1.0, 1.0, size=S)
    while np.any(rewards == -1.0):
        bad = rewards == -1.0
        rewards[bad] = rng.uniform(-1.0, 1.0, size=int(bad.sum()))
    reward = np.repeat(rewards[:, None], A, axis=1)
    return FiniteMdp(P, reward, gamma, r_max=1.0)
