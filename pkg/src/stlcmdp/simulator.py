"""Sampling access to an MDP whose kernel the learner may not read.

All randomness is drawn from streams keyed by ``(master seed, purpose,
counter)`` so that any rollout batch can be regenerated independently of
the order in which batches run.
"""
from __future__ import annotations

import numpy as np

from .mdp import FiniteHorizonMdp, as_stage_table

# stream purposes
BEST_RESPONSE, OCCUPANCY, EVALUATION = 0, 1, 2


def stream(seed: int, purpose: int, counter: int = 0) -> np.random.Generator:
    """Independent Philox generator for one ``(seed, purpose, counter)`` key."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, purpose, counter])))


def stream_seed(seed: int, purpose: int, counter: int = 0) -> int:
    """32-bit integer seed for code that keeps its own generator (compiled kernels)."""
    return int(np.random.SeedSequence([seed, purpose, counter]).generate_state(1)[0])


class Simulator:
    """Reset/step interface over a hidden kernel, with known cost tables.

    ``cost`` and ``constraint`` are visible to the learner; the transition
    kernel is only reachable through sampling.
    """

    def __init__(self, mdp: FiniteHorizonMdp, cost, constraint=None):
        self._mdp = mdp
        self.cost = as_stage_table(mdp, cost)
        self.constraint = None if constraint is None else as_stage_table(mdp, constraint)
        self.num_states = mdp.num_states
        self.num_actions = mdp.num_actions
        self.horizon = mdp.horizon
        stages = mdp.horizon + 1
        idx = np.zeros(stages, dtype=np.int64) if mdp.stationary else np.arange(stages)
        self._succ = np.ascontiguousarray(mdp.succ[idx])
        prob = mdp.prob[idx]
        cdf = np.cumsum(prob, axis=-1)
        # zero-mass padding gets an unreachable bound; the last positive entry
        # absorbs rounding so every draw in [0, 1) lands
        cdf = np.where(prob > 0, cdf, -1.0)
        last = prob.shape[-1] - 1 - np.argmax(prob[..., ::-1] > 0, axis=-1)
        np.put_along_axis(cdf, last[..., None], 1.0, axis=-1)
        self._cdf = np.ascontiguousarray(cdf)

    @property
    def initial_state(self) -> int:
        return self._mdp.initial_state

    def reset(self) -> int:
        return self._mdp.initial_state

    def step(self, state: int, action: int, stage: int, rng) -> int:
        u = rng.random()
        return int(self.step_batch(np.array([state]), np.array([action]), stage,
                                   np.array([u]))[0])

    def step_batch(self, states, actions, stage: int, uniforms) -> np.ndarray:
        """Vectorised inverse-CDF sampling, one uniform per transition."""
        cdf = self._cdf[stage, states, actions]
        succ = self._succ[stage, states, actions]
        # first entry whose cumulative mass exceeds u; padding has bound -1
        hit = np.where(cdf < 0, False, uniforms[:, None] < cdf)
        return succ[np.arange(len(states)), hit.argmax(axis=1)]

    def sampler_tables(self):
        """Opaque ``(successors, cdf)`` arrays consumed by the compiled samplers."""
        return self._succ, self._cdf

    def base_embedding(self):
        return self._mdp.embedding


def sample_actions(policy_h: np.ndarray, states: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw of ``a ~ policy_h[s]`` for each state in ``states``."""
    rows = policy_h[states]
    cdf = np.cumsum(rows, axis=1)
    last = rows.shape[1] - 1 - np.argmax(rows[:, ::-1] > 0, axis=1)
    cdf[np.arange(len(states)), last] = np.inf
    hit = (uniforms[:, None] < cdf) & (rows > 0)
    return hit.argmax(axis=1)


def rollout(sim: Simulator, policy: np.ndarray, n: int, rng: np.random.Generator):
    """``n`` episodes in lockstep; returns ``(states, actions)`` of shape ``(n, H+1)``."""
    H = sim.horizon
    states = np.empty((n, H + 1), dtype=np.int64)
    actions = np.empty((n, H + 1), dtype=np.int64)
    s = np.full(n, sim.reset(), dtype=np.int64)
    for h in range(H + 1):
        states[:, h] = s
        actions[:, h] = sample_actions(policy[h], s, rng.random(n))
        if h < H:
            s = sim.step_batch(s, actions[:, h], h, rng.random(n))
    return states, actions
