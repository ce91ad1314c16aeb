"""Finite-horizon MDPs over stage-indexed tables.

Conventions: an episode visits stages ``h = 0..H`` (``H + 1`` decisions).
Costs, policies and occupancy measures are arrays of shape ``(H+1, S, A)``.
Transition kernels are stored as padded successor lists: for each
``(stage, s, a)`` an ordered list of ``K`` successor states with their
probabilities. A stage-independent kernel keeps a single stage slice.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROW_TOL = 1e-12


class ShapeError(ValueError):
    pass


class FiniteHorizonMdp:
    """``(S, A, H, s0, p)`` plus a state embedding used by STL predicates.

    ``succ[k, s, a, j]`` / ``prob[k, s, a, j]`` give the j-th successor of
    ``(s, a)`` at kernel slice ``k``; ``k`` is the stage, or always 0 for a
    stationary kernel. Successor order is meaningful for sampling.
    """

    def __init__(self, num_states, num_actions, horizon, initial_state, succ, prob,
                 embedding=None):
        self.num_states = int(num_states)
        self.num_actions = int(num_actions)
        self.horizon = int(horizon)
        self.initial_state = int(initial_state)
        succ = np.asarray(succ, dtype=np.int64)
        prob = np.asarray(prob, dtype=float)
        if succ.ndim == 3:
            succ, prob = succ[None], prob[None]
        if succ.shape != prob.shape or succ.ndim != 4:
            raise ShapeError(f"successor/probability shapes differ: {succ.shape} vs {prob.shape}")
        if succ.shape[0] not in (1, self.horizon + 1) or succ.shape[1:3] != (
                self.num_states, self.num_actions):
            raise ShapeError(f"kernel shape {succ.shape} does not match "
                             f"(1 or {self.horizon + 1}, {self.num_states}, {self.num_actions}, K)")
        if not 0 <= self.initial_state < self.num_states:
            raise ShapeError("initial state out of range")
        if succ.min() < 0 or succ.max() >= self.num_states:
            raise ShapeError("successor index out of range")
        if prob.min() < 0:
            raise ValueError("negative transition probability")
        sums = prob.sum(axis=-1)
        if np.abs(sums - 1.0).max() > ROW_TOL:
            raise ValueError(f"transition rows must sum to 1 (worst {np.abs(sums - 1).max():.3g})")
        self.succ = succ
        self.prob = prob
        self.succ.flags.writeable = False
        self.prob.flags.writeable = False
        if embedding is None:
            embedding = np.arange(self.num_states, dtype=float)[:, None]
        self.embedding = np.asarray(embedding, dtype=float)
        if self.embedding.ndim == 1:
            self.embedding = self.embedding[:, None]
        if self.embedding.shape[0] != self.num_states:
            raise ShapeError("embedding must have one row per state")

    @classmethod
    def from_dense(cls, kernel, horizon, initial_state=0, embedding=None):
        """Build from a dense kernel of shape ``(S, A, S)`` or ``(H+1, S, A, S)``."""
        kernel = np.asarray(kernel, dtype=float)
        if kernel.ndim == 3:
            kernel = kernel[None]
        if kernel.ndim != 4 or kernel.shape[1] != kernel.shape[3]:
            raise ShapeError(f"dense kernel must be (S, A, S) or (H+1, S, A, S), got {kernel.shape}")
        width = max(1, int((kernel > 0).sum(axis=-1).max()))
        # stable sort keeps ascending state order among the non-zeros
        order = np.argsort(kernel <= 0, axis=-1, kind="stable")[..., :width]
        prob = np.take_along_axis(kernel, order, axis=-1)
        return cls(kernel.shape[1], kernel.shape[2], horizon, initial_state, order, prob,
                   embedding)

    @property
    def stationary(self) -> bool:
        return self.succ.shape[0] == 1

    def _slice(self, h: int) -> int:
        return 0 if self.stationary else h

    def successors(self, h: int):
        k = self._slice(h)
        return self.succ[k], self.prob[k]

    def kernel(self, h: int) -> np.ndarray:
        """Dense ``p_h(s'|s,a)`` as an ``(S, A, S)`` array."""
        succ, prob = self.successors(h)
        dense = np.zeros((self.num_states, self.num_actions, self.num_states))
        s_idx, a_idx = np.meshgrid(np.arange(self.num_states), np.arange(self.num_actions),
                                   indexing="ij")
        for j in range(succ.shape[-1]):
            np.add.at(dense, (s_idx, a_idx, succ[..., j]), prob[..., j])
        return dense

    def expect(self, h: int, values: np.ndarray) -> np.ndarray:
        """``sum_s' p_h(s'|s,a) values[s']`` for every ``(s, a)``."""
        succ, prob = self.successors(h)
        return (prob * values[succ]).sum(axis=-1)

    def push(self, h: int, q_h: np.ndarray) -> np.ndarray:
        """State distribution at ``h + 1`` given the stage-``h`` occupancy."""
        succ, prob = self.successors(h)
        weights = (q_h[..., None] * prob).ravel()
        return np.bincount(succ.ravel(), weights=weights, minlength=self.num_states)

    @property
    def table_shape(self) -> tuple[int, int, int]:
        return (self.horizon + 1, self.num_states, self.num_actions)


@dataclass(frozen=True)
class CmdpProblem:
    """Minimize ``V(cost)`` subject to ``V(constraint) <= threshold`` (or ``>=``)."""

    mdp: FiniteHorizonMdp
    cost: np.ndarray
    constraint: np.ndarray
    threshold: float
    direction: str = "<="

    def __post_init__(self):
        object.__setattr__(self, "cost", as_stage_table(self.mdp, self.cost))
        object.__setattr__(self, "constraint", as_stage_table(self.mdp, self.constraint))
        if self.direction not in ("<=", ">="):
            raise ValueError("direction must be '<=' or '>='")
        if self.cost.min() < 0 or self.constraint.min() < 0:
            raise ValueError("costs must be non-negative")

    def normalized(self) -> "CmdpProblem":
        """Equivalent problem with a ``<=`` constraint.

        ``V(d) >= l`` becomes ``V(d') <= sum_h max d_h - l`` with
        ``d'_h = max d_h - d_h``; every stage carries unit probability mass.
        """
        if self.direction == "<=":
            return self
        stage_max = self.constraint.reshape(self.constraint.shape[0], -1).max(axis=1)
        flipped = stage_max[:, None, None] - self.constraint
        return CmdpProblem(self.mdp, self.cost, flipped, float(stage_max.sum() - self.threshold))


def as_stage_table(mdp: FiniteHorizonMdp, table) -> np.ndarray:
    """Broadcast an ``(S, A)`` table over stages; validate ``(H+1, S, A)`` tables."""
    table = np.asarray(table, dtype=float)
    if table.shape == (mdp.num_states, mdp.num_actions):
        table = np.broadcast_to(table, mdp.table_shape).copy()
    if table.shape != mdp.table_shape:
        raise ShapeError(f"expected a table of shape {mdp.table_shape}, got {table.shape}")
    return table


def check_policy(mdp: FiniteHorizonMdp, policy) -> np.ndarray:
    policy = np.asarray(policy, dtype=float)
    if policy.shape != mdp.table_shape:
        raise ShapeError(f"policy shape {policy.shape} != {mdp.table_shape}")
    if policy.min() < 0 or np.abs(policy.sum(axis=-1) - 1).max() > ROW_TOL:
        raise ValueError("policy rows must be probability vectors")
    return policy


def deterministic_policy(mdp: FiniteHorizonMdp, actions) -> np.ndarray:
    """One-hot policy from an ``(H+1, S)`` array of action indices."""
    actions = np.asarray(actions, dtype=np.int64)
    policy = np.zeros(mdp.table_shape)
    np.put_along_axis(policy, actions[..., None], 1.0, axis=-1)
    return policy


def uniform_policy(mdp: FiniteHorizonMdp) -> np.ndarray:
    return np.full(mdp.table_shape, 1.0 / mdp.num_actions)


def value_of_policy(mdp: FiniteHorizonMdp, policy, cost) -> float:
    """Exact ``V_0(s0)`` by backward recursion."""
    policy = check_policy(mdp, policy)
    cost = as_stage_table(mdp, cost)
    v = np.zeros(mdp.num_states)
    for h in range(mdp.horizon, -1, -1):
        q = cost[h] + mdp.expect(h, v)
        v = (policy[h] * q).sum(axis=1)
    return float(v[mdp.initial_state])


def optimal_policy_dp(mdp: FiniteHorizonMdp, cost):
    """Backward induction; returns a one-hot policy and ``V*_0(s0)``.

    Ties go to the lowest action index.
    """
    cost = as_stage_table(mdp, cost)
    actions = np.zeros((mdp.horizon + 1, mdp.num_states), dtype=np.int64)
    v = np.zeros(mdp.num_states)
    for h in range(mdp.horizon, -1, -1):
        q = cost[h] + mdp.expect(h, v)
        actions[h] = q.argmin(axis=1)
        v = q[np.arange(mdp.num_states), actions[h]]
    return deterministic_policy(mdp, actions), float(v[mdp.initial_state])


def occupancy_of_policy(mdp: FiniteHorizonMdp, policy) -> np.ndarray:
    """Forward propagation of ``q_h(s,a) = Pr[s_h = s, a_h = a]``."""
    policy = check_policy(mdp, policy)
    q = np.zeros(mdp.table_shape)
    mu = np.zeros(mdp.num_states)
    mu[mdp.initial_state] = 1.0
    for h in range(mdp.horizon + 1):
        q[h] = mu[:, None] * policy[h]
        if h < mdp.horizon:
            mu = mdp.push(h, q[h])
    return q


def policy_from_occupancy(q) -> np.ndarray:
    """``pi_h(a|s) = q_h(s,a) / sum_b q_h(s,b)``; uniform where the row is empty."""
    q = np.asarray(q, dtype=float)
    if q.min() < 0:
        raise ValueError("occupancy must be non-negative")
    mass = q.sum(axis=-1, keepdims=True)
    uniform = np.full_like(q, 1.0 / q.shape[-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        policy = np.where(mass > 0, q / np.where(mass > 0, mass, 1.0), uniform)
    return policy


def cost_of_occupancy(q, cost) -> float:
    q = np.asarray(q, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if cost.shape == q.shape[1:]:
        cost = np.broadcast_to(cost, q.shape)
    if cost.shape != q.shape:
        raise ShapeError(f"cost shape {cost.shape} does not match occupancy {q.shape}")
    return float((q * cost).sum())


def state_marginals(q) -> np.ndarray:
    return np.asarray(q).sum(axis=-1)


def flow_residual(mdp: FiniteHorizonMdp, q) -> float:
    """Largest violation of initial support and flow conservation."""
    q = np.asarray(q, dtype=float)
    start = np.zeros(mdp.num_states)
    start[mdp.initial_state] = 1.0
    worst = np.abs(q[0].sum(axis=1) - start).max()
    for h in range(mdp.horizon):
        worst = max(worst, np.abs(q[h + 1].sum(axis=1) - mdp.push(h, q[h])).max())
    return float(worst)
