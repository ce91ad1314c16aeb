"""Product of a base MDP with the flag automaton of a two-layer STL formula.

Each temporal leaf ``i`` carries a counter ``f_i`` in ``{0, ..., Tin + 1}``:
for ``F`` leaves it is the number of remaining steps during which a past
``phi_i`` hit still lies inside the window, for ``G`` leaves the length of
the current run of ``phi_i`` hits (capped). The outer flag ``fin`` starts
undefined and aggregates the inner verdicts with max (outer ``F``) or
min (outer ``G``) once the first full window is available. The formula
holds on ``s_0..s_{H-1}`` iff ``fin = 1`` at the final stage ``H``.

Flags evaluate leaf predicates on the pre-transition state: the flags at
stage ``t + 1`` summarise ``s_0..s_t``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import CmdpProblem, FiniteHorizonMdp, as_stage_table
from .stl import (InnerAnd, Leaf, StlFormula, eval_prop, horizon, inner_leaves,
                  max_dimension)

BOT = 2  # integer code of the undefined fin value
FIN_VALUES = (0, 1, None)


class DomainError(ValueError):
    pass


class ArityError(ValueError):
    pass


class HorizonMismatch(ValueError):
    pass


def update_inner_flag(f: int, sat_phi: bool, kind: str, t_in: int) -> int:
    if not 0 <= f <= t_in + 1:
        raise DomainError(f"flag {f} outside 0..{t_in + 1}")
    if kind == "F":
        return t_in + 1 if sat_phi else max(f - 1, 0)
    if kind == "G":
        return min(f, t_in) + 1 if sat_phi else 0
    raise DomainError(f"unknown leaf kind {kind!r}")


def sat_from_flag(f: int, kind: str, t_in: int) -> int:
    if kind == "F":
        return int(f > 0)
    return int(f == t_in + 1)


def combine_sat(inner, leaf_bits) -> int:
    """Fold leaf verdicts through the inner Boolean tree (``&`` = min, ``|`` = max)."""
    bits = list(leaf_bits)
    expected = len(inner_leaves(inner))
    if len(bits) != expected:
        raise ArityError(f"{len(bits)} bits given for {expected} leaves")
    return _combine(inner, bits, 0)[0]


def _combine(node, bits, start):
    if isinstance(node, Leaf):
        return int(bits[start]), start + 1
    left, mid = _combine(node.left, bits, start)
    right, end = _combine(node.right, bits, mid)
    if isinstance(node, InnerAnd):
        return min(left, right), end
    return max(left, right), end


def update_fin(fin, sat: int, t: int, t_in: int, outer_kind: str):
    """Next ``fin`` (``None`` stands for the undefined value)."""
    if (fin is None) != (t <= t_in):
        raise DomainError(f"fin={fin!r} is inconsistent with time {t} (Tin={t_in})")
    if t < t_in:
        return None
    if t == t_in:
        return int(sat)
    if outer_kind == "G":
        return min(int(sat), fin)
    if outer_kind == "F":
        return max(int(sat), fin)
    raise DomainError(f"unknown outer kind {outer_kind!r}")


def _combine_arrays(node, bits: list, start: int = 0):
    if isinstance(node, Leaf):
        return bits[start], start + 1
    left, mid = _combine_arrays(node.left, bits, start)
    right, end = _combine_arrays(node.right, bits, mid)
    op = np.minimum if isinstance(node, InnerAnd) else np.maximum
    return op(left, right), end


@dataclass(frozen=True)
class AugmentedMdp:
    """Product MDP with reachability constraint cost and lifted objective."""

    base: FiniteHorizonMdp
    formula: StlFormula
    product: FiniteHorizonMdp
    sat_cost: np.ndarray     # 1 at the final stage where fin = 1
    cost: np.ndarray | None  # lifted objective, if a base cost was given
    dims: tuple              # (S, Tin+2, ..., Tin+2, 3)

    @property
    def num_leaves(self) -> int:
        return len(self.dims) - 2

    def encode(self, state: int, flags, fin) -> int:
        fin_code = BOT if fin is None else int(fin)
        return int(np.ravel_multi_index((state, *flags, fin_code), self.dims))

    def decode(self, index: int):
        parts = np.unravel_index(int(index), self.dims)
        fin = None if parts[-1] == BOT else int(parts[-1])
        return int(parts[0]), tuple(int(v) for v in parts[1:-1]), fin

    def base_state(self, index):
        """Base-state component of product indices (vectorised)."""
        return np.asarray(index) // int(np.prod(self.dims[1:]))

    def fin_code(self, index):
        return np.asarray(index) % 3

    def lift_cost(self, cost) -> np.ndarray:
        """``c_x[h, (s, ...), a] = c[h, s, a]``."""
        cost = as_stage_table(self.base, cost)
        return cost[:, self.base_state(np.arange(self.product.num_states)), :]

    def lift_policy(self, policy) -> np.ndarray:
        """Product policy that ignores the flags."""
        policy = np.asarray(policy, dtype=float)
        return policy[:, self.base_state(np.arange(self.product.num_states)), :]

    def satisfaction_problem(self, p_thres: float) -> CmdpProblem:
        """``min V(c) s.t. Pr(formula) >= p_thres``, already in ``<=`` form."""
        if self.cost is None:
            raise ValueError("no objective cost attached to this product")
        return CmdpProblem(self.product, self.cost, self.sat_cost, p_thres, ">=").normalized()

    def codec(self) -> list:
        """``[s, [f_1..f_n], fin]`` per product index (fin ``None`` = undefined)."""
        return [[s, list(flags), fin] for s, flags, fin in map(self.decode, range(self.product.num_states))]


def build_augmented_mdp(mdp: FiniteHorizonMdp, formula: StlFormula, cost=None) -> AugmentedMdp:
    hrz = horizon(formula)
    if mdp.horizon != hrz + 1:
        raise HorizonMismatch(f"MDP horizon {mdp.horizon} must equal formula horizon + 1 = {hrz + 1}")
    leaves = formula.leaves
    t_in = formula.inner_bound
    n = len(leaves)
    for leaf in leaves:
        if max_dimension(leaf.phi) >= mdp.embedding.shape[1]:
            raise ValueError("formula references coordinates missing from the state embedding")

    S, A = mdp.num_states, mdp.num_actions
    dims = (S,) + (t_in + 2,) * n + (3,)
    total = int(np.prod(dims))
    flag_block = total // S

    parts = np.unravel_index(np.arange(total), dims)
    state, flags, fin = parts[0], parts[1:-1], parts[-1]
    # phi_hit[i][x]: leaf i's proposition holds at the base state of x
    phi_table = np.array([[eval_prop(leaf.phi, mdp.embedding[s]) for s in range(S)]
                          for leaf in leaves], dtype=bool).reshape(n, S)
    phi_hit = phi_table[:, state]

    new_flags = []
    for i, leaf in enumerate(leaves):
        f = flags[i]
        if leaf.kind == "F":
            nf = np.where(phi_hit[i], t_in + 1, np.maximum(f - 1, 0))
        else:
            nf = np.where(phi_hit[i], np.minimum(f, t_in) + 1, 0)
        new_flags.append(nf)
    bits = [(nf > 0) if leaf.kind == "F" else (nf == t_in + 1)
            for nf, leaf in zip(new_flags, leaves)]
    sat, _ = _combine_arrays(formula.inner, [b.astype(np.int64) for b in bits])

    # fin = BOT is unreachable after Tin; treating it as neutral keeps rows total
    fin_neutral = np.where(fin == BOT, sat, fin)
    agg = np.minimum(sat, fin_neutral) if formula.kind == "G" else np.maximum(sat, fin_neutral)

    H = mdp.horizon
    succ = np.empty((H + 1, total, A, mdp.succ.shape[-1]), dtype=np.int64)
    prob = np.empty((H + 1, total, A, mdp.succ.shape[-1]))
    for t in range(H + 1):
        if t < t_in:
            new_fin = np.full(total, BOT)
        elif t == t_in:
            new_fin = sat
        else:
            new_fin = agg
        flag_part = np.ravel_multi_index((np.zeros(total, dtype=np.int64), *new_flags, new_fin), dims)
        base_succ, base_prob = mdp.successors(t)
        succ[t] = base_succ[state] * flag_block + flag_part[:, None, None]
        prob[t] = base_prob[state]

    s0 = int(np.ravel_multi_index((mdp.initial_state,) + (0,) * n + (BOT,), dims))
    product = FiniteHorizonMdp(total, A, H, s0, succ, prob, mdp.embedding[state])

    sat_cost = np.zeros((H + 1, total, A))
    sat_cost[H, fin == 1, :] = 1.0
    lifted = None
    if cost is not None:
        lifted = as_stage_table(mdp, cost)[:, state, :]
    return AugmentedMdp(mdp, formula, product, sat_cost, lifted, dims)
