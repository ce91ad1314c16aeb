"""Independent reference computations and random instance generators for tests."""
from __future__ import annotations

import itertools

import numpy as np

from stlcmdp.augment import build_augmented_mdp
from stlcmdp.gridworld import GridSpec, build_grid_mdp, grid_cost_table
from stlcmdp.mdp import FiniteHorizonMdp
from stlcmdp.stl import (And, InnerAnd, InnerOr, Leaf, Not, Pred, Predicate, StlFormula,
                         TrueProp, horizon, parse_formula)

CASE1_FORMULA = "F[0,7] G[0,1] (x > 4 & y > 4)"
CASE2_FORMULA = ("G[0,12] (F[0,2](x>1 & x<2 & y>3 & y<4) & "
                 "F[0,2](x>2 & x<3 & y>2 & y<3))")


def case_product(case: int):
    if case == 1:
        spec, text = GridSpec(6, 6, (0, 0), 0.93), CASE1_FORMULA
    else:
        spec, text = GridSpec(4, 4, (1, 1), 0.93), CASE2_FORMULA
    formula = parse_formula(text)
    H = horizon(formula) + 1
    return build_augmented_mdp(build_grid_mdp(spec, H), formula, grid_cost_table(spec, H))


def random_kernel(rng, S, A, sparsity=0.4):
    """Row-stochastic ``(S, A, S)`` array with some structural zeros."""
    raw = rng.random((S, A, S)) * (rng.random((S, A, S)) > sparsity)
    empty = raw.sum(-1) == 0
    raw[empty, rng.integers(S)] = 1.0
    return raw / raw.sum(-1, keepdims=True)


def random_mdp(rng, S, A, H, stationary=True, dims=2) -> FiniteHorizonMdp:
    kernel = random_kernel(rng, S, A) if stationary else np.stack(
        [random_kernel(rng, S, A) for _ in range(H + 1)])
    embedding = rng.integers(0, 3, size=(S, dims)) + 0.5
    return FiniteHorizonMdp.from_dense(kernel, H, int(rng.integers(S)), embedding)


def random_policy(rng, H, S, A, zero_prob=0.3):
    raw = rng.random((H + 1, S, A)) * (rng.random((H + 1, S, A)) > zero_prob)
    dead = raw.sum(-1) == 0
    raw[dead, 0] = 1.0
    return raw / raw.sum(-1, keepdims=True)


def random_prop(rng, depth=2, dims=2):
    roll = rng.random()
    if depth == 0 or roll < 0.45:
        if rng.random() < 0.1:
            return TrueProp()
        return Pred(Predicate(int(rng.integers(dims)), "<" if rng.random() < 0.5 else ">",
                              float(rng.integers(0, 4))))
    if roll < 0.65:
        return Not(random_prop(rng, depth - 1, dims))
    return And(random_prop(rng, depth - 1, dims), random_prop(rng, depth - 1, dims))


def random_inner(rng, t_in, leaves, dims=2):
    if leaves == 1:
        return Leaf("F" if rng.random() < 0.5 else "G", t_in, random_prop(rng, 2, dims))
    split = int(rng.integers(1, leaves))
    cls = InnerAnd if rng.random() < 0.5 else InnerOr
    return cls(random_inner(rng, t_in, split, dims), random_inner(rng, t_in, leaves - split, dims))


def random_formula(rng, max_horizon=4, max_leaves=2, dims=2) -> StlFormula:
    t_in = int(rng.integers(0, max_horizon + 1))
    t_o = int(rng.integers(0, max_horizon - t_in + 1))
    leaves = int(rng.integers(1, max_leaves + 1))
    return StlFormula("F" if rng.random() < 0.5 else "G", t_o,
                      random_inner(rng, t_in, leaves, dims))


def enumerate_paths(mdp: FiniteHorizonMdp, policy):
    """All ``(states, actions, probability)`` with positive mass, by brute force."""
    H = mdp.horizon
    out = []

    def walk(h, s, states, actions, mass):
        for a in range(mdp.num_actions):
            pa = policy[h, s, a]
            if pa == 0:
                continue
            if h == H:
                out.append((states + [s], actions + [a], mass * pa))
                continue
            kernel = mdp.kernel(h)[s, a]
            for nxt in np.flatnonzero(kernel):
                walk(h + 1, int(nxt), states + [s], actions + [a], mass * pa * kernel[nxt])

    walk(0, mdp.initial_state, [], [], 1.0)
    return out


def path_value(mdp, policy, cost):
    """Expected cumulative cost by exhaustive trajectory enumeration."""
    return sum(p * sum(cost[h, s, a] for h, (s, a) in enumerate(zip(st, ac)))
               for st, ac, p in enumerate_paths(mdp, policy))


def deterministic_policies(H, S, A):
    for choice in itertools.product(range(A), repeat=(H + 1) * S):
        policy = np.zeros((H + 1, S, A))
        idx = np.array(choice).reshape(H + 1, S)
        np.put_along_axis(policy, idx[..., None], 1.0, axis=-1)
        yield policy


def brute_force_cmdp(mdp, cost, constraint, threshold):
    """Optimum over deterministic policies and their constraint-tight pairwise mixtures."""
    from stlcmdp.mdp import value_of_policy
    pairs = [(value_of_policy(mdp, pi, cost), value_of_policy(mdp, pi, constraint))
             for pi in deterministic_policies(mdp.horizon, mdp.num_states, mdp.num_actions)]
    best = min((c for c, d in pairs if d <= threshold), default=np.inf)
    feasible = [(c, d) for c, d in pairs if d <= threshold]
    above = [(c, d) for c, d in pairs if d > threshold]
    for ci, di in feasible:
        for cj, dj in above:
            w = (dj - threshold) / (dj - di)
            best = min(best, w * ci + (1 - w) * cj)
    return best
