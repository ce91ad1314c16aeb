"""Known-model CMDP solver via the Lagrangian dual.

With a single constraint the dual ``g(lam) = min_q C(q) + lam (D(q) - l)``
is concave and piecewise linear in the scalar multiplier. Its maximiser is
bracketed by bisection on the sign of ``D(q_lam) - l``; the kink is then
located exactly by intersecting the Lagrangian lines of the two bracketing
best responses, and those two deterministic policies are mixed so that the
constraint is active.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .mdp import (CmdpProblem, cost_of_occupancy, occupancy_of_policy,
                  optimal_policy_dp, policy_from_occupancy)

log = logging.getLogger(__name__)

FEAS_TOL = 1e-12


class Infeasible(RuntimeError):
    pass


class ToleranceNotReached(RuntimeError):
    pass


@dataclass
class BestResponse:
    lam: float
    policy: np.ndarray
    occupancy: np.ndarray
    cost: float
    constraint: float
    lagrangian: float

    def line(self, lam: float, threshold: float) -> float:
        return self.cost + lam * (self.constraint - threshold)


@dataclass
class DualSolution:
    lambda_star: float
    optimal_value: float
    constraint_value: float
    threshold: float
    policy: np.ndarray
    occupancy: np.ndarray
    mixture: list = field(default_factory=list)  # [(weight, deterministic policy)]
    iterations: int = 0

    @property
    def weights(self) -> list[float]:
        return [w for w, _ in self.mixture]

    def to_dict(self, include_policy: bool = True) -> dict:
        doc = {
            "lambda_star": self.lambda_star,
            "optimal_value": self.optimal_value,
            "constraint_value": self.constraint_value,
            "threshold": self.threshold,
            "mixture_weights": self.weights,
            "iterations": self.iterations,
        }
        if include_policy:
            doc["policy"] = {"shape": list(self.policy.shape), "data": self.policy.tolist()}
        return doc


def lagrangian_best_response(cmdp: CmdpProblem, lam: float) -> BestResponse:
    """Optimal deterministic policy for ``c + lam * d`` with its exact occupancy."""
    if lam < 0:
        raise ValueError("multiplier must be non-negative")
    cmdp = cmdp.normalized()
    policy, _ = optimal_policy_dp(cmdp.mdp, cmdp.cost + lam * cmdp.constraint)
    q = occupancy_of_policy(cmdp.mdp, policy)
    c = cost_of_occupancy(q, cmdp.cost)
    d = cost_of_occupancy(q, cmdp.constraint)
    return BestResponse(lam, policy, q, c, d, c + lam * (d - cmdp.threshold))


def dual_value(cmdp: CmdpProblem, lam: float) -> float:
    return lagrangian_best_response(cmdp, lam).lagrangian


def _cost_span(cmdp: CmdpProblem) -> float:
    """Upper bound on ``C(q)`` over all occupancies."""
    return float(cmdp.cost.reshape(cmdp.cost.shape[0], -1).max(axis=1).sum())


def _single(br: BestResponse, threshold: float, iterations: int) -> DualSolution:
    return DualSolution(br.lam, br.cost, br.constraint, threshold, br.policy, br.occupancy,
                        [(1.0, br.policy)], iterations)


def solve_dual(cmdp: CmdpProblem, tol: float = 1e-6, max_refine: int = 200) -> DualSolution:
    if tol <= 0:
        raise ValueError("tol must be positive")
    cmdp = cmdp.normalized()
    l = cmdp.threshold
    free = lagrangian_best_response(cmdp, 0.0)
    if free.constraint <= l + FEAS_TOL:
        return _single(free, l, 0)

    _, d_min = optimal_policy_dp(cmdp.mdp, cmdp.constraint)
    if d_min > l + FEAS_TOL:
        raise Infeasible(f"smallest achievable constraint value {d_min:.6g} exceeds {l:.6g}")

    span = _cost_span(cmdp)
    slack = l - d_min
    lam_max = 2.0 * span / slack + 1.0 if slack > tol else 10.0 * span + 1.0
    hi = lagrangian_best_response(cmdp, lam_max)
    doublings = 0
    while hi.constraint > l + FEAS_TOL:
        doublings += 1
        if doublings > 80:
            raise ToleranceNotReached("could not bracket the dual maximiser")
        lam_max *= 2.0
        hi = lagrangian_best_response(cmdp, lam_max)
    lo = free

    iterations = 0
    while hi.lam - lo.lam > tol:
        iterations += 1
        mid = lagrangian_best_response(cmdp, 0.5 * (lo.lam + hi.lam))
        if mid.constraint > l:
            lo = mid
        else:
            hi = mid

    # both bracket policies are optimal at the kink once no third line cuts below
    for _ in range(max_refine):
        iterations += 1
        lam_x = (hi.cost - lo.cost) / (lo.constraint - hi.constraint)
        lam_x = min(max(lam_x, lo.lam), hi.lam)
        probe = lagrangian_best_response(cmdp, lam_x)
        target = lo.line(lam_x, l)
        scale = max(1.0, abs(target), abs(lam_x))
        if probe.lagrangian >= target - 1e-11 * scale:
            break
        if probe.constraint > l:
            lo = probe
        else:
            hi = probe
    else:
        raise ToleranceNotReached("kink refinement did not converge")

    w = (l - hi.constraint) / (lo.constraint - hi.constraint)
    q = w * lo.occupancy + (1.0 - w) * hi.occupancy
    value = w * lo.cost + (1.0 - w) * hi.cost
    constraint = w * lo.constraint + (1.0 - w) * hi.constraint
    if abs(constraint - l) > tol:
        raise ToleranceNotReached(f"mixed constraint residual {constraint - l:.3g}")
    log.debug("dual solve: lambda*=%.6g value=%.6g after %d iterations", lam_x, value, iterations)
    return DualSolution(lam_x, value, constraint, l, policy_from_occupancy(q), q,
                        [(w, lo.policy), (1.0 - w, hi.policy)], iterations)
