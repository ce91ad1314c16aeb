"""Model-free primal-dual CMDP learner.

An exponentiated-gradient player keeps ``lam = (lam_1, B - lam_1)`` on the
simplex of radius ``B``; the other player answers each ``lam_t`` with a
Q-learning best response on ``c + lam_1 d`` and reports its Monte-Carlo
occupancy estimate. The averaged occupancy yields the returned policy.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .mdp import cost_of_occupancy, policy_from_occupancy
from .simulator import BEST_RESPONSE, OCCUPANCY, Simulator, rollout, stream, stream_seed

log = logging.getLogger(__name__)


class NumericOverflow(ArithmeticError):
    pass


@dataclass
class ObMfcHyperparams:
    budget: float = 20.0          # B
    eta: float = 0.1              # EG step
    rollouts: int = 5000          # N
    iterations: int = 200         # T
    episodes: int = 20000         # K, Q-learning episodes per best response
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.8     # share of episodes over which eps is annealed
    step_h0: float = 10.0         # alpha_k = h0 / (h0 + visits)
    seed: int = 0

    def __post_init__(self):
        if self.budget < 0 or self.eta < 0:
            raise ValueError("budget and eta must be non-negative")
        for name in ("rollouts", "iterations", "episodes"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not (0 <= self.eps_end <= self.eps_start <= 1):
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if not 0 < self.eps_fraction <= 1:
            raise ValueError("eps_fraction must lie in (0, 1]")
        if self.step_h0 <= 0:
            raise ValueError("step_h0 must be positive")

    @classmethod
    def defaults(cls, cost, threshold_slack=None, iterations=200, **overrides):
        """Budget ``2 C̄ (H+1) / slack`` (``20 C̄ (H+1)`` without a slack) and ``eta = B sqrt(2 ln 2 / T)``."""
        cost = np.asarray(cost)
        c_bar = float(cost.max())
        stages = cost.shape[0]
        if threshold_slack:
            budget = 2.0 * c_bar * stages / threshold_slack
        else:
            budget = 20.0 * c_bar * stages
        eta = budget * math.sqrt(2.0 * math.log(2.0) / iterations)
        doc = dict(budget=budget, eta=eta, iterations=iterations)
        doc.update(overrides)
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LagrangeState:
    lam: np.ndarray
    budget: float

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        if self.lam.shape != (2,) or np.any(self.lam < 0):
            raise ValueError("lambda must be a non-negative 2-vector")
        if abs(self.lam.sum() - self.budget) > 1e-9 * max(1.0, self.budget):
            raise ValueError(f"lambda sums to {self.lam.sum()}, expected {self.budget}")

    @classmethod
    def initial(cls, budget: float) -> "LagrangeState":
        return cls(np.array([budget / 2.0, budget / 2.0]), budget)


def eg_update(state: LagrangeState, beta, eta: float) -> LagrangeState:
    """``lam_i <- B lam_i e^{eta beta_i} / sum_j lam_j e^{eta beta_j}``."""
    beta = np.asarray(beta, dtype=float)
    if not np.all(np.isfinite(beta)):
        raise NumericOverflow("non-finite gain")
    if state.budget == 0:
        return LagrangeState(np.zeros(2), 0.0)
    # log-space with max-subtraction over the support; zero weights stay zero
    with np.errstate(divide="ignore"):
        logw = np.log(state.lam) + eta * beta
    logw -= logw[np.isfinite(logw)].max()
    weights = np.exp(logw)
    total = weights.sum()
    if not np.isfinite(total) or total <= 0:
        raise NumericOverflow("exponentiated weights vanished")
    lam = state.budget * weights / total
    # keep the simplex exact against rounding
    lam[1] = state.budget - lam[0]
    return LagrangeState(np.maximum(lam, 0.0), state.budget)


@numba.njit(cache=True)
def _q_learning(succ, cdf, cost, s0, episodes, eps_start, eps_end, eps_steps, h0, seed):
    np.random.seed(seed)
    stages, S, A = cost.shape
    H = stages - 1
    K = succ.shape[-1]
    stationary = succ.shape[0] == 1
    Q = np.zeros((stages, S, A))
    visits = np.zeros((stages, S, A))
    for k in range(episodes):
        if k < eps_steps:
            eps = eps_start + (eps_end - eps_start) * k / eps_steps
        else:
            eps = eps_end
        s = s0
        for h in range(stages):
            if np.random.random() < eps:
                a = np.random.randint(A)
            else:
                a = 0
                for b in range(1, A):
                    if Q[h, s, b] < Q[h, s, a]:
                        a = b
            if h < H:
                g = 0 if stationary else h
                u = np.random.random()
                nxt = succ[g, s, a, 0]
                for j in range(K):
                    if cdf[g, s, a, j] >= 0.0 and u < cdf[g, s, a, j]:
                        nxt = succ[g, s, a, j]
                        break
                best = Q[h + 1, nxt, 0]
                for b in range(1, A):
                    if Q[h + 1, nxt, b] < best:
                        best = Q[h + 1, nxt, b]
                target = cost[h, s, a] + best
            else:
                nxt = s
                target = cost[h, s, a]
            visits[h, s, a] += 1.0
            alpha = h0 / (h0 + visits[h, s, a])
            Q[h, s, a] += alpha * (target - Q[h, s, a])
            s = nxt
    return Q


def greedy_policy(Q: np.ndarray) -> np.ndarray:
    """One-hot argmin policy, ties to the lowest action index."""
    policy = np.zeros_like(Q)
    np.put_along_axis(policy, Q.argmin(axis=-1)[..., None], 1.0, axis=-1)
    return policy


def q_learning_best_response(sim: Simulator, scalar_cost, hyper: ObMfcHyperparams,
                             seed: int | None = None, return_q: bool = False):
    """Greedy policy of stage-indexed tabular Q-learning on ``scalar_cost``."""
    cost = np.ascontiguousarray(np.broadcast_to(
        np.asarray(scalar_cost, dtype=float),
        (sim.horizon + 1, sim.num_states, sim.num_actions)))
    succ, cdf = sim.sampler_tables()
    eps_steps = max(1, int(hyper.eps_fraction * hyper.episodes))
    seed = stream_seed(hyper.seed, BEST_RESPONSE) if seed is None else seed
    Q = _q_learning(succ, cdf, cost, sim.initial_state, int(hyper.episodes),
                    float(hyper.eps_start), float(hyper.eps_end), eps_steps,
                    float(hyper.step_h0), int(seed) % (2 ** 32))
    policy = greedy_policy(Q)
    return (policy, Q) if return_q else policy


def estimate_occupancy(sim: Simulator, policy, n: int, seed) -> np.ndarray:
    """Visit frequencies of ``n`` rollouts; each stage sums to exactly one."""
    if n < 1:
        raise ValueError("need at least one rollout")
    rng = seed if isinstance(seed, np.random.Generator) else stream(int(seed), OCCUPANCY)
    states, actions = rollout(sim, np.asarray(policy, dtype=float), n, rng)
    stages, S, A = sim.horizon + 1, sim.num_states, sim.num_actions
    q = np.empty((stages, S, A))
    for h in range(stages):
        q[h] = np.bincount(states[:, h] * A + actions[:, h], minlength=S * A).reshape(S, A)
    return q / n


@dataclass
class IterationRecord:
    t: int
    lam1: float
    cost: float
    constraint: float
    lagrangian: float
    best_response_value: float
    regret: float


@dataclass
class ObMfcResult:
    policy: np.ndarray
    occupancy: np.ndarray
    diagnostics: list = field(default_factory=list)
    regret: float = 0.0
    lambda_bar: float = 0.0
    runtime: float = 0.0

    @property
    def cost(self) -> float:
        return self.diagnostics_mean("cost")

    @property
    def constraint(self) -> float:
        return self.diagnostics_mean("constraint")

    def diagnostics_mean(self, name: str) -> float:
        return float(np.mean([getattr(r, name) for r in self.diagnostics]))


def run_ob_mfc(sim: Simulator, threshold: float, hyper: ObMfcHyperparams,
               best_response=None, estimator=None, progress=None) -> ObMfcResult:
    """Repeated EG vs best-response play for ``hyper.iterations`` rounds.

    ``best_response(scalar_cost, t)`` and ``estimator(policy, t)`` default to
    Q-learning and Monte-Carlo estimation; tests substitute exact oracles.
    """
    if sim.constraint is None:
        raise ValueError("simulator carries no constraint cost")
    c, d = sim.cost, sim.constraint
    if best_response is None:
        def best_response(scalar_cost, t):
            return q_learning_best_response(sim, scalar_cost, hyper,
                                            seed=stream_seed(hyper.seed, BEST_RESPONSE, t))
    if estimator is None:
        def estimator(policy, t):
            return estimate_occupancy(sim, policy, hyper.rollouts,
                                      stream(hyper.seed, OCCUPANCY, t))

    clip = float(np.abs(d).max(initial=0.0)) * c.shape[0] + abs(threshold)
    state = LagrangeState.initial(hyper.budget)
    q_sum = np.zeros_like(c)
    sum_cost = sum_gain = sum_played = 0.0
    records, lam_sum = [], 0.0
    start = time.perf_counter()
    for t in range(1, int(hyper.iterations) + 1):
        lam1 = float(state.lam[0])
        scalar = c + lam1 * d
        policy = best_response(scalar, t)
        q_hat = estimator(policy, t)
        C, D = cost_of_occupancy(q_hat, c), cost_of_occupancy(q_hat, d)
        L = C + lam1 * (D - threshold)
        q_sum += q_hat
        lam_sum += lam1
        sum_cost += C
        sum_gain += D - threshold
        sum_played += L
        # best fixed multiplier in hindsight is a simplex vertex
        regret = max(sum_cost, sum_cost + hyper.budget * sum_gain) - sum_played
        records.append(IterationRecord(t, lam1, C, D, L, cost_of_occupancy(q_hat, scalar), regret))
        beta = np.clip([D - threshold, 0.0], -clip, clip)
        state = eg_update(state, beta, hyper.eta)
        if progress is not None:
            progress(records[-1])
        log.debug("t=%d lam1=%.4f C=%.4f D=%.4f", t, lam1, C, D)
    T = int(hyper.iterations)
    q_bar = q_sum / T
    return ObMfcResult(policy_from_occupancy(q_bar), q_bar, records, records[-1].regret,
                       lam_sum / T, time.perf_counter() - start)
