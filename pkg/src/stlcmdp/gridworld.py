"""Stochastic 9-action grid robot.

Cells are ``(col, row)`` with ``x = col + 0.5`` and ``y = row + 0.5``; state
index is row-major, ``row * width + col``. North increases the row.

A movement action reaches its intended neighbour with probability ``p``;
the remaining mass is split evenly between the two adjoining directions and
staying put. An intended move that would leave the grid becomes a stay.
Slips that would leave the grid are handled by ``GridSpec.blocking``:

* ``"renormalize"`` (default): the slip mass ``1 - p`` is shared evenly by the
  unblocked adjoining directions and the stay outcome;
* ``"stay"``: each blocked slip collapses onto the stay outcome.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import FiniteHorizonMdp

ACTIONS = ("N", "E", "S", "W", "NE", "NW", "SE", "SW", "rest")
REST = ACTIONS.index("rest")

MOVES = {
    "N": (0, 1), "E": (1, 0), "S": (0, -1), "W": (-1, 0),
    "NE": (1, 1), "NW": (-1, 1), "SE": (1, -1), "SW": (-1, -1),
}

# cardinal -> neighbouring diagonals, diagonal -> its two cardinal components
ADJOINING = {
    "N": ("NE", "NW"), "E": ("NE", "SE"), "S": ("SE", "SW"), "W": ("NW", "SW"),
    "NE": ("N", "E"), "NW": ("N", "W"), "SE": ("S", "E"), "SW": ("S", "W"),
}

DEFAULT_COSTS = {"rest": 0.0, "cardinal": 1.0, "diagonal": 2.0}
BLOCKING_RULES = ("renormalize", "stay")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    start: tuple[int, int] = (0, 0)
    p: float = 0.93
    costs: dict = field(default_factory=lambda: dict(DEFAULT_COSTS))
    blocking: str = "renormalize"

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise SpecError("grid must have at least one cell")
        if not 0 < self.p <= 1:
            raise SpecError(f"success probability must lie in (0, 1], got {self.p}")
        col, row = self.start
        if not (0 <= col < self.width and 0 <= row < self.height):
            raise SpecError(f"start cell {self.start} outside the {self.width}x{self.height} grid")
        missing = {"rest", "cardinal", "diagonal"} - set(self.costs)
        if missing:
            raise SpecError(f"missing action costs: {sorted(missing)}")
        if min(self.costs.values()) < 0:
            raise SpecError("action costs must be non-negative")
        if self.blocking not in BLOCKING_RULES:
            raise SpecError(f"blocking must be one of {BLOCKING_RULES}, got {self.blocking!r}")

    @property
    def num_states(self) -> int:
        return self.width * self.height

    def index(self, col: int, row: int) -> int:
        return row * self.width + col

    def cell(self, state: int) -> tuple[int, int]:
        return state % self.width, state // self.width

    @classmethod
    def from_dict(cls, doc: dict) -> "GridSpec":
        costs = dict(DEFAULT_COSTS)
        costs.update(doc.get("costs", {}))
        return cls(int(doc["width"]), int(doc["height"]), tuple(doc.get("start", (0, 0))),
                   float(doc.get("p", 0.93)), costs, doc.get("blocking", "renormalize"))

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "start": list(self.start),
                "p": self.p, "costs": dict(self.costs), "blocking": self.blocking}


def _target(spec: GridSpec, col: int, row: int, move: str) -> int:
    dc, dr = MOVES[move]
    c, r = col + dc, row + dr
    if 0 <= c < spec.width and 0 <= r < spec.height:
        return spec.index(c, r)
    return spec.index(col, row)


def action_costs(spec: GridSpec) -> np.ndarray:
    """Per-action cost vector in ``ACTIONS`` order."""
    out = np.empty(len(ACTIONS))
    for a, name in enumerate(ACTIONS):
        kind = "rest" if name == "rest" else ("diagonal" if len(name) == 2 else "cardinal")
        out[a] = spec.costs[kind]
    return out


def _movement_outcomes(spec: GridSpec, s: int, name: str) -> list[tuple[int, float]]:
    col, row = spec.cell(s)
    slips = [_target(spec, col, row, d) for d in ADJOINING[name]]
    outcomes = [(_target(spec, col, row, name), spec.p)]
    if spec.blocking == "stay":
        share = (1.0 - spec.p) / 3.0
        return outcomes + [(t, share) for t in slips] + [(s, share)]
    open_slips = [t for t in slips if t != s]
    share = (1.0 - spec.p) / (len(open_slips) + 1)
    return outcomes + [(t, share) for t in open_slips] + [(s, share)]


def build_grid_mdp(spec: GridSpec, horizon: int) -> FiniteHorizonMdp:
    """Stationary grid MDP; successor order is intended, adjoining 1, adjoining 2, stay."""
    n, k = spec.num_states, 4
    succ = np.zeros((n, len(ACTIONS), k), dtype=np.int64)
    prob = np.zeros((n, len(ACTIONS), k))
    for s in range(n):
        for a, name in enumerate(ACTIONS):
            if name == "rest":
                outcomes = [(s, 1.0)]
            else:
                outcomes = _movement_outcomes(spec, s, name)
            merged: dict[int, float] = {}
            for target, mass in outcomes:
                merged[target] = merged.get(target, 0.0) + mass
            for j, (target, mass) in enumerate(merged.items()):
                succ[s, a, j] = target
                prob[s, a, j] = mass
            # padding entries repeat the first successor with zero mass
            succ[s, a, len(merged):] = succ[s, a, 0]
            prob[s, a] /= prob[s, a].sum()
    embedding = np.array([[c + 0.5, r + 0.5] for c, r in map(spec.cell, range(n))])
    return FiniteHorizonMdp(n, len(ACTIONS), horizon, spec.index(*spec.start), succ, prob,
                            embedding)


def grid_cost_table(spec: GridSpec, horizon: int) -> np.ndarray:
    """Stage-independent ``(H+1, S, A)`` action-cost table."""
    per_action = action_costs(spec)
    return np.broadcast_to(per_action, (horizon + 1, spec.num_states, len(ACTIONS))).copy()


def sample_step(mdp: FiniteHorizonMdp, state: int, action: int, stage: int, rng) -> int:
    """Draw ``s' ~ p_stage(.|state, action)`` by inverse CDF over the successor list.

    ``rng`` is a ``numpy.random.Generator`` or a float in ``[0, 1)`` used as
    the uniform draw directly.
    """
    if not (0 <= state < mdp.num_states and 0 <= action < mdp.num_actions
            and 0 <= stage <= mdp.horizon):
        raise IndexError(f"(state={state}, action={action}, stage={stage}) out of range")
    u = float(rng) if isinstance(rng, (float, int)) else rng.random()
    succ, prob = mdp.successors(stage)
    cdf = np.cumsum(prob[state, action])
    j = int(np.searchsorted(cdf, u, side="right"))
    j = min(j, len(cdf) - 1)
    while prob[state, action, j] == 0 and j > 0:
        j -= 1
    return int(succ[state, action, j])
