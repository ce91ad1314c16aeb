"""JSON documents for MDPs, stage tables and policies.

Every array is stored as ``{"shape": [...], "data": [flat values]}`` in C
order. Floats are written with ``repr`` precision by the json module, so a
round trip is exact.
"""
from __future__ import annotations

import json

import numpy as np

from .mdp import FiniteHorizonMdp


def array_to_json(array) -> dict:
    array = np.asarray(array)
    return {"shape": list(array.shape), "data": array.ravel().tolist()}


def array_from_json(doc: dict, dtype=float) -> np.ndarray:
    data = np.asarray(doc["data"], dtype=dtype)
    shape = tuple(doc["shape"])
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{data.size} values cannot fill shape {shape}")
    return data.reshape(shape)


def mdp_to_json(mdp: FiniteHorizonMdp) -> dict:
    return {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "horizon": mdp.horizon,
        "initial_state": mdp.initial_state,
        "successors": array_to_json(mdp.succ),
        "probabilities": array_to_json(mdp.prob),
        "embedding": array_to_json(mdp.embedding),
    }


def mdp_from_json(doc: dict) -> FiniteHorizonMdp:
    return FiniteHorizonMdp(doc["num_states"], doc["num_actions"], doc["horizon"],
                            doc["initial_state"], array_from_json(doc["successors"], np.int64),
                            array_from_json(doc["probabilities"]),
                            array_from_json(doc["embedding"]))


def augmented_to_json(augmented) -> dict:
    """Product MDP document plus the index codec ``[s, f_1..f_n, fin]`` (fin null = undefined)."""
    doc = mdp_to_json(augmented.product)
    doc["dims"] = list(augmented.dims)
    doc["codec"] = augmented.codec()
    return doc


def policy_to_json(policy, metadata: dict | None = None) -> dict:
    doc = {"policy": array_to_json(np.asarray(policy, dtype=float))}
    if metadata:
        doc["metadata"] = metadata
    return doc


def policy_from_json(doc: dict) -> np.ndarray:
    policy = array_from_json(doc["policy"])
    if policy.ndim != 3:
        raise ValueError("policy table must have shape (H+1, S, A)")
    return policy


def dump(doc, path) -> None:
    """Deterministic JSON file (sorted keys, fixed indentation, trailing newline)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
