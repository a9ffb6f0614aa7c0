"""Deterministic random streams.

All randomness comes from numpy's Philox-4x64 counter-based bit generator.
A stream is keyed by ``(seed, purpose)`` through ``SeedSequence`` so that
init, augmentation, shuffling and data synthesis never share state and a
change in one consumer cannot shift the numbers another one sees.
"""

from __future__ import annotations

import json

import numpy as np

PURPOSES = {
    "init": 0,
    "augment": 1,
    "shuffle": 2,
    "synth": 3,
    "split": 4,
    "distort": 5,
}


def stream(seed: int, purpose: str, *extra: int) -> np.random.Generator:
    """Return an independent generator for ``purpose`` under ``seed``.

    ``extra`` integers (e.g. a sample index) derive further sub-streams.
    """
    if purpose not in PURPOSES:
        raise KeyError(f"unknown rng purpose {purpose!r}; expected one of {sorted(PURPOSES)}")
    ss = np.random.SeedSequence([int(seed), PURPOSES[purpose], *map(int, extra)])
    return np.random.Generator(np.random.Philox(ss))


def state_bytes(gen: np.random.Generator) -> bytes:
    return json.dumps(gen.bit_generator.state, sort_keys=True, default=_jsonable).encode()


def restore(blob: bytes) -> np.random.Generator:
    state = json.loads(blob.decode())
    for key in ("counter", "key", "buffer"):
        if key in state.get("state", {}):
            state["state"][key] = np.asarray(state["state"][key], dtype=np.uint64)
        if key in state:
            state[key] = np.asarray(state[key], dtype=np.uint64)
    bitgen = np.random.Philox()
    bitgen.state = state
    return np.random.Generator(bitgen)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
