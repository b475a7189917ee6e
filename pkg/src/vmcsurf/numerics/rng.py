"""Splittable random streams with reproducible child spawning."""

from __future__ import annotations

import numpy as np


class Rng:
    """A random stream that can be split into independent child streams.

    Wraps ``numpy.random.Generator`` seeded through a ``SeedSequence`` so a
    fixed seed yields a bit-identical sequence, and ``split`` produces
    deterministic, statistically independent children.
    """

    def __init__(self, seed, _state=None):
        if isinstance(seed, np.random.SeedSequence):
            self._ss = seed
        else:
            self._ss = np.random.SeedSequence(int(seed))
        bit = np.random.PCG64(self._ss)
        if _state is not None:
            bit.state = _state
        self.gen = np.random.Generator(bit)

    @property
    def seed_entropy(self):
        return self._ss.entropy

    def split(self, n: int):
        """Spawn ``n`` independent child streams (deterministic)."""
        return [Rng(child) for child in self._ss.spawn(n)]

    def state_dict(self) -> dict:
        return {
            "entropy": str(self._ss.entropy),
            "spawn_key": list(self._ss.spawn_key),
            "n_children_spawned": self._ss.n_children_spawned,
            "bit_state": _jsonable(self.gen.bit_generator.state),
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "Rng":
        ss = np.random.SeedSequence(
            entropy=int(d["entropy"]),
            spawn_key=tuple(int(k) for k in d["spawn_key"]),
            n_children_spawned=int(d["n_children_spawned"]),
        )
        return cls(ss, _state=_unjsonable(d["bit_state"]))


def _jsonable(state):
    return {
        "bit_generator": state["bit_generator"],
        "state": {k: str(v) for k, v in state["state"].items()},
        "has_uint32": state["has_uint32"],
        "uinteger": state["uinteger"],
    }


def _unjsonable(d):
    return {
        "bit_generator": d["bit_generator"],
        "state": {k: int(v) for k, v in d["state"].items()},
        "has_uint32": d["has_uint32"],
        "uinteger": d["uinteger"],
    }
