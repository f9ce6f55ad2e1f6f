"""Known reference inputs ``U(k)``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


def reactor_input(k: int) -> np.ndarray:
    """Reference of the stirred-reactor study, ``k >= 1``."""
    return np.array([50.0 * np.cos(0.5 * k) ** 2, 50.0 * np.tanh(3.0 * k), -70.0 * np.sin(0.1 * k)])


@dataclass(frozen=True)
class InputSignal:
    """Deterministic input sequence.

    ``kind`` is one of ``"reactor"``, ``"zero"``, ``"constant"`` (``value``)
    or ``"table"`` (``steps``: list of ``{"from": k, "value": [...]}``
    giving a piecewise-constant signal that holds each value from its
    starting index on; the first step must start at 1).
    """

    kind: str = "zero"
    n_u: int = 1
    value: tuple = ()
    steps: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in ("reactor", "zero", "constant", "table"):
            raise ValueError(f"unknown input signal kind {self.kind!r}")
        if self.kind == "reactor" and self.n_u != 3:
            raise ValueError("the reactor signal has three channels")
        if self.kind == "constant" and len(self.value) != self.n_u:
            raise ValueError(f"constant input needs {self.n_u} values")
        if self.kind == "table":
            if not self.steps or self.steps[0][0] != 1:
                raise ValueError("input table must start at k = 1")
            starts = [s[0] for s in self.steps]
            if any(b <= a for a, b in zip(starts, starts[1:])):
                raise ValueError("input table start indices must increase")
            if any(len(s[1]) != self.n_u for s in self.steps):
                raise ValueError(f"every table value needs {self.n_u} entries")

    def __call__(self, k: int) -> np.ndarray:
        if k < 1:
            raise ValueError(f"inputs are indexed from 1, got {k}")
        if self.kind == "reactor":
            return reactor_input(k)
        if self.kind == "zero":
            return np.zeros(self.n_u)
        if self.kind == "constant":
            return np.array(self.value, dtype=float)
        current = self.steps[0][1]
        for start, value in self.steps:
            if start > k:
                break
            current = value
        return np.array(current, dtype=float)

    def sequence(self, k_first: int, k_last: int) -> np.ndarray:
        """Rows ``U(k_first), ..., U(k_last)``; empty when ``k_last < k_first``."""
        if k_last < k_first:
            return np.zeros((0, self.n_u))
        return np.array([self(k) for k in range(k_first, k_last + 1)])

    @classmethod
    def from_dict(cls, data: Mapping, n_u: int) -> "InputSignal":
        kind = data.get("kind", "zero")
        steps = tuple((int(s["from"]), tuple(float(x) for x in s["value"])) for s in data.get("steps", ()))
        return cls(kind=kind, n_u=n_u, value=tuple(float(x) for x in data.get("value", ())), steps=steps)

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind == "constant":
            out["value"] = list(self.value)
        if self.kind == "table":
            out["steps"] = [{"from": start, "value": list(value)} for start, value in self.steps]
        return out
