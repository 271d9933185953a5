"""Drift/noise exponent pairs shared by the generator calculus and the integrator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GeneratorPreset:
    """Per-mode drift rate ``|k|^a`` and noise amplitude ``|k|^b``.

    ``2b - a = -2`` keeps ``E|psi_k|^2 = |k|^-2`` stationary.
    """

    a: float
    b: float
    name: str = "custom"

    def __post_init__(self):
        if not np.isclose(2 * self.b - self.a, -2.0, rtol=0, atol=1e-12):
            raise ValueError(f"preset violates 2b - a = -2: a={self.a}, b={self.b}")

    @classmethod
    def spde(cls, delta: float) -> "GeneratorPreset":
        return cls(2.0 * delta, delta - 1.0, "spde")

    @classmethod
    def generator(cls, delta: float) -> "GeneratorPreset":
        return cls(2.0 + 2.0 * delta, delta, "generator")

    @classmethod
    def named(cls, name: str, delta: float) -> "GeneratorPreset":
        key = name.strip().lower()
        if key == "spde":
            return cls.spde(delta)
        if key == "generator":
            return cls.generator(delta)
        raise ValueError(f"unknown preset {name!r} (expected 'spde' or 'generator')")

    def rates(self, norms):
        """Drift rates ``|k|^a`` for an array of ``|k|``."""
        return np.asarray(norms, dtype=np.float64) ** self.a

    def diffusion(self, norms):
        """Second-order weights ``|k|^{2b}``."""
        return np.asarray(norms, dtype=np.float64) ** (2.0 * self.b)
