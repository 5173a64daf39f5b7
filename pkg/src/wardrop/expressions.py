"""Closed-form scalar fields on the plane.

Every spatially varying quantity in the solver (congestion weights,
volume coefficients, source/sink densities) is either a constant or a
constant plus Gaussian bumps, so fields are kept declarative: they can
be evaluated vectorized, compared for equality, and round-tripped
through configuration files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class GaussBump:
    """amplitude * exp(-width * |x - center|^2)"""

    amplitude: float
    width: float
    center: tuple[float, float]


@dataclass(frozen=True)
class ScalarField:
    """base + sum of Gaussian bumps, evaluated pointwise on the plane."""

    base: float = 0.0
    bumps: tuple[GaussBump, ...] = ()

    def __call__(self, x) -> np.ndarray:
        """Evaluate at points x with shape (..., 2); returns shape (...)."""
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape[:-1], float(self.base))
        for b in self.bumps:
            dx = x[..., 0] - b.center[0]
            dy = x[..., 1] - b.center[1]
            out = out + b.amplitude * np.exp(-b.width * (dx * dx + dy * dy))
        return out

    @property
    def is_constant(self) -> bool:
        return not self.bumps

    @staticmethod
    def constant(value: float) -> "ScalarField":
        return ScalarField(base=float(value))

    def to_dict(self):
        if self.is_constant:
            return {"const": self.base}
        return {
            "base": self.base,
            "bumps": [
                {"amplitude": b.amplitude, "width": b.width, "center": list(b.center)}
                for b in self.bumps
            ],
        }

    @staticmethod
    def from_dict(spec) -> "ScalarField":
        """Parse a field descriptor: a bare number, {"const": v} or
        {"base": v, "bumps": [{"amplitude", "width", "center"}, ...]}."""
        if isinstance(spec, (int, float)):
            return ScalarField.constant(spec)
        if isinstance(spec, ScalarField):
            return spec
        if not isinstance(spec, dict):
            raise ConfigError(f"cannot parse scalar field from {spec!r}")
        if set(spec) == {"const"}:
            return ScalarField.constant(spec["const"])
        unknown = set(spec) - {"base", "bumps"}
        if unknown:
            raise ConfigError(f"unknown scalar-field keys {sorted(unknown)}")
        bumps = []
        for b in spec.get("bumps", []):
            unknown = set(b) - {"amplitude", "width", "center"}
            if unknown:
                raise ConfigError(f"unknown bump keys {sorted(unknown)}")
            bumps.append(
                GaussBump(
                    amplitude=float(b["amplitude"]),
                    width=float(b["width"]),
                    center=(float(b["center"][0]), float(b["center"][1])),
                )
            )
        return ScalarField(base=float(spec.get("base", 0.0)), bumps=tuple(bumps))
