"""Lorentz boosts along a coordinate axis and planar rotations.

Four-vectors are ordered ``(t, x, y, z)`` and the metric signature is
``(+, -, -, -)``. A boost with speed ``beta`` along an axis maps

    t' = gamma * (t - beta * x_axis)
    x_axis' = gamma * (x_axis - beta * t)

i.e. it moves the event into a frame travelling at ``+beta`` along that axis.
The off-diagonal entries are therefore ``-gamma * beta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from equibench.errors import DimensionError, DomainError

MINKOWSKI = np.diag([1.0, -1.0, -1.0, -1.0])
_AXES = {"x": 1, "y": 2, "z": 3}


@dataclass(frozen=True)
class LorentzBoost:
    beta: float
    axis: str = "z"

    def __post_init__(self):
        if not abs(self.beta) < 1.0:
            raise DomainError(f"boost speed must satisfy |beta| < 1, got {self.beta}")
        if self.axis not in _AXES:
            raise DomainError(f"boost axis must be one of x, y, z, got {self.axis!r}")

    @property
    def gamma(self) -> float:
        return 1.0 / math.sqrt(1.0 - self.beta * self.beta)

    @property
    def dim(self) -> int:
        return 4

    @property
    def parameter(self) -> float:
        return self.beta

    def matrix(self) -> np.ndarray:
        return boost_matrix(self)

    def inverse(self) -> "LorentzBoost":
        return replace(self, beta=-self.beta)


@dataclass(frozen=True)
class Rotation2D:
    theta: float

    @property
    def dim(self) -> int:
        return 2

    @property
    def parameter(self) -> float:
        return self.theta

    def matrix(self) -> np.ndarray:
        return rotation_matrix(self)

    def inverse(self) -> "Rotation2D":
        return Rotation2D(-self.theta)


GroupElement = Union[LorentzBoost, Rotation2D]


def minkowski_dot(u, v) -> np.ndarray:
    """u0 v0 - u1 v1 - u2 v2 - u3 v3 over the last axis."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape[-1] != 4 or v.shape[-1] != 4:
        raise DimensionError(f"minkowski_dot needs 4-vectors, got {u.shape} and {v.shape}")
    return u[..., 0] * v[..., 0] - u[..., 1] * v[..., 1] - u[..., 2] * v[..., 2] - u[..., 3] * v[..., 3]


def boost_matrix(b: LorentzBoost) -> np.ndarray:
    k = _AXES[b.axis]
    g = b.gamma
    m = np.eye(4)
    m[0, 0] = m[k, k] = g
    m[0, k] = m[k, 0] = -g * b.beta
    return m


def rotation_matrix(r: Rotation2D) -> np.ndarray:
    c, s = math.cos(r.theta), math.sin(r.theta)
    return np.array([[c, -s], [s, c]])


def act(g: GroupElement, positions: np.ndarray) -> np.ndarray:
    """Apply ``g`` to an N x d array of row vectors.

    Rotations act on the first two (transverse) coordinates and leave any
    further coordinate (e.g. z of 3-D hits) untouched.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2:
        raise DimensionError(f"positions must be N x d, got shape {positions.shape}")
    d = positions.shape[1]
    if isinstance(g, LorentzBoost):
        if d != 4:
            raise DomainError(f"boosts act on 4-vectors, event has dimension {d}")
        return positions @ g.matrix().T
    if d not in (2, 3):
        raise DomainError(f"planar rotations act on 2- or 3-vectors, event has dimension {d}")
    out = positions.copy()
    out[:, :2] = positions[:, :2] @ g.matrix().T
    return out


def apply_to_event(g: GroupElement, event):
    """A copy of ``event`` with every node position transformed by ``g``."""
    return event.with_positions(act(g, event.positions))


def identity(family: str) -> GroupElement:
    return LorentzBoost(0.0) if family == "boost" else Rotation2D(0.0)


def sample_group_element(
    rng: np.random.Generator,
    family: str,
    range: Sequence[float] = (0.0, 0.0),
    values: Optional[Sequence[float]] = None,
    axis: str = "z",
) -> GroupElement:
    """Uniform draw of beta or theta from ``range`` (or from the discrete ``values``)."""
    if family not in ("boost", "rotation"):
        raise DomainError(f"unknown group family {family!r}")
    if values is not None:
        if len(values) == 0:
            raise DomainError("empty value grid")
        p = float(values[rng.integers(len(values))])
        lo = hi = p
    else:
        lo, hi = float(range[0]), float(range[1])
        if hi < lo:
            raise DomainError(f"invalid range [{lo}, {hi}]")
        p = lo if lo == hi else float(rng.uniform(lo, hi))
    if family == "boost":
        if max(abs(lo), abs(hi)) >= 1.0:
            raise DomainError(f"boost range must lie inside (-1, 1), got [{lo}, {hi}]")
        return LorentzBoost(p, axis)
    return Rotation2D(p)


def family_of(g: GroupElement) -> str:
    return "boost" if isinstance(g, LorentzBoost) else "rotation"
