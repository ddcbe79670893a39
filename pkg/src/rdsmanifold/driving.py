"""Driving systems: the base flow or map that indexes the fibers.

Base points are plain 1-D float arrays.  Every driving system is an
immutable object exposing ``evolve(t, omega)``; nothing here knows about
measures.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class DomainError(ValueError):
    """A time or base point outside the domain of a driving system."""


class TimeDomain(enum.Enum):
    DISCRETE = "discrete"
    CONTINUOUS = "continuous"


def as_point(omega, dim: int | None = None) -> np.ndarray:
    p = np.atleast_1d(np.asarray(omega, dtype=float)).copy()
    if p.ndim != 1:
        raise DomainError(f"base point must be a vector, got shape {p.shape}")
    if dim is not None and p.shape[0] != dim:
        raise DomainError(f"base point has dimension {p.shape[0]}, expected {dim}")
    p.setflags(write=False)
    return p


class DrivingSystem:
    """Common interface of all driving systems.

    Subclasses implement ``_evolve``; ``evolve`` validates the time against
    the time domain and the point against the base dimension, and returns
    the point itself for ``t == 0``.
    """

    time_domain: TimeDomain
    dim: int
    kind: str = "abstract"

    def check_time(self, t) -> float:
        t = float(t)
        if not math.isfinite(t):
            raise DomainError(f"time must be finite, got {t}")
        if self.time_domain is TimeDomain.DISCRETE and t != round(t):
            raise DomainError(f"discrete driving system {self.kind!r} got non-integer time {t}")
        return t

    def evolve(self, t, omega) -> np.ndarray:
        t = self.check_time(t)
        p = as_point(omega, self.dim)
        if t == 0:
            return p
        return as_point(self._evolve(t, p), self.dim)

    def _evolve(self, t: float, omega: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def distance(self, a, b) -> float:
        """Max-norm distance between two base points."""
        return float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float)), initial=0.0))

    def describe(self) -> dict:
        return {"kind": self.kind, "time_domain": self.time_domain.value, "dim": self.dim}


@dataclass(frozen=True, eq=False)
class CircleRotation(DrivingSystem):
    """Rotation ``omega -> omega + t * angle (mod 1)`` on the unit circle."""

    angle: float
    time_domain: TimeDomain = TimeDomain.DISCRETE
    dim: int = field(default=1, init=False)
    kind: str = field(default="circle-rotation", init=False)

    def evolve(self, t, omega) -> np.ndarray:
        # stored coordinate always lives in [0, 1)
        p = as_point(np.mod(as_point(omega, 1), 1.0), 1)
        return super().evolve(t, p)

    def _evolve(self, t, omega):
        return np.mod(omega + t * self.angle, 1.0)

    def distance(self, a, b) -> float:
        d = abs(float(np.asarray(a, float)[0]) - float(np.asarray(b, float)[0])) % 1.0
        return min(d, 1.0 - d)

    def describe(self) -> dict:
        return {**super().describe(), "angle": self.angle}


@dataclass(frozen=True, eq=False)
class PlanarShiftFlow(DrivingSystem):
    """Horizontal translation ``(x, y) -> (x + t, y)`` of the plane."""

    time_domain: TimeDomain = TimeDomain.CONTINUOUS
    dim: int = field(default=2, init=False)
    kind: str = field(default="planar-shift", init=False)

    def _evolve(self, t, omega):
        return np.array([omega[0] + t, omega[1]])


@dataclass(frozen=True, eq=False)
class IntegerShiftIndexed(DrivingSystem):
    """Shift on the integers, ``k -> k + n``; the base point is an index."""

    time_domain: TimeDomain = field(default=TimeDomain.DISCRETE, init=False)
    dim: int = field(default=1, init=False)
    kind: str = field(default="integer-shift", init=False)

    def evolve(self, t, omega) -> np.ndarray:
        p = as_point(omega, 1)
        if p[0] != round(p[0]):
            raise DomainError(f"integer shift needs an integer index, got {p[0]}")
        return super().evolve(t, p)

    def _evolve(self, t, omega):
        return omega + t


def _key(t: float, omega) -> tuple:
    return (float(t),) + tuple(float(c) for c in np.asarray(omega, float).ravel())


@dataclass(frozen=True, eq=False)
class UserTable(DrivingSystem):
    """A driving system given only by tabulated evaluations.

    ``entries`` maps ``(t, *omega)`` keys to the tabulated value of
    ``theta^t omega``.  Queries that are not tabulated raise
    :class:`DomainError`; no interpolation is ever performed.
    """

    entries: dict = field(repr=False)
    dim: int = 1
    time_domain: TimeDomain = TimeDomain.DISCRETE
    kind: str = field(default="user-table", init=False)

    @classmethod
    def from_system(cls, ds: DrivingSystem, points: Iterable, times: Sequence) -> "UserTable":
        """Tabulate ``ds`` on the closure of ``points`` under ``times``.

        Every point reached as ``theta^s omega`` is itself tabulated for all
        ``times`` so that compositions can be looked up.
        """
        times = [float(t) for t in times]
        if 0.0 not in times:
            times = [0.0] + times
        entries = {}
        for omega in points:
            reach = [ds.evolve(s, omega) for s in times]
            for base in [as_point(omega, ds.dim)] + reach:
                for t in times:
                    entries[_key(t, base)] = tuple(ds.evolve(t, base))
        return cls(entries=entries, dim=ds.dim, time_domain=ds.time_domain)

    def corrupted(self, t, omega, value) -> "UserTable":
        """Copy of the table with one entry replaced (fault injection)."""
        entries = dict(self.entries)
        k = _key(t, omega)
        if k not in entries:
            raise DomainError(f"no tabulated entry for t={t}, omega={tuple(omega)}")
        entries[k] = tuple(float(v) for v in np.atleast_1d(value))
        return UserTable(entries=entries, dim=self.dim, time_domain=self.time_domain)

    def _evolve(self, t, omega):
        try:
            return np.array(self.entries[_key(t, omega)])
        except KeyError:
            raise DomainError(f"time {t} from {tuple(omega)} is not tabulated") from None


def orbit(ds: DrivingSystem, omega, times: Sequence) -> list[np.ndarray]:
    times = list(times)
    if any(b < a for a, b in zip(times, times[1:])):
        raise DomainError("orbit times must be sorted ascending")
    return [ds.evolve(t, omega) for t in times]


@dataclass
class FlowReport:
    passed: bool
    tol: float
    max_composition_residual: float
    max_identity_residual: float
    worst: dict | None
    n_checks: int
    sample_times: list
    sample_points: list

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_flow_property(ds: DrivingSystem, sample_times, sample_points, tol: float) -> FlowReport:
    """Sampled check of ``theta^0 = Id`` and ``theta^{t+s} = theta^t theta^s``.

    A lookup failure inside a composition (possible for tabulated systems
    with a corrupted entry) counts as an infinite residual at that sample.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    times = [ds.check_time(t) for t in sample_times]
    worst, worst_res, id_res, n = None, 0.0, 0.0, 0
    for omega in sample_points:
        p = as_point(omega, ds.dim)
        id_res = max(id_res, ds.distance(ds.evolve(0, p), p))
        for s in times:
            for t in times:
                n += 1
                try:
                    res = ds.distance(ds.evolve(t + s, p), ds.evolve(t, ds.evolve(s, p)))
                except DomainError:
                    res = math.inf
                if res > worst_res or worst is None:
                    worst_res = max(res, worst_res)
                    worst = {"t": t, "s": s, "omega": p.tolist(), "residual": res}
    passed = worst_res <= tol and id_res <= tol
    return FlowReport(
        passed=passed,
        tol=tol,
        max_composition_residual=worst_res,
        max_identity_residual=id_res,
        worst=worst if worst_res > tol else None,
        n_checks=n,
        sample_times=times,
        sample_points=[as_point(p, ds.dim).tolist() for p in sample_points],
    )
