"""Width profiles, tube membership and the section ladder.

A tube is ``{x : |x_cross| < f(x_axis)}`` for a positive width function
``f`` supported on ``(a, b)``.  Three kinds of ``f`` are supported:

* ``constant``  f(v) = level
* ``power``     f(v) = scale * (1 + v/length) ** (-exponent)
* ``table``     piecewise linear through breakpoints, constant beyond them
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, ValidationError

KINDS = ("constant", "power", "table")


@dataclass(frozen=True)
class WidthProfile:
    kind: str
    level: float = 1.0
    exponent: float = 0.0
    scale: float = 1.0
    length: float = 1.0
    breakpoints: tuple = ()
    a: float = 0.0
    b: float = math.inf

    def __post_init__(self):
        problems = []
        if self.kind not in KINDS:
            problems.append(f"unknown profile kind {self.kind!r}")
        if not math.isfinite(self.a):
            problems.append("support endpoint a must be finite")
        if not self.b > self.a:
            problems.append("support endpoint b must exceed a")
        if self.kind == "constant" and not self.level > 0:
            problems.append("constant level must be > 0")
        if self.kind == "power":
            if self.exponent < 0:
                problems.append("power exponent must be >= 0")
            if not (self.scale > 0 and self.length > 0):
                problems.append("power scale and length must be > 0")
            if not 1 + self.a / self.length > 0:
                problems.append("power profile requires a > -length")
        if self.kind == "table":
            bp = np.asarray(self.breakpoints, dtype=float)
            if bp.ndim != 2 or bp.shape[1] != 2 or len(bp) < 1:
                problems.append("table needs breakpoints [[v, f], ...]")
            else:
                if np.any(np.diff(bp[:, 0]) <= 0):
                    problems.append("table breakpoints must be strictly increasing in v")
                if np.any(bp[:, 1] <= 0):
                    problems.append("table widths must be > 0")
            object.__setattr__(self, "breakpoints", tuple(map(tuple, bp.tolist())))
        if problems:
            raise ValidationError(problems)

    # constructors -----------------------------------------------------
    @classmethod
    def constant(cls, level, a=0.0, b=math.inf):
        return cls("constant", level=float(level), a=float(a), b=float(b))

    @classmethod
    def power(cls, exponent, scale=1.0, length=1.0, a=0.0, b=math.inf):
        return cls("power", exponent=float(exponent), scale=float(scale),
                   length=float(length), a=float(a), b=float(b))

    @classmethod
    def table(cls, breakpoints, a=0.0, b=math.inf):
        return cls("table", breakpoints=tuple(map(tuple, breakpoints)), a=float(a), b=float(b))

    # evaluation -------------------------------------------------------
    def _raw(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "constant":
            return np.full_like(v, self.level)
        if self.kind == "power":
            with np.errstate(invalid="ignore", divide="ignore"):
                return self.scale * (1.0 + v / self.length) ** (-self.exponent)
        bp = np.asarray(self.breakpoints)
        return np.interp(v, bp[:, 0], bp[:, 1])

    def __call__(self, v):
        """Width at axial position(s) ``v``; zero outside ``(a, b)``."""
        v = np.asarray(v, dtype=float)
        inside = (v > self.a) & (v < self.b)
        out = np.where(inside, self._raw(np.where(inside, v, self.a)), 0.0)
        return out if out.ndim else float(out)

    @property
    def lipschitz_constant(self):
        if self.kind == "constant":
            return 0.0
        if self.kind == "power":
            return self.exponent * self.scale / self.length * (1 + self.a / self.length) ** (-self.exponent - 1)
        bp = np.asarray(self.breakpoints)
        if len(bp) < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(bp[:, 1]) / np.diff(bp[:, 0]))))

    def running_sup(self, v):
        """``sup_{u >= v} f(u)`` over the support."""
        v = max(float(v), self.a)
        if self.kind == "constant":
            return self.level
        if self.kind == "power":
            # nonincreasing for exponent >= 0; the sup is the value at (or just above) a
            return float(self._raw(v))
        bp = np.asarray(self.breakpoints)
        knots = bp[:, 0][(bp[:, 0] > v) & (bp[:, 0] < self.b)]
        cands = [float(self._raw(v))] + [float(self._raw(k)) for k in knots]
        if math.isinf(self.b) or self.b > bp[-1, 0]:
            cands.append(float(bp[-1, 1]))
        return max(cands)

    def scaled(self, factor):
        """Dilated profile ``factor * f(v / factor)`` on ``(factor*a, factor*b)``."""
        c = float(factor)
        if not c > 0:
            raise DomainError("scaling factor must be > 0")
        if self.kind == "constant":
            return WidthProfile.constant(c * self.level, c * self.a, c * self.b)
        if self.kind == "power":
            return WidthProfile.power(self.exponent, c * self.scale, c * self.length, c * self.a, c * self.b)
        bp = [(c * v, c * w) for v, w in self.breakpoints]
        return WidthProfile.table(bp, c * self.a, c * self.b)

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "constant":
            d["level"] = self.level
        elif self.kind == "power":
            d.update(exponent=self.exponent, scale=self.scale, length=self.length)
        else:
            d["breakpoints"] = [list(p) for p in self.breakpoints]
        d["a"] = self.a
        d["b"] = self.b
        return d

    @classmethod
    def from_dict(cls, spec):
        spec = dict(spec)
        allowed = {
            "constant": {"kind", "level", "a", "b"},
            "power": {"kind", "exponent", "scale", "length", "a", "b"},
            "table": {"kind", "breakpoints", "a", "b"},
        }
        kind = spec.get("kind")
        if kind not in allowed:
            raise ValidationError(f"profile.kind must be one of {KINDS}, got {kind!r}")
        unknown = set(spec) - allowed[kind]
        if unknown:
            raise ValidationError([f"unknown profile key {k!r}" for k in sorted(unknown)])
        for key in ("a", "b", "level", "exponent", "scale", "length"):
            if key in spec:
                spec[key] = float(spec[key])
        if "breakpoints" in spec:
            spec["breakpoints"] = tuple(tuple(float(x) for x in p) for p in spec["breakpoints"])
        return cls(**spec)

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def label(self):
        if self.kind == "constant":
            return f"constant(c={self.level:g})"
        if self.kind == "power":
            return f"power(beta={self.exponent:g})"
        return f"table({len(self.breakpoints)} pts)"


@dataclass(frozen=True)
class Point:
    coords: tuple

    def __post_init__(self):
        coords = tuple(float(c) for c in self.coords)
        if len(coords) < 2:
            raise DomainError("points need dimension d >= 2")
        object.__setattr__(self, "coords", coords)

    @property
    def d(self):
        return len(self.coords)

    @property
    def axis(self):
        return self.coords[-1]

    @property
    def cross(self):
        return self.coords[:-1]


def contains(profile: WidthProfile, p: Point) -> bool:
    """Open-tube membership: axis strictly inside (a, b), |cross| < f(axis)."""
    if not (profile.a < p.axis < profile.b):
        return False
    return math.hypot(*p.cross) < profile(p.axis)


def contains_many(profile: WidthProfile, cross: np.ndarray, axis) -> np.ndarray:
    """Vectorised ``contains``; ``cross`` has shape (n, d-1)."""
    cross = np.atleast_2d(np.asarray(cross, dtype=float))
    axis = np.broadcast_to(np.asarray(axis, dtype=float), (cross.shape[0],))
    radius = np.sqrt(np.sum(cross * cross, axis=1))
    inside = (axis > profile.a) & (axis < profile.b)
    return inside & (radius < profile(axis))


@dataclass(frozen=True)
class SectionLadder:
    profile: WidthProfile
    s0: float
    values: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, k):
        return self.values[k]


def ladder(profile: WidthProfile, s0: float, count: int) -> SectionLadder:
    """First ``count`` checkpoints ``s_{k+1} = s_k + f(s_k)/2``, frozen at b."""
    # s0 = a is allowed: the step there uses the right limit f(a+)
    if not (profile.a <= s0 < profile.b):
        raise DomainError(f"s0={s0} outside the support [{profile.a}, {profile.b})")
    if count < 1:
        raise DomainError("count must be >= 1")
    vals = np.empty(count)
    s = float(s0)
    for k in range(count):
        vals[k] = s
        if s < profile.b:
            s = s + float(profile._raw(s)) / 2.0
            if s >= profile.b:
                s = profile.b
    return SectionLadder(profile, float(s0), vals)


def section_of(lad: SectionLadder, axis_value: float) -> int:
    """Largest k with ``s_k <= axis_value``."""
    if axis_value < lad.s0:
        raise DomainError(f"axis value {axis_value} lies below s0={lad.s0}")
    return int(np.searchsorted(lad.values, axis_value, side="right") - 1)
