"""Integral tests on the width profile and the resulting lifetime regime.

``int f = inf`` decides whether the conditioned lifetime is infinite; among
infinite-lifetime tubes, ``int f^3`` separates the time-homogeneous case
(divergent) from the asymptotic-clock case (convergent).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np
from scipy import integrate

from .errors import DomainError
from .geometry import WidthProfile


class Regime(str, Enum):
    FINITE_LIFETIME = "FiniteLifetime"
    INFINITE_HOMOGENEOUS = "InfiniteHomogeneous"
    INFINITE_CLOCK = "InfiniteClock"


@dataclass(frozen=True)
class RegimeReport:
    integral_f: float
    integral_f3: float
    lower_limit: float
    regime: Regime
    method: str
    limsup_finite: bool
    lipschitz_constant: float

    def to_dict(self):
        d = asdict(self)
        d["regime"] = self.regime.value
        for key in ("integral_f", "integral_f3"):
            if math.isinf(d[key]):
                d[key] = "inf"
        return d


def _power_integral(profile, power, lo, hi):
    # int_lo^hi scale^p (1 + v/L)^(-p*beta) dv
    q = power * profile.exponent
    L = profile.length
    coef = profile.scale ** power * L
    x_lo = 1.0 + lo / L
    if math.isinf(hi):
        if q <= 1.0:
            return math.inf
        return coef * x_lo ** (1.0 - q) / (q - 1.0)
    x_hi = 1.0 + hi / L
    if q == 1.0:
        return coef * math.log(x_hi / x_lo)
    return coef * (x_hi ** (1.0 - q) - x_lo ** (1.0 - q)) / (1.0 - q)


def _table_integral(profile, power, lo, hi):
    if math.isinf(hi):
        # constant extension beyond the last breakpoint keeps f > 0 forever
        return math.inf
    bp = np.asarray(profile.breakpoints)
    knots = [v for v in bp[:, 0] if lo < v < hi]
    edges = [lo, *knots, hi]
    total = 0.0
    for x0, x1 in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(lambda v: float(profile._raw(v)) ** power, x0, x1,
                                epsabs=0.0, epsrel=1e-10, limit=200)
        total += val
    return total


def integrate_between(profile: WidthProfile, power: int, lo: float, hi: float) -> float:
    """``int_lo^hi f(v)^power dv`` clipped to the support."""
    if power not in (1, 3):
        raise DomainError("power must be 1 or 3")
    lo = max(float(lo), profile.a)
    hi = min(float(hi), profile.b)
    if hi <= lo:
        return 0.0
    if profile.kind == "constant":
        return math.inf if math.isinf(hi) else profile.level ** power * (hi - lo)
    if profile.kind == "power":
        return _power_integral(profile, power, lo, hi)
    return _table_integral(profile, power, lo, hi)


def integrate_f(profile: WidthProfile, power: int, u: float) -> float:
    """``int_u^b f(v)^power dv``; ``math.inf`` when divergent."""
    if not (profile.a <= u < profile.b):
        raise DomainError(f"u={u} outside [{profile.a}, {profile.b})")
    return integrate_between(profile, power, u, profile.b)


def classify(profile: WidthProfile, u: float | None = None) -> RegimeReport:
    u = profile.a if u is None else float(u)
    i1 = integrate_f(profile, 1, u)
    i3 = integrate_f(profile, 3, u)
    if math.isfinite(i1):
        regime = Regime.FINITE_LIFETIME
    elif math.isinf(i3):
        regime = Regime.INFINITE_HOMOGENEOUS
    else:
        regime = Regime.INFINITE_CLOCK
    return RegimeReport(
        integral_f=i1,
        integral_f3=i3,
        lower_limit=u,
        regime=regime,
        method="Quadrature" if profile.kind == "table" else "ClosedForm",
        # every supported kind is bounded above
        limsup_finite=True,
        lipschitz_constant=profile.lipschitz_constant,
    )
