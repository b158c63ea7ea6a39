"""Rollout-horizon curricula.

A schedule maps training progress n/N to a ramp value r in [tau0, 1] and
the visible horizon to clamp(round(r * M), 1, M). Three ramp families:

    linear:  r = tau0 + (1 - tau0) * (n / N)
    poly:    r = tau0 + (1 - tau0) * (n / N) ** p
    log:     r = tau0 + (1 - tau0) * log2(1 + n / N)

log2 is chosen so the ramp reaches exactly 1 at n = N. All three are
monotone, clip at 1, and collapse to the constant full-horizon schedule
when tau0 = 1. Pointwise for 0 < n < N: log >= linear >= poly (p > 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

KINDS = ("linear", "poly", "log")


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str
    tau0: float
    n_total: int       # N, optimization steps or epochs in the ramp
    max_horizon: int   # M
    p: float = 2.0     # poly exponent, only used by kind="poly"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"schedule kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.tau0 <= 1.0:
            raise ValueError(f"tau0 must be in [0, 1], got {self.tau0}")
        if self.n_total < 1:
            raise ValueError(f"n_total must be >= 1, got {self.n_total}")
        if self.max_horizon < 1:
            raise ValueError(f"max_horizon must be >= 1, got {self.max_horizon}")
        if self.kind == "poly" and self.p <= 0:
            raise ValueError(f"poly exponent must be > 0, got {self.p}")


def ratio(spec: ScheduleSpec, n: int) -> float:
    """Ramp value at step n, clipped to [tau0, 1]."""
    if not 0 <= n <= spec.n_total:
        raise ValueError(f"step must be in [0, {spec.n_total}], got {n}")
    frac = n / spec.n_total
    if spec.kind == "linear":
        ramp = frac
    elif spec.kind == "poly":
        ramp = frac ** spec.p
    else:
        ramp = math.log2(1.0 + frac)
    return min(1.0, spec.tau0 + (1.0 - spec.tau0) * ramp)


def horizon(spec: ScheduleSpec, n: int) -> int:
    """Visible rollout horizon at step n: round-half-up of ratio*M, in [1, M]."""
    r = ratio(spec, n)
    m = math.floor(r * spec.max_horizon + 0.5)
    return max(1, min(m, spec.max_horizon))


def table(spec: ScheduleSpec):
    """(n, ratio, horizon) rows for n = 0 .. n_total inclusive."""
    return [(n, ratio(spec, n), horizon(spec, n)) for n in range(spec.n_total + 1)]
