"""Global physical and control parameters shared across the simulator.

All quantities are SI (meters, seconds, radians).  Two vehicle classes are
modeled: human-driven vehicles (HVs) change speed continuously and brake
weakly; autonomous vehicles (AVs) hold a constant commanded speed per control
slot and brake harder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Optional


class VehicleKind(Enum):
    HV = "hv"
    AV = "av"


@dataclass(frozen=True)
class Params:
    """Parameter bundle for kinematics, separation rules, and the manager.

    ``a_min_hv`` / ``a_min_av`` are the most rapid decelerations (negative);
    HV brakes are weaker, so ``a_min_hv > a_min_av``.  ``h`` is the control
    slot period for AVs and the manager; ``delta`` is the micro-step used for
    HV integration and safety monitoring.
    """

    h: float = 0.5                  # control slot (s)
    delta: float = 0.05             # micro-step (s), must divide h
    v_max: float = 14.0             # speed limit (m/s)
    a_min_hv: float = -4.0          # HV hardest braking (m/s^2)
    a_min_av: float = -8.0          # AV hardest braking (m/s^2)
    a_max: float = 3.0              # max acceleration (m/s^2)
    t_r_hv: float = 1.0             # HV response time (s)
    s_min: float = 5.0              # size margin between vehicles (m)
    rho_min: float = 3.0            # minimum turning radius (m)
    theta_min: float = -math.pi    # heading bounds relative to path frame
    theta_max: float = math.pi
    # Brake split into longitudinal / centripetal components (3-4-5 split);
    # the composite limit is the vector magnitude of the two.
    brake_split_long: float = 0.8
    brake_split_lat: float = 0.6
    # Test-only hooks.  ``weaken`` scales the named separation formula's
    # output; production code leaves the map empty.
    weaken: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.h <= 0 or self.delta <= 0:
            raise ValueError("h and delta must be positive")
        steps = self.h / self.delta
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("delta must divide h")
        if not (self.a_min_hv > self.a_min_av):
            raise ValueError("HV braking must be weaker than AV braking "
                             f"(a_min_hv={self.a_min_hv}, a_min_av={self.a_min_av})")
        if self.a_min_hv >= 0 or self.a_min_av >= 0:
            raise ValueError("braking limits must be negative")
        if self.a_max <= 0:
            raise ValueError("a_max must be positive")
        if self.t_r_hv < 0:
            raise ValueError("t_r_hv must be nonnegative")
        if self.s_min < 0:
            raise ValueError("s_min must be nonnegative")
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")
        split = math.hypot(self.brake_split_long, self.brake_split_lat)
        if abs(split - 1.0) > 1e-9:
            raise ValueError("brake split components must have unit magnitude")

    @property
    def micro_steps(self) -> int:
        return int(round(self.h / self.delta))

    def a_min(self, kind: VehicleKind) -> float:
        return self.a_min_hv if kind is VehicleKind.HV else self.a_min_av

    def weaken_factor(self, name: str) -> float:
        return self.weaken.get(name, 1.0)

    def with_overrides(self, **kwargs) -> "Params":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class VehicleProfile:
    """Per-kind physical envelope, derived from a :class:`Params` bundle."""

    kind: VehicleKind
    a_min: float            # composite hardest braking (negative)
    a_long_min: float       # longitudinal braking component (negative)
    a_lat_min: float        # centripetal braking component (negative)
    a_max: float
    response_time: float    # 0 for AVs; t_r_hv for HVs
    v_max: float

    @classmethod
    def for_kind(cls, kind: VehicleKind, p: Params) -> "VehicleProfile":
        a_min = p.a_min(kind)
        prof = cls(
            kind=kind,
            a_min=a_min,
            a_long_min=a_min * p.brake_split_long,
            a_lat_min=a_min * p.brake_split_lat,
            a_max=p.a_max,
            response_time=p.t_r_hv if kind is VehicleKind.HV else 0.0,
            v_max=p.v_max,
        )
        prof.validate()
        return prof

    def validate(self) -> None:
        composite = -math.hypot(self.a_long_min, self.a_lat_min)
        if abs(composite - self.a_min) > 1e-9:
            raise ValueError("brake components do not match composite limit")
        if self.a_min >= 0 or self.a_max <= 0 or self.response_time < 0:
            raise ValueError("invalid profile bounds")


def stopping_distance(v: float, a_brake: float) -> float:
    """Distance covered braking from speed ``v`` at constant ``a_brake`` < 0."""
    if v < 0:
        raise ValueError("speed must be nonnegative")
    if a_brake >= 0:
        raise ValueError("a_brake must be negative")
    return v * v / (-2.0 * a_brake)
