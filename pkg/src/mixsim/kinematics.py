"""Unicycle kinematics: closed-form slot updates for AVs and micro-stepped
integration for HVs, plus enforcement of the physical envelope.

Vehicles ride the path centerline: the yaw rate is slaved to the local
curvature (omega = v * kappa), so heading and position are functions of arc
length.  The closed-form step below is the free-space update used to verify
that on-rails stepping and the kinematic model agree on constant-curvature
stretches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

from .params import Params, VehicleKind

# Below this |omega*h| the closed form switches to its series expansion.
_OMEGA_EPS = 1e-6


class ConstraintError(ValueError):
    """A control input violates the physical envelope (a controller bug)."""


@dataclass(frozen=True)
class VehicleState:
    """Pose plus path-following bookkeeping.

    ``v_prev`` is the speed over the previous control slot; the separation
    formulas and the slot update constraint both reference it.
    """

    x: float
    y: float
    theta: float
    v: float
    s: float                 # arc length along the assigned path
    v_prev: float
    path: int

    def moved_to(self, x: float, y: float, theta: float, v: float,
                 s: float) -> "VehicleState":
        return replace(self, x=x, y=y, theta=theta, v=v, s=s)


@dataclass(frozen=True)
class ControlInput:
    """Slot command: speed plus curvature-slaved yaw rate."""

    v_cmd: float
    omega_cmd: float = 0.0


def check_input(state: VehicleState, inp: ControlInput, p: Params,
                a_floor: Optional[float] = None) -> None:
    """Validate a slot command against the physical envelope.

    ``a_floor`` is the braking bound in force for this vehicle (its own
    composite limit, possibly weakened to the HV limit for virtual HVs).
    """
    if not (-1e-9 <= inp.v_cmd <= p.v_max + 1e-9):
        raise ConstraintError(f"commanded speed {inp.v_cmd} outside [0, {p.v_max}]")
    if abs(inp.omega_cmd) > p.v_max / p.rho_min + 1e-9:
        raise ConstraintError("yaw rate exceeds curvature-limited bound")
    dv = inp.v_cmd - state.v_prev
    lo = (a_floor if a_floor is not None else p.a_min_av) * p.h
    hi = p.a_max * p.h
    if not (lo - 1e-9 <= dv <= hi + 1e-9):
        raise ConstraintError(
            f"slot speed change {dv:.3f} outside [{lo:.3f}, {hi:.3f}]")


def step_av(state: VehicleState, inp: ControlInput, h: float,
            p: Optional[Params] = None,
            a_floor: Optional[float] = None) -> VehicleState:
    """Closed-form slot update under constant (v, omega).

    With zero yaw rate the update is a straight line; otherwise the vehicle
    traces a circular arc of radius v/omega.  Near omega = 0 the arc form is
    evaluated through a series expansion to avoid 0/0.
    """
    if p is not None:
        check_input(state, inp, p, a_floor)
    v, w = inp.v_cmd, inp.omega_cmd
    th = state.theta
    if abs(w * h) < _OMEGA_EPS:
        # 2nd-order expansion of 2(v/w) sin(wh/2) = v h (1 - (wh)^2 / 24 + ...)
        chord = v * h * (1.0 - (w * h) ** 2 / 24.0)
    else:
        chord = 2.0 * (v / w) * math.sin(0.5 * w * h)
    x = chord * math.cos(th + 0.5 * w * h) + state.x
    y = chord * math.sin(th + 0.5 * w * h) + state.y
    theta = w * h + th
    return VehicleState(x=x, y=y, theta=theta, v=v, s=state.s + v * h,
                        v_prev=v, path=state.path)


def step_hv(state: VehicleState, speeds: Sequence[float], h: float,
            delta: float, p: Params,
            curvature: float = 0.0) -> List[VehicleState]:
    """Integrate an HV over one slot given a piecewise-constant speed profile.

    ``speeds`` holds one value per micro-step.  The yaw rate follows the
    path-following constraint omega = v * kappa at each micro-step.  Returns
    the intermediate states (one per micro-step) for collision monitoring.
    """
    n = int(round(h / delta))
    if len(speeds) != n:
        raise ConstraintError(f"profile must supply {n} micro-step speeds")
    prev_v = state.v
    out: List[VehicleState] = []
    cur = state
    for v in speeds:
        if not (-1e-9 <= v <= p.v_max + 1e-9):
            raise ConstraintError(f"profile speed {v} outside [0, {p.v_max}]")
        dv = v - prev_v
        if not (p.a_min_hv * delta - 1e-9 <= dv <= p.a_max * delta + 1e-9):
            raise ConstraintError(
                f"micro-step speed change {dv:.4f} outside HV envelope")
        w = v * curvature
        nxt = step_av(cur, ControlInput(v_cmd=v, omega_cmd=w), delta)
        cur = nxt
        out.append(cur)
        prev_v = v
    # the slot-boundary speed sample is the end-of-slot momentary speed
    return out


def stopping_distance(v: float, a_brake: float) -> float:
    """Distance covered braking from ``v`` to rest at constant ``a_brake`` < 0."""
    if v < 0:
        raise ValueError("speed must be nonnegative")
    if a_brake >= 0:
        raise ValueError("a_brake must be negative")
    return v * v / (-2.0 * a_brake)


def slot_brake_travel(v: float, a_brake: float, h: float) -> float:
    """Travel of a slot-synchronous vehicle braking as hard as allowed.

    The commanded speed drops by ``|a_brake| * h`` at each slot boundary and
    holds constant within the slot, so the total is a staircase sum starting
    from the first reduced speed.
    """
    step = -a_brake * h
    if step <= 0:
        raise ValueError("a_brake must be negative")
    n = int(math.floor(v / step + 1e-12))
    # sum of max(0, v - k*step) * h for k = 1, 2, ...
    return h * (n * v - step * n * (n + 1) / 2.0)


def hold_then_stop_travel(v: float, accel: float, hold: float, a_brake: float,
                          v_max: float) -> float:
    """Travel of [keep ``accel`` for ``hold`` seconds, then brake to rest].

    The hold phase is clipped to the speed envelope [0, v_max]; braking is
    continuous at ``a_brake``.  This bounds an HV's worst-case travel during
    its response window plus its stop.
    """
    if hold <= 0:
        return stopping_distance(v, a_brake)
    travel = 0.0
    t = hold
    if accel > 0 and v < v_max:
        t_cap = (v_max - v) / accel
        t_acc = min(t, t_cap)
        travel += v * t_acc + 0.5 * accel * t_acc * t_acc
        v = v + accel * t_acc
        t -= t_acc
    elif accel < 0 and v > 0:
        t_zero = v / -accel
        t_dec = min(t, t_zero)
        travel += v * t_dec + 0.5 * accel * t_dec * t_dec
        v = max(0.0, v + accel * t_dec)
        t -= t_dec
    travel += v * t    # cruising at the clipped speed for the rest of the hold
    return travel + stopping_distance(v, a_brake)
