"""Human-driver behavior generation.

An HV follows three rules: keep the human-scale gap behind its nearest lead,
obey its signal (enter on green, stop on red, amber depending on whether it
can still stop), and gate unsignalized right turns on a clear conflicting
path.  Within those rules its acceleration is free, so behavior modes range
from smooth speed tracking to an adversarial bang-bang driver.

Every emitted acceleration is certified against the worst future the rules
permit of others: the lead may be a slot-controlled vehicle whose speed drops
by a full braking step at any instant and keeps dropping every slot, and the
driver itself reacts only after its response time, during which the chosen
acceleration persists.  Certifying each choice against that envelope keeps
the separation rule satisfied at every micro-step without re-deriving it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .geometry import PathKind
from .kinematics import hold_then_stop_travel, slot_brake_travel
from .params import Params, VehicleKind
from .separation import hv_gap
from .world import WorldView

_V_STOPPED = 0.02      # below this an HV counts as stopped at the line


class HvMode(Enum):
    NOMINAL = "nominal"
    RANDOMIZED = "randomized"
    ADVERSARIAL = "adversarial"


@dataclass(frozen=True)
class HvBehaviorMode:
    mode: HvMode = HvMode.NOMINAL
    rng_seed: int = 0


@dataclass(frozen=True)
class DriverState:
    """Per-vehicle latches carried across slots."""

    stop_latched: bool = False
    accel: float = 0.0


class RulesInfeasibleError(RuntimeError):
    """The HV's current state already violates a rule it must maintain."""


def nearest_lead(view: WorldView, vid: int) -> Optional[Tuple[int, float]]:
    """Nearest vehicle ahead on the same effective path; ``(id, gap)``."""
    return view.nearest_lead(vid)


def lead_envelope_travel(w: float, p: Params) -> float:
    """Lower bound on any rule-compliant lead's remaining travel.

    The tightest trajectory the follower must budget for is a slot vehicle at
    the HV braking limit whose next boundary is immediate: a staircase whose
    first step down happens now.
    """
    return slot_brake_travel(w, p.a_min_hv, p.h)


def follow_guard(v: float, w: float, accel: float, p: Params) -> float:
    """Gap needed now so the separation rule survives the worst lead future.

    The follower persists at ``accel`` for its response time and then brakes;
    the lead travels no less than its worst envelope.  The constant term is
    the rule's own response/size allowance (scaled by the test-only weaken
    hook so weakened behavior is actually exercised).
    """
    own = hold_then_stop_travel(v, accel, p.t_r_hv, p.a_min_hv, p.v_max)
    scale = p.weaken_factor("s_hv")
    return scale * (own - lead_envelope_travel(w, p)
                    + p.v_max * p.t_r_hv + p.s_min)


def stop_guard(v: float, accel: float, p: Params) -> float:
    """Distance needed to still stop before a line after the response hold."""
    return hold_then_stop_travel(v, accel, p.t_r_hv, p.a_min_hv, p.v_max)


@dataclass
class _Constraint:
    """A follow or stop constraint tracked through the slot prediction."""

    gap: float                  # current available distance
    w: float                    # predicted lead speed (0 for stop lines)
    moving: bool                # stop lines never move
    w0: float = 0.0             # observed lead speed the envelope anchors on


@dataclass(frozen=True)
class RightTurnInfo:
    """Static geometry a right turn needs: its single conflicting path and
    the merge exclusion window on both paths."""

    conflict_path: int
    conflict_entry: float        # conflict path's stop line
    own_disk_out: float          # end of the merge disk on the turn path
    conf_disk_in: float          # merge disk window on the conflicting path
    conf_disk_out: float
    conf_center: float           # merge point on the conflicting path


def _fast_advance(v: float, tau: float, p: Params) -> Tuple[float, float]:
    """Farthest advance and speed after ``tau`` seconds at full throttle."""
    t_cap = max(0.0, (p.v_max - v) / p.a_max)
    t_acc = min(tau, t_cap)
    adv = v * t_acc + 0.5 * p.a_max * t_acc * t_acc + p.v_max * (tau - t_acc)
    return adv, min(p.v_max, v + p.a_max * tau)


def _slow_advance(v: float, tau: float, p: Params) -> float:
    """Least advance in ``tau`` seconds: slot braking with an immediate step."""
    step = -p.a_min_hv * p.h
    travel = 0.0
    t = 0.0
    w = max(0.0, v - step)
    while t < tau - 1e-12 and w > 0.0:
        dt = min(p.h, tau - t)
        travel += w * dt
        t += dt
        w = max(0.0, w - step)
    return travel


def right_turn_gate_ok(view: WorldView, vid: int, p: Params,
                       info: RightTurnInfo) -> bool:
    """May the right-turner commit to entering?

    Every vehicle on the conflicting path that has not yet reached the merge
    must either stay at least the stop-rule gap short of the merge window
    under a full-throttle projection, or be certain (even under worst-case
    braking) to be past the merge point before the turner can first reach
    the window.  Vehicles already past the merge share the exit lane and are
    handled by ordinary car-following.
    """
    me = view.vehicles[vid]
    own_path = view.model.paths[me.path]
    tau_cross = min(3.0, max(0.0, own_path.entry_s - me.s) / max(me.v, 1.0))
    tau_land = min(6.0, tau_cross
                   + max(0.0, info.own_disk_out - max(me.s, own_path.entry_s))
                   / max(min(me.v, 7.0), 2.0)) + 1.0
    tau_me_min = max(0.0, info.own_disk_out - me.s - 10.0) / p.v_max
    bump = -p.a_min_hv * p.h

    for oid, snap in view.vehicles.items():
        if oid == vid:
            continue
        pos_c = view.mapped_position(info.conflict_path, snap)
        if pos_c is None:
            continue
        if view.mapped_position(me.path, snap) is not None:
            continue            # shares my lane already: ordinary following
        d_center = info.conf_center - pos_c
        if d_center <= 0.0:
            continue            # past the merge point
        # printed entry condition, projected to my crossing time
        d_entry = info.conflict_entry - pos_c
        if d_entry > 0.0:
            adv, v_proj = _fast_advance(snap.v, tau_cross, p)
            if d_entry - adv < hv_gap(v_proj + bump, 0.0, p) \
                    and d_entry - adv > 0.0:
                return False
        # stays clear of the merge window through my landing...
        adv, v_proj = _fast_advance(snap.v, tau_land, p)
        if info.conf_disk_in - pos_c - adv >= hv_gap(v_proj + bump, 0.0, p):
            continue
        # ...or is certainly past the merge before I can reach the window
        if _slow_advance(snap.v, tau_me_min, p) >= d_center + p.s_min:
            continue
        return False
    return True


def hv_decide(view: WorldView, vid: int, colors: Dict[int, str],
              mode: HvMode, rng: np.random.Generator,
              state: DriverState,
              right_info: Optional[RightTurnInfo] = None,
              ) -> Tuple[List[float], DriverState, int]:
    """Produce the micro-step speed profile for one slot.

    ``colors`` maps signalized path ids to 'g'/'a'/'r'.  Returns
    ``(speeds, new driver state, guard slips)`` where a slip counts a
    micro-step at which even full braking was not freshly certifiable
    (still covered by an earlier certificate; diagnostic only).
    """
    p = view.params
    me = view.vehicles[vid]
    path = view.model.paths[me.path]
    d_entry = path.entry_s - me.s
    pre_entry = me.s < path.entry_s
    in_signal_zone = d_entry <= view.model.signal_range

    # -- rule branches -> stop obligation ---------------------------------
    latched = state.stop_latched
    color = colors.get(me.path)
    if pre_entry and in_signal_zone:
        if path.kind is PathKind.RIGHT:
            assert right_info is not None
            gate = right_turn_gate_ok(view, vid, p, right_info)
            stoppable = d_entry >= stop_guard(me.v, p.a_min_hv, p) + 0.5
            if gate:
                latched = False
            elif stoppable:
                latched = True
            # otherwise committed: keep the previous latch state
        elif color == "g":
            latched = False
        elif color == "a":
            if not latched and d_entry >= hv_gap(me.v, 0.0, p):
                latched = True
        elif color == "r":
            latched = True
    elif not pre_entry:
        latched = False
    stop_active = latched and pre_entry

    # a committed right-turner clears the merge promptly
    committed_right = (path.kind is PathKind.RIGHT and not latched
                       and right_info is not None
                       and me.s < right_info.own_disk_out
                       and d_entry < view.model.signal_range * 0.5)

    # -- constraint set over the prediction window ------------------------
    lead = view.nearest_lead(vid)
    cons: List[_Constraint] = []
    if lead is not None:
        lead_snap = view.vehicles[lead[0]]
        cons.append(_Constraint(gap=lead[1], w=lead_snap.v, moving=True,
                                w0=lead_snap.v))
    if stop_active:
        cons.append(_Constraint(gap=d_entry, w=0.0, moving=False))

    if lead is not None and lead[1] < p.weaken_factor("s_hv") * p.s_min - 1e-6:
        raise RulesInfeasibleError(
            f"vehicle {vid} gap {lead[1]:.2f} m already below the size margin")

    n = p.micro_steps
    dt = p.delta
    speeds: List[float] = []
    v = me.v
    slips = 0
    a0 = state.accel
    target_margin = 0.3

    def feasible(acc: float, v_now: float, con_state: List[_Constraint]) -> bool:
        for c in con_state:
            if c.moving:
                need = follow_guard(v_now, c.w, acc, p)
            else:
                need = stop_guard(v_now, acc, p)
            if c.gap < need - 1e-9:
                return False
        return True

    ladder = (p.a_max, 2.0, 1.0, 0.5, 0.0, -0.5, -1.0, -2.0, -3.0, p.a_min_hv)

    def pick(v_now: float, con_state: List[_Constraint]) -> Tuple[float, bool]:
        cap = None
        for cand in ladder:
            if cand < p.a_min_hv:
                continue
            if feasible(cand, v_now, con_state):
                cap = cand
                break
        if cap is None:
            return p.a_min_hv, True          # rescue: brake, certificate slip
        if mode is HvMode.NOMINAL:
            des = _nominal_accel(v_now, con_state, p, target_margin)
            return min(des, cap), False
        if mode is HvMode.RANDOMIZED:
            a = float(rng.uniform(p.a_min_hv, cap))
            if feasible(a, v_now, con_state):
                return a, False
            return cap, False
        # adversarial: endpoint that leaves the least slack one slot ahead
        lo, hi = p.a_min_hv, cap
        if hi <= lo + 1e-9:
            return lo, False
        slack_hi = _future_slack(v_now, hi, con_state, p)
        slack_lo = _future_slack(v_now, lo, con_state, p)
        return (hi if slack_hi <= slack_lo else lo), False

    for i in range(n):
        if i % (n // 2 or 1) == 0:     # re-decide twice per slot
            a0, slipped = pick(v, cons)
            if slipped:
                slips += 1
        if committed_right and a0 < 0.3:
            a_push = 0.3
            if feasible(a_push, v, cons):
                a0 = a_push
        v_new = min(max(v + a0 * dt, 0.0), p.v_max)
        # numeric backstop at the line: no harder than the envelope allows
        for c in cons:
            if not c.moving and c.gap - v_new * dt <= 0.02:
                v_new = max(0.0, v + p.a_min_hv * dt)
        speeds.append(v_new)
        # advance the predicted world by one micro-step; the lead envelope
        # steps down now and again at each later slot boundary
        t_next = (i + 1) * dt
        for c in cons:
            if c.moving:
                extra = int(t_next / p.h)
                w_env = max(0.0, c.w0 + p.a_min_hv * p.h * (1 + extra))
                c.gap += w_env * dt - v_new * dt
                c.w = w_env
            else:
                c.gap -= v_new * dt
        v = v_new

    return speeds, replace(state, stop_latched=latched, accel=a0), slips


def _nominal_accel(v: float, cons: List[_Constraint], p: Params,
                   margin: float) -> float:
    """Smooth target-speed tracking: cruise at the limit, ease off toward
    stop lines and slow leads."""
    v_des = p.v_max
    b_comf = 1.8
    for c in cons:
        if c.moving:
            headroom = c.gap - follow_guard(0.0, c.w, 0.0, p)
        else:
            headroom = c.gap - margin
        v_allow = math.sqrt(max(0.0, 2.0 * b_comf * max(0.0, headroom)))
        if c.moving:
            v_allow = max(v_allow, min(c.w, p.v_max))
        v_des = min(v_des, v_allow)
    return min(max((v_des - v) / p.h, p.a_min_hv), p.a_max)


def _future_slack(v: float, acc: float, cons: List[_Constraint],
                  p: Params) -> float:
    """Minimum constraint slack one slot ahead under ``acc``."""
    v1 = min(max(v + acc * p.h, 0.0), p.v_max)
    travel = 0.5 * (v + v1) * p.h
    worst = math.inf
    for c in cons:
        if c.moving:
            w1 = max(0.0, c.w + p.a_min_hv * p.h)
            gap1 = c.gap + w1 * p.h - travel
            worst = min(worst, gap1 - follow_guard(v1, w1, 0.0, p))
        else:
            gap1 = c.gap - travel
            worst = min(worst, gap1 - stop_guard(v1, 0.0, p))
    return worst
