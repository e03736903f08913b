"""Slot-synchronous AV controller.

Each slot the AV follows at most two reference objects: its nearest lead
vehicle and, while unpermitted, the stop point where its path enters the
junction.  The receding-horizon plan chooses per-slot speeds from a
discretized admissible interval; a candidate is kept only if completing the
remaining horizon at full braking satisfies every separation constraint,
which makes the hardest-braking sequence an always-available fallback and
the search total.

Speeds are searched highest-first slot by slot, so the emitted plan is the
lexicographically fastest feasible grid sequence (accelerate as early as
possible toward the speed limit); safety depends only on feasibility, not on
this preference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .kinematics import ControlInput
from .params import Params, VehicleKind
from .separation import FollowContext, av_gap
from .world import WorldView


class PlanInfeasibleError(RuntimeError):
    """Even the hardest-braking sequence violates a separation constraint."""


@dataclass(frozen=True)
class ReferenceObject:
    """What the AV keeps its distance from this slot."""

    target: Optional[int]          # vehicle id, or None for the stop point
    ctx: FollowContext
    gap: float                     # current along-path distance to it
    sampled_v_ro: float            # previous-slot speed sample (0 for stops)
    worst_case_decel: float        # braking assumed in its predicted motion
    include_response: bool = True  # drop the response allowance past the box

    @property
    def is_stop_point(self) -> bool:
        return self.target is None


@dataclass
class PlanResult:
    inputs: List[ControlInput]
    feasible_by: str               # "optimizer" or "fallback-brake"
    cost: float                    # diagnostic objective value
    speeds: List[float] = field(default_factory=list)


def effective_brake_limit(view: WorldView, vid: int) -> float:
    """Hardest deceleration the AV may command.

    An AV followed, directly or through a chain of AVs, by an HV must brake
    no harder than an HV would, so the human behind it can rely on its own
    worst-case assumptions.
    """
    return view.brake_limit(vid)


def select_reference_object(view: WorldView, vid: int,
                            permitted: bool) -> List[ReferenceObject]:
    """Reference objects per the motion rules.

    Permitted: just the nearest lead.  Unpermitted: a stop-point reference at
    the entry line is added; if the lead is already beyond the line the stop
    constraint dominates and the lead reference is dropped.
    """
    p = view.params
    me = view.vehicles[vid]
    path = view.model.paths[me.path]
    own = VehicleKind.HV if view.is_hv_like(vid) else VehicleKind.AV
    past_box = me.s > path.exit_s
    refs: List[ReferenceObject] = []

    lead = view.nearest_lead(vid)
    lead_beyond_entry = False
    if lead is not None:
        lead_snap = view.vehicles[lead[0]]
        lead_hv_like = view.is_hv_like(lead[0])
        lead_kind = VehicleKind.HV if lead_hv_like else VehicleKind.AV
        lead_pos_here = me.s + lead[1]
        lead_beyond_entry = lead_pos_here > path.entry_s
        refs.append(ReferenceObject(
            target=lead[0],
            ctx=FollowContext(lead_kind, own),
            gap=lead[1],
            sampled_v_ro=lead_snap.v_slot_prev,
            worst_case_decel=p.a_min_hv if lead_hv_like else p.a_min_av,
            include_response=not past_box,
        ))

    if not permitted and me.s < path.entry_s:
        refs.append(ReferenceObject(
            target=None,
            ctx=FollowContext(VehicleKind.AV, own),
            gap=path.entry_s - me.s,
            sampled_v_ro=0.0,
            worst_case_decel=0.0,
        ))
        if lead_beyond_entry:
            refs = [r for r in refs if r.is_stop_point]
    return refs


def fallback_brake(view: WorldView, vid: int) -> ControlInput:
    """Hardest admissible braking this slot; feasible whenever the current
    state satisfies its separation constraints."""
    p = view.params
    me = view.vehicles[vid]
    v_cmd = max(0.0, me.v_slot_prev + view.brake_limit(vid) * p.h)
    kappa = view.model.paths[me.path].curvature_at(me.s)
    return ControlInput(v_cmd=v_cmd, omega_cmd=v_cmd * kappa)


def plan(view: WorldView, vid: int, refs: List[ReferenceObject],
         horizon: int = 4, grid: int = 21) -> PlanResult:
    """Receding-horizon speed plan; only the first input is executed."""
    p = view.params
    me = view.vehicles[vid]
    a_own = view.brake_limit(vid)
    v_prev = me.v_slot_prev
    h = p.h

    # Predicted reference speeds and cumulative travel per slot:
    # the reference speed during slot k follows the sampled value plus k+1
    # braking steps at its assumed worst deceleration, floored at zero.
    ref_w: List[np.ndarray] = []
    ref_L: List[np.ndarray] = []
    for r in refs:
        w = np.maximum(
            0.0, r.sampled_v_ro
            + r.worst_case_decel * h * np.arange(1, horizon + 1))
        ref_w.append(w)
        ref_L.append(np.cumsum(w * h))

    def completion_ok(k: int, v_k: float, prefix: float) -> bool:
        """Does [v_k, then full braking] satisfy slots k..horizon-1?"""
        u = v_k
        travel = prefix
        for j in range(k, horizon):
            travel += u * h
            for r, w, L in zip(refs, ref_w, ref_L):
                available = r.gap + L[j] - travel
                need = av_gap(r.ctx, u, float(w[j]), p,
                              include_response=r.include_response)
                if available < need - 1e-9:
                    return False
            u = max(0.0, u + a_own * h)
        return True

    speeds: List[float] = []
    prev = v_prev
    prefix = 0.0
    fallback_chain = True
    for k in range(horizon):
        lo = max(0.0, prev + a_own * h)
        hi = min(p.v_max, prev + p.a_max * h)
        chosen = None
        if not refs:
            chosen = hi
        else:
            for v_k in np.linspace(hi, lo, grid):
                if completion_ok(k, float(v_k), prefix):
                    chosen = float(v_k)
                    break
        if chosen is None:
            if k == 0:
                raise PlanInfeasibleError(
                    f"vehicle {vid}: no admissible speed, even full braking "
                    "violates a separation constraint")
            chosen = lo      # cannot happen after a certified k=0, belt only
        if chosen > lo + 1e-12:
            fallback_chain = False
        speeds.append(chosen)
        prefix += chosen * h
        prev = chosen

    kappa = view.model.paths[me.path].curvature_at(me.s)
    inputs = [ControlInput(v_cmd=v, omega_cmd=v * kappa) for v in speeds]
    cost = float(sum((v - p.v_max) ** 2 for v in speeds))
    return PlanResult(inputs=inputs,
                      feasible_by="fallback-brake" if fallback_chain else "optimizer",
                      cost=cost, speeds=speeds)


def check_plan(view: WorldView, vid: int, refs: List[ReferenceObject],
               speeds: List[float]) -> List[str]:
    """Independent re-validation of a plan against every constraint."""
    p = view.params
    me = view.vehicles[vid]
    a_own = view.brake_limit(vid)
    problems: List[str] = []
    prev = me.v_slot_prev
    travel = 0.0
    for k, v_k in enumerate(speeds):
        lo = max(0.0, prev + a_own * p.h)
        hi = min(p.v_max, prev + p.a_max * p.h)
        if not (lo - 1e-9 <= v_k <= hi + 1e-9):
            problems.append(f"slot {k}: speed {v_k} outside [{lo}, {hi}]")
        travel += v_k * p.h
        for r in refs:
            w = np.maximum(0.0, r.sampled_v_ro
                           + r.worst_case_decel * p.h * np.arange(1, k + 2))
            L = float(np.sum(w * p.h))
            available = r.gap + L - travel
            need = av_gap(r.ctx, v_k, float(w[-1]), p,
                          include_response=r.include_response)
            if available < need - 1e-6:
                problems.append(
                    f"slot {k}: gap {available:.3f} below required {need:.3f}")
        prev = v_k
    return problems
