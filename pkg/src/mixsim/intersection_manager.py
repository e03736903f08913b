"""Infrastructure side: permission assignment and signal light coordination.

AVs request their path over V2I and are granted permission only when the
path is collision-free with everything already committed: previously granted
AVs, HVs the lights plan to let through, and "uncertain" HVs that saw green
recently and might be unable to stop.  Signal colors are then derived from
those sets, cycling strictly green -> amber -> red -> green, with amber held
while any human on the path is kinematically unable to stop short of the
junction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .geometry import IntersectionModel, PathKind
from .params import Params, VehicleKind
from .separation import hv_gap
from .world import WorldView

GREEN, AMBER, RED = "g", "a", "r"
_V_STOPPED = 0.02


class ProtocolConflictError(RuntimeError):
    """Computed colors would put two conflicting paths on green/amber."""


@dataclass
class SignalState:
    """Per-path light colors (right-turn paths are unsignalized)."""

    colors: Dict[int, str]
    amber_since: Dict[int, int] = field(default_factory=dict)

    @classmethod
    def initial(cls, model: IntersectionModel) -> "SignalState":
        return cls(colors={pid: RED for pid, p in sorted(model.paths.items())
                           if p.kind is not PathKind.RIGHT})

    def color(self, path_id: int) -> Optional[str]:
        return self.colors.get(path_id)

    def copy(self) -> "SignalState":
        return SignalState(colors=dict(self.colors),
                           amber_since=dict(self.amber_since))


@dataclass
class ManagerState:
    """Permission bookkeeping carried between slots."""

    granted_av: Set[int] = field(default_factory=set)     # permitted AVs
    planned_hv: Set[int] = field(default_factory=set)     # HVs to be greened
    uncertain: Set[int] = field(default_factory=set)      # blocking HV set
    exited: Set[int] = field(default_factory=set)
    pending: List[Tuple[int, int, int]] = field(default_factory=list)
    # pending entries are (vehicle id, path id, request slot)


@dataclass(frozen=True)
class ManagerConfig:
    # 'printed': the planned-permission helper vehicle follows the HV;
    # 'flipped': it leads the HV.  Both orderings must stay safe.
    plan_follow_sign: str = "printed"
    # Test-only sabotage: skip the conflict check when granting (step 3).
    disable_conflict_check: bool = False


def compute_exited(view: WorldView) -> Set[int]:
    """Vehicles past their entry point and outside the junction box."""
    out: Set[int] = set()
    for vid, snap in view.vehicles.items():
        path = view.model.paths[snap.path]
        if snap.s > path.entry_s:
            point = path.point_at(snap.s)
            if not view.model.inside_core(point):
                out.add(vid)
    return out


def compute_uncertain(view: WorldView, prev_signals: SignalState) -> Set[int]:
    """HVs that saw green last slot and may fail to stop before the box.

    The threshold speed is the printed worst estimate
    ``max(v_prev + a_max*h, v_max)``, which the speed cap pins at ``v_max``.
    """
    p = view.params
    out: Set[int] = set()
    for vid, snap in view.vehicles.items():
        if snap.kind is not VehicleKind.HV:
            continue
        if prev_signals.color(snap.path) != GREEN:
            continue
        d = view.dist_to_entry(vid)
        v_est = max(snap.v_slot_prev + p.a_max * p.h, p.v_max)
        if d < hv_gap(v_est, 0.0, p):
            out.add(vid)
    return out


def _blocking_uncertain(view: WorldView, prev_signals: SignalState,
                        carried: Set[int], exited: Set[int]) -> Set[int]:
    """The uncertain set the manager actually blocks on.

    Extends the one-slot definition with HVs still transiting the box and
    HVs seen under amber that may be unable to stop; membership persists
    until the vehicle exits or is pinned by a red light before the entry
    (a red-facing HV short of the line is stopping by rule).
    """
    p = view.params
    fresh = compute_uncertain(view, prev_signals)
    for vid, snap in view.vehicles.items():
        if snap.kind is not VehicleKind.HV or vid in fresh:
            continue
        d = view.dist_to_entry(vid)
        path = view.model.paths[snap.path]
        inside = view.model.inside_core(path.point_at(snap.s))
        if inside and snap.s > path.entry_s:
            fresh.add(vid)
            continue
        if prev_signals.color(snap.path) == AMBER:
            v_est = max(snap.v_slot_prev + p.a_max * p.h, p.v_max)
            if d < hv_gap(v_est, 0.0, p):
                fresh.add(vid)
    keep: Set[int] = set()
    for vid in carried | fresh:
        snap = view.vehicles.get(vid)
        if snap is None or vid in exited:
            continue
        pre_entry = snap.s < view.model.paths[snap.path].entry_s
        if pre_entry and prev_signals.color(snap.path) == RED:
            continue
        keep.add(vid)
    return keep


def _paths_of(view: WorldView, vids: Iterable[int]) -> Set[int]:
    return {view.vehicles[v].path for v in vids if v in view.vehicles}


def _conflict_free(model: IntersectionModel, path: int,
                   others: Iterable[int]) -> bool:
    return all(not model.conflicts(path, q) for q in others)


def assign_permissions(state: ManagerState, view: WorldView,
                       requests: Sequence[Tuple[int, int, int]],
                       config: ManagerConfig = ManagerConfig(),
                       ) -> Tuple[ManagerState, List[int], List[int]]:
    """One permission round; returns (new state, new grants, new plans).

    Steps: carry over permissions minus exits; sort pending requests closest
    first; grant requests whose path conflicts with nothing committed; plan
    green for HVs on conflict-free paths or HVs trailed by committed
    vehicles on the same path.
    """
    model = view.model
    granted = {v for v in state.granted_av
               if v not in state.exited and v in view.vehicles}
    planned = {v for v in state.planned_hv
               if v not in state.exited and v in view.vehicles}
    pending = [r for r in list(state.pending) + list(requests)
               if r[0] in view.vehicles and r[0] not in granted
               and r[0] not in state.exited]
    pending.sort(key=lambda r: (view.dist_to_entry(r[0]), r[2], r[0]))

    committed = _paths_of(view, granted | planned | state.uncertain)
    new_grants: List[int] = []
    still_pending: List[Tuple[int, int, int]] = []
    for vid, path, slot in pending:
        ok = config.disable_conflict_check or _conflict_free(
            model, path, committed)
        if ok:
            granted.add(vid)
            committed.add(path)
            new_grants.append(vid)
        else:
            still_pending.append((vid, path, slot))

    new_plans: List[int] = []
    hv_pool = sorted(
        (vid for vid, snap in view.vehicles.items()
         if snap.kind is VehicleKind.HV and vid not in state.exited
         and model.paths[snap.path].kind is not PathKind.RIGHT
         and model.dist_to_core(model.paths[snap.path].point_at(snap.s))
         <= model.v2i_range),
        key=lambda v: (view.dist_to_entry(v), v))
    helpers = granted | state.uncertain
    for vid in hv_pool:
        if vid in planned:
            continue
        snap = view.vehicles[vid]
        if _conflict_free(model, snap.path, committed - {snap.path}):
            planned.add(vid)
            committed.add(snap.path)
            new_plans.append(vid)
            continue
        for hid in helpers:
            helper = view.vehicles.get(hid)
            if helper is None or helper.path != snap.path or hid == vid:
                continue
            rel = helper.s - snap.s       # >0 when the helper is ahead
            follows = rel < 0 if config.plan_follow_sign == "printed" else rel > 0
            if follows:
                planned.add(vid)
                new_plans.append(vid)
                break

    new_state = ManagerState(granted_av=granted, planned_hv=planned,
                             uncertain=set(state.uncertain),
                             exited=set(state.exited),
                             pending=still_pending)
    return new_state, new_grants, new_plans


def amber_hold_active(view: WorldView, path_id: int,
                      exited: Set[int]) -> bool:
    """Policy hold: some human on the path cannot stop short of the box.

    A stopped HV short of the line can trivially stay stopped, so it does
    not hold the light; one inside the box does until it exits.
    """
    p = view.params
    for vid, snap in view.vehicles.items():
        if snap.kind is not VehicleKind.HV or snap.path != path_id:
            continue
        if vid in exited:
            continue
        d = view.dist_to_entry(vid)
        if d < hv_gap(snap.v, 0.0, p) and (snap.v > _V_STOPPED or d <= 0.0):
            return True
    return False


def update_signals(signals: SignalState, state: ManagerState,
                   view: WorldView, slot: int) -> Tuple[SignalState, List[Tuple[int, str, str]]]:
    """Advance every light one step toward its demanded color.

    Demand: green while some planned HV is on the path, amber while some
    blocking-uncertain (and hold-relevant) HV is, red otherwise.  Transitions
    follow the strict cycle and green is granted only while every conflicting
    path shows red.
    """
    model = view.model
    p = view.params
    demanded: Dict[int, str] = {}
    for pid in signals.colors:
        want = RED
        for vid in state.planned_hv:
            snap = view.vehicles.get(vid)
            if snap is not None and snap.path == pid and vid not in state.exited:
                want = GREEN
                break
        if want is RED:
            for vid in state.uncertain - state.planned_hv:
                snap = view.vehicles.get(vid)
                if snap is None or snap.path != pid or vid in state.exited:
                    continue
                d = view.dist_to_entry(vid)
                if (snap.v > _V_STOPPED and d < hv_gap(snap.v, 0.0, p)) or d <= 0.0:
                    want = AMBER
                    break
        demanded[pid] = want

    out = signals.copy()
    changes: List[Tuple[int, str, str]] = []
    # downgrades first (green/amber toward red)
    for pid in sorted(out.colors):
        cur = out.colors[pid]
        want = demanded[pid]
        if cur == GREEN and want != GREEN:
            out.colors[pid] = AMBER
            out.amber_since[pid] = slot
        elif cur == AMBER:
            if amber_hold_active(view, pid, state.exited):
                continue
            if want != AMBER:
                out.colors[pid] = RED
                out.amber_since.pop(pid, None)
    # upgrades: red -> green when demanded and every conflicting path is red
    for pid in sorted(out.colors):
        if out.colors[pid] == RED and demanded[pid] == GREEN:
            rivals = model.conflicting_paths(pid)
            if all(out.colors.get(q, RED) == RED for q in rivals):
                out.colors[pid] = GREEN
    for pid in sorted(out.colors):
        if out.colors[pid] != signals.colors[pid]:
            changes.append((pid, signals.colors[pid], out.colors[pid]))

    for pid in sorted(out.colors):
        if out.colors[pid] != RED:
            for q in model.conflicting_paths(pid):
                if out.colors.get(q, RED) != RED:
                    raise ProtocolConflictError(
                        f"paths {pid} and {q} simultaneously non-red")
    return out, changes


def check_policy1(slot_records: Sequence[dict],
                  model: IntersectionModel,
                  params: Params) -> List[str]:
    """Verify a recorded signal trace against the signal operation policy.

    Each record carries ``slot``, ``colors`` ({path: color}) and ``hvs``
    (list of dicts with path, distance to entry, speed, exited flag).
    Checks conflict exclusivity, cycle order, and that no amber-to-red
    transition strands a human that could not stop.
    """
    problems: List[str] = []
    allowed = {(GREEN, GREEN), (GREEN, AMBER), (AMBER, AMBER), (AMBER, RED),
               (RED, RED), (RED, GREEN)}
    prev_colors: Optional[Dict[int, str]] = None
    for rec in slot_records:
        slot = rec["slot"]
        colors = rec["colors"]
        for pid, color in colors.items():
            if color != RED:
                for q in model.conflicting_paths(pid):
                    if colors.get(q, RED) != RED:
                        problems.append(
                            f"slot {slot}: paths {pid},{q} both non-red")
        if prev_colors is not None:
            for pid, color in colors.items():
                before = prev_colors.get(pid, RED)
                if (before, color) not in allowed:
                    problems.append(
                        f"slot {slot}: path {pid} jumped {before}->{color}")
                if before == AMBER and color == RED:
                    for hv in rec["hvs"]:
                        if hv["path"] != pid or hv.get("exited"):
                            continue
                        d, v = hv["d_entry"], hv["v"]
                        stranded = d <= 0.0 or (
                            v > _V_STOPPED and d < hv_gap(v, 0.0, params))
                        if stranded:
                            problems.append(
                                f"slot {slot}: path {pid} went red with "
                                f"vehicle {hv['vid']} unable to stop")
        prev_colors = colors
    return problems
