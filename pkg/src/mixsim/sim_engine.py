"""Deterministic closed-loop simulation with an always-on safety monitor.

Each slot: freeze a world snapshot; update the exited and uncertain sets;
assign permissions; move the lights; let every AV plan and commit its slot
input; then advance the slot in micro-steps, integrating HV speed profiles
and checking every safety invariant at micro-step resolution.

The monitor is independent of the controllers: it re-derives follow
relations and required gaps from pristine parameters, so weakened-behavior
test hooks surface as recorded violations rather than silent drift.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .av_planner import (PlanInfeasibleError, ReferenceObject, fallback_brake,
                         plan, select_reference_object)
from .geometry import (IntersectionModel, LaneSpec, PathKind, build_intersection)
from .hv_driver import (DriverState, HvMode, RightTurnInfo,
                        RulesInfeasibleError, follow_guard, hv_decide,
                        right_turn_gate_ok, stop_guard)
from .intersection_manager import (AMBER, GREEN, RED, ManagerConfig,
                                   ManagerState, ProtocolConflictError,
                                   SignalState, assign_permissions,
                                   _blocking_uncertain, check_policy1,
                                   compute_exited, compute_uncertain)
from .params import Params, VehicleKind
from .separation import FollowContext, av_gap, hv_gap
from .world import VehicleSnap, WorldView

_V_STOP = 0.05


# -- scenario description ---------------------------------------------------

@dataclass(frozen=True)
class GeometryConfig:
    lanes: Tuple[int, int, int, int, int] = (1, 0, 1, 1, 0)
    approaches: Tuple[int, ...] = (0, 1, 2, 3)
    lane_width: float = 3.5
    v2i_range: float = 80.0
    signal_range: float = 50.0

    def key(self) -> tuple:
        return (self.lanes, self.approaches, self.lane_width,
                self.v2i_range, self.signal_range)


@dataclass(frozen=True)
class Arrival:
    slot: int
    kind: VehicleKind
    path: int
    speed: float


@dataclass(frozen=True)
class PoissonTraffic:
    """Stochastic demand: one rate per path, HVs drawn by fraction."""

    rate_per_path_hour: float = 120.0
    hv_fraction: float = 0.5
    stop_slot: Optional[int] = None     # last slot that may spawn arrivals
    speed_lo: float = 0.5               # spawn speed range, fraction of v_max
    speed_hi: float = 1.0


@dataclass
class Scenario:
    geometry: GeometryConfig = GeometryConfig()
    params: Params = field(default_factory=Params)
    horizon: int = 1000
    hv_mode: HvMode = HvMode.NOMINAL
    schedule: Tuple[Arrival, ...] = ()
    traffic: Optional[PoissonTraffic] = None
    manager: ManagerConfig = ManagerConfig()
    name: str = "scenario"


@dataclass
class Violation:
    slot: int
    micro: int
    vtype: str
    vehicles: Tuple[int, ...]
    measured: float
    required: float

    def to_dict(self) -> dict:
        return {"slot": self.slot, "micro": self.micro, "type": self.vtype,
                "vehicles": list(self.vehicles), "measured": self.measured,
                "required": self.required}


@dataclass
class TraceEvent:
    slot: int
    micro: int
    kind: str
    payload: dict

    def to_line(self) -> str:
        rec = {"slot": self.slot, "micro": self.micro, "kind": self.kind}
        rec.update(self.payload)
        return json.dumps(rec, sort_keys=True)


@dataclass
class Metrics:
    throughput_per_hour: float = 0.0
    mean_delay_s: float = 0.0
    stops_hv: int = 0
    stops_av: int = 0
    spawned: int = 0
    crossed: int = 0
    unfinished: int = 0
    queued_never_spawned: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SafetyReport:
    violations: List[Violation] = field(default_factory=list)
    metrics: Metrics = field(default_factory=Metrics)
    guard_slips: int = 0
    lemma3_failures: int = 0
    policy1_problems: List[str] = field(default_factory=list)

    @property
    def safe(self) -> bool:
        return not self.violations and self.lemma3_failures == 0 \
            and not self.policy1_problems


@dataclass
class RunResult:
    trace: List[TraceEvent]
    report: SafetyReport
    slot_table: List[dict]
    scenario: Scenario
    seed: int

    def trace_lines(self) -> List[str]:
        return [e.to_line() for e in self.trace]


@functools.lru_cache(maxsize=16)
def _cached_model(key: tuple, params_key: tuple) -> IntersectionModel:
    lanes, approaches, lane_width, v2i, signal = key
    params = Params(*params_key)
    return build_intersection(
        lanes=LaneSpec(*lanes), params=params, approaches=approaches,
        lane_width=lane_width, v2i_range=v2i, signal_range=signal)


def model_for(geom: GeometryConfig, params: Params) -> IntersectionModel:
    clean = params.with_overrides(weaken={})
    pkey = (clean.h, clean.delta, clean.v_max, clean.a_min_hv, clean.a_min_av,
            clean.a_max, clean.t_r_hv, clean.s_min, clean.rho_min,
            clean.theta_min, clean.theta_max, clean.brake_split_long,
            clean.brake_split_lat)
    return _cached_model(geom.key(), pkey)


# -- engine -----------------------------------------------------------------

class _Veh:
    __slots__ = ("vid", "kind", "path", "s", "v", "v_slot_prev", "slot_speed",
                 "profile", "driver", "requested", "permitted", "spawn_slot",
                 "spawn_s", "spawn_time", "crossed_exit", "stops", "moving",
                 "rng")

    def __init__(self, vid: int, kind: VehicleKind, path: int, s: float,
                 v: float, spawn_slot: int, rng: np.random.Generator):
        self.vid = vid
        self.kind = kind
        self.path = path
        self.s = s
        self.v = v
        self.v_slot_prev = v
        self.slot_speed = v
        self.profile: Optional[List[float]] = None
        self.driver = DriverState()
        self.requested = False
        self.permitted = False
        self.spawn_slot = spawn_slot
        self.spawn_s = s
        self.spawn_time = 0.0
        self.crossed_exit = False
        self.stops = 0
        self.moving = v > _V_STOP
        self.rng = rng


class SimEngine:
    def __init__(self, scenario: Scenario, seed: int, record_trace: bool = True):
        self.sc = scenario
        self.seed = int(seed)
        self.p = scenario.params
        self.p_true = scenario.params.with_overrides(weaken={})
        self.model = model_for(scenario.geometry, scenario.params)
        self.record_trace = record_trace

        self.vehicles: Dict[int, _Veh] = {}
        self.next_vid = 1
        self.mgr = ManagerState()
        self.signals = SignalState.initial(self.model)
        self.trace: List[TraceEvent] = []
        self.violations: List[Violation] = []
        self.slot_table: List[dict] = []
        self.slot_records: List[dict] = []      # for the signal-trace verifier
        self.guard_slips = 0
        self.lemma3_failures = 0
        self.exit_times: List[Tuple[float, float]] = []  # (actual, free-flow)
        self.spawned = 0
        self.stops_by_kind = {VehicleKind.HV: 0, VehicleKind.AV: 0}

        self._arrival_queues: Dict[int, List[Arrival]] = {}
        self._build_arrivals()
        self._prep_static()

    # -- static precomputation -------------------------------------------

    def _prep_static(self) -> None:
        m = self.model
        self.path_ids = sorted(m.paths)
        self.entry_s = {pid: m.paths[pid].entry_s for pid in self.path_ids}
        self.exit_s = {pid: m.paths[pid].exit_s for pid in self.path_ids}
        # per-path rule zone (signal visibility plus the box and near exit)
        self.zone: Dict[int, Tuple[float, float]] = {}
        for pid in self.path_ids:
            path = m.paths[pid]
            lo = max(0.0, path.entry_s - m.signal_range)
            svals = np.arange(path.exit_s, path.length, 0.5)
            hi = path.length
            for s in svals:
                if m.dist_to_core(path.point_at(float(s))) > m.signal_range:
                    hi = float(s)
                    break
            self.zone[pid] = (lo, hi)
        # offsets of every segment on every path, for cross-path mapping
        max_seg = max(seg.seg_id for p in m.paths.values() for seg in p.segments)
        self.seg_offset = {}
        for pid in self.path_ids:
            arr = np.full(max_seg + 2, np.nan)
            path = m.paths[pid]
            for seg, start in zip(path.segments, path.seg_starts):
                arr[seg.seg_id] = start
            self.seg_offset[pid] = arr
        self.seg_starts = {pid: np.array(m.paths[pid].seg_starts)
                           for pid in self.path_ids}
        self.seg_ids_arr = {pid: np.array(m.paths[pid].segment_ids())
                            for pid in self.path_ids}
        # right-turn info: conflict path, its entry, merge windows
        self.right_info: Dict[int, RightTurnInfo] = {}
        for pid in self.path_ids:
            path = m.paths[pid]
            if path.kind is not PathKind.RIGHT:
                continue
            conflict = m.conflicting_paths(pid)[0]
            area = m.conflicts(pid, conflict)[0]
            own_iv = area.intervals[pid]
            conf_iv = area.intervals[conflict]
            shared = set(path.segment_ids()) \
                & set(m.paths[conflict].segment_ids())
            center = None
            for seg, start in zip(m.paths[conflict].segments,
                                  m.paths[conflict].seg_starts):
                if seg.seg_id in shared:
                    center = start
                    break
            self.right_info[pid] = RightTurnInfo(
                conflict_path=conflict,
                conflict_entry=m.paths[conflict].entry_s,
                own_disk_out=own_iv[1],
                conf_disk_in=conf_iv[0],
                conf_disk_out=conf_iv[1],
                conf_center=center if center is not None
                else 0.5 * (conf_iv[0] + conf_iv[1]))

    def _build_arrivals(self) -> None:
        sc = self.sc
        queues: Dict[int, List[Arrival]] = {pid: [] for pid in
                                            sorted(self.model.paths)}
        for a in sc.schedule:
            queues[a.path].append(a)
        if sc.traffic is not None:
            tr = sc.traffic
            stop = tr.stop_slot if tr.stop_slot is not None else sc.horizon
            t_max = stop * self.p.h
            rate = tr.rate_per_path_hour / 3600.0
            for pid in sorted(self.model.paths):
                rng = np.random.default_rng(
                    np.random.SeedSequence((self.seed, 1, pid)))
                if rate <= 0:
                    continue
                t = rng.exponential(1.0 / rate)
                while t < t_max:
                    kind = (VehicleKind.HV if rng.random() < tr.hv_fraction
                            else VehicleKind.AV)
                    speed = self.p.v_max * rng.uniform(tr.speed_lo, tr.speed_hi)
                    queues[pid].append(Arrival(slot=int(t / self.p.h), kind=kind,
                                               path=pid, speed=float(speed)))
                    t += rng.exponential(1.0 / rate)
        for pid in queues:
            queues[pid].sort(key=lambda a: a.slot)
        self._arrival_queues = queues

    # -- helpers -----------------------------------------------------------

    def _emit(self, slot: int, micro: int, kind: str, payload: dict) -> None:
        if self.record_trace:
            self.trace.append(TraceEvent(slot, micro, kind, payload))

    def _violate(self, slot: int, micro: int, vtype: str,
                 vehicles: Tuple[int, ...], measured: float,
                 required: float) -> None:
        self.violations.append(Violation(slot, micro, vtype, vehicles,
                                         measured, required))
        self._emit(slot, micro, "violation",
                   {"vtype": vtype, "vehicles": list(vehicles),
                    "measured": measured, "required": required})

    def _snapshot(self) -> WorldView:
        snaps = {}
        for vid, veh in self.vehicles.items():
            snaps[vid] = VehicleSnap(
                vid=vid, kind=veh.kind, path=veh.path, s=veh.s, v=veh.v,
                v_slot_prev=veh.v_slot_prev, accel=veh.driver.accel)
        return WorldView(model=self.model, params=self.p, vehicles=snaps)

    # -- spawning ----------------------------------------------------------

    def _try_spawns(self, t: int) -> None:
        view = self._snapshot()
        for pid in sorted(self._arrival_queues):
            queue = self._arrival_queues[pid]
            while queue and queue[0].slot <= t:
                arr = queue[0]
                if self._admit(view, arr):
                    queue.pop(0)
                    vid = self.next_vid
                    self.next_vid += 1
                    rng = np.random.default_rng(
                        np.random.SeedSequence((self.seed, 2, vid)))
                    veh = _Veh(vid, arr.kind, arr.path, 0.0, arr.speed, t, rng)
                    veh.spawn_time = t * self.p.h
                    self.vehicles[vid] = veh
                    self.spawned += 1
                    self._emit(t, 0, "spawn",
                               {"vid": vid, "vkind": arr.kind.value,
                                "path": arr.path, "speed": arr.speed})
                    view = self._snapshot()
                else:
                    break

    def _admit(self, view: WorldView, arr: Arrival) -> bool:
        """Admission control: a spawn must satisfy its own separation
        relation (with working margin) and must not break the relations of
        AVs it would turn into virtual HVs."""
        p = self.p
        ghost = VehicleSnap(vid=-1, kind=arr.kind, path=arr.path, s=0.0,
                            v=arr.speed, v_slot_prev=arr.speed)
        lead = None
        for oid, snap in view.vehicles.items():
            pos = view.mapped_position(arr.path, snap)
            if pos is None or pos <= -0.5:
                continue
            # anything at or barely past the spawn point blocks outright
            if lead is None or pos < lead[1]:
                lead = (oid, pos)
        if lead is None:
            return True
        if lead[1] < p.s_min:
            return False
        lead_snap = view.vehicles[lead[0]]
        gap = lead[1]
        if arr.kind is VehicleKind.HV:
            if gap < follow_guard(arr.speed, lead_snap.v, 0.0, p) + 6.0:
                return False
            return self._vhv_absorbable(view, lead[0])
        ctx = FollowContext(
            VehicleKind.HV if view.is_hv_like(lead[0]) else VehicleKind.AV,
            VehicleKind.AV)
        need = av_gap(ctx, arr.speed, lead_snap.v_slot_prev, p)
        return gap >= need + 2.0

    def _vhv_absorbable(self, view: WorldView, first_lead: int) -> bool:
        """Would the AV chain ahead of a new HV still satisfy its relations
        once braking-restricted to HV limits?"""
        p = self.p
        vid = first_lead
        seen = set()
        while vid is not None and vid not in seen:
            seen.add(vid)
            snap = view.vehicles[vid]
            if snap.kind is VehicleKind.HV or snap.virtual_hv:
                return True        # chain already ends at an HV-like vehicle
            path = self.model.paths[snap.path]
            if snap.s <= path.exit_s:
                veh = self.vehicles[vid]
                lead = view.nearest_lead(vid)
                own = VehicleKind.HV
                if not veh.permitted and snap.s < path.entry_s:
                    ctx = FollowContext(VehicleKind.AV, own)
                    need = av_gap(ctx, snap.v_slot_prev, 0.0, self.p_true)
                    if path.entry_s - snap.s < need:
                        return False
                if lead is not None:
                    lead_snap = view.vehicles[lead[0]]
                    lk = VehicleKind.HV if view.is_hv_like(lead[0]) \
                        else VehicleKind.AV
                    need = av_gap(FollowContext(lk, own), snap.v_slot_prev,
                                  lead_snap.v_slot_prev, self.p_true)
                    if lead[1] < need:
                        return False
            nxt = view.nearest_lead(vid)
            vid = nxt[0] if nxt is not None else None
        return True

    # -- main loop ----------------------------------------------------------

    def run(self) -> RunResult:
        p = self.p
        horizon = self.sc.horizon
        for t in range(horizon):
            self._try_spawns(t)
            view = self._snapshot()
            view.leads()                     # also marks virtual HVs

            prev_signals = self.signals
            exited = compute_exited(view)
            self.mgr.exited = exited
            self.mgr.uncertain = _blocking_uncertain(
                view, prev_signals, self.mgr.uncertain, exited)

            requests = self._collect_requests(view, t)
            self.mgr, grants, plans = assign_permissions(
                self.mgr, view, requests, self.sc.manager)
            for vid in grants:
                self.vehicles[vid].permitted = True
                self._emit(t, 0, "grant", {"vid": vid,
                                           "path": view.vehicles[vid].path})

            self.signals, changes = update_signals_safe(
                self.signals, self.mgr, view, t)
            for pid, old, new in changes:
                self._emit(t, 0, "color-change",
                           {"path": pid, "from": old, "to": new})

            self._check_lemma3(view, t)
            self._check_boundary_relations(view, t)
            self._record_slot(view, t)

            self._plan_avs(view, t)
            self._hv_profiles(view, prev_signals, t)
            self._integrate_slot(view, t)

        report = self._finish(horizon)
        return RunResult(trace=self.trace, report=report,
                         slot_table=self.slot_table, scenario=self.sc,
                         seed=self.seed)

    def _collect_requests(self, view: WorldView, t: int):
        out = []
        for vid in view.order():
            veh = self.vehicles[vid]
            if veh.kind is not VehicleKind.AV or veh.requested:
                continue
            if view.dist_to_entry(vid) <= self.model.v2i_range:
                veh.requested = True
                out.append((vid, veh.path, t))
        return out

    def _check_lemma3(self, view: WorldView, t: int) -> None:
        committed = sorted(self.mgr.granted_av | self.mgr.planned_hv
                           | self.mgr.uncertain)
        paths = []
        for vid in committed:
            snap = view.vehicles.get(vid)
            if snap is not None and vid not in self.mgr.exited:
                paths.append(snap.path)
        for i in range(len(paths)):
            for j in range(i + 1, len(paths)):
                if self.model.conflicts(paths[i], paths[j]):
                    self.lemma3_failures += 1
                    self._violate(t, 0, "conflicting-permissions",
                                  (committed[i], committed[j]), 0.0, 0.0)
                    return

    def _check_boundary_relations(self, view: WorldView, t: int) -> None:
        """Theorem relation for AVs at the slot boundary: distance to each
        reference object at least the sampled-speed separation floor."""
        for vid in view.order():
            veh = self.vehicles[vid]
            snap = view.vehicles[vid]
            if veh.kind is not VehicleKind.AV:
                continue
            if snap.s > self.exit_s[veh.path]:
                continue
            refs = select_reference_object(view, vid, veh.permitted)
            for r in refs:
                w = r.sampled_v_ro
                ctx = r.ctx
                need = av_gap(ctx, snap.v_slot_prev, w, self.p_true)
                if r.gap < need - 1e-6:
                    other = (r.target,) if r.target is not None else ()
                    self._violate(t, 0, "av-separation", (vid,) + other,
                                  r.gap, need)

    def _record_slot(self, view: WorldView, t: int) -> None:
        hvs = []
        for vid in view.order():
            snap = view.vehicles[vid]
            if snap.kind is VehicleKind.HV:
                hvs.append({"vid": vid, "path": snap.path,
                            "d_entry": view.dist_to_entry(vid),
                            "v": snap.v,
                            "exited": vid in self.mgr.exited})
        self.slot_records.append({"slot": t, "colors": dict(self.signals.colors),
                                  "hvs": hvs})
        n_av = sum(1 for s in view.vehicles.values()
                   if s.kind is VehicleKind.AV)
        self.slot_table.append({
            "slot": t, "vehicles": len(view.vehicles), "avs": n_av,
            "hvs": len(view.vehicles) - n_av,
            "mean_speed": (float(np.mean([s.v for s in view.vehicles.values()]))
                           if view.vehicles else 0.0),
            "crossed_total": len(self.exit_times),
            "violations_total": len(self.violations),
        })
        if self.record_trace:
            for vid in view.order():
                snap = view.vehicles[vid]
                self._emit(t, 0, "state-sample",
                           {"vid": vid, "s": snap.s, "v": snap.v,
                            "path": snap.path})

    def _plan_avs(self, view: WorldView, t: int) -> None:
        for vid in view.order():
            veh = self.vehicles[vid]
            if veh.kind is not VehicleKind.AV:
                continue
            permitted = veh.permitted
            info = self.right_info.get(veh.path)
            if permitted and info is not None \
                    and veh.s < self.entry_s[veh.path] \
                    and not right_turn_gate_ok(view, vid, self.p, info):
                # hold a permitted right-turner out while the merge window
                # on the conflicting path is not provably clear
                permitted = False
            refs = select_reference_object(view, vid, permitted)
            result = plan(view, vid, refs)
            v_cmd = result.speeds[0]
            limit = view.brake_limit(vid)
            if v_cmd < veh.v_slot_prev + limit * self.p.h - 1e-6:
                self._violate(t, 0, "vhv-brake-limit", (vid,),
                              v_cmd - veh.v_slot_prev, limit * self.p.h)
            veh.slot_speed = v_cmd
            if self.record_trace:
                self._emit(t, 0, "plan",
                           {"vid": vid, "v_cmd": v_cmd,
                            "feasible_by": result.feasible_by,
                            "cost": result.cost})

    def _hv_profiles(self, view: WorldView, prev_signals: SignalState,
                     t: int) -> None:
        colors = self.signals.colors
        for vid in view.order():
            veh = self.vehicles[vid]
            if veh.kind is not VehicleKind.HV:
                continue
            speeds, new_state, slips = hv_decide(
                view, vid, colors, self.sc.hv_mode, veh.rng, veh.driver,
                right_info=self.right_info.get(veh.path))
            veh.profile = speeds
            veh.driver = new_state
            self.guard_slips += slips

    # -- micro-step integration and monitoring -----------------------------

    def _integrate_slot(self, view: WorldView, t: int) -> None:
        p = self.p
        m = p.micro_steps
        dt = p.delta
        vids = view.order()
        if not vids:
            return
        n = len(vids)
        idx_of = {vid: i for i, vid in enumerate(vids)}
        speeds = np.empty((n, m))
        path_arr = np.empty(n, dtype=int)
        s0 = np.empty(n)
        is_hv = np.zeros(n, dtype=bool)
        latched = np.zeros(n, dtype=bool)
        permitted = np.zeros(n, dtype=bool)
        for i, vid in enumerate(vids):
            veh = self.vehicles[vid]
            path_arr[i] = veh.path
            s0[i] = veh.s
            is_hv[i] = veh.kind is VehicleKind.HV
            latched[i] = veh.driver.stop_latched
            permitted[i] = veh.permitted
            if veh.kind is VehicleKind.AV:
                speeds[i, :] = veh.slot_speed
            else:
                speeds[i, :] = veh.profile
        pos = np.empty((n, m + 1))
        pos[:, 0] = s0
        pos[:, 1:] = s0[:, None] + np.cumsum(speeds, axis=1) * dt

        mapped = self._mapped_positions(vids, path_arr, pos)
        self._monitor_micro(view, t, vids, path_arr, pos, speeds, mapped,
                            is_hv, latched, permitted)

        # commit end-of-slot state
        for i, vid in enumerate(vids):
            veh = self.vehicles[vid]
            prev_momentary = veh.v
            veh.s = float(pos[i, m])
            veh.v = float(speeds[i, m - 1])
            veh.v_slot_prev = (veh.slot_speed if veh.kind is VehicleKind.AV
                               else prev_momentary)
            if veh.moving and veh.v <= _V_STOP:
                veh.stops += 1
                self.stops_by_kind[veh.kind] += 1
                veh.moving = False
            elif veh.v > _V_STOP:
                veh.moving = True
            if not veh.crossed_exit and veh.s >= self.exit_s[veh.path]:
                veh.crossed_exit = True
                cross_micro = int(np.searchsorted(pos[i], self.exit_s[veh.path]))
                actual = (t * p.h + min(cross_micro, m) * dt) - veh.spawn_time
                free = (self.exit_s[veh.path] - veh.spawn_s) / p.v_max
                self.exit_times.append((actual, free))
                self._emit(t, min(cross_micro, m), "exit", {"vid": vid})
            if veh.s >= self.model.paths[veh.path].length - 1.0:
                del self.vehicles[vid]

    def _mapped_positions(self, vids, path_arr, pos) -> Dict[int, np.ndarray]:
        """Positions of every vehicle measured along every relevant path.

        mapped[pid][i, k] is vehicle i's arc length along path pid at micro
        step k, NaN while it is not on a segment that path uses.
        """
        out: Dict[int, np.ndarray] = {}
        n, mk = pos.shape
        seg_idx = np.empty((n, mk), dtype=int)
        seg_global = np.empty((n, mk), dtype=int)
        local = np.empty((n, mk))
        for i in range(n):
            pid = path_arr[i]
            starts = self.seg_starts[pid]
            idx = np.clip(np.searchsorted(starts, pos[i], side="right") - 1,
                          0, len(starts) - 1)
            seg_idx[i] = idx
            seg_global[i] = self.seg_ids_arr[pid][idx]
            local[i] = pos[i] - starts[idx]
        needed = set(path_arr.tolist())
        for pid in list(needed):
            info = self.right_info.get(pid)
            if info is not None:
                needed.add(info.conflict_path)
        for pid in needed:
            table = self.seg_offset[pid]
            out[pid] = table[seg_global] + local
        return out

    def _monitor_micro(self, view: WorldView, t: int, vids, path_arr, pos,
                       speeds, mapped, is_hv, latched, permitted) -> None:
        p = self.p_true
        n, mk = pos.shape
        m = mk - 1

        # lead gaps and lead speeds per vehicle per micro-step
        for i, vid in enumerate(vids):
            pid = path_arr[i]
            mp = mapped[pid]                       # (n, m+1)
            rel = mp - pos[i][None, :]
            rel[i, :] = np.nan
            relf = np.where(np.isnan(rel) | (rel <= 1e-9), np.inf, rel)
            lead_row = np.argmin(relf, axis=0)
            gaps = relf[lead_row, np.arange(mk)]
            have = np.isfinite(gaps)
            ks = np.nonzero(have)[0]
            ks = ks[ks >= 1]
            if len(ks) == 0:
                continue
            gk = gaps[ks]
            vk = speeds[i, ks - 1]
            lead_idx = lead_row[ks]
            wk = speeds[lead_idx, ks - 1]
            # bumper proxy: centers closer than the size margin
            bad = gk < p.s_min - 1e-9
            if np.any(bad):
                k_rel = int(np.argmax(bad))
                k = int(ks[k_rel])
                self._violate(t, k, "bumper", (vid, vids[int(lead_idx[k_rel])]),
                              float(gk[k_rel]), p.s_min)
            if is_hv[i]:
                zone_lo, zone_hi = self.zone[pid]
                inz = (pos[i, ks] >= zone_lo) & (pos[i, ks] <= zone_hi) \
                    & (gk + pos[i, ks] >= zone_lo) & (gk + pos[i, ks] <= zone_hi)
                req = np.where(vk > wk,
                               (vk * vk - wk * wk) / (-2.0 * p.a_min_hv), 0.0) \
                    + p.v_max * p.t_r_hv + p.s_min
                bad = inz & (gk < req - 1e-6)
                if np.any(bad):
                    k_rel = int(np.argmax(bad))
                    k = int(ks[k_rel])
                    self._violate(t, k, "hv-separation",
                                  (vid, vids[int(lead_idx[k_rel])]),
                                  float(gk[k_rel]), float(req[k_rel]))

        # collision-area co-occupancy
        for area in self.model.areas:
            pa, pb = area.paths
            on_a = path_arr == pa
            on_b = path_arr == pb
            if not (np.any(on_a) and np.any(on_b)):
                continue
            iv_a = area.intervals[pa]
            iv_b = area.intervals[pb]
            occ_a = on_a[:, None] & (pos >= iv_a[0]) & (pos <= iv_a[1])
            occ_b = on_b[:, None] & (pos >= iv_b[0]) & (pos <= iv_b[1])
            both = np.any(occ_a, axis=0) & np.any(occ_b, axis=0)
            if not np.any(both):
                continue
            for k in np.nonzero(both)[0]:
                ia = [int(x) for x in np.nonzero(occ_a[:, k])[0]]
                ib = [int(x) for x in np.nonzero(occ_b[:, k])[0]]
                flagged = False
                for i in ia:
                    for j in ib:
                        if area.merge:
                            ga = mapped[pa][j, k] - pos[i, k]
                            if not math.isnan(ga) and abs(ga) >= p.s_min:
                                continue
                        self._violate(t, int(k), "area-co-occupancy",
                                      (vids[i], vids[j]), 0.0, 0.0)
                        flagged = True
                        break
                    if flagged:
                        break
                if flagged:
                    break

        # entry crossings: permission for AVs, signal discipline for HVs
        for i, vid in enumerate(vids):
            pid = path_arr[i]
            e = self.entry_s[pid]
            if not (pos[i, 0] < e <= pos[i, m]):
                continue
            k = int(np.searchsorted(pos[i], e))
            veh = self.vehicles[vid]
            if not is_hv[i]:
                if not permitted[i]:
                    self._violate(t, k, "entry-without-right", (vid,), 0.0, 0.0)
                continue
            kind = self.model.paths[pid].kind
            if kind is PathKind.RIGHT:
                info = self.right_info[pid]
                conflict, conf_entry = info.conflict_path, info.conflict_entry
                mp = mapped.get(conflict)
                if mp is None:
                    continue
                best = None
                for j in range(n):
                    if j == i or math.isnan(mp[j, k]):
                        continue
                    d = conf_entry - mp[j, k]
                    if d > 0 and (best is None or d < best[0]):
                        best = (d, speeds[j, max(k - 1, 0)])
                if best is not None:
                    bump = -p.a_min_hv * p.h
                    need = hv_gap(best[1] + bump, 0.0, p)
                    if best[0] < need - 1e-6:
                        self._violate(t, k, "entry-without-right", (vid,),
                                      best[0], need)
                continue
            color = self.signals.color(pid)
            if color == RED or latched[i]:
                self._violate(t, k, "entry-without-right", (vid,), 0.0, 0.0)

    # -- wrap-up ------------------------------------------------------------

    def _finish(self, horizon: int) -> SafetyReport:
        p = self.p
        hours = horizon * p.h / 3600.0
        delays = [a - f for a, f in self.exit_times]
        queued = sum(len(q) for q in self._arrival_queues.values())
        metrics = Metrics(
            throughput_per_hour=len(self.exit_times) / hours if hours else 0.0,
            mean_delay_s=float(np.mean(delays)) if delays else 0.0,
            stops_hv=self.stops_by_kind[VehicleKind.HV],
            stops_av=self.stops_by_kind[VehicleKind.AV],
            spawned=self.spawned,
            crossed=len(self.exit_times),
            unfinished=self.spawned - len(self.exit_times),
            queued_never_spawned=queued,
        )
        problems = check_policy1(self.slot_records, self.model, self.p_true)
        report = SafetyReport(violations=self.violations, metrics=metrics,
                              guard_slips=self.guard_slips,
                              lemma3_failures=self.lemma3_failures,
                              policy1_problems=problems)
        return report


def update_signals_safe(signals: SignalState, mgr: ManagerState,
                        view: WorldView, t: int):
    from .intersection_manager import update_signals
    return update_signals(signals, mgr, view, t)


def run(scenario: Scenario, seed: int,
        record_trace: bool = True) -> Tuple[List[TraceEvent], SafetyReport]:
    """Run one scenario; returns the trace and its safety report."""
    result = SimEngine(scenario, seed, record_trace=record_trace).run()
    return result.trace, result.report


def run_full(scenario: Scenario, seed: int,
             record_trace: bool = True) -> RunResult:
    return SimEngine(scenario, seed, record_trace=record_trace).run()


def check_safety(view: WorldView, latched: Optional[Dict[int, bool]] = None,
                 colors: Optional[Dict[int, str]] = None,
                 permitted: Optional[Set[int]] = None) -> List[Violation]:
    """Stateless safety check of a single snapshot (used by tests and for
    hand-built scenes): area co-occupancy, human follow gaps, bumper
    overlaps, and entry discipline are evaluated exactly as in the run loop.
    """
    p = view.params.with_overrides(weaken={})
    model = view.model
    out: List[Violation] = []
    latched = latched or {}
    colors = colors or {}
    permitted = permitted or set()
    vids = view.order()
    # follow gaps and bumper
    for vid in vids:
        me = view.vehicles[vid]
        lead = view.nearest_lead(vid)
        if lead is None:
            continue
        lead_snap = view.vehicles[lead[0]]
        if lead[1] < p.s_min - 1e-9:
            out.append(Violation(0, 0, "bumper", (vid, lead[0]),
                                 lead[1], p.s_min))
        if me.kind is VehicleKind.HV:
            path = model.paths[me.path]
            d_core_me = model.dist_to_core(path.point_at(me.s))
            lead_path = model.paths[lead_snap.path]
            d_core_lead = model.dist_to_core(lead_path.point_at(lead_snap.s))
            if d_core_me <= model.signal_range and \
                    d_core_lead <= model.signal_range:
                need = hv_gap(me.v, lead_snap.v, p)
                if lead[1] < need - 1e-6:
                    out.append(Violation(0, 0, "hv-separation",
                                         (vid, lead[0]), lead[1], need))
    # area co-occupancy
    for area in model.areas:
        pa, pb = area.paths
        occ_a = [v for v in vids if view.vehicles[v].path == pa
                 and area.intervals[pa][0] <= view.vehicles[v].s
                 <= area.intervals[pa][1]]
        occ_b = [v for v in vids if view.vehicles[v].path == pb
                 and area.intervals[pb][0] <= view.vehicles[v].s
                 <= area.intervals[pb][1]]
        for i in occ_a:
            for j in occ_b:
                if area.merge:
                    ga = view.mapped_position(pa, view.vehicles[j])
                    if ga is not None and abs(ga - view.vehicles[i].s) >= p.s_min:
                        continue
                out.append(Violation(0, 0, "area-co-occupancy", (i, j),
                                     0.0, 0.0))
    return out
