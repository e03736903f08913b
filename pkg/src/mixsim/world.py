"""Frozen world snapshots shared by the driver models, the planner, the
manager, and the safety monitor.

A snapshot is taken at each slot boundary; all slot decisions are computed
against it and applied atomically, so per-vehicle computations are order
independent (ties are still broken by ascending vehicle id for determinism).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .geometry import IntersectionModel
from .params import Params, VehicleKind


@dataclass
class VehicleSnap:
    """One vehicle's slot-boundary sample."""

    vid: int
    kind: VehicleKind
    path: int
    s: float                 # arc length along its path
    v: float                 # momentary speed at the boundary
    v_slot_prev: float       # speed over the previous slot (the V2I sample)
    accel: float = 0.0       # HV acceleration in force at the boundary
    virtual_hv: bool = False # AV transitively followed by an HV


@dataclass
class WorldView:
    """Slot-boundary snapshot of every vehicle plus cached relations."""

    model: IntersectionModel
    params: Params
    vehicles: Dict[int, VehicleSnap]
    _leads: Optional[Dict[int, Optional[Tuple[int, float]]]] = field(
        default=None, repr=False)

    def order(self) -> List[int]:
        return sorted(self.vehicles)

    def mapped_position(self, onto_path: int, snap: VehicleSnap) -> Optional[float]:
        return self.model.map_onto(onto_path, snap.path, snap.s)

    def nearest_lead(self, vid: int) -> Optional[Tuple[int, float]]:
        """Nearest vehicle ahead along the follower's own path.

        Vehicles on other paths count while they occupy a segment the
        follower's path also uses (shared approach lanes and post-merge exit
        lanes).  Returns ``(lead id, positive gap)`` or ``None``.
        """
        return self.leads().get(vid)

    def leads(self) -> Dict[int, Optional[Tuple[int, float]]]:
        if self._leads is not None:
            return self._leads
        out: Dict[int, Optional[Tuple[int, float]]] = {}
        for vid in self.order():
            me = self.vehicles[vid]
            best: Optional[Tuple[int, float]] = None
            for oid in self.order():
                if oid == vid:
                    continue
                other = self.vehicles[oid]
                pos = self.mapped_position(me.path, other)
                if pos is None:
                    continue
                gap = pos - me.s
                if gap > 0.0 and (best is None or gap < best[1]):
                    best = (oid, gap)
            out[vid] = best
        self._leads = out
        self._mark_virtual_hvs(out)
        return out

    def _mark_virtual_hvs(self, leads) -> None:
        """Propagate virtual-HV status forward through follower chains.

        An AV whose nearest follower chain reaches back to an HV must behave
        like an HV (brake no harder than the HV limit), and is treated as an
        HV by anything following it.
        """
        for snap in self.vehicles.values():
            snap.virtual_hv = False
        changed = True
        while changed:
            changed = False
            for vid in self.order():
                me = self.vehicles[vid]
                entry = leads.get(vid)
                if entry is None:
                    continue
                lead = self.vehicles[entry[0]]
                if lead.kind is VehicleKind.AV and not lead.virtual_hv:
                    if me.kind is VehicleKind.HV or me.virtual_hv:
                        lead.virtual_hv = True
                        changed = True

    def is_hv_like(self, vid: int) -> bool:
        snap = self.vehicles[vid]
        return snap.kind is VehicleKind.HV or snap.virtual_hv

    def brake_limit(self, vid: int) -> float:
        """Hardest braking the vehicle may use this slot."""
        snap = self.vehicles[vid]
        if snap.kind is VehicleKind.HV or snap.virtual_hv:
            return self.params.a_min_hv
        return self.params.a_min_av

    def dist_to_entry(self, vid: int) -> float:
        snap = self.vehicles[vid]
        return self.model.paths[snap.path].entry_s - snap.s
