"""Intersection geometry: legal paths, collision areas, and nested regions.

Paths are chains of straight and circular-arc segments parametrized by arc
length.  Segments are shared objects: two paths that use the same physical
lane (a shared approach lane, or a common exit lane after a merge) reference
the same segment instance, which is how car-following across path boundaries
is resolved.

The junction is surrounded by nested zones: the inner box itself, the
signal-visibility zone (lights readable), and the V2I zone (radio reachable).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .params import Params, stopping_distance

_seg_counter = itertools.count()


class GeometryError(ValueError):
    """Raised when a requested intersection violates a structural bound."""


class PathKind(Enum):
    LEFT = "left"
    STRAIGHT = "straight"
    RIGHT = "right"


class Region(Enum):
    CLEAR = "clear"            # beyond V2I range
    V2I = "v2i"                # radio reachable, lights not yet visible
    SIGNAL = "signal"          # lights visible
    INSIDE = "inside"          # within the junction box
    DOWNSTREAM = "downstream"  # past the box on the exit side


class Straight:
    """Line segment from ``start`` along unit ``direction`` for ``length`` m."""

    __slots__ = ("seg_id", "start", "direction", "length")

    def __init__(self, start: Tuple[float, float], direction: Tuple[float, float],
                 length: float):
        self.seg_id = next(_seg_counter)
        norm = math.hypot(*direction)
        self.start = (float(start[0]), float(start[1]))
        self.direction = (direction[0] / norm, direction[1] / norm)
        self.length = float(length)

    def point_at(self, s: float) -> Tuple[float, float]:
        return (self.start[0] + self.direction[0] * s,
                self.start[1] + self.direction[1] * s)

    def heading_at(self, s: float) -> float:
        return math.atan2(self.direction[1], self.direction[0])

    def curvature_at(self, s: float) -> float:
        return 0.0

    @property
    def radius(self) -> float:
        return math.inf


class Arc:
    """Circular arc around ``center``; positive sweep turns left."""

    __slots__ = ("seg_id", "center", "radius", "angle0", "sweep", "length")

    def __init__(self, center: Tuple[float, float], radius: float,
                 angle0: float, sweep: float):
        self.seg_id = next(_seg_counter)
        self.center = (float(center[0]), float(center[1]))
        self.radius = float(radius)
        self.angle0 = float(angle0)
        self.sweep = float(sweep)
        self.length = abs(sweep) * radius

    def point_at(self, s: float) -> Tuple[float, float]:
        ang = self.angle0 + math.copysign(s / self.radius, self.sweep)
        return (self.center[0] + self.radius * math.cos(ang),
                self.center[1] + self.radius * math.sin(ang))

    def heading_at(self, s: float) -> float:
        ang = self.angle0 + math.copysign(s / self.radius, self.sweep)
        return ang + math.copysign(math.pi / 2.0, self.sweep)

    def curvature_at(self, s: float) -> float:
        return math.copysign(1.0 / self.radius, self.sweep)


@dataclass
class PathGeometry:
    """One legal route through the junction, arc-length parametrized."""

    path_id: int
    kind: PathKind
    approach: int                      # compass index of the in-road (0..3)
    segments: List[object]
    seg_starts: List[float] = field(default_factory=list)
    length: float = 0.0
    entry_s: float = 0.0               # where the centerline crosses into the box
    exit_s: float = 0.0                # where it leaves the box

    def __post_init__(self) -> None:
        self.seg_starts = []
        s = 0.0
        for seg in self.segments:
            if seg.length <= 0:
                raise GeometryError("segment with nonpositive length")
            self.seg_starts.append(s)
            s += seg.length
        self.length = s
        if self.length <= 0:
            raise GeometryError("path with nonpositive total length")

    def _locate(self, s: float) -> Tuple[object, float]:
        s = min(max(s, 0.0), self.length)
        for seg, start in zip(reversed(self.segments), reversed(self.seg_starts)):
            if s >= start - 1e-12:
                return seg, s - start
        return self.segments[0], 0.0

    def point_at(self, s: float) -> Tuple[float, float]:
        seg, local = self._locate(s)
        return seg.point_at(local)

    def heading_at(self, s: float) -> float:
        seg, local = self._locate(s)
        return seg.heading_at(local)

    def curvature_at(self, s: float) -> float:
        seg, local = self._locate(s)
        return seg.curvature_at(local)

    def pose_at(self, s: float) -> Tuple[float, float, float]:
        seg, local = self._locate(s)
        x, y = seg.point_at(local)
        return x, y, seg.heading_at(local)

    def segment_ids(self) -> List[int]:
        return [seg.seg_id for seg in self.segments]

    def offset_of_segment(self, seg_id: int) -> Optional[float]:
        for seg, start in zip(self.segments, self.seg_starts):
            if seg.seg_id == seg_id:
                return start
        return None

    def sample(self, step: float) -> Tuple[np.ndarray, np.ndarray]:
        svals = np.arange(0.0, self.length, step)
        pts = np.array([self.point_at(s) for s in svals])
        return svals, pts


@dataclass
class CollisionArea:
    """Exclusion disk where two paths cross or merge."""

    center: Tuple[float, float]
    radius: float
    paths: Tuple[int, int]
    intervals: Dict[int, Tuple[float, float]]
    merge: bool = False     # True when the paths join a common exit lane here

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise GeometryError("collision area radius must be positive")
        for pid, (s_in, s_out) in self.intervals.items():
            if not s_in < s_out:
                raise GeometryError(f"degenerate occupancy interval on path {pid}")


class IntersectionModel:
    """Immutable description of the junction; safe to share across runs."""

    def __init__(self, paths: List[PathGeometry], areas: List[CollisionArea],
                 half_size: float, v2i_range: float, signal_range: float,
                 params: Params):
        self.paths: Dict[int, PathGeometry] = {p.path_id: p for p in paths}
        self.areas = areas
        self.half_size = half_size
        self.v2i_range = v2i_range
        self.signal_range = signal_range
        self._conflict_map: Dict[Tuple[int, int], List[CollisionArea]] = {}
        for area in areas:
            i, j = area.paths
            self._conflict_map.setdefault((i, j), []).append(area)
            self._conflict_map.setdefault((j, i), []).append(area)
        # segment id -> [(path_id, start offset of that segment on the path)]
        self.paths_by_segment: Dict[int, List[Tuple[int, float]]] = {}
        for p in paths:
            for seg, start in zip(p.segments, p.seg_starts):
                self.paths_by_segment.setdefault(seg.seg_id, []).append(
                    (p.path_id, start))
        self._validate(params)

    def _validate(self, p: Params) -> None:
        if not self.signal_range < self.v2i_range:
            raise GeometryError(
                "signal visibility range must be smaller than V2I range "
                f"(signal={self.signal_range}, v2i={self.v2i_range})")
        hv_stop = (stopping_distance(p.v_max, p.a_min_hv)
                   + p.v_max * p.t_r_hv + p.s_min)
        if self.signal_range < hv_stop - 1e-9:
            raise GeometryError(
                "signal range too small: a top-speed HV seeing a red light "
                f"must be able to stop (need >= {hv_stop:.2f} m, "
                f"got {self.signal_range} m)")
        v2i_floor = (stopping_distance(p.v_max, p.a_min_hv) + p.v_max * p.h
                     - p.a_min_hv * p.h * p.h / 2.0
                     + p.v_max * p.t_r_hv + p.s_min)
        if self.v2i_range < v2i_floor - 1e-9:
            raise GeometryError(
                "V2I range too small: an AV restricted to HV braking must be "
                f"able to stop after first contact (need >= {v2i_floor:.2f} m, "
                f"got {self.v2i_range} m)")
        for path in self.paths.values():
            for seg in path.segments:
                if isinstance(seg, Arc) and seg.radius < p.rho_min - 1e-9:
                    raise GeometryError(
                        f"path {path.path_id} has an arc of radius "
                        f"{seg.radius:.2f} < minimum {p.rho_min}")
            if not (0.0 < path.entry_s < path.exit_s < path.length):
                raise GeometryError(
                    f"path {path.path_id} entry/exit coordinates out of order")
        for path in self.paths.values():
            if path.kind is PathKind.RIGHT:
                others = self.conflicting_paths(path.path_id)
                if len(others) != 1:
                    raise GeometryError(
                        f"right-turn path {path.path_id} conflicts with "
                        f"{sorted(others)}; exactly one conflict required")

    # -- queries ----------------------------------------------------------

    def conflicts(self, i: int, j: int) -> List[CollisionArea]:
        if i == j:
            return []   # same-path safety is the car-following rules' job
        return self._conflict_map.get((i, j), [])

    def conflicting_paths(self, i: int) -> List[int]:
        out = set()
        for (a, b), areas in self._conflict_map.items():
            if a == i and areas:
                out.add(b)
        return sorted(out)

    def inside_core(self, point: Tuple[float, float]) -> bool:
        return (abs(point[0]) <= self.half_size + 1e-12
                and abs(point[1]) <= self.half_size + 1e-12)

    def dist_to_core(self, point: Tuple[float, float]) -> float:
        dx = max(abs(point[0]) - self.half_size, 0.0)
        dy = max(abs(point[1]) - self.half_size, 0.0)
        return math.hypot(dx, dy)

    def region_of(self, point: Tuple[float, float],
                  path_id: Optional[int] = None,
                  s: Optional[float] = None) -> Region:
        if self.inside_core(point):
            return Region.INSIDE
        if path_id is not None and s is not None:
            if s > self.paths[path_id].exit_s:
                return Region.DOWNSTREAM
        d = self.dist_to_core(point)
        if d <= self.signal_range:
            return Region.SIGNAL
        if d <= self.v2i_range:
            return Region.V2I
        return Region.CLEAR

    def map_onto(self, target_path: int, source_path: int,
                 s_source: float) -> Optional[float]:
        """Arc-length of a position on ``source_path`` measured along
        ``target_path``, defined while both share the underlying segment."""
        if target_path == source_path:
            return s_source
        src = self.paths[source_path]
        seg, local = src._locate(s_source)
        off = self.paths[target_path].offset_of_segment(seg.seg_id)
        if off is None:
            return None
        return off + local


def path_distance(path: PathGeometry, s_a: float, s_b: float) -> float:
    """Signed along-path distance; positive when ``s_a`` is behind ``s_b``."""
    return s_b - s_a


def region_of(model: IntersectionModel, point: Tuple[float, float],
              path_id: Optional[int] = None, s: Optional[float] = None) -> Region:
    return model.region_of(point, path_id, s)


def conflicts(model: IntersectionModel, i: int, j: int) -> List[CollisionArea]:
    return model.conflicts(i, j)


# -- construction ----------------------------------------------------------

def _rot(point: Tuple[float, float], quarter_turns: int) -> Tuple[float, float]:
    x, y = point
    for _ in range(quarter_turns % 4):
        x, y = -y, x
    return (x, y)


def _refine_boundary(fn, lo: float, hi: float, tol: float = 1e-9) -> float:
    """Bisection between lo (predicate False) and hi (predicate True)."""
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if fn(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def _core_crossings(path: PathGeometry, half: float) -> Tuple[float, float]:
    def inside(s: float) -> bool:
        x, y = path.point_at(s)
        return abs(x) <= half and abs(y) <= half

    step = 0.25
    svals = np.arange(0.0, path.length + step, step)
    flags = [inside(min(s, path.length)) for s in svals]
    entry = exit_ = None
    for k in range(1, len(svals)):
        if flags[k] and not flags[k - 1] and entry is None:
            entry = _refine_boundary(inside, svals[k - 1], svals[k])
        if flags[k - 1] and not flags[k]:
            exit_ = _refine_boundary(lambda s: not inside(s), svals[k - 1], svals[k])
    if entry is None or exit_ is None:
        raise GeometryError(f"path {path.path_id} does not traverse the junction box")
    return entry, exit_


def _occupancy_interval(path: PathGeometry, center: Tuple[float, float],
                        radius: float, s_hint: float) -> Tuple[float, float]:
    """Arc-length stretch of ``path`` within ``radius`` of ``center``."""
    def inside(s: float) -> bool:
        x, y = path.point_at(min(max(s, 0.0), path.length))
        return math.hypot(x - center[0], y - center[1]) <= radius

    lo = max(0.0, s_hint - radius - 3.0)
    hi = min(path.length, s_hint + radius + 3.0)
    svals = np.arange(lo, hi, 0.02)
    flags = [inside(s) for s in svals]
    if not any(flags):
        raise GeometryError("occupancy probe missed the collision area")
    first = next(k for k, f in enumerate(flags) if f)
    last = len(flags) - 1 - next(k for k, f in enumerate(reversed(flags)) if f)
    s_in = (svals[first] if first == 0
            else _refine_boundary(inside, svals[first - 1], svals[first]))
    s_out = (svals[last] if last == len(svals) - 1
             else _refine_boundary(lambda s: not inside(s), svals[last], svals[last + 1]))
    return s_in, s_out


@dataclass(frozen=True)
class LaneSpec:
    """Per-approach lane counts, leftmost lane first.

    Mirrors an ordinary lane-assignment sign: so many left-only lanes, then
    shared left/straight, straight-only, shared straight/right, right-only.
    """

    left_only: int = 1
    left_straight: int = 0
    straight_only: int = 1
    straight_right: int = 1
    right_only: int = 0

    @property
    def total(self) -> int:
        return (self.left_only + self.left_straight + self.straight_only
                + self.straight_right + self.right_only)

    def flows_for_lane(self, idx: int) -> List[PathKind]:
        bands = [(self.left_only, [PathKind.LEFT]),
                 (self.left_straight, [PathKind.LEFT, PathKind.STRAIGHT]),
                 (self.straight_only, [PathKind.STRAIGHT]),
                 (self.straight_right, [PathKind.STRAIGHT, PathKind.RIGHT]),
                 (self.right_only, [PathKind.RIGHT])]
        k = idx
        for count, flows in bands:
            if k < count:
                return flows
            k -= count
        raise IndexError(idx)


def build_intersection(lanes: LaneSpec = LaneSpec(),
                       params: Optional[Params] = None,
                       approaches: Sequence[int] = (0, 1, 2, 3),
                       lane_width: float = 3.5,
                       core_margin: float = 1.5,
                       approach_extra: float = 40.0,
                       exit_length: float = 80.0,
                       v2i_range: float = 80.0,
                       signal_range: float = 50.0,
                       right_turn_radius: float = 6.0,
                       left_turn_radius: Optional[float] = None,
                       area_radius: Optional[float] = None,
                       conflict_width: float = 2.0) -> IntersectionModel:
    """Construct the junction for the given lane assignment.

    Approach ``k`` feeds traffic rotated ``k`` quarter-turns counterclockwise
    from west-to-east.  Within an approach, paths are numbered right turns
    first (outermost lane first), then straights, then lefts; with one
    right-capable lane per approach the right-turn paths are the first id of
    every block.
    """
    if params is None:
        params = Params()
    if lanes.total < 1:
        raise GeometryError("at least one lane per approach required")
    approaches = sorted(set(int(a) % 4 for a in approaches))
    if not approaches:
        raise GeometryError("at least one approach required")
    if lane_width <= 0 or exit_length <= 0 or approach_extra < 0:
        raise GeometryError("dimensions must be positive")

    n = lanes.total
    half = n * lane_width + core_margin
    r_right = right_turn_radius
    r_left = (half - lane_width / 2.0 - 0.5) if left_turn_radius is None \
        else left_turn_radius
    if r_left <= 0 or r_right <= 0:
        raise GeometryError("turn radii must be positive")
    approach_len = v2i_range + approach_extra
    spawn_x = -(half + approach_len)
    exit_end = half + r_right + exit_length

    def lane_offset(idx: int) -> float:
        # lane 0 is the leftmost (innermost) lane of the canonical approach
        return -(idx + 0.5) * lane_width

    def right_landing(idx: int) -> float:
        # distance from the origin at which a right turn joins its exit lane
        return r_right + (idx + 0.5) * lane_width

    def left_landing(idx: int) -> float:
        return r_left - (idx + 0.5) * lane_width

    # Shared divergence point per lane: where the earliest turn flow leaves.
    def lane_divergence(idx: int) -> float:
        flows = lanes.flows_for_lane(idx)
        cands = []
        if PathKind.RIGHT in flows:
            cands.append(lane_offset(idx) - r_right)
        if PathKind.LEFT in flows:
            cands.append(-lane_offset(idx) - r_left)
        if not cands:
            cands.append(-half)
        return min(cands)

    approach_segs: Dict[Tuple[int, int], Straight] = {}

    def approach_seg(road: int, idx: int) -> Straight:
        key = (road, idx)
        seg = approach_segs.get(key)
        if seg is None:
            seg = Straight(_rot((spawn_x, lane_offset(idx)), road),
                           _rot((1.0, 0.0), road),
                           lane_divergence(idx) - spawn_x)
            approach_segs[key] = seg
        return seg

    exit_segs: Dict[Tuple[int, int], Tuple[Straight, float]] = {}

    def exit_seg(road: int, idx: int, start_dist: float) -> Straight:
        key = (road, idx)
        cached = exit_segs.get(key)
        if cached is not None:
            seg, cached_start = cached
            if abs(cached_start - start_dist) > 1e-9:
                raise GeometryError("conflicting exit-lane start distances")
            return seg
        seg = Straight(_rot((start_dist, lane_offset(idx)), road),
                       _rot((1.0, 0.0), road), exit_end - start_dist)
        exit_segs[key] = (seg, start_dist)
        return seg

    def exit_lane_start(road: int, idx: int) -> float:
        """Landing point of the earliest feeder onto exit lane ``idx``."""
        flows = lanes.flows_for_lane(idx)
        right_feeder = (road + 1) % 4   # right turns come from the next road over
        left_feeder = (road - 1) % 4
        if right_feeder in approaches and PathKind.RIGHT in flows:
            return right_landing(idx)
        if left_feeder in approaches and PathKind.LEFT in flows:
            land = left_landing(idx)
            if land >= half - 1e-9:
                raise GeometryError("left-turn radius lands outside the junction box")
            return land
        return half

    paths: List[PathGeometry] = []
    next_id = 1
    for road in approaches:
        plan: List[Tuple[PathKind, int]] = []
        for idx in range(n - 1, -1, -1):
            if PathKind.RIGHT in lanes.flows_for_lane(idx):
                plan.append((PathKind.RIGHT, idx))
        for idx in range(n - 1, -1, -1):
            if PathKind.STRAIGHT in lanes.flows_for_lane(idx):
                plan.append((PathKind.STRAIGHT, idx))
        for idx in range(n - 1, -1, -1):
            if PathKind.LEFT in lanes.flows_for_lane(idx):
                plan.append((PathKind.LEFT, idx))

        for kind, idx in plan:
            y_in = lane_offset(idx)
            app = approach_seg(road, idx)
            div_x = lane_divergence(idx)
            if kind is PathKind.RIGHT:
                arc_start_x = y_in - r_right
                lead_in = None
                if arc_start_x - div_x > 1e-9:
                    lead_in = Straight(_rot((div_x, y_in), road),
                                       _rot((1.0, 0.0), road), arc_start_x - div_x)
                center = _rot((arc_start_x, y_in - r_right), road)
                sx, sy = _rot((arc_start_x, y_in), road)
                arc = Arc(center, r_right,
                          angle0=math.atan2(sy - center[1], sx - center[0]),
                          sweep=-math.pi / 2.0)
                target = (road - 1) % 4
                out = exit_seg(target, idx, right_landing(idx))
                segs = [app] + ([lead_in] if lead_in else []) + [arc, out]
            elif kind is PathKind.LEFT:
                arc_start_x = -y_in - r_left
                lead_in = None
                if arc_start_x - div_x > 1e-9:
                    lead_in = Straight(_rot((div_x, y_in), road),
                                       _rot((1.0, 0.0), road), arc_start_x - div_x)
                center = _rot((arc_start_x, y_in + r_left), road)
                sx, sy = _rot((arc_start_x, y_in), road)
                arc = Arc(center, r_left,
                          angle0=math.atan2(sy - center[1], sx - center[0]),
                          sweep=math.pi / 2.0)
                target = (road + 1) % 4
                land = left_landing(idx)
                out = exit_seg(target, idx, land)
                segs = [app] + ([lead_in] if lead_in else []) + [arc, out]
            else:
                out_start = exit_lane_start(road, idx)
                mid = Straight(_rot((div_x, y_in), road), _rot((1.0, 0.0), road),
                               out_start - div_x)
                out = exit_seg(road, idx, out_start)
                segs = [app, mid, out]
            paths.append(PathGeometry(next_id, kind, road, segs))
            next_id += 1

    for p in paths:
        p.entry_s, p.exit_s = _core_crossings(p, half)

    radius = params.s_min if area_radius is None else area_radius
    areas = _detect_areas(paths, radius, conflict_width, half + r_right + 10.0)
    return IntersectionModel(paths, areas, half, v2i_range, signal_range, params)


def _detect_areas(paths: List[PathGeometry], radius: float,
                  conflict_width: float, probe_radius: float) -> List[CollisionArea]:
    step = 0.25
    samples = {}
    for p in paths:
        svals, pts = p.sample(step)
        near = np.hypot(pts[:, 0], pts[:, 1]) <= probe_radius
        samples[p.path_id] = (svals[near], pts[near])
    areas: List[CollisionArea] = []
    for ai in range(len(paths)):
        for bj in range(ai + 1, len(paths)):
            pa, pb = paths[ai], paths[bj]
            shared = set(pa.segment_ids()) & set(pb.segment_ids())
            if shared:
                area = _merge_area(pa, pb, shared, radius)
                if area is not None:
                    areas.append(area)
                continue
            sa, pts_a = samples[pa.path_id]
            sb, pts_b = samples[pb.path_id]
            if len(sa) == 0 or len(sb) == 0:
                continue
            diff = pts_a[:, None, :] - pts_b[None, :, :]
            d2 = np.einsum("ijk,ijk->ij", diff, diff)
            k = int(np.argmin(d2))
            ia, ib = divmod(k, d2.shape[1])
            if math.sqrt(d2[ia, ib]) > conflict_width + 2.0 * step:
                continue
            s_a, s_b, dist = _refine_closest(pa, pb, float(sa[ia]), float(sb[ib]))
            if dist >= conflict_width:
                continue
            xa, ya = pa.point_at(s_a)
            xb, yb = pb.point_at(s_b)
            center = ((xa + xb) / 2.0, (ya + yb) / 2.0)
            areas.append(CollisionArea(
                center=center, radius=radius,
                paths=(pa.path_id, pb.path_id),
                intervals={
                    pa.path_id: _occupancy_interval(pa, center, radius, s_a),
                    pb.path_id: _occupancy_interval(pb, center, radius, s_b),
                },
                merge=False))
    return areas


def _merge_area(pa: PathGeometry, pb: PathGeometry, shared: set,
                radius: float) -> Optional[CollisionArea]:
    """Area where two paths join a common exit lane.

    Joining means a non-shared segment is followed by a shared one; merely
    sharing the approach lane (diverging later) creates no area.
    """
    for p in (pa, pb):
        ids = p.segment_ids()
        for k in range(1, len(ids)):
            if ids[k] in shared and ids[k - 1] not in shared:
                center = p.point_at(p.seg_starts[k])
                return CollisionArea(
                    center=center, radius=radius,
                    paths=(pa.path_id, pb.path_id),
                    intervals={
                        pa.path_id: _occupancy_interval(
                            pa, center, radius, pa.offset_of_segment(ids[k])),
                        pb.path_id: _occupancy_interval(
                            pb, center, radius, pb.offset_of_segment(ids[k])),
                    },
                    merge=True)
    return None


def _refine_closest(pa: PathGeometry, pb: PathGeometry, s_a0: float,
                    s_b0: float) -> Tuple[float, float, float]:
    """Coordinate-descent refinement of the closest-approach point pair."""
    s_a, s_b = s_a0, s_b0
    window = 0.5
    for _ in range(40):
        xa, ya = pa.point_at(s_a)
        cand_b = np.arange(max(0.0, s_b - window), min(pb.length, s_b + window), 0.01)
        pts = np.array([pb.point_at(s) for s in cand_b])
        db = np.hypot(pts[:, 0] - xa, pts[:, 1] - ya)
        s_b = float(cand_b[int(np.argmin(db))])
        xb, yb = pb.point_at(s_b)
        cand_a = np.arange(max(0.0, s_a - window), min(pa.length, s_a + window), 0.01)
        pts = np.array([pa.point_at(s) for s in cand_a])
        da = np.hypot(pts[:, 0] - xb, pts[:, 1] - yb)
        new_a = float(cand_a[int(np.argmin(da))])
        if abs(new_a - s_a) < 0.005 and window <= 0.06:
            s_a = new_a
            break
        s_a = new_a
        window = max(window * 0.7, 0.05)
    xa, ya = pa.point_at(s_a)
    xb, yb = pb.point_at(s_b)
    return s_a, s_b, math.hypot(xa - xb, ya - yb)
