"""Safe-separation distances.

``hv_gap`` is the distance human drivers keep (and the one signal logic is
built around); it is evaluated on momentary speeds.  ``av_gap`` is the
slot-sampled distance enforced by the AV controller, with four variants
chosen by what kind of vehicle is being followed (lead kind) and by the
braking limit the follower itself may use (HV-limited when it is, or acts
as, a human-driven vehicle).

All formulas include the size margin ``s_min`` and are designed so that if a
lead brakes as hard as its kind allows, a compliant follower still stops at
least ``s_min`` short of it; the worst-case episode suite in the tests checks
exactly that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .params import Params, VehicleKind

# ``Params`` carries every constant the separation formulas need.
SeparationParams = Params


@dataclass(frozen=True)
class FollowContext:
    """Which gap variant applies to a follower/lead pair.

    ``lead_kind`` is HV when the lead is human-driven or a virtual HV;
    ``own_constraint`` is HV when the follower itself is HV-limited (a human
    driver or an AV acting as a virtual HV).
    """

    lead_kind: VehicleKind
    own_constraint: VehicleKind

    @property
    def formula_name(self) -> str:
        return f"{self.lead_kind.value}_{self.own_constraint.value}"


def hv_lead_speed_adjust(v_ro_sampled: float, p: Params) -> float:
    """Estimated average speed of an HV lead over the sampling slot.

    A lead HV may have been braking since it was sampled; its speed is marked
    down by half a slot of hardest braking, floored at zero (a lower assumed
    lead speed only enlarges the required gap, so the floor is safe).
    """
    return max(0.0, v_ro_sampled + p.a_min_hv * p.h / 2.0)


def hv_gap(v: float, v_lead: float, p: Params) -> float:
    """Distance a human driver keeps behind its nearest lead (momentary
    speeds); with ``v_lead = 0`` this is the stop-line distance the signal
    policy uses."""
    gap = 0.0
    if v > v_lead:
        gap = (v * v - v_lead * v_lead) / (-2.0 * p.a_min_hv)
    out = gap + p.v_max * p.t_r_hv + p.s_min
    return out * p.weaken_factor("s_hv")


def av_gap(ctx: FollowContext, v_prev: float, v_ro_prev: float,
           p: Params, include_response: bool = True) -> float:
    """Slot-sampled separation floor for the AV controller.

    Arguments are previous-slot speed samples.  Dispatches on the follow
    context; the HV-lead variants first mark the sampled lead speed down via
    :func:`hv_lead_speed_adjust`.

    ``include_response`` drops the human-response allowance from the
    HV-limited variants; used downstream of the junction, where the braking
    budget still binds but the coordination protocol no longer does.
    """
    h = p.h
    a_av = p.a_min_av
    a_hv = p.a_min_hv
    v, w = v_prev, v_ro_prev
    lead_hv = ctx.lead_kind is VehicleKind.HV
    own_hv = ctx.own_constraint is VehicleKind.HV

    if not lead_hv and not own_hv:
        # AV behind AV: shrinks to s_min at matched speeds (platooning).
        base = p.s_min
        if v > w:
            base += ((v * v - w * w) / (-2.0 * a_av)
                     + (v - w) * h - 0.5 * a_av * h * h)
    elif lead_hv and not own_hv:
        # AV behind an HV: relative braking at the limit difference.
        w_adj = hv_lead_speed_adjust(w, p)
        base = p.s_min
        if v > w_adj:
            base += ((v - w_adj) ** 2 / (-2.0 * (a_av - a_hv))
                     + (v - w) * h - 0.5 * a_av * h * h - 0.5 * a_hv * h * h)
    elif lead_hv and own_hv:
        # HV-limited follower behind an HV; note the full (not half) h^2 term.
        w_adj = hv_lead_speed_adjust(w, p)
        response = p.v_max * p.t_r_hv if include_response else 0.0
        base = response + p.s_min
        if v > w_adj:
            base += ((v * v - w_adj * w_adj) / (-2.0 * a_hv)
                     + (v - w) * h - a_hv * h * h)
    else:
        # HV-limited follower behind a pure AV: the lead may dump speed at
        # the stronger AV limit, hence the ratio-of-limits indicator.
        response = p.v_max * p.t_r_hv if include_response else 0.0
        base = response + p.s_min
        if v > math.sqrt(a_hv / a_av) * w:
            base += ((v * v) / (-2.0 * a_hv) - (w * w) / (-2.0 * a_av)
                     + (v - w) * h - 0.5 * a_hv * h * h)
    return base * p.weaken_factor(ctx.formula_name)


# The four contexts, for tests and dispatch tables.
CTX_AV_AV = FollowContext(VehicleKind.AV, VehicleKind.AV)
CTX_HV_AV = FollowContext(VehicleKind.HV, VehicleKind.AV)
CTX_HV_HV = FollowContext(VehicleKind.HV, VehicleKind.HV)
CTX_AV_HV = FollowContext(VehicleKind.AV, VehicleKind.HV)

ALL_CONTEXTS = (CTX_AV_AV, CTX_HV_AV, CTX_HV_HV, CTX_AV_HV)
