"""Perceived video quality model.

Maps the number of timeslots allotted to a client within one period to a
unitless perceived-quality score via a concave logarithmic curve, and
provides the derived quantities the allocation policy needs: the exact
marginal quality, the acceptable-quality indicator, the minimum slot count
reaching the quality floor, and the piecewise-linear acceptability
relaxation used by the low-complexity solver.

The bitrate term inside the log is evaluated in megabits per timeslot
(raw channel capacity in bits is divided by 1e6) so that the curve
constants sit on the ~0.4 Mbps scale of low-resolution video.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BITS_PER_MEGABIT = 1e6


@dataclass(frozen=True)
class QualityParams:
    """Constants of one client's quality curve.

    capacity_mbits_per_slot is the channel capacity expressed in megabits
    deliverable per timeslot; period_len_T is the number of timeslots per
    period. floor_offset and normalizer are the curve constants (defaults
    0.1 and 0.4 on the megabit/s scale).
    """

    scale_gamma: float = 0.8
    floor_offset: float = 0.1
    normalizer: float = 0.4
    capacity_mbits_per_slot: float = 10.0
    period_len_T: int = 20

    @classmethod
    def from_bits(cls, capacity_bits_per_slot: float, period_len_T: int,
                  scale_gamma: float = 0.8) -> "QualityParams":
        """Build params from a raw bits-per-timeslot channel capacity."""
        return cls(
            scale_gamma=scale_gamma,
            capacity_mbits_per_slot=capacity_bits_per_slot / BITS_PER_MEGABIT,
            period_len_T=period_len_T,
        )


def perceived_quality(tau: float, params: QualityParams) -> float:
    """Unitless perceived quality of a client allotted ``tau`` timeslots.

    Strictly increasing and strictly concave in tau; negative for very
    small allocations (the log argument stays positive for all tau >= 0).
    """
    rate = tau * params.capacity_mbits_per_slot / params.period_len_T
    return math.log((rate + params.floor_offset) / params.normalizer) / params.scale_gamma


def marginal_quality(tau: float, params: QualityParams) -> float:
    """Exact derivative of perceived_quality with respect to tau.

    Equals 1 / (gamma * (tau + floor_offset*T/c)); note it does not depend
    on the normalizer and decays like 1/tau, so channel capacity has little
    influence once tau is a few slots.
    """
    shift = params.floor_offset * params.period_len_T / params.capacity_mbits_per_slot
    return 1.0 / (params.scale_gamma * (tau + shift))


def acceptability(tau: float, params: QualityParams, q_min: float,
                  arrived: int) -> int:
    """Acceptable-quality indicator: 1 iff a packet arrived and Q(tau) >= q_min."""
    if not arrived:
        return 0
    return 1 if perceived_quality(tau, params) >= q_min else 0


def min_slots_for_acceptable(params: QualityParams, q_min: float) -> int | None:
    """Smallest integer tau >= 0 with Q(tau) >= q_min.

    Returns None ("unreachable") when no tau <= period_len_T suffices.
    """
    # Invert the log curve, then nudge against float rounding.
    target = (params.normalizer * math.exp(params.scale_gamma * q_min)
              - params.floor_offset)
    tau = max(0, math.ceil(target * params.period_len_T
                           / params.capacity_mbits_per_slot))
    while tau > 0 and perceived_quality(tau - 1, params) >= q_min:
        tau -= 1
    while perceived_quality(tau, params) < q_min:
        tau += 1
        if tau > params.period_len_T:
            return None
    return tau


def acceptability_threshold(params: QualityParams, q_min: float) -> int:
    """Like min_slots_for_acceptable but unbounded (no period cap).

    Used by the optimizer, where a client may receive more than one
    operator's worth of slots in a period.
    """
    target = (params.normalizer * math.exp(params.scale_gamma * q_min)
              - params.floor_offset)
    tau = max(0, math.ceil(target * params.period_len_T
                           / params.capacity_mbits_per_slot))
    while tau > 0 and perceived_quality(tau - 1, params) >= q_min:
        tau -= 1
    while perceived_quality(tau, params) < q_min:
        tau += 1
    return tau


def approx_acceptability(tau: float, params: QualityParams, q_min: float) -> float:
    """Piecewise-linear relaxation of the acceptability indicator.

    min(1, Q(tau)/q_min) clamped below at 0. Agrees with the indicator in
    both saturation regions (Q >= q_min and Q <= 0) and is linear between.
    """
    q = perceived_quality(tau, params)
    if q_min <= 0:
        # Degenerate floor: fall back to the exact indicator.
        return 1.0 if q >= q_min else 0.0
    return max(0.0, min(1.0, q / q_min))


def quality_table(params: QualityParams, max_tau: int) -> np.ndarray:
    """Vector of Q(0..max_tau), used by the per-period solvers."""
    tau = np.arange(max_tau + 1, dtype=float)
    rate = tau * params.capacity_mbits_per_slot / params.period_len_T
    return np.log((rate + params.floor_offset) / params.normalizer) / params.scale_gamma
