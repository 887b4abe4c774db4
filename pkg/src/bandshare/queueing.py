"""Closed-form deadline-success analytics for a single-server Markovian queue.

A customer that must be served within a deterministic deadline D behaves
like a real-time packet. These closed forms give the probability the queue
serves a customer within its deadline, and the relative improvement when
two identical queues pool their arrivals and servers (doubling the service
rate at unchanged traffic intensity). The pooling gain shrinks as the
deadline grows, which is why pooling is most attractive for tight-deadline
traffic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class QueueParameterError(ValueError):
    """Raised for out-of-domain queue parameters."""


@dataclass(frozen=True)
class QueueParams:
    """Service rate mu (customers/time), traffic intensity rho in [0,1], deadline D."""

    service_rate_mu: float
    intensity_rho: float
    deadline_D: float

    def validate(self) -> None:
        if self.service_rate_mu <= 0:
            raise QueueParameterError(f"service rate must be positive, got {self.service_rate_mu}")
        if not 0.0 <= self.intensity_rho <= 1.0:
            raise QueueParameterError(f"intensity must be in [0, 1], got {self.intensity_rho}")
        if self.deadline_D < 0:
            raise QueueParameterError(f"deadline must be non-negative, got {self.deadline_D}")


def _p_succ(mu: float, rho: float, deadline: float) -> float:
    if rho == 1.0:
        # 0/0 in the closed form; continuous limit.
        return mu * deadline / (1.0 + mu * deadline)
    e = math.exp(mu * deadline * (rho - 1.0))
    return (1.0 - e) / (1.0 - rho * e)


def p_succ(params: QueueParams) -> float:
    """Probability a customer is served within its deadline."""
    params.validate()
    return _p_succ(params.service_rate_mu, params.intensity_rho, params.deadline_D)


def pooling_gain(params: QueueParams) -> float:
    """Relative success-probability improvement from pooling two queues.

    The pooled queue has double the service rate at the same intensity.
    Undefined at deadline 0 (both probabilities are 0).
    """
    params.validate()
    base = p_succ(params)
    if base == 0.0:
        raise QueueParameterError(
            f"pooling gain undefined: success probability is 0 at deadline {params.deadline_D}")
    pooled = _p_succ(2.0 * params.service_rate_mu, params.intensity_rho, params.deadline_D)
    return (pooled - base) / base


def deadline_sweep(mu: float, rhos: list[float], deadlines: list[float]) -> list[dict]:
    """Rows of (mu, rho, deadline, p_succ single/pooled, gain) for CSV export."""
    rows = []
    for rho in rhos:
        for d in deadlines:
            params = QueueParams(mu, rho, d)
            params.validate()
            single = p_succ(params)
            pooled = _p_succ(2.0 * mu, rho, d)
            gain = (pooled - single) / single if single > 0 else float("nan")
            rows.append({
                "mu": mu,
                "rho": rho,
                "deadline": d,
                "p_succ_single": single,
                "p_succ_pooled": pooled,
                "pooling_gain": gain,
            })
    return rows
