"""Per-client packet-arrival generation with reproducible substreams.

Every client owns an independent random substream derived from the master
seed and the client's (operator, region, client) identity, so adding or
reconfiguring one client never perturbs another's arrivals. That is what
makes common-random-number comparisons (sharing vs. no-sharing on the
same traffic) valid.

Two processes are supported: independent Bernoulli indicators, and a
correlated variant driven by a stationary unit-variance Gaussian latent
AR(1) recursion thresholded so the marginal arrival probability equals the
requested rate exactly. The batched trace generator and the step-by-step
sampling functions consume the underlying streams in the same order and
produce bit-identical sequences.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter
from scipy.stats import norm

from .model import ClientSet


class ArrivalParameterError(ValueError):
    """Raised for out-of-range rate or correlation parameters."""


def client_stream(master_seed: int, operator_id: int, region_id: int,
                  client_id: int) -> np.random.Generator:
    """The documented seed-split: one PCG64 substream per client identity."""
    seq = np.random.SeedSequence(
        entropy=master_seed, spawn_key=(operator_id, region_id, client_id))
    return np.random.Generator(np.random.PCG64(seq))


def _threshold_for_rate(rate: float) -> float:
    """Latent threshold z with P(X > z) = rate for X ~ N(0, 1)."""
    return float(norm.isf(rate))


def sample_bernoulli(rate: float, stream: np.random.Generator) -> int:
    """One independent arrival indicator: 1 with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ArrivalParameterError(f"rate must be in [0, 1], got {rate}")
    return int(stream.random() < rate)


@dataclass
class ArrivalState:
    """Latent value and stream of one client's correlated arrival process."""

    latent: float
    stream: np.random.Generator

    @classmethod
    def fresh(cls, master_seed: int, operator_id: int, region_id: int,
              client_id: int) -> "ArrivalState":
        stream = client_stream(master_seed, operator_id, region_id, client_id)
        # Stationary start: the latent process is N(0,1) at every period.
        return cls(latent=float(stream.standard_normal()), stream=stream)


def sample_correlated(rate: float, corr: float,
                      state: ArrivalState) -> tuple[int, ArrivalState]:
    """One correlated arrival indicator; returns (indicator, advanced state).

    The latent x follows x' = corr*x + sqrt(1-corr^2)*eps with standard
    normal innovations, keeping unit marginal variance; the indicator is
    1 iff x' exceeds the N(0,1) quantile for ``rate``. corr = 0 reproduces
    the Bernoulli marginals (on an independent stream).
    """
    if not 0.0 <= rate <= 1.0:
        raise ArrivalParameterError(f"rate must be in [0, 1], got {rate}")
    if not 0.0 <= corr < 1.0:
        raise ArrivalParameterError(f"correlation must be in [0, 1), got {corr}")
    innovation = float(state.stream.standard_normal())
    latent = corr * state.latent + math.sqrt(1.0 - corr * corr) * innovation
    indicator = int(latent > _threshold_for_rate(rate))
    return indicator, ArrivalState(latent=latent, stream=state.stream)


def aggregate_arrivals(indicators: np.ndarray, clients: ClientSet,
                       operator_id: int, region_id: int) -> int:
    """Total arrivals this period across one operator's clients in one region."""
    members = clients.by_op_region[(operator_id, region_id)]
    return int(np.asarray(indicators)[members].sum())


def generate_trace(clients: ClientSet, horizon_K: int, master_seed: int,
                   correlation: float = 0.0) -> np.ndarray:
    """(K, n_clients) uint8 arrival indicators, bit-identical to stepwise sampling."""
    if not 0.0 <= correlation < 1.0:
        raise ArrivalParameterError(f"correlation must be in [0, 1), got {correlation}")
    trace = np.empty((horizon_K, clients.n), dtype=np.uint8)
    for idx, spec in enumerate(clients.specs):
        stream = client_stream(master_seed, spec.operator_id, spec.region_id,
                               spec.client_id)
        rate = spec.arrival_rate_alpha
        if correlation == 0.0:
            trace[:, idx] = stream.random(horizon_K) < rate
        else:
            draws = stream.standard_normal(horizon_K + 1)
            x0, innovations = draws[0], draws[1:]
            scaled = math.sqrt(1.0 - correlation * correlation) * innovations
            # One-pole recursion x[t] = corr*x[t-1] + scaled[t], seeded at x0.
            latent, _ = lfilter([1.0], [1.0, -correlation], scaled,
                                zi=np.array([correlation * x0]))
            trace[:, idx] = latent > _threshold_for_rate(rate)
    return trace


def trace_hash(trace: np.ndarray) -> str:
    """Short stable digest, used to assert common-random-number discipline."""
    return hashlib.sha256(np.ascontiguousarray(trace).tobytes()).hexdigest()[:16]


TRACE_COLUMNS = ["period", "operator", "region", "client", "indicator"]


def export_trace(path, clients: ClientSet, trace: np.ndarray) -> None:
    """Write a (period, operator, region, client, indicator) CSV for replay."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for k in range(trace.shape[0]):
            for idx, spec in enumerate(clients.specs):
                writer.writerow([k, spec.operator_id, spec.region_id,
                                 spec.client_id, int(trace[k, idx])])


def import_trace(path, clients: ClientSet) -> np.ndarray:
    """Read a trace CSV written by export_trace back into a (K, n) array."""
    index = {(s.operator_id, s.region_id, s.client_id): i
             for i, s in enumerate(clients.specs)}
    rows: list[tuple[int, int, int]] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRACE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"trace CSV missing columns: {missing}")
        for row in reader:
            key = (int(row["operator"]), int(row["region"]), int(row["client"]))
            rows.append((int(row["period"]), index[key], int(row["indicator"])))
    horizon = max(k for k, _, _ in rows) + 1 if rows else 0
    trace = np.zeros((horizon, clients.n), dtype=np.uint8)
    for k, idx, ind in rows:
        trace[k, idx] = ind
    return trace
