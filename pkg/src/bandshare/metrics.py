"""Run statistics: long-run constraint checks, QoE totals, and summaries.

The ledger accumulates per-client delivery counts and quality sums, the
cumulative sharing matrix, and per-period debt maxima. Time averages
always divide by all elapsed periods (not only arrival periods). Merging
two ledgers of consecutive period ranges equals the ledger of the
concatenated run.
"""

from __future__ import annotations

import csv

import numpy as np

from .model import ClientSet, DebtState, PeriodDecision, SystemConfig


class UndefinedBaselineError(ValueError):
    """Improvement percentage against a non-positive baseline."""


def improvement_percent(with_sharing: float, without_sharing: float) -> float:
    """Percentage QoE improvement of a sharing run over its baseline."""
    if without_sharing <= 0:
        raise UndefinedBaselineError(
            f"baseline QoE must be positive, got {without_sharing}")
    return 100.0 * (with_sharing - without_sharing) / without_sharing


SUMMARY_COLUMNS = [
    "record_type", "periods", "operator", "region", "client",
    "arrival_rate", "required_rate", "arrivals", "accepted",
    "timely_delivery_rate", "rate_requirement_met",
    "quality_sum", "avg_quality_per_period", "avg_marginal_quality",
    "op_i", "op_j", "slots_i_to_j", "slots_j_to_i",
    "avg_abs_imbalance_slots", "imbalance_bound_met",
]


class MetricsLedger:
    """Accumulates one run's statistics period by period."""

    def __init__(self, config: SystemConfig, clients: ClientSet):
        self.config = config
        self.clients = clients
        O = config.num_operators
        self.periods = 0
        self.arrivals_count = np.zeros(clients.n, dtype=np.int64)
        self.accepted_count = np.zeros(clients.n, dtype=np.int64)
        self.quality_sum = np.zeros(clients.n)
        self.marginal_sum = np.zeros(clients.n)
        self.served_count = np.zeros(clients.n, dtype=np.int64)
        self.shared_slots = np.zeros((O, O))  # cumulative donor->recipient
        self.max_quality_debt: list[float] = []
        self.max_sharing_debt: list[float] = []
        self.final_debts: DebtState | None = None
        self.debt_rows: list[tuple[int, DebtState]] = []  # only with debt_trace
        # Marginal-quality shift per client (closed form, megabit scale).
        self._marginal_shift = (0.1 * config.period_len_T
                                / (clients.capacity_bits / 1e6))

    def record(self, arrivals: np.ndarray, decision: PeriodDecision,
               debts: DebtState, debt_trace: bool = False) -> None:
        arrived = np.asarray(arrivals, dtype=bool)
        tau = decision.alloc_tau
        self.arrivals_count += arrived
        self.accepted_count += decision.accept_b
        self.quality_sum += decision.quality_Q
        served = arrived & (tau >= 1)
        self.served_count += served
        marginal = 1.0 / (self.clients.scale_gamma * (tau + self._marginal_shift))
        self.marginal_sum += np.where(served, marginal, 0.0)
        self.shared_slots += decision.share_S.sum(axis=0)
        self.max_quality_debt.append(float(debts.quality_debt_delta.max()))
        self.max_sharing_debt.append(float(debts.sharing_debt_sigma.max()))
        self.final_debts = debts.copy()
        if debt_trace:
            self.debt_rows.append((self.periods, debts.copy()))
        self.periods += 1

    # -- constraint checks and aggregates ---------------------------------

    def timely_delivery_rate(self, client: int) -> float:
        """Fraction of all periods with an acceptable timely delivery."""
        return self.accepted_count[client] / self.periods

    def rate_requirement_met(self, client: int) -> bool:
        required = self.clients.delivery_req[client] - self.config.tolerance_xi1
        return self.timely_delivery_rate(client) >= required

    def sharing_imbalance(self, op_i: int, op_j: int) -> float:
        """Average absolute net sharing between one ordered operator pair."""
        net = self.shared_slots[op_j, op_i] - self.shared_slots[op_i, op_j]
        return abs(net) / self.periods

    def imbalance_bound_met(self, op_i: int, op_j: int) -> bool:
        bound = (self.config.sharing_bound_zeta[op_i, op_j]
                 + self.config.tolerance_xi2)
        return self.sharing_imbalance(op_i, op_j) <= bound

    def total_qoe(self) -> float:
        """Across-client sum of per-period average quality (unserved = 0)."""
        return float(self.quality_sum.sum()) / self.periods

    def average_cross_sharing(self) -> float:
        """Cross-operator slots donated per period, summed over pairs."""
        cross = self.shared_slots.sum() - np.trace(self.shared_slots)
        return float(cross) / self.periods

    def average_marginal_quality(self) -> float:
        """Mean marginal quality over served client-periods."""
        total_served = self.served_count.sum()
        if total_served == 0:
            return 0.0
        return float(self.marginal_sum.sum() / total_served)

    def max_debt_over_horizon(self) -> tuple[float, float]:
        """(max quality debt, max sharing debt) at the last recorded period."""
        if self.final_debts is None:
            return 0.0, 0.0
        return (float(self.final_debts.quality_debt_delta.max()),
                float(self.final_debts.sharing_debt_sigma.max()))

    # -- composition -------------------------------------------------------

    @classmethod
    def merge(cls, first: "MetricsLedger", second: "MetricsLedger") -> "MetricsLedger":
        """Ledger of the concatenated run (first's periods, then second's)."""
        merged = cls(first.config, first.clients)
        merged.periods = first.periods + second.periods
        merged.arrivals_count = first.arrivals_count + second.arrivals_count
        merged.accepted_count = first.accepted_count + second.accepted_count
        merged.quality_sum = first.quality_sum + second.quality_sum
        merged.marginal_sum = first.marginal_sum + second.marginal_sum
        merged.served_count = first.served_count + second.served_count
        merged.shared_slots = first.shared_slots + second.shared_slots
        merged.max_quality_debt = first.max_quality_debt + second.max_quality_debt
        merged.max_sharing_debt = first.max_sharing_debt + second.max_sharing_debt
        merged.final_debts = (second.final_debts or first.final_debts)
        if merged.final_debts is not None:
            merged.final_debts = merged.final_debts.copy()
        merged.debt_rows = (list(first.debt_rows)
                            + [(k + first.periods, d) for k, d in second.debt_rows])
        return merged

    # -- CSV export --------------------------------------------------------

    def write_summary_csv(self, path) -> None:
        """One run row, one row per client, one row per unordered pair."""
        blank_client = [""] * 9
        blank_pair = [""] * 6
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(SUMMARY_COLUMNS)
            writer.writerow(["run", self.periods] + [""] * 5
                            + [int(self.arrivals_count.sum()),
                               int(self.accepted_count.sum()), "", "",
                               float(self.quality_sum.sum()), self.total_qoe(),
                               self.average_marginal_quality()] + blank_pair)
            for n, spec in enumerate(self.clients.specs):
                writer.writerow([
                    "client", self.periods, spec.operator_id, spec.region_id,
                    spec.client_id, spec.arrival_rate_alpha, spec.delivery_req_q,
                    int(self.arrivals_count[n]), int(self.accepted_count[n]),
                    self.timely_delivery_rate(n),
                    int(self.rate_requirement_met(n)),
                    float(self.quality_sum[n]),
                    float(self.quality_sum[n]) / self.periods,
                    (float(self.marginal_sum[n] / self.served_count[n])
                     if self.served_count[n] else 0.0),
                ] + blank_pair)
            O = self.config.num_operators
            for i in range(O):
                for j in range(i + 1, O):
                    writer.writerow(
                        ["pair", self.periods] + blank_client
                        + ["", "", ""]
                        + [i, j, float(self.shared_slots[i, j]),
                           float(self.shared_slots[j, i]),
                           self.sharing_imbalance(i, j),
                           int(self.imbalance_bound_met(i, j))])

    def write_debt_trajectory_csv(self, path) -> None:
        """(period, entity, debt_value) rows; per-entity when traced, else maxima."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["period", "entity", "debt_value"])
            if self.debt_rows:
                for k, debts in self.debt_rows:
                    for n, spec in enumerate(self.clients.specs):
                        writer.writerow([
                            k,
                            f"delta[{spec.operator_id},{spec.region_id},{spec.client_id}]",
                            float(debts.quality_debt_delta[n])])
                    O = self.config.num_operators
                    for i in range(O):
                        for j in range(O):
                            if i != j:
                                writer.writerow([
                                    k, f"sigma[{i}->{j}]",
                                    float(debts.sharing_debt_sigma[i, j])])
            else:
                for k, (dmax, smax) in enumerate(zip(self.max_quality_debt,
                                                     self.max_sharing_debt)):
                    writer.writerow([k, "max_delta", dmax])
                    writer.writerow([k, "max_sigma", smax])
