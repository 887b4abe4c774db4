"""Scenario runner: the experiment families, seeded sweeps, CSVs and plots.

Each family sweeps one system parameter, runs the sharing policy and the
no-sharing baseline on identical arrival traces (common random numbers,
one trace per sweep point and replication), and records per-replication
QoE-improvement rows plus per-point means. All CSV column orders are
frozen; identical (spec, seeds) inputs give byte-identical CSVs.

Families:
  arrival-imbalance     scaled rates beta1 / 1-beta1 mirrored across regions
  channel-heterogeneity half the clients (set X) swept 8e6..20e6 bits/slot
  quality-scaling       arrival sweep with three quality-scale client tiers
  coverage-imbalance    operator 1's capacity swept 10e6..6e6 bits/slot
  approx-comparison     exact vs greedy-relaxation policies on one sweep
  correlated-delayed    AR(1)-correlated arrivals, stale-debt (delayed) policy
  multi-region          10 regions with per-region rate imbalances
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

import numpy as np

from .arrivals import generate_trace, trace_hash
from .metrics import MetricsLedger, improvement_percent
from .model import ClientSet, ClientSpec, SystemConfig, zeta_matrix
from .policy import run_policy

OUT_DIR_ENV = "BANDSHARE_OUT_DIR"

FAMILIES = ("arrival-imbalance", "channel-heterogeneity", "quality-scaling",
            "coverage-imbalance", "approx-comparison", "correlated-delayed",
            "multi-region")

DEBT_BLOWUP_RATIO = 0.1  # max debt / K beyond this flags likely infeasibility

DEFAULT_BETA_GRID = tuple(round(b, 2) for b in np.arange(0.0, 0.51, 0.05))
DEFAULT_CAPACITY_X_GRID = tuple(float(c) * 1e6 for c in (8, 10, 12, 14, 16, 18, 20))
DEFAULT_CAPACITY_OP1_GRID = tuple(float(c) * 1e6 for c in (10, 9, 8, 7, 6))
DEFAULT_REGION_RATES = tuple(round(r, 2) for r in np.arange(0.05, 1.0, 0.10))


class PlotColumnError(ValueError):
    """Plot spec references columns absent from the CSV."""


@dataclass
class ScenarioSpec:
    """One experiment family plus its sweep grid and knobs."""

    figure_family: str
    replications: int = 5
    base_seed: int = 1
    horizon_K: int = 2000
    clients_per_group: int = 30
    period_timeslots: int = 20
    policy_weight_V: float = 100.0
    sharing_bound_zeta: float = 0.001
    # arrival-imbalance / quality-scaling / approx / correlated sweeps
    beta_grid: tuple = DEFAULT_BETA_GRID
    arrival_scale: float = 0.95
    # channel-heterogeneity knobs
    capacity_x_grid: tuple = DEFAULT_CAPACITY_X_GRID
    het_beta1: float = 0.25
    het_arrival_scale: float = 0.8
    # coverage-imbalance knobs
    capacity_op1_grid: tuple = DEFAULT_CAPACITY_OP1_GRID
    cov_beta1: float = 0.45
    cov_arrival_scale: float = 0.8
    # quality-scaling tiers
    gamma_tiers: tuple = (0.6, 0.8, 1.0)
    # correlated-delayed knobs
    correlation: float = 0.5
    delay_periods: int = 1
    # multi-region knobs
    region_rates: tuple = DEFAULT_REGION_RATES

    def __post_init__(self):
        if self.figure_family not in FAMILIES:
            raise ValueError(f"unknown figure family {self.figure_family!r}; "
                             f"known: {FAMILIES}")


@dataclass
class ScenarioResult:
    rows: list[dict]
    means: list[dict]
    csv_path: str | None = None
    means_csv_path: str | None = None
    plot_paths: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Config builders
# ---------------------------------------------------------------------------

def _base_config(spec: ScenarioSpec, num_regions: int, seed: int,
                 mode: str = "sharing", correlation: float = 0.0) -> SystemConfig:
    return SystemConfig(
        num_operators=2, num_regions=num_regions,
        period_len_T=spec.period_timeslots, horizon_K=spec.horizon_K,
        sharing_bound_zeta=zeta_matrix(2, spec.sharing_bound_zeta),
        policy_weight_V=spec.policy_weight_V, master_seed=seed,
        policy_mode=mode, sharing_delay_d=spec.delay_periods,
        arrival_correlation=correlation)


def _client_group(operator: int, region: int, count: int, rate: float,
                  capacity: float = 10e6, gamma: float = 0.8,
                  start_id: int = 0) -> list[ClientSpec]:
    return [ClientSpec(operator_id=operator, region_id=region,
                       client_id=start_id + c, arrival_rate_alpha=rate,
                       channel_capacity_c=capacity, quality_scale_gamma=gamma,
                       delivery_req_q=0.95 * rate)
            for c in range(count)]


def _mirrored_rate_clients(spec: ScenarioSpec, beta1: float, scale: float,
                           capacity_fn=None, gamma_fn=None) -> list[ClientSpec]:
    """Two operators, two regions, mirrored high/low rates.

    Operator 0 is slow in region 0 (rate scale*beta1) and busy in region 1;
    operator 1 is the mirror image. capacity_fn/gamma_fn map the client's
    position within its 30-client group to a capacity / quality scale.
    """
    rates = {(0, 0): scale * beta1, (0, 1): scale * (1.0 - beta1),
             (1, 0): scale * (1.0 - beta1), (1, 1): scale * beta1}
    specs: list[ClientSpec] = []
    for (op, region), rate in rates.items():
        for c in range(spec.clients_per_group):
            capacity = capacity_fn(c) if capacity_fn else 10e6
            gamma = gamma_fn(c) if gamma_fn else 0.8
            specs.append(ClientSpec(
                operator_id=op, region_id=region, client_id=c,
                arrival_rate_alpha=rate, channel_capacity_c=capacity,
                quality_scale_gamma=gamma, delivery_req_q=0.95 * rate))
    return specs


def _point_seed(spec: ScenarioSpec, point_index: int, rep: int) -> int:
    return spec.base_seed + 1009 * point_index + rep


def _run_modes(spec: ScenarioSpec, config: SystemConfig,
               specs: list[ClientSpec], modes: list[str]) -> tuple[dict, str]:
    """Run several policy modes on one shared arrival trace."""
    clients = ClientSet(config, specs)
    trace = generate_trace(clients, config.horizon_K, config.master_seed,
                           config.arrival_correlation)
    ledgers: dict[str, MetricsLedger] = {}
    for mode in modes:
        cfg = replace(config, policy_mode=mode,
                      sharing_bound_zeta=config.sharing_bound_zeta.copy())
        ledgers[mode] = run_policy(cfg, clients, trace=trace).ledger
    return ledgers, trace_hash(trace)


def _blowup(ledger: MetricsLedger) -> int:
    dmax, smax = ledger.max_debt_over_horizon()
    return int(max(dmax, smax) / ledger.periods > DEBT_BLOWUP_RATIO)


# ---------------------------------------------------------------------------
# Family sweeps
# ---------------------------------------------------------------------------

def _sweep_arrival_like(spec: ScenarioSpec, family: str) -> tuple[list[dict], list[dict]]:
    """Shared driver for the beta1 sweeps (plain, tiered-gamma, approx,
    correlated-delayed)."""
    gamma_fn = None
    if family == "quality-scaling":
        tiers = spec.gamma_tiers
        third = max(1, spec.clients_per_group // len(tiers))
        gamma_fn = lambda c: tiers[min(c // third, len(tiers) - 1)]
    correlation = spec.correlation if family == "correlated-delayed" else 0.0
    if family == "approx-comparison":
        modes = ["sharing", "sharing-approx", "no-sharing"]
    elif family == "correlated-delayed":
        modes = ["sharing", "sharing-delayed", "no-sharing"]
    else:
        modes = ["sharing", "no-sharing"]

    rows: list[dict] = []
    for p, beta1 in enumerate(spec.beta_grid):
        x_ratio = (1.0 - beta1) / beta1 - 1.0 if beta1 > 0 else float("inf")
        for rep in range(spec.replications):
            seed = _point_seed(spec, p, rep)
            config = _base_config(spec, 2, seed, correlation=correlation)
            specs = _mirrored_rate_clients(spec, beta1, spec.arrival_scale,
                                           gamma_fn=gamma_fn)
            ledgers, digest = _run_modes(spec, config, specs, modes)
            base_qoe = ledgers["no-sharing"].total_qoe()
            row = {
                "family": family, "point_index": p, "beta1": beta1,
                "x_ratio_minus_1": x_ratio, "replication": rep, "seed": seed,
                "trace_sha": digest,
                "qoe_no_sharing": base_qoe,
                "qoe_sharing": ledgers["sharing"].total_qoe(),
                "improvement_percent": improvement_percent(
                    ledgers["sharing"].total_qoe(), base_qoe),
                "avg_shared_slots_per_period":
                    ledgers["sharing"].average_cross_sharing(),
                "avg_marginal_quality_sharing":
                    ledgers["sharing"].average_marginal_quality(),
                "debt_blowup_sharing": _blowup(ledgers["sharing"]),
                "debt_blowup_no_sharing": _blowup(ledgers["no-sharing"]),
            }
            if family == "quality-scaling":
                row["gamma_tiers"] = "|".join(str(g) for g in spec.gamma_tiers)
            if family == "approx-comparison":
                row["qoe_approx"] = ledgers["sharing-approx"].total_qoe()
                row["improvement_approx_percent"] = improvement_percent(
                    row["qoe_approx"], base_qoe)
                row["debt_blowup_approx"] = _blowup(ledgers["sharing-approx"])
            if family == "correlated-delayed":
                row["correlation"] = spec.correlation
                row["delay_periods"] = spec.delay_periods
                row["qoe_delayed"] = ledgers["sharing-delayed"].total_qoe()
                row["improvement_delayed_percent"] = improvement_percent(
                    row["qoe_delayed"], base_qoe)
            rows.append(row)

    mean_keys = [k for k in rows[0]
                 if k.startswith(("qoe", "improvement", "avg", "debt"))]
    means = _aggregate(rows, ["point_index", "beta1", "x_ratio_minus_1"], mean_keys)
    return rows, means


def _sweep_channel_heterogeneity(spec: ScenarioSpec) -> tuple[list[dict], list[dict]]:
    rows: list[dict] = []
    half = spec.clients_per_group // 2
    for p, capacity_x in enumerate(spec.capacity_x_grid):
        capacity_fn = lambda c: 10e6 if c < half else capacity_x
        for rep in range(spec.replications):
            seed = _point_seed(spec, p, rep)
            config = _base_config(spec, 2, seed)
            specs = _mirrored_rate_clients(spec, spec.het_beta1,
                                           spec.het_arrival_scale,
                                           capacity_fn=capacity_fn)
            ledgers, digest = _run_modes(spec, config, specs,
                                         ["sharing", "no-sharing"])
            base_qoe = ledgers["no-sharing"].total_qoe()
            rows.append({
                "family": "channel-heterogeneity", "point_index": p,
                "capacity_x_bits_per_slot": capacity_x, "beta1": spec.het_beta1,
                "replication": rep, "seed": seed, "trace_sha": digest,
                "qoe_no_sharing": base_qoe,
                "qoe_sharing": ledgers["sharing"].total_qoe(),
                "improvement_percent": improvement_percent(
                    ledgers["sharing"].total_qoe(), base_qoe),
                "avg_shared_slots_per_period":
                    ledgers["sharing"].average_cross_sharing(),
                "debt_blowup_sharing": _blowup(ledgers["sharing"]),
                "debt_blowup_no_sharing": _blowup(ledgers["no-sharing"]),
            })
    means = _aggregate(rows, ["point_index", "capacity_x_bits_per_slot"],
                       [k for k in rows[0]
                        if k.startswith(("qoe", "improvement", "avg", "debt"))])
    return rows, means


def _sweep_coverage_imbalance(spec: ScenarioSpec) -> tuple[list[dict], list[dict]]:
    rows: list[dict] = []
    for p, capacity_op1 in enumerate(spec.capacity_op1_grid):
        for rep in range(spec.replications):
            seed = _point_seed(spec, p, rep)
            config = _base_config(spec, 2, seed)
            specs = []
            rates = {(0, 0): spec.cov_arrival_scale * spec.cov_beta1,
                     (0, 1): spec.cov_arrival_scale * (1 - spec.cov_beta1),
                     (1, 0): spec.cov_arrival_scale * (1 - spec.cov_beta1),
                     (1, 1): spec.cov_arrival_scale * spec.cov_beta1}
            for (op, region), rate in rates.items():
                capacity = 10e6 if op == 0 else capacity_op1
                specs.extend(_client_group(op, region, spec.clients_per_group,
                                           rate, capacity=capacity))
            ledgers, digest = _run_modes(spec, config, specs,
                                         ["sharing", "no-sharing"])
            base_qoe = ledgers["no-sharing"].total_qoe()
            rows.append({
                "family": "coverage-imbalance", "point_index": p,
                "capacity_op1_bits_per_slot": capacity_op1,
                "coverage_ratio_minus_1": 10e6 / capacity_op1 - 1.0,
                "replication": rep, "seed": seed, "trace_sha": digest,
                "qoe_no_sharing": base_qoe,
                "qoe_sharing": ledgers["sharing"].total_qoe(),
                "improvement_percent": improvement_percent(
                    ledgers["sharing"].total_qoe(), base_qoe),
                "avg_shared_slots_per_period":
                    ledgers["sharing"].average_cross_sharing(),
                "debt_blowup_sharing": _blowup(ledgers["sharing"]),
                "debt_blowup_no_sharing": _blowup(ledgers["no-sharing"]),
            })
    means = _aggregate(rows, ["point_index", "capacity_op1_bits_per_slot",
                              "coverage_ratio_minus_1"],
                       [k for k in rows[0]
                        if k.startswith(("qoe", "improvement", "avg", "debt"))])
    return rows, means


def _sweep_multi_region(spec: ScenarioSpec) -> tuple[list[dict], list[dict]]:
    num_regions = len(spec.region_rates)
    rows: list[dict] = []
    for rep in range(spec.replications):
        seed = _point_seed(spec, 0, rep)
        config = _base_config(spec, num_regions, seed)
        specs: list[ClientSpec] = []
        for region, rate in enumerate(spec.region_rates):
            specs.extend(_client_group(0, region, spec.clients_per_group, rate))
            specs.extend(_client_group(1, region, spec.clients_per_group,
                                       round(1.0 - rate, 10)))
        clients = ClientSet(config, specs)
        trace = generate_trace(clients, config.horizon_K, seed)
        ledgers = {}
        for mode in ("sharing", "no-sharing"):
            cfg = replace(config, policy_mode=mode,
                          sharing_bound_zeta=config.sharing_bound_zeta.copy())
            ledgers[mode] = run_policy(cfg, clients, trace=trace).ledger
        digest = trace_hash(trace)
        for region, rate in enumerate(spec.region_rates):
            mask = clients.region == region
            qoe_share = float(ledgers["sharing"].quality_sum[mask].sum()) / spec.horizon_K
            qoe_base = float(ledgers["no-sharing"].quality_sum[mask].sum()) / spec.horizon_K
            rows.append({
                "family": "multi-region", "region": region,
                "rate_op0": rate, "rate_op1": round(1.0 - rate, 10),
                "replication": rep, "seed": seed, "trace_sha": digest,
                "qoe_no_sharing_region": qoe_base,
                "qoe_sharing_region": qoe_share,
                "improvement_percent": improvement_percent(qoe_share, qoe_base),
            })
    means = _aggregate(rows, ["region", "rate_op0", "rate_op1"],
                       ["qoe_no_sharing_region", "qoe_sharing_region",
                        "improvement_percent"])
    return rows, means


def _aggregate(rows: list[dict], group_keys: list[str],
               value_keys: list[str]) -> list[dict]:
    """Per-point means over replications (replication-count column added)."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in group_keys), []).append(row)
    means = []
    for key, members in groups.items():
        agg = dict(zip(group_keys, key))
        agg["replications"] = len(members)
        for vk in value_keys:
            agg[f"mean_{vk}"] = float(np.mean([m[vk] for m in members]))
        means.append(agg)
    return means


_SWEEPERS = {
    "arrival-imbalance": lambda s: _sweep_arrival_like(s, "arrival-imbalance"),
    "quality-scaling": lambda s: _sweep_arrival_like(s, "quality-scaling"),
    "approx-comparison": lambda s: _sweep_arrival_like(s, "approx-comparison"),
    "correlated-delayed": lambda s: _sweep_arrival_like(s, "correlated-delayed"),
    "channel-heterogeneity": _sweep_channel_heterogeneity,
    "coverage-imbalance": _sweep_coverage_imbalance,
    "multi-region": _sweep_multi_region,
}


def resolve_out_dir(out_dir: str | None) -> str:
    """CLI --out, else the BANDSHARE_OUT_DIR env var, else ./bandshare-out."""
    resolved = out_dir or os.environ.get(OUT_DIR_ENV) or "bandshare-out"
    os.makedirs(resolved, exist_ok=True)
    return resolved


def write_rows_csv(path, rows: list[dict]) -> None:
    """Dict rows -> CSV with the first row's key order as the frozen header."""
    with open(path, "w", newline="") as fh:
        if not rows:
            fh.write("")
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def run_scenario(spec: ScenarioSpec, out_dir: str | None = None) -> ScenarioResult:
    """Run one family sweep; write per-replication and per-point-mean CSVs."""
    rows, means = _SWEEPERS[spec.figure_family](spec)
    result = ScenarioResult(rows=rows, means=means)
    if out_dir is not None:
        out_dir = resolve_out_dir(out_dir)
        result.csv_path = os.path.join(out_dir, f"{spec.figure_family}.csv")
        result.means_csv_path = os.path.join(out_dir,
                                             f"{spec.figure_family}_means.csv")
        write_rows_csv(result.csv_path, rows)
        write_rows_csv(result.means_csv_path, means)
    return result


# ---------------------------------------------------------------------------
# Plot emission
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlotSpec:
    """What to draw from a CSV: one x column against one or more y columns."""

    x: str
    y: tuple
    out_name: str
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""


def emit_plot(csv_path, plot_spec: PlotSpec, out_dir: str | None = None) -> str:
    """Render a deterministic SVG line plot from a CSV.

    Rows with non-finite x or y are dropped; an empty CSV yields empty axes
    with a warning annotation. Missing columns raise PlotColumnError.
    """
    out_dir = resolve_out_dir(out_dir)
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        fieldnames = reader.fieldnames or []
        data = list(reader)
    plt.rcParams["svg.hashsalt"] = "bandshare"
    fig, ax = plt.subplots(figsize=(6, 4))
    if not data:
        ax.annotate("warning: no data rows in CSV", xy=(0.5, 0.5),
                    xycoords="axes fraction", ha="center", color="firebrick")
    else:
        wanted = [plot_spec.x, *plot_spec.y]
        missing = [c for c in wanted if c not in fieldnames]
        if missing:
            plt.close(fig)
            raise PlotColumnError(
                f"CSV {csv_path} lacks columns {missing}; has {fieldnames}")
        for y_col in plot_spec.y:
            pts = []
            for row in data:
                try:
                    x_val, y_val = float(row[plot_spec.x]), float(row[y_col])
                except ValueError:
                    continue
                if np.isfinite(x_val) and np.isfinite(y_val):
                    pts.append((x_val, y_val))
            pts.sort()
            if pts:
                ax.plot([p[0] for p in pts], [p[1] for p in pts],
                        marker="o", label=y_col)
        ax.legend(fontsize=8)
    ax.set_title(plot_spec.title)
    ax.set_xlabel(plot_spec.xlabel or plot_spec.x)
    ax.set_ylabel(plot_spec.ylabel or ", ".join(plot_spec.y))
    ax.grid(True, alpha=0.3)
    out_path = os.path.join(out_dir, plot_spec.out_name)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out_path


_FAMILY_PLOTS = {
    "arrival-imbalance": [
        PlotSpec("mean_beta1" and "beta1", ("mean_improvement_percent",),
                 "arrival-imbalance_improvement.svg",
                 "QoE improvement vs arrival imbalance",
                 "beta1 (region-0 rate share)", "improvement (%)"),
        PlotSpec("beta1", ("mean_avg_shared_slots_per_period",),
                 "arrival-imbalance_sharing.svg",
                 "Slots shared per period vs arrival imbalance",
                 "beta1 (region-0 rate share)", "slots/period"),
        PlotSpec("beta1", ("mean_avg_marginal_quality_sharing",),
                 "arrival-imbalance_marginal_quality.svg",
                 "Marginal quality vs arrival imbalance",
                 "beta1 (region-0 rate share)", "marginal quality"),
    ],
    "channel-heterogeneity": [
        PlotSpec("capacity_x_bits_per_slot", ("mean_improvement_percent",),
                 "channel-heterogeneity_improvement.svg",
                 "QoE improvement vs set-X channel capacity",
                 "set X capacity (bits/slot)", "improvement (%)"),
    ],
    "quality-scaling": [
        PlotSpec("beta1", ("mean_improvement_percent",),
                 "quality-scaling_improvement.svg",
                 "QoE improvement with tiered quality scales",
                 "beta1 (region-0 rate share)", "improvement (%)"),
    ],
    "coverage-imbalance": [
        PlotSpec("coverage_ratio_minus_1", ("mean_improvement_percent",),
                 "coverage-imbalance_improvement.svg",
                 "QoE improvement vs coverage imbalance",
                 "capacity ratio - 1", "improvement (%)"),
    ],
    "approx-comparison": [
        PlotSpec("beta1", ("mean_improvement_percent",
                           "mean_improvement_approx_percent"),
                 "approx-comparison_improvement.svg",
                 "Exact vs relaxed policy improvement",
                 "beta1 (region-0 rate share)", "improvement (%)"),
    ],
    "correlated-delayed": [
        PlotSpec("beta1", ("mean_improvement_percent",
                           "mean_improvement_delayed_percent"),
                 "correlated-delayed_improvement.svg",
                 "Improvement under correlated arrivals and stale debts",
                 "beta1 (region-0 rate share)", "improvement (%)"),
    ],
    "multi-region": [
        PlotSpec("rate_op0", ("mean_improvement_percent",),
                 "multi-region_improvement.svg",
                 "Per-region QoE improvement",
                 "operator-0 arrival rate in region", "improvement (%)"),
    ],
}


def run_figure_sweep(family: str, out_dir: str | None = None,
                     **overrides) -> ScenarioResult:
    """Run one family with default knobs (overridable) and emit its plots."""
    spec = ScenarioSpec(figure_family=family, **overrides)
    out_dir = resolve_out_dir(out_dir)
    result = run_scenario(spec, out_dir=out_dir)
    for plot_spec in _FAMILY_PLOTS[family]:
        result.plot_paths.append(
            emit_plot(result.means_csv_path, plot_spec, out_dir=out_dir))
    return result


# ---------------------------------------------------------------------------
# Per-period decision dump (debugging aid)
# ---------------------------------------------------------------------------

DECISION_COLUMNS = ["record_type", "period", "region", "donor", "recipient",
                    "shared_slots", "operator", "client", "tau"]


class DecisionDump:
    """Collects per-period sharing and allocation rows for CSV export."""

    def __init__(self):
        self.rows: list[list] = []

    def record(self, period: int, decision, clients: ClientSet) -> None:
        share = decision.share_S
        for region in range(share.shape[0]):
            for donor in range(share.shape[1]):
                for recipient in range(share.shape[2]):
                    if share[region, donor, recipient]:
                        self.rows.append([
                            "share", period, region, donor, recipient,
                            int(share[region, donor, recipient]), "", "", ""])
        for n, spec in enumerate(clients.specs):
            if decision.alloc_tau[n]:
                self.rows.append([
                    "alloc", period, spec.region_id, "", "", "",
                    spec.operator_id, spec.client_id, int(decision.alloc_tau[n])])

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(DECISION_COLUMNS)
            writer.writerows(self.rows)
