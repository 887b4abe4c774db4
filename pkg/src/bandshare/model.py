"""Domain types, configuration schema, and per-period constraint validation.

A run is fully described by a SystemConfig plus a list of ClientSpec. Both
load from (and dump to) a line-oriented text format with units spelled out
in the key names, so experiment configs stay diff-able. All operator,
region and client indices are 0-based, in configs and CSVs alike.

Config format, one statement per line, ``#`` starts a comment::

    operators_count = 2
    regions_count = 2
    period_timeslots = 20
    horizon_periods = 10000
    policy_weight_v = 100.0
    quality_min = 0.3
    sharing_bound_zeta_slots_per_period = 0.001     # scalar, broadcast
    sharing_bound_zeta_slots_per_period[0,1] = 0.001  # or per ordered pair
    tolerance_xi1_rate = 0.01
    tolerance_xi2_slots_per_period = 0.01
    master_seed = 7
    policy_mode = sharing          # sharing | no-sharing | sharing-approx
                                   # | sharing-delayed | sharing-delayed(d)
    sharing_delay_periods = 1
    arrival_correlation = 0.0
    clients operator=0 region=0 count=30 arrival_rate_per_period=0.2375 \
        capacity_bits_per_slot=10e6 quality_scale_gamma=0.8 \
        delivery_req_per_period=0.225625

Unspecified scalar keys take the defaults shown by ``DEFAULTS``; a clients
line may omit everything but operator/region/count/arrival_rate_per_period
(capacity defaults to 10e6 bits/slot, gamma to 0.8, and the delivery
requirement to 0.95 x arrival rate).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

POLICY_MODES = ("sharing", "no-sharing", "sharing-approx", "sharing-delayed")

DEFAULTS = {
    "period_timeslots": 20,
    "horizon_periods": 10000,
    "policy_weight_v": 100.0,
    "quality_min": 0.3,
    "sharing_bound_zeta_slots_per_period": 0.001,
    "tolerance_xi1_rate": 0.01,
    "tolerance_xi2_slots_per_period": 0.01,
    "master_seed": 0,
    "policy_mode": "sharing",
    "sharing_delay_periods": 1,
    "arrival_correlation": 0.0,
}

DEFAULT_CAPACITY_BITS_PER_SLOT = 10e6
DEFAULT_QUALITY_SCALE_GAMMA = 0.8
DELIVERY_REQ_FRACTION = 0.95


class ConfigSchemaError(ValueError):
    """Malformed config text: unknown key, bad type, missing required field."""

    def __init__(self, message: str, field_name: str | None = None):
        self.field_name = field_name
        super().__init__(message if field_name is None
                         else f"{field_name}: {message}")


class ConfigValidationError(ValueError):
    """Structurally valid config that violates invariants; lists all failures."""

    def __init__(self, failures: Sequence[str]):
        self.failures = list(failures)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.failures))


class DimensionError(ValueError):
    """Decision arrays whose shapes do not match the configuration."""


@dataclass(frozen=True)
class ClientSpec:
    """One client: who it belongs to, its traffic, channel and requirement."""

    operator_id: int
    region_id: int
    client_id: int
    arrival_rate_alpha: float
    channel_capacity_c: float  # bits per timeslot
    quality_scale_gamma: float = DEFAULT_QUALITY_SCALE_GAMMA
    delivery_req_q: float = 0.0


@dataclass(eq=False)
class SystemConfig:
    """Run-wide parameters. Treat as immutable after load."""

    num_operators: int
    num_regions: int
    period_len_T: int = DEFAULTS["period_timeslots"]
    horizon_K: int = DEFAULTS["horizon_periods"]
    sharing_bound_zeta: np.ndarray | None = None  # (O, O), symmetric, zero diagonal
    policy_weight_V: float = DEFAULTS["policy_weight_v"]
    q_min_quality: float = DEFAULTS["quality_min"]
    tolerance_xi1: float = DEFAULTS["tolerance_xi1_rate"]
    tolerance_xi2: float = DEFAULTS["tolerance_xi2_slots_per_period"]
    master_seed: int = DEFAULTS["master_seed"]
    policy_mode: str = DEFAULTS["policy_mode"]
    sharing_delay_d: int = DEFAULTS["sharing_delay_periods"]
    arrival_correlation: float = DEFAULTS["arrival_correlation"]

    def __post_init__(self):
        if self.sharing_bound_zeta is None:
            self.sharing_bound_zeta = zeta_matrix(
                self.num_operators, DEFAULTS["sharing_bound_zeta_slots_per_period"])
        else:
            self.sharing_bound_zeta = np.asarray(self.sharing_bound_zeta, dtype=float)

    def __eq__(self, other):
        if not isinstance(other, SystemConfig):
            return NotImplemented
        for name in ("num_operators", "num_regions", "period_len_T", "horizon_K",
                     "policy_weight_V", "q_min_quality", "tolerance_xi1",
                     "tolerance_xi2", "master_seed", "policy_mode",
                     "sharing_delay_d", "arrival_correlation"):
            if getattr(self, name) != getattr(other, name):
                return False
        return np.array_equal(self.sharing_bound_zeta, other.sharing_bound_zeta)


def zeta_matrix(num_operators: int, value: float) -> np.ndarray:
    """Broadcast one scalar sharing bound to all ordered operator pairs."""
    zeta = np.full((num_operators, num_operators), float(value))
    np.fill_diagonal(zeta, 0.0)
    return zeta


@dataclass
class DebtState:
    """Virtual queues: per-client quality debt, per-ordered-pair sharing debt.

    sharing_debt_sigma[i, j] is the debt operator i owes operator j, i.e. it
    grows when i net-receives slots from j beyond the per-period allowance.
    """

    quality_debt_delta: np.ndarray  # (n_clients,) float, >= 0
    sharing_debt_sigma: np.ndarray  # (O, O) float, >= 0, zero diagonal

    @classmethod
    def zeros(cls, n_clients: int, num_operators: int) -> "DebtState":
        return cls(np.zeros(n_clients), np.zeros((num_operators, num_operators)))

    def copy(self) -> "DebtState":
        return DebtState(self.quality_debt_delta.copy(), self.sharing_debt_sigma.copy())


@dataclass
class PeriodDecision:
    """One period's allocation, sharing, and realized outcomes.

    share_S[r, j, i] is the number of donor-j timeslots used by recipient
    operator i in region r (the diagonal is self-use). quality_Q holds each
    client's QoE contribution for the period: Q(tau) when the client
    arrived and received at least one slot, else 0.
    """

    alloc_tau: np.ndarray  # (n_clients,) int
    share_S: np.ndarray    # (R, O, O) int
    accept_b: np.ndarray   # (n_clients,) int
    quality_Q: np.ndarray  # (n_clients,) float


@dataclass(frozen=True)
class Violation:
    """One broken per-period constraint, located by region/operator(s)."""

    constraint: str
    region: int | None
    operators: tuple[int, ...]
    detail: str


class ClientSet:
    """Flat, array-backed view over a list of ClientSpec.

    Client order is the config order; by_op_region[(i, r)] lists the flat
    indices of operator i's clients in region r.
    """

    def __init__(self, config: SystemConfig, specs: Sequence[ClientSpec]):
        self.specs = tuple(specs)
        self.n = len(specs)
        self.operator = np.array([c.operator_id for c in specs], dtype=int)
        self.region = np.array([c.region_id for c in specs], dtype=int)
        self.arrival_rate = np.array([c.arrival_rate_alpha for c in specs])
        self.capacity_bits = np.array([c.channel_capacity_c for c in specs])
        self.scale_gamma = np.array([c.quality_scale_gamma for c in specs])
        self.delivery_req = np.array([c.delivery_req_q for c in specs])
        self.by_op_region: dict[tuple[int, int], list[int]] = {
            (i, r): [] for i in range(config.num_operators)
            for r in range(config.num_regions)}
        for idx, c in enumerate(specs):
            self.by_op_region[(c.operator_id, c.region_id)].append(idx)


# ---------------------------------------------------------------------------
# Per-period constraint validation
# ---------------------------------------------------------------------------

def validate_decision(decision: PeriodDecision, arrivals: np.ndarray,
                      config: SystemConfig, clients: ClientSet) -> list[Violation]:
    """Check one period's decision against the hard per-period constraints.

    Returns an empty list iff the decision satisfies: slots only to arriving
    clients; per-region recipient usage within received slots; non-negative
    sharing; and each donor's row within its period budget. Raises
    DimensionError on shape mismatches.
    """
    O, R, T = config.num_operators, config.num_regions, config.period_len_T
    tau = np.asarray(decision.alloc_tau)
    S = np.asarray(decision.share_S)
    arrivals = np.asarray(arrivals)
    if tau.shape != (clients.n,) or arrivals.shape != (clients.n,):
        raise DimensionError(
            f"alloc_tau/arrivals must have shape ({clients.n},), got {tau.shape} and {arrivals.shape}")
    if S.shape != (R, O, O):
        raise DimensionError(f"share_S must have shape {(R, O, O)}, got {S.shape}")

    violations: list[Violation] = []
    for n in np.flatnonzero(tau < 0):
        violations.append(Violation(
            "tau-nonnegative", int(clients.region[n]), (int(clients.operator[n]),),
            f"client {n} has negative allocation {tau[n]}"))
    for n in np.flatnonzero((arrivals == 0) & (tau > 0)):
        violations.append(Violation(
            "arrival-gating", int(clients.region[n]), (int(clients.operator[n]),),
            f"client {n} received {tau[n]} slots without a packet arrival"))
    for r, j, i in zip(*np.nonzero(S < 0)):
        violations.append(Violation(
            "share-nonnegative", int(r), (int(j), int(i)),
            f"share_S[{r},{j},{i}] = {S[r, j, i]} is negative"))
    donor_totals = S.sum(axis=2)  # (R, O)
    for r, j in zip(*np.nonzero(donor_totals > T)):
        violations.append(Violation(
            "donor-budget", int(r), (int(j),),
            f"operator {j} allocates {donor_totals[r, j]} slots in region {r}, budget {T}"))
    for (i, r), members in clients.by_op_region.items():
        used = int(tau[members].sum()) if members else 0
        received = int(S[r, :, i].sum())
        if used > received:
            violations.append(Violation(
                "recipient-capacity", r, (i,),
                f"operator {i} uses {used} slots in region {r} but received {received}"))
    return violations


# ---------------------------------------------------------------------------
# Config invariants
# ---------------------------------------------------------------------------

def validate_system(config: SystemConfig, specs: Sequence[ClientSpec]) -> list[str]:
    """Collect every invariant violation (empty list = valid)."""
    f: list[str] = []
    if config.num_operators < 1:
        f.append(f"operators_count must be >= 1, got {config.num_operators}")
    if config.num_regions < 1:
        f.append(f"regions_count must be >= 1, got {config.num_regions}")
    if config.period_len_T < 1:
        f.append(f"period_timeslots must be >= 1, got {config.period_len_T}")
    if config.horizon_K < 1:
        f.append(f"horizon_periods must be >= 1, got {config.horizon_K}")
    if not config.policy_weight_V > 0:
        f.append(f"policy_weight_v must be positive, got {config.policy_weight_V}")
    if not math.isfinite(config.q_min_quality):
        f.append(f"quality_min must be finite, got {config.q_min_quality}")
    for name, val in (("tolerance_xi1_rate", config.tolerance_xi1),
                      ("tolerance_xi2_slots_per_period", config.tolerance_xi2)):
        if not val > 0:
            f.append(f"{name} must be a small positive real, got {val}")
    zeta = config.sharing_bound_zeta
    O = config.num_operators
    if zeta.shape != (O, O):
        f.append(f"sharing bound matrix must have shape {(O, O)}, got {zeta.shape}")
    else:
        if np.any(zeta < 0):
            f.append("sharing bound matrix has negative entries")
        if np.any(np.diag(zeta) != 0):
            f.append("sharing bound matrix must have a zero diagonal")
        if not np.array_equal(zeta, zeta.T):
            asym = [(int(a), int(b)) for a, b in zip(*np.nonzero(zeta != zeta.T)) if a < b]
            f.append(f"sharing bound matrix must be symmetric; mismatched pairs {asym}")
    if config.policy_mode not in POLICY_MODES:
        f.append(f"policy_mode must be one of {POLICY_MODES}, got {config.policy_mode!r}")
    if config.policy_mode == "sharing-delayed" and config.sharing_delay_d < 1:
        f.append(f"sharing_delay_periods must be >= 1 in delayed mode, got {config.sharing_delay_d}")
    if not 0.0 <= config.arrival_correlation < 1.0:
        f.append(f"arrival_correlation must be in [0, 1), got {config.arrival_correlation}")

    seen: set[tuple[int, int, int]] = set()
    for c in specs:
        tag = f"client (op={c.operator_id}, region={c.region_id}, id={c.client_id})"
        if not 0 <= c.operator_id < config.num_operators:
            f.append(f"{tag}: operator out of range")
        if not 0 <= c.region_id < config.num_regions:
            f.append(f"{tag}: region out of range")
        key = (c.operator_id, c.region_id, c.client_id)
        if key in seen:
            f.append(f"{tag}: duplicate client id")
        seen.add(key)
        if not 0.0 <= c.arrival_rate_alpha <= 1.0:
            f.append(f"{tag}: arrival rate {c.arrival_rate_alpha} outside [0, 1]")
        if not c.channel_capacity_c > 0:
            f.append(f"{tag}: channel capacity must be positive, got {c.channel_capacity_c}")
        if not c.quality_scale_gamma > 0:
            f.append(f"{tag}: quality scale must be positive, got {c.quality_scale_gamma}")
        if not 0.0 <= c.delivery_req_q <= c.arrival_rate_alpha:
            f.append(f"{tag}: delivery requirement {c.delivery_req_q} exceeds arrival rate "
                     f"{c.arrival_rate_alpha} (or is negative)")
    return f


# ---------------------------------------------------------------------------
# Config text parsing / serialization
# ---------------------------------------------------------------------------

_SCALAR_TYPES = {
    "operators_count": int,
    "regions_count": int,
    "period_timeslots": int,
    "horizon_periods": int,
    "policy_weight_v": float,
    "quality_min": float,
    "sharing_bound_zeta_slots_per_period": float,
    "tolerance_xi1_rate": float,
    "tolerance_xi2_slots_per_period": float,
    "master_seed": int,
    "policy_mode": str,
    "sharing_delay_periods": int,
    "arrival_correlation": float,
}

_CLIENT_KEYS = {
    "operator": int,
    "region": int,
    "count": int,
    "arrival_rate_per_period": float,
    "capacity_bits_per_slot": float,
    "quality_scale_gamma": float,
    "delivery_req_per_period": float,
}

_ZETA_PAIR_RE = re.compile(
    r"^sharing_bound_zeta_slots_per_period\[(\d+)\s*,\s*(\d+)\]$")
_DELAYED_MODE_RE = re.compile(r"^sharing-delayed\((\d+)\)$")


def _convert(raw: str, typ, key: str):
    try:
        if typ is int:
            val = float(raw)
            if val != int(val):
                raise ValueError
            return int(val)
        return typ(raw)
    except ValueError:
        raise ConfigSchemaError(f"expected {typ.__name__}, got {raw!r}", key) from None


def load_config(config_text: str) -> tuple[SystemConfig, list[ClientSpec]]:
    """Parse and validate config text.

    Raises ConfigSchemaError on malformed text and ConfigValidationError
    (listing every failure) on invariant violations.
    """
    scalars: dict[str, object] = {}
    zeta_pairs: dict[tuple[int, int], float] = {}
    client_lines: list[dict] = []

    for lineno, raw_line in enumerate(config_text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("clients"):
            entries = line[len("clients"):].split()
            parsed: dict[str, object] = {}
            for entry in entries:
                if "=" not in entry:
                    raise ConfigSchemaError(
                        f"line {lineno}: clients entry {entry!r} is not key=value")
                key, raw = entry.split("=", 1)
                if key not in _CLIENT_KEYS:
                    raise ConfigSchemaError(f"line {lineno}: unknown clients key", key)
                parsed[key] = _convert(raw, _CLIENT_KEYS[key], key)
            for required in ("operator", "region", "count", "arrival_rate_per_period"):
                if required not in parsed:
                    raise ConfigSchemaError(
                        f"line {lineno}: clients line missing required key", required)
            client_lines.append(parsed)
            continue
        if "=" not in line:
            raise ConfigSchemaError(f"line {lineno}: not a key = value statement: {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        pair = _ZETA_PAIR_RE.match(key)
        if pair:
            i, j = int(pair.group(1)), int(pair.group(2))
            zeta_pairs[(i, j)] = _convert(raw, float, key)
            continue
        if key not in _SCALAR_TYPES:
            raise ConfigSchemaError("unknown key", key)
        if key in scalars:
            raise ConfigSchemaError("duplicate key", key)
        scalars[key] = _convert(raw, _SCALAR_TYPES[key], key)

    for required in ("operators_count", "regions_count"):
        if required not in scalars:
            raise ConfigSchemaError("missing required key", required)
    if not client_lines:
        raise ConfigSchemaError("config declares no clients lines", "clients")

    num_operators = scalars["operators_count"]
    num_regions = scalars["regions_count"]

    mode = scalars.get("policy_mode", DEFAULTS["policy_mode"])
    delay = scalars.get("sharing_delay_periods", DEFAULTS["sharing_delay_periods"])
    delayed = _DELAYED_MODE_RE.match(mode) if isinstance(mode, str) else None
    if delayed:
        mode = "sharing-delayed"
        delay = int(delayed.group(1))

    if num_operators >= 1:
        zeta = zeta_matrix(num_operators, scalars.get(
            "sharing_bound_zeta_slots_per_period",
            DEFAULTS["sharing_bound_zeta_slots_per_period"]))
        for (i, j), val in zeta_pairs.items():
            if not (0 <= i < num_operators and 0 <= j < num_operators):
                raise ConfigSchemaError(
                    f"pair ({i},{j}) out of range for {num_operators} operators",
                    "sharing_bound_zeta_slots_per_period")
            zeta[i, j] = val
    else:
        zeta = np.zeros((0, 0))

    config = SystemConfig(
        num_operators=num_operators,
        num_regions=num_regions,
        period_len_T=scalars.get("period_timeslots", DEFAULTS["period_timeslots"]),
        horizon_K=scalars.get("horizon_periods", DEFAULTS["horizon_periods"]),
        sharing_bound_zeta=zeta,
        policy_weight_V=scalars.get("policy_weight_v", DEFAULTS["policy_weight_v"]),
        q_min_quality=scalars.get("quality_min", DEFAULTS["quality_min"]),
        tolerance_xi1=scalars.get("tolerance_xi1_rate", DEFAULTS["tolerance_xi1_rate"]),
        tolerance_xi2=scalars.get("tolerance_xi2_slots_per_period",
                                  DEFAULTS["tolerance_xi2_slots_per_period"]),
        master_seed=scalars.get("master_seed", DEFAULTS["master_seed"]),
        policy_mode=mode,
        sharing_delay_d=delay,
        arrival_correlation=scalars.get("arrival_correlation",
                                        DEFAULTS["arrival_correlation"]),
    )

    specs: list[ClientSpec] = []
    counters: dict[tuple[int, int], int] = {}
    for parsed in client_lines:
        op, region = parsed["operator"], parsed["region"]
        count = parsed["count"]
        if count < 1:
            raise ConfigSchemaError(f"count must be >= 1, got {count}", "count")
        rate = parsed["arrival_rate_per_period"]
        capacity = parsed.get("capacity_bits_per_slot", DEFAULT_CAPACITY_BITS_PER_SLOT)
        gamma = parsed.get("quality_scale_gamma", DEFAULT_QUALITY_SCALE_GAMMA)
        req = parsed.get("delivery_req_per_period", DELIVERY_REQ_FRACTION * rate)
        for _ in range(count):
            cid = counters.get((op, region), 0)
            counters[(op, region)] = cid + 1
            specs.append(ClientSpec(
                operator_id=op, region_id=region, client_id=cid,
                arrival_rate_alpha=rate, channel_capacity_c=capacity,
                quality_scale_gamma=gamma, delivery_req_q=req))

    failures = validate_system(config, specs)
    if failures:
        raise ConfigValidationError(failures)
    return config, specs


def dump_config(config: SystemConfig, specs: Sequence[ClientSpec]) -> str:
    """Serialize to the documented text format; load_config round-trips it."""
    lines = [
        f"operators_count = {config.num_operators}",
        f"regions_count = {config.num_regions}",
        f"period_timeslots = {config.period_len_T}",
        f"horizon_periods = {config.horizon_K}",
        f"policy_weight_v = {config.policy_weight_V!r}",
        f"quality_min = {config.q_min_quality!r}",
        f"tolerance_xi1_rate = {config.tolerance_xi1!r}",
        f"tolerance_xi2_slots_per_period = {config.tolerance_xi2!r}",
        f"master_seed = {config.master_seed}",
        f"policy_mode = {config.policy_mode}",
        f"sharing_delay_periods = {config.sharing_delay_d}",
        f"arrival_correlation = {config.arrival_correlation!r}",
    ]
    zeta = config.sharing_bound_zeta
    for i in range(config.num_operators):
        for j in range(config.num_operators):
            if i != j:
                lines.append(
                    f"sharing_bound_zeta_slots_per_period[{i},{j}] = {zeta[i, j]!r}")

    # Group consecutive identical clients back into one line.
    def group_key(c: ClientSpec):
        return (c.operator_id, c.region_id, c.arrival_rate_alpha,
                c.channel_capacity_c, c.quality_scale_gamma, c.delivery_req_q)

    run: list[ClientSpec] = []
    for c in list(specs) + [None]:
        if run and (c is None or group_key(c) != group_key(run[0])):
            head = run[0]
            lines.append(
                "clients "
                f"operator={head.operator_id} region={head.region_id} count={len(run)} "
                f"arrival_rate_per_period={head.arrival_rate_alpha!r} "
                f"capacity_bits_per_slot={head.channel_capacity_c!r} "
                f"quality_scale_gamma={head.quality_scale_gamma!r} "
                f"delivery_req_per_period={head.delivery_req_q!r}")
            run = []
        if c is not None:
            run.append(c)
    return "\n".join(lines) + "\n"
