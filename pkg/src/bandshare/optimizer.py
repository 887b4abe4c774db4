"""Per-period argmax of the drift-plus-penalty objective within one region.

The period objective separates across regions once the debts are fixed, so
each region is solved on its own:

    maximize  sum_n [ delta_n * b_n(tau_n) + V * Q_n(tau_n) * 1{tau_n>0} ]
              + sum_{j,i} w[j,i] * S[j,i]
    over      integer tau >= 0, integer S >= 0,
              sum of recipient i's tau <= sum_j S[j,i]   (received slots)
              sum_i S[j,i] <= T per donor j              (period budget)

where w[j,i] = sigma[j->i] - sigma[i->j] is the antisymmetric sharing-debt
coefficient rewarding donations that repay debt. Arrived clients that end
up with zero slots contribute 0 (not the negative Q(0) of the log curve),
unless the count_zero_alloc_quality deviation knob is set.

Three solvers are provided: an exact one (per-operator dynamic program
over slot budgets plus exhaustive enumeration of donor rows), a greedy
one working on the piecewise-linear acceptability relaxation (one slot at
a time to the best (donor, recipient, client) move, including client-less
pure debt-repayment transfers), and an exhaustive brute-force oracle for
tiny instances used by the test suite.

Exact-solver complexity: the donor enumeration visits C(T+O, O)^O row
combinations (531k at O=2, T=20, evaluated as one vectorized grid); the
per-operator dynamic program is O(n_clients * (O*T)^2). Instances beyond
the guard (O <= 4, T <= 64, enumeration <= ~2e7 nodes) are refused.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .quality import QualityParams, acceptability_threshold, quality_table

NEG_INF = -np.inf

EXACT_MAX_OPERATORS = 4
EXACT_MAX_T = 64
EXACT_MAX_ENUMERATION = 20_000_000
ORACLE_MAX_OPERATORS = 2
ORACLE_MAX_CLIENTS_PER_OP = 3
ORACLE_MAX_T = 4


class OptimizerGuardError(ValueError):
    """Instance exceeds the documented enumeration guard."""


@dataclass
class ArrivedClient:
    """One client with a packet this period, as seen by the region solver."""

    flat_index: int
    quality_debt: float
    params: QualityParams
    min_slots: int | None = None       # smallest tau with acceptable quality
    qtable: np.ndarray | None = None   # cached Q(0..M); built on demand

    def quality_row(self, max_tau: int) -> np.ndarray:
        if self.qtable is None or len(self.qtable) < max_tau + 1:
            self.qtable = quality_table(self.params, max_tau)
        return self.qtable[:max_tau + 1]


@dataclass
class RegionProblem:
    """Immutable snapshot of one region's per-period optimization problem."""

    region_id: int
    num_operators: int
    period_len_T: int
    policy_weight_V: float
    q_min: float
    clients_by_op: list[list[ArrivedClient]]
    sharing_coeff_w: np.ndarray  # (O, O), antisymmetric, zero diagonal
    count_zero_alloc_quality: bool = False

    def __post_init__(self):
        w = np.asarray(self.sharing_coeff_w, dtype=float)
        if w.shape != (self.num_operators, self.num_operators):
            raise ValueError(f"sharing coefficients must be {self.num_operators}x"
                             f"{self.num_operators}, got {w.shape}")
        if not np.allclose(w, -w.T):
            raise ValueError("sharing coefficients must be antisymmetric")
        self.sharing_coeff_w = w

    @property
    def max_budget(self) -> int:
        return self.num_operators * self.period_len_T


@dataclass
class RegionSolution:
    """Allocation and sharing for one region, with the achieved objective."""

    share_S: np.ndarray            # (O, O) int, [donor, recipient]
    alloc_tau: list[np.ndarray]    # per operator, aligned with clients_by_op
    objective_value: float


def sharing_coefficients(sigma: np.ndarray) -> np.ndarray:
    """w[j, i] = sigma[j->i] - sigma[i->j]; donating to a creditor is rewarded."""
    sigma = np.asarray(sigma, dtype=float)
    return sigma - sigma.T


# ---------------------------------------------------------------------------
# Per-client gains and the per-operator dynamic program
# ---------------------------------------------------------------------------

def _client_gains(problem: RegionProblem, client: ArrivedClient,
                  max_budget: int, relaxed: bool) -> np.ndarray:
    """Gain of giving this client t = 0..max_budget slots."""
    q = client.quality_row(max_budget)
    V = problem.policy_weight_V
    if relaxed and problem.q_min > 0:
        accept = np.clip(q / problem.q_min, 0.0, 1.0)
    else:
        accept = (q >= problem.q_min).astype(float)
    gains = client.quality_debt * accept + V * q
    if not problem.count_zero_alloc_quality:
        gains[0] = client.quality_debt * accept[0]  # zero slots: no quality term
    return gains


def _op_gain_matrix(problem: RegionProblem, op: int, max_budget: int,
                    relaxed: bool) -> np.ndarray:
    clients = problem.clients_by_op[op]
    gains = np.empty((len(clients), max_budget + 1))
    for row, client in enumerate(clients):
        gains[row] = _client_gains(problem, client, max_budget, relaxed)
    return gains


@lru_cache(maxsize=32)
def _shift_index(max_budget: int) -> tuple[np.ndarray, np.ndarray]:
    """Index helpers for the (max,+) DP step: IDX[t, s] = s - t where t <= s."""
    t = np.arange(max_budget + 1)[:, None]
    s = np.arange(max_budget + 1)[None, :]
    valid = t <= s
    idx = np.where(valid, s - t, max_budget + 1)
    return idx, valid


def _suffix_tables(gains: np.ndarray) -> list[np.ndarray]:
    """suffix[idx][m] = best value of clients idx.. with at most m slots.

    gains has shape (n_clients, M+1); returns n_clients+1 vectors of length
    M+1. suffix[0] is the operator's value table over budgets.
    """
    n, width = gains.shape
    max_budget = width - 1
    idx_matrix, _ = _shift_index(max_budget)
    tables = [np.zeros(width)]
    ext = np.empty(width + 1)
    for i in range(n - 1, -1, -1):
        ext[:width] = tables[0]
        ext[width] = NEG_INF
        step = gains[i][:, None] + ext[idx_matrix]
        tables.insert(0, step.max(axis=0))
    return tables


def _backtrack(gains: np.ndarray, tables: list[np.ndarray], budget: int) -> np.ndarray:
    """Lexicographically smallest allocation achieving tables[0][budget]."""
    n = gains.shape[0]
    alloc = np.zeros(n, dtype=int)
    s = budget
    for i in range(n):
        target = tables[i][s]
        cand = gains[i, :s + 1] + tables[i + 1][s::-1]
        t = int(np.flatnonzero(cand == target)[0])
        alloc[i] = t
        s -= t
    return alloc


def intra_operator_value(clients: list[ArrivedClient], slots: int, V: float,
                         q_min: float,
                         count_zero_alloc_quality: bool = False
                         ) -> tuple[float, np.ndarray]:
    """Best value of splitting at most ``slots`` timeslots among one
    operator's arrived clients, with the lexicographically smallest argmax.
    """
    if slots < 0:
        raise ValueError(f"slot budget must be non-negative, got {slots}")
    problem = RegionProblem(
        region_id=0, num_operators=1, period_len_T=max(slots, 1),
        policy_weight_V=V, q_min=q_min,
        clients_by_op=[list(clients)], sharing_coeff_w=np.zeros((1, 1)),
        count_zero_alloc_quality=count_zero_alloc_quality)
    if not clients:
        return 0.0, np.zeros(0, dtype=int)
    gains = _op_gain_matrix(problem, 0, slots, relaxed=False)
    tables = _suffix_tables(gains)
    return float(tables[0][slots]), _backtrack(gains, tables, slots)


# ---------------------------------------------------------------------------
# Donor-row enumeration
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _donor_rows(num_operators: int, period_len_T: int) -> np.ndarray:
    """All non-negative integer rows of length O summing to <= T, in
    lexicographic order (so first-maximum scans break ties toward the
    lexicographically smallest sharing matrix)."""
    rows: list[tuple[int, ...]] = []

    def extend(prefix: tuple[int, ...], remaining: int):
        if len(prefix) == num_operators:
            rows.append(prefix)
            return
        for v in range(remaining + 1):
            extend(prefix + (v,), remaining - v)

    extend((), period_len_T)
    return np.array(rows, dtype=int)


@lru_cache(maxsize=32)
def _pair_grids(period_len_T: int) -> tuple[np.ndarray, np.ndarray]:
    """Recipient-total grids for the two-operator fast path."""
    rows = _donor_rows(2, period_len_T)
    m0 = rows[:, 0][:, None] + rows[:, 0][None, :]
    m1 = rows[:, 1][:, None] + rows[:, 1][None, :]
    return m0, m1


# ---------------------------------------------------------------------------
# Exact solver
# ---------------------------------------------------------------------------

def solve_region_exact(problem: RegionProblem) -> RegionSolution:
    """Exact optimum via per-operator value tables plus donor enumeration.

    Ties in the objective are broken toward the lexicographically smallest
    (share matrix, allocation) pair, making runs bit-reproducible.
    """
    O, T = problem.num_operators, problem.period_len_T
    if O > EXACT_MAX_OPERATORS or T > EXACT_MAX_T:
        raise OptimizerGuardError(
            f"instance too large for exact solver: {O} operators, T={T} "
            f"(guard: <= {EXACT_MAX_OPERATORS} operators, T <= {EXACT_MAX_T})")
    rows = _donor_rows(O, T)
    if len(rows) ** O > EXACT_MAX_ENUMERATION:
        raise OptimizerGuardError(
            f"instance too large for exact solver: {len(rows)}^{O} donor-row "
            f"combinations exceed {EXACT_MAX_ENUMERATION}")

    max_budget = problem.max_budget
    gain_mats, tables, value_tabs = [], [], []
    for op in range(O):
        gains = _op_gain_matrix(problem, op, max_budget, relaxed=False)
        gain_mats.append(gains)
        tabs = _suffix_tables(gains)
        tables.append(tabs)
        value_tabs.append(tabs[0])

    w = problem.sharing_coeff_w
    wdots = rows @ w.T  # wdots[row, donor] = sum_i w[donor, i] * row[i]

    if O == 2:
        m0, m1 = _pair_grids(T)
        grid = np.take(value_tabs[0], m0)
        grid += np.take(value_tabs[1], m1)
        grid += wdots[:, 0][:, None]
        grid += wdots[:, 1][None, :]
        flat = int(np.argmax(grid))
        a, b = divmod(flat, len(rows))
        share = np.vstack([rows[a], rows[b]])
        best_value = float(grid[a, b])
    else:
        best_value = NEG_INF
        best_combo: tuple[int, ...] | None = None
        for combo in itertools.product(range(len(rows)), repeat=O):
            totals = rows[list(combo)].sum(axis=0)
            value = sum(value_tabs[i][totals[i]] for i in range(O))
            value += sum(wdots[combo[d], d] for d in range(O))
            if value > best_value:
                best_value = float(value)
                best_combo = combo
        share = rows[list(best_combo)]

    budgets = share.sum(axis=0)
    alloc = [_backtrack(gain_mats[i], tables[i], int(budgets[i])) for i in range(O)]
    return RegionSolution(share_S=share.copy(), alloc_tau=alloc,
                          objective_value=best_value)


# ---------------------------------------------------------------------------
# Greedy solver on the piecewise-linear relaxation
# ---------------------------------------------------------------------------

_PURE = -1  # client slot of a pure debt-repayment transfer (no consumer)


def solve_region_approx(problem: RegionProblem) -> RegionSolution:
    """Greedy one-slot-at-a-time allocation of the relaxed objective.

    Every move is a (donor, recipient, client) triple whose marginal gain is
    delta*d(approx acceptability) + V*dQ + w[donor, recipient]; client-less
    pure transfers (marginal w[donor, recipient]) repay sharing debt without
    serving anyone. Stops when the best marginal gain is <= 0. Ties break
    toward the smallest (donor, recipient, client) indices, pure transfers
    ordering after that recipient's clients. objective_value is the relaxed
    objective of the greedy solution.
    """
    O, T = problem.num_operators, problem.period_len_T
    max_budget = problem.max_budget
    w = problem.sharing_coeff_w

    gain_rows: list[list[np.ndarray]] = []
    for op in range(O):
        gain_rows.append([
            _client_gains(problem, c, max_budget, relaxed=True)
            for c in problem.clients_by_op[op]])

    donors: list[int] = []
    recipients: list[int] = []
    client_slots: list[int] = []
    for j in range(O):
        for i in range(O):
            for n in range(len(problem.clients_by_op[i])):
                donors.append(j); recipients.append(i); client_slots.append(n)
            if i != j:
                donors.append(j); recipients.append(i); client_slots.append(_PURE)
    donors_a = np.array(donors, dtype=int)
    recipients_a = np.array(recipients, dtype=int)
    clients_a = np.array(client_slots, dtype=int)

    tau = [np.zeros(len(problem.clients_by_op[i]), dtype=int) for i in range(O)]
    share = np.zeros((O, O), dtype=int)
    donor_left = np.full(O, T, dtype=int)

    def client_margin(i: int, n: int) -> float:
        t = tau[i][n]
        if t + 1 > max_budget:
            return NEG_INF
        return gain_rows[i][n][t + 1] - gain_rows[i][n][t]

    margins = np.empty(len(donors_a))
    for k in range(len(donors_a)):
        base = 0.0 if clients_a[k] == _PURE else client_margin(recipients_a[k], clients_a[k])
        margins[k] = base + w[donors_a[k], recipients_a[k]]

    while donor_left.sum() > 0:
        k = int(np.argmax(margins))
        if not margins[k] > 0.0:
            break
        j, i, n = int(donors_a[k]), int(recipients_a[k]), int(clients_a[k])
        share[j, i] += 1
        donor_left[j] -= 1
        if n != _PURE:
            tau[i][n] += 1
            moved = (recipients_a == i) & (clients_a == n)
            refreshed = client_margin(i, n) + w[donors_a[moved], i]
            margins[moved] = np.where(donor_left[donors_a[moved]] > 0,
                                      refreshed, NEG_INF)
        if donor_left[j] == 0:
            margins[donors_a == j] = NEG_INF

    value = float(np.sum(w * share))
    for i in range(O):
        for n, row in enumerate(gain_rows[i]):
            value += row[tau[i][n]]
    return RegionSolution(share_S=share, alloc_tau=tau, objective_value=value)


# ---------------------------------------------------------------------------
# Exhaustive oracle and objective evaluation
# ---------------------------------------------------------------------------

def brute_force_oracle(problem: RegionProblem, relaxed: bool = False) -> RegionSolution:
    """Exhaustive enumeration of every feasible (share, allocation) pair.

    Only accepts tiny instances; used as the independent correctness oracle.
    """
    O, T = problem.num_operators, problem.period_len_T
    sizes = [len(c) for c in problem.clients_by_op]
    if O > ORACLE_MAX_OPERATORS or T > ORACLE_MAX_T or \
            any(s > ORACLE_MAX_CLIENTS_PER_OP for s in sizes):
        raise OptimizerGuardError(
            f"instance too large for brute-force oracle: {O} operators, T={T}, "
            f"clients per operator {sizes}")

    max_budget = problem.max_budget
    per_op_best: list[tuple[np.ndarray, list[np.ndarray]]] = []
    for op in range(O):
        n = sizes[op]
        gains = _op_gain_matrix(problem, op, max_budget, relaxed=relaxed)
        combos = [c for c in itertools.product(range(max_budget + 1), repeat=n)
                  if sum(c) <= max_budget]
        totals = np.array([sum(c) for c in combos], dtype=int)
        values = np.array([sum(gains[row, t] for row, t in enumerate(c))
                           for c in combos])
        best_val = np.empty(max_budget + 1)
        best_alloc: list[np.ndarray] = []
        for m in range(max_budget + 1):
            feasible = np.flatnonzero(totals <= m)
            pick = feasible[int(np.argmax(values[feasible]))]
            best_val[m] = values[pick]
            best_alloc.append(np.array(combos[pick], dtype=int))
        per_op_best.append((best_val, best_alloc))

    rows = _donor_rows(O, T)
    w = problem.sharing_coeff_w
    wdots = rows @ w.T
    best_value = NEG_INF
    best_share: np.ndarray | None = None
    for combo in itertools.product(range(len(rows)), repeat=O):
        share = rows[list(combo)]
        totals = share.sum(axis=0)
        value = sum(per_op_best[i][0][totals[i]] for i in range(O))
        value += sum(wdots[combo[d], d] for d in range(O))
        if value > best_value:
            best_value = float(value)
            best_share = share
    budgets = best_share.sum(axis=0)
    alloc = [per_op_best[i][1][int(budgets[i])] for i in range(O)]
    return RegionSolution(share_S=best_share.copy(), alloc_tau=alloc,
                          objective_value=best_value)


def evaluate_solution(problem: RegionProblem, solution: RegionSolution,
                      relaxed: bool = False) -> float:
    """Objective value of an arbitrary feasible solution (exact or relaxed)."""
    max_budget = problem.max_budget
    value = float(np.sum(problem.sharing_coeff_w * solution.share_S))
    for op in range(problem.num_operators):
        for row, client in enumerate(problem.clients_by_op[op]):
            gains = _client_gains(problem, client, max_budget, relaxed)
            value += gains[int(solution.alloc_tau[op][row])]
    return value


def make_arrived_client(flat_index: int, quality_debt: float,
                        params: QualityParams, q_min: float) -> ArrivedClient:
    """Convenience constructor that fills in the acceptability threshold."""
    return ArrivedClient(
        flat_index=flat_index, quality_debt=quality_debt, params=params,
        min_slots=acceptability_threshold(params, q_min))
