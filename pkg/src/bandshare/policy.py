"""Online joint allocation-and-sharing policy.

Each period: build one optimization problem per region from the current
(or, in delayed mode, stale) debt state, solve it, realize the
acceptability indicators and qualities, then update the two virtual-queue
families: per-client quality debts (grow by the delivery requirement when
an arrived packet is not served acceptably) and per-ordered-pair sharing
debts (grow with net slots received beyond the per-period allowance).
Keeping both debt families small is what enforces the long-run timely
delivery and sharing-balance constraints without lookahead.

Modes: "sharing" (exact per-region solve), "sharing-approx" (greedy on the
piecewise-linear relaxation), "sharing-delayed" (exact solve against debts
from d periods earlier, modelling laggy inter-operator coordination), and
"no-sharing" (each operator keeps its own T slots; only allocation is
optimized).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrivals import generate_trace
from .metrics import MetricsLedger
from .model import ClientSet, DebtState, PeriodDecision, SystemConfig
from .optimizer import (ArrivedClient, RegionProblem, RegionSolution,
                        _backtrack, _op_gain_matrix, _suffix_tables,
                        sharing_coefficients, solve_region_approx,
                        solve_region_exact)
from .quality import QualityParams, acceptability_threshold, quality_table


class PolicyContext:
    """Per-run caches: quality parameter objects and Q tables per client."""

    def __init__(self, config: SystemConfig, clients: ClientSet):
        self.config = config
        self.clients = clients
        self.max_budget = config.num_operators * config.period_len_T
        self.params = [
            QualityParams.from_bits(spec.channel_capacity_c, config.period_len_T,
                                    spec.quality_scale_gamma)
            for spec in clients.specs]
        self.qtables = np.stack([quality_table(p, self.max_budget)
                                 for p in self.params])
        self.min_slots = np.array([
            acceptability_threshold(p, config.q_min_quality) for p in self.params])
        # Shift term of the closed-form marginal quality, per client.
        self.marginal_shift = (0.1 * config.period_len_T
                               / (clients.capacity_bits / 1e6))


@dataclass
class PolicyState:
    """Debts plus bookkeeping; single owner per run."""

    debts: DebtState
    mode: str
    delay_buffer: list[DebtState]
    period_index: int = 0


def init_policy_state(config: SystemConfig, clients: ClientSet) -> PolicyState:
    debts = DebtState.zeros(clients.n, config.num_operators)
    buffer = []
    if config.policy_mode == "sharing-delayed":
        buffer = [DebtState.zeros(clients.n, config.num_operators)
                  for _ in range(config.sharing_delay_d)]
    return PolicyState(debts=debts, mode=config.policy_mode, delay_buffer=buffer)


def update_quality_debts(delta: np.ndarray, arrivals: np.ndarray,
                         accept_b: np.ndarray, q_req: np.ndarray) -> np.ndarray:
    """Per-client quality-debt update; clients without an arrival keep theirs."""
    arrived = np.asarray(arrivals, dtype=bool)
    updated = np.maximum(delta + q_req - accept_b, 0.0)
    return np.where(arrived, updated, delta)


def update_sharing_debts(sigma: np.ndarray, share_totals: np.ndarray,
                         zeta: np.ndarray) -> np.ndarray:
    """Per-ordered-pair sharing-debt update.

    share_totals[j, i] is this period's slots donated by j to i, already
    summed over regions. Debt i->j grows with what i net-received from j
    minus the allowance, floored at zero.
    """
    net_received = share_totals.T - share_totals
    updated = np.maximum(sigma + net_received - zeta, 0.0)
    np.fill_diagonal(updated, 0.0)
    return updated


def _region_problem(ctx: PolicyContext, region: int, arrivals: np.ndarray,
                    debts: DebtState) -> RegionProblem:
    config = ctx.config
    clients_by_op: list[list[ArrivedClient]] = []
    for op in range(config.num_operators):
        members = ctx.clients.by_op_region[(op, region)]
        arrived = [
            ArrivedClient(flat_index=n,
                          quality_debt=float(debts.quality_debt_delta[n]),
                          params=ctx.params[n],
                          min_slots=int(ctx.min_slots[n]),
                          qtable=ctx.qtables[n])
            for n in members if arrivals[n]]
        clients_by_op.append(arrived)
    return RegionProblem(
        region_id=region,
        num_operators=config.num_operators,
        period_len_T=config.period_len_T,
        policy_weight_V=config.policy_weight_V,
        q_min=config.q_min_quality,
        clients_by_op=clients_by_op,
        sharing_coeff_w=sharing_coefficients(debts.sharing_debt_sigma))


def _solve_no_sharing(problem: RegionProblem) -> RegionSolution:
    """Each operator optimizes its own clients within its own T slots."""
    O, T = problem.num_operators, problem.period_len_T
    share = np.diag(np.full(O, T)).astype(int)
    alloc = []
    value = 0.0
    for op in range(O):
        if not problem.clients_by_op[op]:
            alloc.append(np.zeros(0, dtype=int))
            continue
        gains = _op_gain_matrix(problem, op, T, relaxed=False)
        tables = _suffix_tables(gains)
        value += float(tables[0][T])
        alloc.append(_backtrack(gains, tables, T))
    return RegionSolution(share_S=share, alloc_tau=alloc, objective_value=value)


_SOLVERS = {
    "sharing": solve_region_exact,
    "sharing-delayed": solve_region_exact,
    "sharing-approx": solve_region_approx,
    "no-sharing": _solve_no_sharing,
}


def step(state: PolicyState, arrivals: np.ndarray, config: SystemConfig,
         ctx: PolicyContext | ClientSet) -> tuple[PeriodDecision, PolicyState]:
    """Run one period: solve, realize outcomes, update debts.

    In delayed mode the optimizer consumes the debt state from
    sharing_delay_d periods earlier; the updates always use the true
    realized quantities of this period.
    """
    if isinstance(ctx, ClientSet):
        ctx = PolicyContext(config, ctx)
    arrivals = np.asarray(arrivals)
    planning_debts = state.delay_buffer[0] if state.mode == "sharing-delayed" \
        else state.debts
    solver = _SOLVERS[state.mode]

    O, R = config.num_operators, config.num_regions
    n = ctx.clients.n
    tau = np.zeros(n, dtype=int)
    share = np.zeros((R, O, O), dtype=int)
    for region in range(R):
        problem = _region_problem(ctx, region, arrivals, planning_debts)
        solution = solver(problem)
        share[region] = solution.share_S
        for op in range(O):
            for client, t in zip(problem.clients_by_op[op],
                                 solution.alloc_tau[op]):
                tau[client.flat_index] = t

    arrived = arrivals.astype(bool)
    q_at_tau = ctx.qtables[np.arange(n), tau]
    accept_b = (arrived & (q_at_tau >= config.q_min_quality)).astype(int)
    quality_Q = np.where(arrived & (tau >= 1), q_at_tau, 0.0)
    decision = PeriodDecision(alloc_tau=tau, share_S=share,
                              accept_b=accept_b, quality_Q=quality_Q)

    new_delta = update_quality_debts(
        state.debts.quality_debt_delta, arrivals, accept_b,
        ctx.clients.delivery_req)
    new_sigma = update_sharing_debts(
        state.debts.sharing_debt_sigma, share.sum(axis=0).astype(float),
        config.sharing_bound_zeta)
    new_buffer = state.delay_buffer[1:] + [state.debts.copy()] \
        if state.mode == "sharing-delayed" else []
    new_state = PolicyState(
        debts=DebtState(new_delta, new_sigma), mode=state.mode,
        delay_buffer=new_buffer, period_index=state.period_index + 1)
    return decision, new_state


@dataclass
class RunResult:
    ledger: MetricsLedger
    final_state: PolicyState
    trace: np.ndarray


def run_policy(config: SystemConfig, clients: ClientSet,
               trace: np.ndarray | None = None,
               ledger: MetricsLedger | None = None,
               state: PolicyState | None = None,
               debt_trace: bool = False,
               validate_each_period: bool = False,
               decision_writer=None) -> RunResult:
    """Simulate config.horizon_K periods (or the trace length, if given).

    Pass the same trace to runs in different modes for common-random-number
    comparisons. validate_each_period re-checks every hard per-period
    constraint and raises on any violation (used by tests).
    """
    from .model import validate_decision  # local import to avoid cycle at module load

    ctx = PolicyContext(config, clients)
    if trace is None:
        trace = generate_trace(clients, config.horizon_K, config.master_seed,
                               config.arrival_correlation)
    if ledger is None:
        ledger = MetricsLedger(config, clients)
    if state is None:
        state = init_policy_state(config, clients)

    for k in range(trace.shape[0]):
        arrivals = trace[k]
        decision, state = step(state, arrivals, config, ctx)
        if validate_each_period:
            violations = validate_decision(decision, arrivals, config, clients)
            if violations:
                raise AssertionError(
                    f"period {k}: policy produced invalid decision: {violations}")
        ledger.record(arrivals, decision, state.debts, debt_trace=debt_trace)
        if decision_writer is not None:
            decision_writer.record(k, decision, clients)
    return RunResult(ledger=ledger, final_state=state, trace=trace)
