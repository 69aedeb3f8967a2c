"""Value iteration over the (battery, belief) grid.

The Bellman operator is precomputed into gather indices and interpolation
weights so one sweep is a handful of vectorized array operations.  Scalar
per-state backups are also provided; they are the readable reference the
vectorized path is tested against.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .model import Action, InfeasibleActionError, SystemParams, feasible_actions
from .belief import BeliefGrid, belief_update_no_obs

DEFAULT_TOL = 1e-9
Q_TIE_TOL = 1e-12


class ConvergenceError(RuntimeError):
    """Value iteration ran out of sweeps before reaching the tolerance."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"no convergence after {iterations} sweeps, residual {residual:.3e}")
        self.residual = residual
        self.iterations = iterations


@dataclass
class ValueTable:
    """Converged (or truncated) values plus per-action values on the grid.

    values[b, j] approximates the optimal discounted reward from battery b
    and belief grid.points[j].  q_values maps each action to a same-shape
    array that is NaN wherever the action is infeasible.
    """

    values: np.ndarray = field(repr=False)
    q_values: dict = field(repr=False)
    grid: BeliefGrid
    params: SystemParams
    iterations: int
    residual: float

    def value_at(self, battery: int, p: float) -> float:
        return float(self.grid.interp(self.values[battery], p))

    def write_csv(self, path, config_hash: str = "") -> None:
        actions = (Action.DEFER, Action.LOW_RATE, Action.SENSE_DEFER,
                   Action.SENSE_TRANSMIT, Action.HIGH_RATE)
        header = ["battery", "belief", "value"] + [f"q_{a.code}" for a in actions]
        with open(path, "w", newline="") as f:
            if config_hash:
                f.write(f"# config={config_hash}\n")
            w = csv.writer(f)
            w.writerow(header)
            for b in range(self.params.b_max + 1):
                for j, p in enumerate(self.grid.points):
                    row = [b, repr(float(p)), repr(float(self.values[b, j]))]
                    for a in actions:
                        q = self.q_values[a][b, j]
                        row.append("" if math.isnan(q) else repr(float(q)))
                    w.writerow(row)


class BellmanOperator:
    """One-sweep backup operator with precomputed transition structure.

    `allowed` restricts the action set (used by the no-sensing baseline);
    by default it is the model's own action set.
    """

    def __init__(self, params: SystemParams, grid: BeliefGrid, allowed=None):
        self.params = params
        self.grid = grid
        self.actions = tuple(allowed) if allowed is not None else params.actions()
        if Action.DEFER not in self.actions:
            raise ValueError("the action set must contain DEFER")

        b = np.arange(params.b_max + 1)
        support = params.harvest_support
        self._arrivals = np.array([m for m, _ in support])
        self._probs = np.array([q for _, q in support])
        # next-battery indices per harvest level for each energy debit
        self._idx = {
            debit: np.minimum(b[:, None] + self._arrivals[None, :] - debit,
                              params.b_max).clip(min=0)
            for debit in {0, params.e_tx, params.e_sense}
        }
        j_of = belief_update_no_obs(grid.points, params)
        self._j_lo, self._j_w = grid.locate(j_of)
        # observation backups always land on the transition rows; those are
        # read at the nearest grid point so repeated resets stay exact
        self._i0 = grid.nearest_index(params.lambda0)
        self._i1 = grid.nearest_index(params.lambda1)
        self._p = grid.points

    def _expect(self, values: np.ndarray, debit: int) -> np.ndarray:
        """Harvest-averaged next values after spending `debit` units."""
        idx = self._idx[debit]
        out = self._probs[0] * values[idx[:, 0]]
        for s in range(1, len(self._probs)):
            out += self._probs[s] * values[idx[:, s]]
        return out

    def q_tables(self, values: np.ndarray) -> dict:
        """Per-action backups of `values`; NaN where the action is infeasible."""
        params = self.params
        beta = params.beta
        p = self._p
        n = self.grid.resolution
        e_tx, e_sense = params.e_tx, params.e_sense
        one_minus_tau = 1.0 - params.tau

        vj = values[:, self._j_lo] * (1.0 - self._j_w) \
            + values[:, self._j_lo + 1] * self._j_w
        v0 = values[:, self._i0]
        v1 = values[:, self._i1]

        cont_tx_good = self._expect(v1, e_tx)      # transmit debit, GOOD revealed
        cont_tx_bad = self._expect(v0, e_tx)
        cont_sense_good = self._expect(v1, e_sense)
        cont_sense_bad = self._expect(v0, e_sense)

        nan = np.full((params.b_max + 1, n), np.nan)
        q = {a: nan.copy() for a in
             (Action.DEFER, Action.LOW_RATE, Action.SENSE_DEFER,
              Action.SENSE_TRANSMIT, Action.HIGH_RATE)}

        q[Action.DEFER] = beta * self._expect(vj, 0)

        tx = slice(e_tx, None)
        if Action.HIGH_RATE in self.actions:
            q[Action.HIGH_RATE][tx] = (
                p * (params.r_high + beta * cont_tx_good[tx, None])
                + (1.0 - p) * beta * cont_tx_bad[tx, None])
        if Action.LOW_RATE in self.actions:
            q[Action.LOW_RATE][tx] = params.r_low + beta * self._expect(vj, e_tx)[tx]
        if Action.SENSE_TRANSMIT in self.actions:
            q[Action.SENSE_TRANSMIT][tx] = (
                p * (one_minus_tau * params.r_high + beta * cont_tx_good[tx, None])
                + (1.0 - p) * (one_minus_tau * params.r_low
                               + beta * cont_tx_bad[tx, None]))
        if Action.SENSE_DEFER in self.actions:
            q[Action.SENSE_DEFER][tx] = (
                p * (one_minus_tau * params.r_high + beta * cont_tx_good[tx, None])
                + (1.0 - p) * beta * cont_sense_bad[tx, None])
            sense_only = slice(e_sense, e_tx)
            q[Action.SENSE_DEFER][sense_only] = beta * (
                p * cont_sense_good[sense_only, None]
                + (1.0 - p) * cont_sense_bad[sense_only, None])
        return q

    def step(self, values: np.ndarray) -> np.ndarray:
        """Max over feasible action backups; cheaper than q_tables (no NaN frames)."""
        params = self.params
        beta = params.beta
        p = self._p
        e_tx, e_sense = params.e_tx, params.e_sense
        one_minus_tau = 1.0 - params.tau

        vj = values[:, self._j_lo] * (1.0 - self._j_w) \
            + values[:, self._j_lo + 1] * self._j_w
        v0 = values[:, self._i0]
        v1 = values[:, self._i1]

        out = beta * self._expect(vj, 0)  # defer, always feasible
        tx = slice(e_tx, None)
        cont_tx_good = beta * self._expect(v1, e_tx)[tx, None]
        cont_tx_bad = beta * self._expect(v0, e_tx)[tx, None]

        if Action.HIGH_RATE in self.actions:
            np.maximum(out[tx], p * (params.r_high + cont_tx_good)
                       + (1.0 - p) * cont_tx_bad, out=out[tx])
        if Action.LOW_RATE in self.actions:
            np.maximum(out[tx], params.r_low + beta * self._expect(vj, e_tx)[tx],
                       out=out[tx])
        if Action.SENSE_TRANSMIT in self.actions:
            np.maximum(out[tx],
                       p * (one_minus_tau * params.r_high + cont_tx_good)
                       + (1.0 - p) * (one_minus_tau * params.r_low + cont_tx_bad),
                       out=out[tx])
        if Action.SENSE_DEFER in self.actions:
            cont_sense_bad = beta * self._expect(v0, e_sense)
            np.maximum(out[tx],
                       p * (one_minus_tau * params.r_high + cont_tx_good)
                       + (1.0 - p) * cont_sense_bad[tx, None], out=out[tx])
            so = slice(e_sense, e_tx)
            cont_sense_good = beta * self._expect(v1, e_sense)
            np.maximum(out[so],
                       p * cont_sense_good[so, None]
                       + (1.0 - p) * cont_sense_bad[so, None], out=out[so])
        return out


def _require_feasible(b: int, action: Action, params: SystemParams) -> None:
    if action not in feasible_actions(b, params):
        raise InfeasibleActionError(f"{action.code} infeasible at battery {b}")


def _cont(table: ValueTable, b: int, debit: int, next_belief: float) -> float:
    params = table.params
    acc = 0.0
    for m, q in params.harvest_support:
        nb = min(b + m - debit, params.b_max)
        acc += q * table.value_at(nb, next_belief)
    return params.beta * acc


def backup_defer(table: ValueTable, b: int, p: float) -> float:
    """Scalar defer backup: discounted expectation at the propagated belief."""
    return _cont(table, b, 0, belief_update_no_obs(p, table.params))


def backup_low(table: ValueTable, b: int, p: float) -> float:
    """Scalar low-rate backup: guaranteed bits, uninformative feedback."""
    params = table.params
    _require_feasible(b, Action.LOW_RATE, params)
    return params.r_low + _cont(table, b, params.e_tx,
                                belief_update_no_obs(p, params))


def backup_high(table: ValueTable, b: int, p: float) -> float:
    """Scalar high-rate backup: belief-weighted ACK/NACK branches."""
    params = table.params
    _require_feasible(b, Action.HIGH_RATE, params)
    good = params.r_high + _cont(table, b, params.e_tx, params.lambda1)
    bad = _cont(table, b, params.e_tx, params.lambda0)
    return p * good + (1.0 - p) * bad


def backup_sense_defer(table: ValueTable, b: int, p: float) -> float:
    """Scalar sense-then-defer backup, including the sense-only regime."""
    params = table.params
    _require_feasible(b, Action.SENSE_DEFER, params)
    if b >= params.e_tx:
        good = (1.0 - params.tau) * params.r_high \
            + _cont(table, b, params.e_tx, params.lambda1)
        bad = _cont(table, b, params.e_sense, params.lambda0)
    else:
        good = _cont(table, b, params.e_sense, params.lambda1)
        bad = _cont(table, b, params.e_sense, params.lambda0)
    return p * good + (1.0 - p) * bad


def backup_sense_transmit(table: ValueTable, b: int, p: float) -> float:
    """Scalar sense-then-always-transmit backup."""
    params = table.params
    _require_feasible(b, Action.SENSE_TRANSMIT, params)
    good = (1.0 - params.tau) * params.r_high \
        + _cont(table, b, params.e_tx, params.lambda1)
    bad = (1.0 - params.tau) * params.r_low \
        + _cont(table, b, params.e_tx, params.lambda0)
    return p * good + (1.0 - p) * bad


def bellman_step(table: ValueTable) -> ValueTable:
    """One sweep of the backup operator, returning a fresh table with Q-values."""
    op = BellmanOperator(table.params, table.grid)
    q = op.q_tables(table.values)
    feasible = [q[a] for a in op.actions]
    new_values = np.fmax.reduce(feasible)
    residual = float(np.max(np.abs(new_values - table.values)))
    return ValueTable(values=new_values, q_values=q, grid=table.grid,
                      params=table.params, iterations=table.iterations + 1,
                      residual=residual)


def zero_table(params: SystemParams, grid: BeliefGrid) -> ValueTable:
    shape = (params.b_max + 1, grid.resolution)
    op = BellmanOperator(params, grid)
    return ValueTable(values=np.zeros(shape), q_values=op.q_tables(np.zeros(shape)),
                      grid=grid, params=params, iterations=0, residual=float("inf"))


def default_max_iter(beta: float) -> int:
    return 100 * math.ceil(1.0 / (1.0 - beta))


def value_iteration(params: SystemParams, grid: BeliefGrid,
                    tol: float = DEFAULT_TOL, max_iter: int | None = None, *,
                    allowed=None, v_init: np.ndarray | None = None,
                    span_tol: float | None = None) -> ValueTable:
    """Iterate the backup operator until the sup-norm change drops below tol.

    Starts from zero (monotone iterates) unless `v_init` warm-starts the
    run.  `span_tol`, when given, additionally stops once the span
    (max - min) of the change stabilizes; the extracted policy is already
    settled then even though the values still share a drifting offset.
    Values are discounted bits, so the fixed point is below
    r_high / (1 - beta).

    Raises ConvergenceError when max_iter sweeps are exhausted first.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = default_max_iter(params.beta)
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    op = BellmanOperator(params, grid, allowed=allowed)
    values = np.zeros((params.b_max + 1, grid.resolution)) if v_init is None \
        else np.array(v_init, dtype=float)
    residual = float("inf")
    done = False
    for sweeps in range(1, max_iter + 1):
        new_values = op.step(values)
        change = new_values - values
        residual = float(np.max(np.abs(change)))
        values = new_values
        if residual <= tol:
            done = True
        elif span_tol is not None:
            done = float(np.max(change) - np.min(change)) <= span_tol
        if done:
            break
    if not done:
        raise ConvergenceError(residual, max_iter)
    q = op.q_tables(values)
    final = np.fmax.reduce([q[a] for a in op.actions])
    return ValueTable(values=final, q_values=q, grid=grid, params=params,
                      iterations=sweeps, residual=residual)


def sense_defer_on_good_backups(table: ValueTable):
    """Sensing backups and their defer-after-GOOD variants on a converged table.

    Returns (q_sense_defer, q_sense_transmit, q_defer_on_good,
    q_transmit_low_on_bad_defer_on_good), each over batteries >= e_tx on the
    full grid.  The variants bank the transmission energy even when the
    sensed state is GOOD; they are used to certify that transmitting on a
    revealed GOOD state dominates.
    """
    params, grid = table.params, table.grid
    op = BellmanOperator(params, grid)
    V = table.values
    p = grid.points
    beta = params.beta
    one_minus_tau = 1.0 - params.tau
    v0 = V[:, op._i0]
    v1 = V[:, op._i1]
    cont_tx_good = beta * op._expect(v1, params.e_tx)[:, None]
    cont_tx_bad = beta * op._expect(v0, params.e_tx)[:, None]
    cont_sense_good = beta * op._expect(v1, params.e_sense)[:, None]
    cont_sense_bad = beta * op._expect(v0, params.e_sense)[:, None]

    q_od = p * (one_minus_tau * params.r_high + cont_tx_good) \
        + (1.0 - p) * cont_sense_bad
    q_ot = p * (one_minus_tau * params.r_high + cont_tx_good) \
        + (1.0 - p) * (one_minus_tau * params.r_low + cont_tx_bad)
    q_odd = p * cont_sense_good + (1.0 - p) * cont_sense_bad
    q_otd = p * cont_sense_good \
        + (1.0 - p) * (one_minus_tau * params.r_low + cont_tx_bad)
    return q_od, q_ot, q_odd, q_otd
