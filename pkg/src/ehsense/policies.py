"""Policy representations: grid tables, per-battery threshold intervals,
greedy extraction and the three baseline policies.

A threshold policy stores, for every battery level, a partition of the
belief interval into labeled action intervals.  That form is what the
simulator consumes and what the threshold search optimizes.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .model import Action, ParameterError, SystemParams, feasible_actions
from .belief import BeliefGrid
from .solver import Q_TIE_TOL, ValueTable, value_iteration

# Canonical single-rate interval patterns: what an optimal row may look like
# (as a subsequence) once the low-rate code is disabled.
PATTERN_FULL = (Action.DEFER, Action.SENSE_DEFER, Action.DEFER, Action.HIGH_RATE)
PATTERN_SENSE_ONLY = (Action.DEFER, Action.SENSE_DEFER, Action.DEFER)

# Ordering used to break exact ties in the greedy argmax; later wins.
ARGMAX_ORDER = (Action.DEFER, Action.LOW_RATE, Action.SENSE_DEFER,
                Action.SENSE_TRANSMIT, Action.HIGH_RATE)

NO_REGION = 2.0  # sentinel breakpoint meaning "interval is empty"


class StructureViolationError(ValueError):
    """An extracted policy row contradicts the proven interval structure."""


@dataclass
class PolicyTable:
    """Greedy action per (battery, belief grid point)."""

    actions: np.ndarray = field(repr=False)  # int8, shape (b_max + 1, resolution)
    grid: BeliefGrid
    params: SystemParams

    def write_csv(self, path, config_hash: str = "") -> None:
        with open(path, "w", newline="") as f:
            if config_hash:
                f.write(f"# config={config_hash}\n")
            w = csv.writer(f)
            w.writerow(["battery", "belief", "action"])
            for b in range(self.params.b_max + 1):
                for j, p in enumerate(self.grid.points):
                    w.writerow([b, repr(float(p)), int(self.actions[b, j])])

    def cell_count(self, action: Action) -> int:
        return int(np.count_nonzero(self.actions == int(action)))


def extract_policy(table: ValueTable) -> PolicyTable:
    """Greedy policy from the per-action values.

    Ties within 1e-12 go to the action latest in DEFER < LOW_RATE <
    SENSE_DEFER < SENSE_TRANSMIT < HIGH_RATE, so region plots are
    reproducible.
    """
    q_stack = [table.q_values[a] for a in ARGMAX_ORDER]
    best = np.fmax.reduce(q_stack)
    actions = np.zeros(best.shape, dtype=np.int8)
    for a in ARGMAX_ORDER:
        q = table.q_values[a]
        take = q >= best - Q_TIE_TOL  # NaN compares False
        actions[take] = int(a)
    return PolicyTable(actions=actions, grid=table.grid, params=table.params)


@dataclass
class PolicyRow:
    """One battery level's action intervals.

    Interval i covers [t_i, t_{i+1}) with t_0 = 0 and t_k = 1; the last
    interval is closed at 1.  `breakpoints` holds the interior t's.
    """

    breakpoints: tuple
    labels: tuple

    def __post_init__(self):
        if len(self.labels) != len(self.breakpoints) + 1:
            raise ParameterError("need exactly one label per interval")
        bp = tuple(float(t) for t in self.breakpoints)
        if any(not 0.0 < t < 1.0 for t in bp):
            raise ParameterError("interior breakpoints must lie in (0, 1)")
        if any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise ParameterError("breakpoints must be strictly increasing")
        if any(l1 == l0 for l0, l1 in zip(self.labels, self.labels[1:])):
            raise ParameterError("adjacent intervals must have distinct labels")
        self.breakpoints = bp
        self.labels = tuple(Action(a) for a in self.labels)

    def action_at(self, p: float) -> Action:
        return self.labels[int(np.searchsorted(self.breakpoints, p, side="right"))]


@dataclass
class ThresholdPolicy:
    """Per-battery piecewise-constant action rule on the belief interval."""

    rows: tuple
    params: SystemParams

    def __post_init__(self):
        if len(self.rows) != self.params.b_max + 1:
            raise ParameterError("need one row per battery level")
        for b, row in enumerate(self.rows):
            ok = feasible_actions(b, self.params)
            for a in row.labels:
                if a not in ok:
                    raise ParameterError(
                        f"label {a.code} infeasible at battery {b}")
        self._pad = None

    def action_at(self, battery: int, p: float) -> Action:
        return self.rows[battery].action_at(p)

    def padded_arrays(self):
        """Rectangular (breakpoints, labels) arrays for vectorized lookup.

        Breakpoint padding uses the NO_REGION sentinel so padded columns
        never match a belief in [0, 1]; label padding repeats the last label.
        """
        if self._pad is None:
            width = max(len(r.labels) for r in self.rows)
            breaks = np.full((len(self.rows), max(width - 1, 1)), NO_REGION)
            labels = np.zeros((len(self.rows), width), dtype=np.int8)
            for b, row in enumerate(self.rows):
                breaks[b, :len(row.breakpoints)] = row.breakpoints
                labels[b, :len(row.labels)] = [int(a) for a in row.labels]
                labels[b, len(row.labels):] = int(row.labels[-1])
            self._pad = (breaks, labels)
        return self._pad

    def write_text(self, path, config_hash: str = "") -> None:
        with open(path, "w") as f:
            if config_hash:
                f.write(f"# config={config_hash}\n")
            for b, row in enumerate(self.rows):
                edges = (0.0,) + row.breakpoints + (1.0,)
                parts = [
                    f"[{edges[i]:.6g},{edges[i + 1]:.6g}{']' if i == len(row.labels) - 1 else ')'}"
                    f"->{row.labels[i].code}"
                    for i in range(len(row.labels))
                ]
                f.write(f"battery={b}: " + " | ".join(parts) + "\n")


def encode_rows(policy: PolicyTable) -> ThresholdPolicy:
    """Run-length encode a grid policy into intervals.

    Breakpoints are midpoints between adjacent grid cells whose actions
    differ; no structural validation is applied here.
    """
    pts = policy.grid.points
    rows = []
    for b in range(policy.params.b_max + 1):
        acts = policy.actions[b]
        change = np.nonzero(acts[1:] != acts[:-1])[0]
        breakpoints = tuple((pts[i] + pts[i + 1]) / 2.0 for i in change)
        labels = tuple(Action(int(acts[i])) for i in np.append(change, len(acts) - 1))
        rows.append(PolicyRow(breakpoints=breakpoints, labels=labels))
    return ThresholdPolicy(rows=tuple(rows), params=policy.params)


def _runs(actions: np.ndarray):
    """(label, length) run-length pairs of one grid row."""
    change = np.nonzero(actions[1:] != actions[:-1])[0]
    starts = np.concatenate(([0], change + 1))
    ends = np.concatenate((change + 1, [len(actions)]))
    return [(Action(int(actions[s])), int(e - s)) for s, e in zip(starts, ends)]


def _significant_labels(actions: np.ndarray):
    """Run labels with single-cell runs dropped (grid-step slack) and merged."""
    labels = [a for a, length in _runs(actions) if length > 1]
    merged = []
    for a in labels:
        if not merged or merged[-1] != a:
            merged.append(a)
    return merged


def _is_subsequence(seq, template) -> bool:
    it = iter(template)
    return all(any(a == t for t in it) for a in seq)


def validate_single_rate_row(actions: np.ndarray, battery: int,
                             params: SystemParams) -> None:
    """Check one grid row against the canonical single-rate patterns.

    Rows that can transmit may look like D|O|D|H (any subsequence); rows in
    the sense-only band like D|O|D; rows below the sensing cost must defer
    everywhere.  Runs of a single grid cell are ignored as discretization
    slack.
    """
    labels = _significant_labels(actions)
    if battery >= params.e_tx:
        template = PATTERN_FULL
    elif battery >= params.e_sense:
        template = PATTERN_SENSE_ONLY
    else:
        template = (Action.DEFER,)
    if not _is_subsequence(labels, template):
        raise StructureViolationError(
            f"battery {battery}: intervals {'|'.join(a.code for a in labels)} "
            f"do not fit {'|'.join(a.code for a in template)}")


def validate_two_rate_row(actions: np.ndarray, battery: int,
                          params: SystemParams) -> None:
    """Interval checks that hold in the two-rate model.

    The high-rate region must be a single suffix and each sensing action
    must occupy at most one interval; defer and low-rate regions may
    fragment.  Single-cell runs are ignored as discretization slack.
    """
    labels = _significant_labels(actions)
    for a in (Action.SENSE_DEFER, Action.SENSE_TRANSMIT):
        if labels.count(a) > 1:
            raise StructureViolationError(
                f"battery {battery}: {a.code} occupies {labels.count(a)} intervals")
    if Action.HIGH_RATE in labels and labels.index(Action.HIGH_RATE) != len(labels) - 1:
        raise StructureViolationError(
            f"battery {battery}: high-rate region is not a suffix "
            f"({'|'.join(a.code for a in labels)})")


def extract_thresholds(policy: PolicyTable, validate: bool = True) -> ThresholdPolicy:
    """Run-length encode and (optionally) structure-check a grid policy.

    A violation raises rather than being silently repaired: it signals a
    solver bug or an insufficient grid resolution.
    """
    if validate:
        check = validate_two_rate_row if policy.params.two_rate \
            else validate_single_rate_row
        for b in range(policy.params.b_max + 1):
            check(policy.actions[b], b, policy.params)
    return encode_rows(policy)


def _uniform_rows(params: SystemParams, full_battery_action: Action) -> ThresholdPolicy:
    rows = []
    for b in range(params.b_max + 1):
        if b >= params.e_tx:
            a = full_battery_action
        elif b >= params.e_sense and full_battery_action == Action.SENSE_DEFER:
            a = Action.SENSE_DEFER
        else:
            a = Action.DEFER
        rows.append(PolicyRow(breakpoints=(), labels=(a,)))
    return ThresholdPolicy(rows=tuple(rows), params=params)


def greedy_policy(params: SystemParams) -> ThresholdPolicy:
    """Transmit at the high rate whenever the battery allows it."""
    return _uniform_rows(params, Action.HIGH_RATE)


def opportunistic_policy(params: SystemParams) -> ThresholdPolicy:
    """Sense every slot the battery allows; transmission follows the sensed state."""
    return _uniform_rows(params, Action.SENSE_DEFER)


def single_threshold_policy(params: SystemParams, grid: BeliefGrid,
                            tol: float = 1e-9, max_iter: int | None = None,
                            **solver_kw) -> ThresholdPolicy:
    """Best defer/transmit policy without sensing.

    Solves the model restricted to {DEFER, HIGH_RATE}; the result is one
    belief threshold per battery level (trivial below the transmit cost).
    """
    table = value_iteration(params, grid, tol, max_iter,
                            allowed=(Action.DEFER, Action.HIGH_RATE), **solver_kw)
    return encode_rows(extract_policy(table))
