"""Direct threshold optimization against simulated average throughput.

The proven interval structure of the single-rate model lets a policy be
summarized by three breakpoints per battery level.  Coordinate ascent
sweeps the battery rows, tries every candidate breakpoint under common
random numbers, and keeps strict improvements, so the objective estimate
is nondecreasing and the whole run is deterministic for a fixed seed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .model import Action, ParameterError, SystemParams
from .belief import reachable_beliefs
from .policies import NO_REGION, PolicyRow, ThresholdPolicy
from .simulate import ThroughputStats, run_episodes

_ORBIT_DEPTH = 20


def default_candidates(params: SystemParams) -> np.ndarray:
    """Breakpoint candidates: reachable beliefs plus a coarse uniform mesh.

    Only belief values the process can actually visit matter for where a
    threshold falls; the mesh adds robustness at negligible cost.
    """
    orbit = reachable_beliefs(params.lambda0, _ORBIT_DEPTH, params)
    mesh = np.linspace(0.0, 1.0, 21)
    cands = np.unique(np.concatenate([orbit, mesh]))
    return cands[(cands > 0.0) & (cands <= 1.0)]


@dataclass
class SearchConfig:
    """Budget and candidate set for the coordinate-ascent threshold search."""

    candidates: np.ndarray = field(default=None, repr=False)
    episodes: int = 16
    horizon: int = 3000
    seed: int = 0
    max_passes: int = 4

    def __post_init__(self):
        if self.episodes * self.horizon <= 0:
            raise ParameterError("episodes * horizon must be positive")
        if self.candidates is not None:
            c = np.unique(np.asarray(self.candidates, dtype=float))
            if c.size == 0 or c[0] < 0.0 or c[-1] > 1.0:
                raise ParameterError("candidates must be a nonempty subset of [0, 1]")
            self.candidates = c

    def resolved_candidates(self, params: SystemParams) -> np.ndarray:
        return default_candidates(params) if self.candidates is None \
            else self.candidates


@dataclass
class SearchResult:
    policy: ThresholdPolicy
    stats: ThroughputStats
    log_rows: list = field(repr=False)
    passes: int = 0


def evaluate_average_throughput(policy, params: SystemParams, episodes: int,
                                horizon: int, seed: int) -> ThroughputStats:
    """Undiscounted bits-per-slot estimate; deterministic for a fixed seed."""
    return run_episodes(policy, params, episodes, horizon, seed)


def rho_from_policy(policy: ThresholdPolicy, params: SystemParams) -> np.ndarray:
    """(b_max + 1, 3) breakpoint triples from a single-rate threshold policy.

    Row semantics: defer on [0, rho1), sense on [rho1, rho2), defer on
    [rho2, rho3), high rate on [rho3, 1].  Rows that cannot transmit carry
    the NO_REGION sentinel as rho3; rows that cannot sense have rho1 == rho2.
    """
    if params.two_rate:
        raise ParameterError("threshold search requires the single-rate model")
    rho = np.full((params.b_max + 1, 3), NO_REGION)
    for b, row in enumerate(policy.rows):
        labels, bps = row.labels, row.breakpoints
        edges = (0.0,) + bps + (1.0,)
        if not set(labels) <= {Action.DEFER, Action.SENSE_DEFER, Action.HIGH_RATE}:
            raise ParameterError(f"battery {b}: labels outside the D/O/H family")
        n_o = labels.count(Action.SENSE_DEFER)
        n_h = labels.count(Action.HIGH_RATE)
        if n_o > 1 or n_h > 1 or (n_h == 1 and labels[-1] != Action.HIGH_RATE):
            raise ParameterError(f"battery {b}: row is not in threshold form")
        r3 = edges[labels.index(Action.HIGH_RATE)] if n_h else NO_REGION
        if n_o:
            i = labels.index(Action.SENSE_DEFER)
            r1, r2 = edges[i], edges[i + 1]
        else:
            anchor = r3 if n_h else 1.0
            r1 = r2 = anchor
        rho[b] = (r1, r2, min(r3, NO_REGION))
        if not (r1 <= r2 <= (r3 if n_h else NO_REGION)):
            raise ParameterError(f"battery {b}: breakpoints out of order")
    return rho


def policy_from_rho(rho: np.ndarray, params: SystemParams) -> ThresholdPolicy:
    """Inverse of rho_from_policy; degenerate intervals are dropped."""
    rows = []
    for b in range(params.b_max + 1):
        r1, r2, r3 = rho[b]
        pieces = [(0.0, Action.DEFER)]
        if b >= params.e_sense and r2 > r1:
            pieces.append((r1, Action.SENSE_DEFER))
            pieces.append((r2, Action.DEFER))
        if b >= params.e_tx and r3 <= 1.0:
            pieces.append((r3, Action.HIGH_RATE))
        bps, labels = [], []
        for start, a in pieces:
            if labels and labels[-1] == a:
                continue
            if labels and start >= 1.0:
                break
            if labels:
                if start <= (bps[-1] if bps else 0.0):
                    # zero-width interval: the later label wins
                    labels[-1] = a
                    continue
                bps.append(start)
            labels.append(a)
        rows.append(PolicyRow(breakpoints=tuple(bps), labels=tuple(labels)))
    return ThresholdPolicy(rows=tuple(rows), params=params)


def _thresholds_for(b: int, params: SystemParams):
    """Searchable threshold indices at battery b (none below the sensing cost)."""
    if b < params.e_sense:
        return ()
    if b < params.e_tx:
        return (0, 1)
    return (0, 1, 2)


def search_thresholds(params: SystemParams, config: SearchConfig,
                      init: ThresholdPolicy) -> SearchResult:
    """Coordinate ascent on per-battery breakpoints under common random numbers.

    Sweeps battery rows in order; for each threshold every candidate that
    keeps the row ordered is evaluated with the same seed and the best
    strict improvement is kept.  Stops after a full pass with no accepted
    move, or after max_passes.  Rows the current policy never visits are
    skipped: changing them cannot alter the estimate.
    """
    candidates = config.resolved_candidates(params)
    rho = rho_from_policy(init, params)

    def evaluate(r, with_visits=False):
        pol = policy_from_rho(r, params)
        return run_episodes(pol, params, config.episodes, config.horizon,
                            config.seed, collect_visits=with_visits)

    stats0, visits = evaluate(rho, with_visits=True)
    best = stats0.mean_bits_per_slot
    log = []
    passes = 0
    for sweep in range(1, config.max_passes + 1):
        passes = sweep
        improved = False
        for b in range(params.b_max + 1):
            if visits[b] == 0:
                continue  # row never visited: changing it cannot move the estimate
            for k in _thresholds_for(b, params):
                current = rho[b, k]
                lo = rho[b, k - 1] if k > 0 else 0.0
                hi = min(rho[b, k + 1], 1.0) if k < 2 else 1.0
                window = candidates[(candidates >= lo) & (candidates <= hi)]
                best_cand, best_val = current, best
                for cand in window:
                    if cand == current:
                        continue
                    trial = rho.copy()
                    trial[b, k] = cand
                    val = evaluate(trial).mean_bits_per_slot
                    accepted = val > best_val
                    log.append((sweep, b, k, float(cand), val, accepted))
                    if accepted:
                        best_cand, best_val = cand, val
                if best_cand != current:
                    rho[b, k] = best_cand
                    best = best_val
                    _, visits = evaluate(rho, with_visits=True)
                    improved = True
        if not improved:
            break

    policy = policy_from_rho(rho, params)
    stats = evaluate_average_throughput(policy, params, config.episodes,
                                        config.horizon, config.seed)
    return SearchResult(policy=policy, stats=stats, log_rows=log, passes=passes)


def write_search_log(rows, path, config_hash: str = "") -> None:
    with open(path, "w", newline="") as f:
        if config_hash:
            f.write(f"# config={config_hash}\n")
        w = csv.writer(f)
        w.writerow(["pass", "battery", "threshold", "candidate",
                    "throughput", "accepted"])
        for sweep, b, k, cand, val, accepted in rows:
            w.writerow([sweep, b, k, repr(cand), repr(val), int(accepted)])
