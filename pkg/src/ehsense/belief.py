"""Belief-state dynamics and the belief discretization grid.

The channel-state posterior ("belief") is the probability that the channel
is GOOD at the start of the current slot.  Without feedback it propagates
through the channel's one-step transition; observations reset it to one of
the two transition rows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Action, Observation, ParameterError, SystemParams

_DEDUP_TOL = 1e-12


def belief_update_no_obs(p: float, params: SystemParams) -> float:
    """One-step belief propagation when no channel feedback was obtained."""
    return params.lambda0 * (1.0 - p) + params.lambda1 * p


def belief_after_observation(obs: Observation, p: float, params: SystemParams) -> float:
    """Belief at the start of the next slot, given this slot's observation.

    Observations that reveal the channel state collapse the posterior to a
    point mass, so the next-slot belief is the matching transition
    probability; with no observation the belief just propagates.
    """
    if obs in (Observation.ACK_HIGH, Observation.SENSED_GOOD):
        return params.lambda1
    if obs in (Observation.NACK_HIGH, Observation.SENSED_BAD):
        return params.lambda0
    return belief_update_no_obs(p, params)


def observation_for(action: Action, channel_good: bool) -> Observation:
    """Observation produced by taking `action` on the given true channel state."""
    if action == Action.HIGH_RATE:
        return Observation.ACK_HIGH if channel_good else Observation.NACK_HIGH
    if action in (Action.SENSE_DEFER, Action.SENSE_TRANSMIT):
        return Observation.SENSED_GOOD if channel_good else Observation.SENSED_BAD
    return Observation.NONE


def stationary_belief(params: SystemParams) -> float:
    """Fixed point of the no-observation update; also the long-run P[GOOD]."""
    denom = 1.0 - params.lambda1 + params.lambda0
    if denom == 0.0:
        raise ParameterError("no stationary belief: lambda1 - lambda0 == 1")
    return params.lambda0 / denom


def reachable_beliefs(p0: float, depth: int, params: SystemParams) -> np.ndarray:
    """All beliefs reachable from p0 within `depth` no-observation steps.

    Observation resets jump to lambda0/lambda1, so the reachable set is the
    union of the propagation orbits of {p0, lambda0, lambda1}, at most
    3 * (depth + 1) points.  Values closer than 1e-12 are merged.
    """
    if depth < 0:
        raise ParameterError("depth must be >= 0")
    points = []
    for root in (p0, params.lambda0, params.lambda1):
        p = root
        points.append(p)
        for _ in range(depth):
            p = belief_update_no_obs(p, params)
            points.append(p)
    points.sort()
    out = [points[0]]
    for p in points[1:]:
        if p - out[-1] > _DEDUP_TOL:
            out.append(p)
    return np.array(out)


@dataclass(frozen=True)
class BeliefGrid:
    """Uniform discretization of the belief interval [0, 1]."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ParameterError("grid needs at least two points")
        if pts[0] != 0.0 or pts[-1] != 1.0:
            raise ParameterError("grid must span [0, 1] inclusive")
        steps = np.diff(pts)
        if np.any(steps <= 0):
            raise ParameterError("grid points must be strictly increasing")
        if np.max(np.abs(steps - steps[0])) > 1e-12:
            raise ParameterError("grid spacing must be uniform")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_resolution(cls, resolution: int) -> "BeliefGrid":
        if resolution < 2:
            raise ParameterError("resolution must be >= 2")
        return cls(np.linspace(0.0, 1.0, resolution))

    @property
    def resolution(self) -> int:
        return len(self.points)

    @property
    def step(self) -> float:
        return 1.0 / (len(self.points) - 1)

    def locate(self, p) -> tuple:
        """Lower bracket index and interpolation weight for belief(s) p."""
        t = np.clip(np.asarray(p, dtype=float), 0.0, 1.0) * (self.resolution - 1)
        lo = np.minimum(t.astype(int), self.resolution - 2)
        return lo, t - lo

    def nearest_index(self, p: float) -> int:
        """Index of the grid point closest to p (exact when p is on-grid)."""
        return int(round(float(p) * (self.resolution - 1)))

    def interp(self, values: np.ndarray, p):
        """Linearly interpolate `values` (last axis indexed by grid point) at p."""
        values = np.asarray(values)
        lo, w = self.locate(p)
        return values[..., lo] * (1.0 - w) + values[..., lo + 1] * w
