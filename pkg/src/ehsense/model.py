"""Core model: parameters, actions, states, rewards and battery transitions.

Everything here is a pure function over immutable data; the solver,
simulator and policy modules all build on this module.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

PMF_TOL = 1e-12


class ParameterError(ValueError):
    """Raised when a parameter set violates a model invariant."""


class InfeasibleActionError(ValueError):
    """Raised when an action is applied at a battery level that cannot afford it."""


class Action(IntEnum):
    """Per-slot decisions of the transmitter.

    The integer values are the wire codes used in exported region CSVs.
    """

    DEFER = 0            # idle, save energy, no feedback
    LOW_RATE = 1         # reliable low-rate transmission, uninformative ACK
    SENSE_DEFER = 2      # sense; transmit high rate on GOOD, defer on BAD
    SENSE_TRANSMIT = 3   # sense; transmit high rate on GOOD, low rate on BAD
    HIGH_RATE = 4        # blind high-rate transmission, ACK/NACK reveals state

    @property
    def code(self) -> str:
        return _ACTION_CODES[self]


_ACTION_CODES = {
    Action.DEFER: "D",
    Action.LOW_RATE: "L",
    Action.SENSE_DEFER: "OD",
    Action.SENSE_TRANSMIT: "OT",
    Action.HIGH_RATE: "H",
}

ACTION_BY_CODE = {c: a for a, c in _ACTION_CODES.items()}
# In the single-rate model (r_low == 0) the only sensing action is
# SENSE_DEFER and its conventional short code is just "O".
ACTION_BY_CODE["O"] = Action.SENSE_DEFER


class Observation(IntEnum):
    """Channel-state information obtained during a slot."""

    NONE = 0          # defer / low rate: nothing learned
    ACK_HIGH = 1      # high-rate success, channel was GOOD
    NACK_HIGH = 2     # high-rate failure, channel was BAD
    SENSED_GOOD = 3
    SENSED_BAD = 4


def _is_integral(x) -> bool:
    return float(x) == float(int(x))


@dataclass(frozen=True)
class SystemParams:
    """All model constants for one problem instance.

    lambda0    Pr[channel GOOD | previously BAD]
    lambda1    Pr[channel GOOD | previously GOOD]
    energy_pmf probabilities of harvesting 0..M-1 energy units per slot
    b_max      battery capacity in energy units
    e_tx       energy cost of a (full-slot) transmission
    e_sense    energy cost of sensing; the sensing slot fraction is
               tau = e_sense / e_tx
    r_low      bits per slot of the reliable low-rate code (0 disables
               the LOW_RATE and SENSE_TRANSMIT actions)
    r_high     bits per slot of the high-rate code (succeeds only on GOOD)
    beta       discount factor in [0, 1)
    """

    lambda0: float
    lambda1: float
    energy_pmf: tuple = field(repr=False)
    b_max: int
    e_tx: int
    e_sense: int
    r_low: float
    r_high: float
    beta: float

    def __post_init__(self):
        pmf = np.asarray(self.energy_pmf, dtype=float)
        if pmf.ndim != 1 or pmf.size == 0:
            raise ParameterError("energy_pmf must be a non-empty vector")
        if np.any(pmf < 0):
            raise ParameterError("energy_pmf entries must be nonnegative")
        if abs(pmf.sum() - 1.0) > PMF_TOL:
            raise ParameterError(f"energy_pmf sums to {pmf.sum()!r}, expected 1")
        object.__setattr__(self, "energy_pmf", tuple(float(q) for q in pmf))

        for name in ("b_max", "e_tx", "e_sense"):
            v = getattr(self, name)
            if not _is_integral(v):
                raise ParameterError(f"{name} must be an integer number of energy units")
            object.__setattr__(self, name, int(v))
        if not (0 < self.e_sense < self.e_tx <= self.b_max):
            raise ParameterError(
                f"need 0 < e_sense < e_tx <= b_max, got "
                f"e_sense={self.e_sense}, e_tx={self.e_tx}, b_max={self.b_max}"
            )
        if not (0.0 <= self.lambda0 <= 1.0 and 0.0 <= self.lambda1 <= 1.0):
            raise ParameterError("lambda0 and lambda1 must lie in [0, 1]")
        if not (0.0 <= self.r_low < self.r_high):
            raise ParameterError("need 0 <= r_low < r_high")
        if not (0.0 <= self.beta < 1.0):
            raise ParameterError("beta must lie in [0, 1)")

    @property
    def tau(self) -> float:
        """Fraction of the slot spent sensing. Stored only as the e_sense/e_tx ratio."""
        return self.e_sense / self.e_tx

    @property
    def n_arrivals(self) -> int:
        return len(self.energy_pmf)

    @property
    def two_rate(self) -> bool:
        """True when the low-rate code is usable (r_low > 0)."""
        return self.r_low > 0.0

    @property
    def harvest_support(self):
        """(arrival, probability) pairs with nonzero probability."""
        return tuple((m, q) for m, q in enumerate(self.energy_pmf) if q > 0.0)

    def actions(self) -> tuple:
        """Model's action set; LOW_RATE/SENSE_TRANSMIT exist only with two rates."""
        if self.two_rate:
            return (Action.DEFER, Action.LOW_RATE, Action.SENSE_DEFER,
                    Action.SENSE_TRANSMIT, Action.HIGH_RATE)
        return (Action.DEFER, Action.SENSE_DEFER, Action.HIGH_RATE)

    def with_harvest(self, q: float, arrival: int | None = None) -> "SystemParams":
        """Two-point harvest pmf: `arrival` units w.p. q, nothing otherwise."""
        m = (self.n_arrivals - 1) if arrival is None else int(arrival)
        pmf = [0.0] * (m + 1)
        pmf[0] = 1.0 - q
        pmf[m] += q
        return self.replace(energy_pmf=tuple(pmf))

    def with_sense_cost(self, e_sense: int) -> "SystemParams":
        return self.replace(e_sense=e_sense)

    def replace(self, **changes) -> "SystemParams":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class SystemState:
    """Decision state: battery level plus posterior probability the channel is GOOD."""

    battery: int
    belief: float

    def __post_init__(self):
        if not _is_integral(self.battery):
            raise ParameterError("battery must be integral")
        object.__setattr__(self, "battery", int(self.battery))
        if not 0.0 <= self.belief <= 1.0:
            raise ParameterError(f"belief {self.belief} outside [0, 1]")


def feasible_actions(battery: int, params: SystemParams) -> tuple:
    """Actions affordable at the given battery level.

    Below e_sense only deferring is possible; between e_sense and e_tx the
    transmitter can still sense (without transmitting afterwards); from e_tx
    upward the full action set is available.
    """
    if battery < 0 or battery > params.b_max:
        raise ParameterError(f"battery {battery} outside [0, {params.b_max}]")
    if battery < params.e_sense:
        return (Action.DEFER,)
    if battery < params.e_tx:
        return (Action.DEFER, Action.SENSE_DEFER)
    return params.actions()


def expected_reward(state: SystemState, action: Action, params: SystemParams) -> float:
    """Expected bits delivered in one slot, given the current belief.

    Infeasible (state, action) pairs earn 0; the function is total.
    """
    p = state.belief
    if state.battery < params.e_tx:
        return 0.0
    one_minus_tau = 1.0 - params.tau
    if action == Action.HIGH_RATE:
        return p * params.r_high
    if action == Action.LOW_RATE:
        return params.r_low
    if action == Action.SENSE_DEFER:
        return one_minus_tau * p * params.r_high
    if action == Action.SENSE_TRANSMIT:
        return one_minus_tau * ((1.0 - p) * params.r_low + p * params.r_high)
    return 0.0


def next_battery(battery: int, harvest: int, action: Action,
                 channel_good: bool, params: SystemParams) -> int:
    """Battery level at the start of the next slot.

    The harvest arrives at the end of the slot and the total is clamped at
    capacity.  SENSE_DEFER spends the transmission remainder only when the
    channel turns out GOOD and the battery could afford a transmission; in
    the sense-only regime (e_sense <= battery < e_tx) it spends e_sense
    regardless of the revealed state.
    """
    if not 0 <= harvest < params.n_arrivals:
        raise ParameterError(f"harvest {harvest} outside [0, {params.n_arrivals - 1}]")
    if action not in feasible_actions(battery, params):
        raise InfeasibleActionError(
            f"action {action.code} infeasible at battery {battery} "
            f"(e_sense={params.e_sense}, e_tx={params.e_tx})"
        )
    if action == Action.DEFER:
        spent = 0
    elif action in (Action.LOW_RATE, Action.HIGH_RATE, Action.SENSE_TRANSMIT):
        spent = params.e_tx
    else:  # SENSE_DEFER
        if battery >= params.e_tx:
            spent = params.e_tx if channel_good else params.e_sense
        else:
            spent = params.e_sense
    return min(battery - spent + harvest, params.b_max)
