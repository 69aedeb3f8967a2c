"""Solver and simulation toolkit for an energy-harvesting transmitter that
can sense a two-state (Gilbert-Elliot) channel.

The package computes optimal transmit/sense/defer policies by value
iteration over the (battery, belief) state space, extracts and optimizes
per-battery belief thresholds, and benchmarks policies with a common
random number Monte Carlo simulator.
"""

from .model import (Action, InfeasibleActionError, Observation, ParameterError,
                    SystemParams, SystemState, expected_reward, feasible_actions,
                    next_battery)
from .belief import (BeliefGrid, belief_after_observation, belief_update_no_obs,
                     reachable_beliefs, stationary_belief)
from .solver import (BellmanOperator, ConvergenceError, ValueTable,
                     backup_defer, backup_high, backup_low, backup_sense_defer,
                     backup_sense_transmit, bellman_step, value_iteration,
                     zero_table)
from .policies import (PolicyRow, PolicyTable, StructureViolationError,
                       ThresholdPolicy, encode_rows, extract_policy,
                       extract_thresholds, greedy_policy, opportunistic_policy,
                       single_threshold_policy)
from .simulate import (EpisodeTrace, SimState, ThroughputStats, discounted_return,
                       energy_audit, episode_rng, run_episodes, run_trace, step)
from .search import (SearchConfig, SearchResult, default_candidates,
                     evaluate_average_throughput, search_thresholds)
from .oracle import (CheckReport, InstanceTooLargeError, OracleResult,
                     check_good_state_dominance, check_value_structure,
                     compare_with_solver, exact_finite_horizon)

__version__ = "0.1.0"
