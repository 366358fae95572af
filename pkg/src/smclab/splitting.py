"""Rare-event estimation by importance splitting.

P(tau < zeta) is decomposed over a ladder of intermediate levels; at each
level the trajectories that survive are duplicated back to the full ensemble
size (balanced duplication via systematic resampling over uniform survivor
weights) and the product of level survivor fractions estimates the target
probability without bias.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .resampling import WeightVector, counts_to_indices, systematic_resample

__all__ = [
    "LevelProcess",
    "SplittingEstimate",
    "SplittingSummary",
    "splitting_run",
    "splitting_replicated",
    "random_walk_process",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LevelProcess:
    """Markov chain with a fixed start, a level ladder and a kill condition.

    ``kernel(rng, states)`` advances every row one chain step.  Each level
    predicate maps states to a boolean mask; a trajectory survives a level by
    satisfying its predicate before the kill predicate fires (a state already
    at the level survives immediately).  ``max_steps`` bounds the chain steps
    spent per trajectory between consecutive levels.
    """

    kernel: Callable[[np.random.Generator, np.ndarray], np.ndarray]
    start: np.ndarray
    levels: Sequence[Callable[[np.ndarray], np.ndarray]]
    kill: Callable[[np.ndarray], np.ndarray]
    max_steps: int = 100_000

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start))
        object.__setattr__(self, "levels", tuple(self.levels))
        if len(self.levels) == 0:
            raise ValueError("need at least one level")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class SplittingEstimate:
    """One splitting run: survivor fraction per level and their product."""

    level_fractions: np.ndarray
    estimate: float
    n_particles: int
    total_chain_steps: int
    died_at_level: int | None = None


@dataclass(frozen=True)
class SplittingSummary:
    """Replicated runs aggregated: mean estimate with a replication standard error."""

    estimate: float
    standard_error: float | None
    level_fractions: np.ndarray
    estimates: np.ndarray
    replications: int
    total_chain_steps: int


def _advance_to_level(lp: LevelProcess, states: np.ndarray, level, rng) -> tuple[np.ndarray, np.ndarray, int]:
    """Run trajectories until the level or the kill condition; returns survivors."""
    states = states.copy()
    reached = np.asarray(level(states), dtype=bool)
    alive = ~reached & ~np.asarray(lp.kill(states), dtype=bool)
    steps_used = 0
    n_steps = 0
    while alive.any():
        if n_steps >= lp.max_steps:
            logger.warning(
                "%d trajectories exhausted max_steps=%d between levels; counted as killed",
                int(alive.sum()), lp.max_steps,
            )
            break
        moved = lp.kernel(rng, states[alive])
        steps_used += int(alive.sum())
        n_steps += 1
        states[alive] = moved
        sub_reached = np.asarray(level(moved), dtype=bool)
        sub_killed = np.asarray(lp.kill(moved), dtype=bool) & ~sub_reached
        alive_idx = np.flatnonzero(alive)
        reached[alive_idx[sub_reached]] = True
        alive[alive_idx[sub_reached | sub_killed]] = False
    return states, reached, steps_used


def splitting_run(lp: LevelProcess, n: int, rng: np.random.Generator) -> SplittingEstimate:
    """One fixed-effort splitting pass with N trajectories.

    Survivors of each level are duplicated back to N by balanced resampling,
    so every survivor is copied floor(N/s) or ceil(N/s) times.  If a level
    kills everything the estimate is exactly zero and the level is recorded.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    states = np.repeat(np.asarray(lp.start)[None, ...], n, axis=0)
    fractions = np.zeros(len(lp.levels))
    total_steps = 0
    for li, level in enumerate(lp.levels):
        states, reached, used = _advance_to_level(lp, states, level, rng)
        total_steps += used
        survivors = int(reached.sum())
        fractions[li] = survivors / n
        if survivors == 0:
            return SplittingEstimate(fractions, 0.0, n, total_steps, died_at_level=li)
        surv_states = states[reached]
        counts = systematic_resample(WeightVector.uniform(survivors), n, rng.random())
        states = np.repeat(surv_states, counts.counts, axis=0)
    estimate = float(np.prod(fractions[: len(lp.levels)]))
    return SplittingEstimate(fractions, estimate, n, total_steps)


def splitting_replicated(lp: LevelProcess, n: int, replications: int,
                         rng: np.random.Generator) -> SplittingSummary:
    """Independent splitting runs aggregated into a mean and standard error.

    With a single replication the standard error is reported as absent.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    runs = [splitting_run(lp, n, r) for r in rng.spawn(replications)]
    estimates = np.array([r.estimate for r in runs])
    fractions = np.mean([r.level_fractions for r in runs], axis=0)
    total = sum(r.total_chain_steps for r in runs)
    se = None
    if replications > 1:
        se = float(np.std(estimates, ddof=1) / np.sqrt(replications))
    return SplittingSummary(
        float(estimates.mean()), se, fractions, estimates, replications, total
    )


def random_walk_process(start: float, up_prob: float, levels: Sequence[float],
                        kill_below: float, max_steps: int = 100_000,
                        step_size: float = 1.0) -> LevelProcess:
    """Nearest-neighbour random walk; level n means reaching height levels[n].

    The walk survives a level by hitting it from below before it touches
    ``kill_below``.
    """
    if not 0.0 < up_prob < 1.0:
        raise ValueError("up_prob must lie in (0, 1)")
    thresholds = list(levels)
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("levels must be strictly increasing")

    def kernel(rng, states):
        steps = np.where(rng.random(states.shape[0]) < up_prob, step_size, -step_size)
        return states + steps

    return LevelProcess(
        kernel=kernel,
        start=np.asarray(float(start)),
        levels=[(lambda s, lev=lev: s >= lev) for lev in thresholds],
        kill=lambda s: s <= kill_below,
        max_steps=max_steps,
    )
