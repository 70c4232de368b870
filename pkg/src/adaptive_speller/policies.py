"""Stimulus-selection paradigms and the observation-delay / refractory bookkeeping."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .gain import GainCurve, lookup_gain
from .grid import FlashGroup, GridLayout, LikelihoodModel, PosteriorState

__all__ = [
    "Paradigm",
    "ODPredictor",
    "PolicyConfig",
    "TrackerError",
    "ConstraintTracker",
    "RcRandomSequence",
    "rc_groups",
    "feasible_groups",
    "blocked_mask",
    "next_flash_rc_random",
    "next_flash_rc_adaptive",
    "next_flash_greedy",
    "predict_posterior",
    "advance_tracker",
]

# Gains closer than this are treated as tied.
_TIE_TOL = 1e-12


class Paradigm(str, enum.Enum):
    RC_RANDOM = "rc-random"
    RC_ADAPTIVE = "rc-adaptive"
    GREEDY_ADAPTIVE = "greedy-adaptive"

    def __str__(self):
        return self.value


class ODPredictor(str, enum.Enum):
    PSEUDO_UPDATE = "pseudo-update"
    FROZEN_POSTERIOR = "frozen-posterior"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class PolicyConfig:
    """Paradigm choice plus the delay and refractory constraints it must respect.

    ``tti_min=1`` means no refractory restriction; ``observation_delay=0``
    means each score is available before the next flash is chosen.
    """

    paradigm: Paradigm = Paradigm.GREEDY_ADAPTIVE
    max_flash_size: int = 9
    observation_delay: int = 0
    tti_min: int = 1
    od_predictor: ODPredictor = ODPredictor.PSEUDO_UPDATE

    def __post_init__(self):
        object.__setattr__(self, "paradigm", Paradigm(self.paradigm))
        object.__setattr__(self, "od_predictor", ODPredictor(self.od_predictor))
        if int(self.max_flash_size) < 1:
            raise ValueError(f"max_flash_size must be >= 1, got {self.max_flash_size}")
        if int(self.observation_delay) < 0:
            raise ValueError(f"observation_delay must be >= 0, got {self.observation_delay}")
        if int(self.tti_min) < 1:
            raise ValueError(f"tti_min must be >= 1, got {self.tti_min}")

    def check_grid(self, grid: GridLayout) -> None:
        if self.max_flash_size > grid.n_chars:
            raise ValueError(f"max_flash_size {self.max_flash_size} exceeds grid size {grid.n_chars}")


class TrackerError(RuntimeError):
    """Presentation and scoring events arrived out of order."""


@dataclass
class ConstraintTracker:
    """Recent presentations (refractory window) and flashes still awaiting a score."""

    n_chars: int
    tti_min: int = 1
    observation_delay: int = 0
    recent: deque = field(default_factory=deque)
    pending: deque = field(default_factory=deque)

    @classmethod
    def for_config(cls, config: PolicyConfig, n_chars: int) -> "ConstraintTracker":
        return cls(n_chars, config.tti_min, config.observation_delay)

    def blocked(self) -> np.ndarray:
        return blocked_mask(self)


def blocked_mask(tracker: ConstraintTracker) -> np.ndarray:
    """Characters flashed within the last ``tti_min - 1`` presentations."""
    out = np.zeros(tracker.n_chars, dtype=bool)
    for g in tracker.recent:
        out |= g.mask
    return out


def advance_tracker(
    tracker: ConstraintTracker,
    presented: Optional[FlashGroup] = None,
    scored: bool = False,
) -> ConstraintTracker:
    """Record one lockstep event, in place, and return the tracker.

    A presentation enters both the refractory window and the pending queue;
    ``scored=True`` then retires the oldest pending flash. With delay ``d``
    the pending queue may never hold more than ``d`` flashes, so once it is
    full every presentation must come with a score.

    Raises
    ------
    TrackerError
        If a score arrives with nothing pending, or a presentation would
        overfill the pending queue.
    """
    if presented is not None:
        window = tracker.tti_min - 1
        if window > 0:
            tracker.recent.append(presented)
            while len(tracker.recent) > window:
                tracker.recent.popleft()
        tracker.pending.append(presented)
    if scored:
        if not tracker.pending:
            raise TrackerError("score arrived with no pending flash")
        tracker.pending.popleft()
    if len(tracker.pending) > tracker.observation_delay:
        raise TrackerError(
            f"{len(tracker.pending)} unscored flashes exceed observation delay {tracker.observation_delay}"
        )
    return tracker


def rc_groups(grid: GridLayout) -> list[FlashGroup]:
    """Row groups (top to bottom) followed by column groups (left to right)."""
    idx = np.arange(grid.n_chars).reshape(grid.rows, grid.cols)
    groups = [FlashGroup.from_members(idx[r], grid.n_chars) for r in range(grid.rows)]
    groups += [FlashGroup.from_members(idx[:, c], grid.n_chars) for c in range(grid.cols)]
    return groups


def feasible_groups(candidates: Sequence[FlashGroup], tracker: ConstraintTracker) -> list[FlashGroup]:
    """Candidates that contain no character inside its refractory window."""
    blocked = blocked_mask(tracker)
    return [g for g in candidates if not np.any(g.mask & blocked)]


class RcRandomSequence:
    """Row/column groups in shuffled blocks, each group exactly once per block."""

    def __init__(self, groups: Sequence[FlashGroup], rng: np.random.Generator):
        self.groups = list(groups)
        self.rng = rng
        self._queue: list[int] = []

    def next(self) -> FlashGroup:
        if not self._queue:
            self._queue = list(self.rng.permutation(len(self.groups))[::-1])
        return self.groups[self._queue.pop()]


def next_flash_rc_random(sequence: RcRandomSequence) -> FlashGroup:
    return sequence.next()


def _random_argmax(values: np.ndarray, rng: np.random.Generator) -> int:
    best = np.flatnonzero(values >= values.max() - _TIE_TOL)
    if best.size == 1:
        return int(best[0])
    return int(best[rng.integers(best.size)])


def next_flash_rc_adaptive(
    probs: np.ndarray,
    curve: GainCurve,
    tracker: ConstraintTracker,
    rng: np.random.Generator,
    groups: Sequence[FlashGroup],
    group_matrix: Optional[np.ndarray] = None,
) -> FlashGroup:
    """Row or column group with the largest expected gain among feasible ones.

    Parameters
    ----------
    probs : ndarray
        Current (possibly predicted) character posterior.
    curve : GainCurve
        Tabulated gain as a function of flashed prior mass.
    tracker : ConstraintTracker
        Supplies the refractory window.
    rng : Generator
        Breaks ties between equally good groups.
    groups : sequence of FlashGroup
        Candidate set, normally :func:`rc_groups`.
    group_matrix : ndarray, optional
        ``groups`` stacked as a float matrix; pass it to skip rebuilding.

    Returns
    -------
    FlashGroup
        When every group touches a blocked character, the group with the
        fewest blocked characters is returned instead.
    """
    if group_matrix is None:
        group_matrix = np.array([g.mask for g in groups], dtype=float)
    p1 = group_matrix @ probs
    gains = lookup_gain(curve, p1)
    if tracker.recent:
        n_blocked = group_matrix @ blocked_mask(tracker)
        feasible = n_blocked == 0
        if not feasible.any():
            return groups[_random_argmax(-n_blocked, rng)]
        gains = np.where(feasible, gains, -np.inf)
    return groups[_random_argmax(gains, rng)]


def next_flash_greedy(
    probs: np.ndarray,
    curve: GainCurve,
    tracker: ConstraintTracker,
    config: PolicyConfig,
    rng: np.random.Generator,
) -> FlashGroup:
    """Build a flash group whose prior mass brackets the gain-optimal mass.

    Eligible characters are taken in descending probability (ties in random
    order) and accumulated while the running mass stays at or below
    ``curve.p_opt`` and the size cap is not reached. That prefix and the
    prefix one character longer bracket ``p_opt``; the one with the larger
    tabulated gain is returned.

    Raises
    ------
    ValueError
        If the refractory window blocks every character.
    """
    n = probs.shape[0]
    eligible = np.flatnonzero(~blocked_mask(tracker)) if tracker.recent else np.arange(n)
    if eligible.size == 0:
        raise ValueError("no eligible characters: refractory window blocks the whole grid")
    perm = eligible[rng.permutation(eligible.size)]
    order = perm[np.argsort(-probs[perm], kind="stable")]
    cum = np.cumsum(probs[order])

    cap = min(config.max_flash_size, order.size)
    k = min(int(np.searchsorted(cum, curve.p_opt, side="right")), cap)
    k = max(k, 1)
    if k < cap:
        g_under, g_over = lookup_gain(curve, cum[[k - 1, k]])
        if g_over > g_under:
            k += 1
    mask = np.zeros(n, dtype=bool)
    mask[order[:k]] = True
    return FlashGroup(mask)


def predict_posterior(
    confirmed: PosteriorState,
    pending: Sequence[FlashGroup],
    model: LikelihoodModel,
    mode: ODPredictor = ODPredictor.PSEUDO_UPDATE,
) -> np.ndarray:
    """Estimate the posterior after the still-unscored ``pending`` flashes.

    ``frozen-posterior`` returns the confirmed probabilities unchanged.
    ``pseudo-update`` rolls the posterior forward through each pending
    flash with its expected score ``p1*mu1 + (1-p1)*mu0``; ``confirmed`` is
    left untouched.
    """
    mode = ODPredictor(mode)
    if not pending or mode is ODPredictor.FROZEN_POSTERIOR:
        return confirmed.probs
    probs = confirmed.probs
    for g in pending:
        w = g.weights
        p1 = float(probs @ w)
        z_hat = p1 * model.mu1 + (1.0 - p1) * model.mu0
        # Bayes update in closed form: the normalizer is the mixture 1 + p1 (r - 1).
        r = math.exp(model.log_ratio(z_hat))
        probs = probs * (1.0 + (r - 1.0) * w) / (1.0 + (r - 1.0) * p1)
    return probs
