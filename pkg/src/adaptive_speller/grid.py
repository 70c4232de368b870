"""Character grid, flash groups, Bayesian posterior update and dynamic stopping."""

from __future__ import annotations

import enum
import math
import string
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "DegenerateStateError",
    "GridLayout",
    "FlashGroup",
    "LikelihoodModel",
    "StoppingRule",
    "StopDecision",
    "PosteriorState",
    "likelihood_density",
    "update_posterior",
    "should_stop",
    "select_character",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

_DEFAULT_SYMBOLS = string.ascii_uppercase + string.digits + string.punctuation + string.ascii_lowercase


class DegenerateStateError(ArithmeticError):
    """Raised when a posterior update cannot be normalized."""


@dataclass(frozen=True)
class GridLayout:
    """Rectangular speller matrix.

    Characters are indexed row-major, so character ``m`` sits in row
    ``m // cols`` and column ``m % cols``.
    """

    rows: int = 8
    cols: int = 9
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise ValueError(f"grid dimensions must be positive, got {self.rows}x{self.cols}")
        n = self.rows * self.cols
        if n < 2:
            raise ValueError("grid must hold at least 2 characters")
        if not self.labels:
            labels = tuple(_DEFAULT_SYMBOLS[i] if i < len(_DEFAULT_SYMBOLS) else f"#{i}" for i in range(n))
            object.__setattr__(self, "labels", labels)
        elif len(self.labels) != n:
            raise ValueError(f"expected {n} labels, got {len(self.labels)}")

    @property
    def n_chars(self) -> int:
        return self.rows * self.cols

    def row_of(self, m: int) -> int:
        return m // self.cols

    def col_of(self, m: int) -> int:
        return m % self.cols


class FlashGroup:
    """Set of characters illuminated together, stored as a boolean mask.

    Parameters
    ----------
    mask : array_like of bool, shape (n_chars,)
        Membership vector; at least one entry must be set.
    """

    __slots__ = ("_mask", "_weights", "_members")

    def __init__(self, mask):
        mask = np.array(mask, dtype=bool)
        if mask.ndim != 1:
            raise ValueError("flash group mask must be one-dimensional")
        if not mask.any():
            raise ValueError("flash group must contain at least one character")
        mask.flags.writeable = False
        weights = mask.astype(float)
        weights.flags.writeable = False
        self._mask = mask
        self._weights = weights
        self._members = None

    @classmethod
    def from_members(cls, members: Sequence[int], n_chars: int) -> "FlashGroup":
        mask = np.zeros(n_chars, dtype=bool)
        mask[np.asarray(members, dtype=int)] = True
        return cls(mask)

    @property
    def mask(self) -> np.ndarray:
        return self._mask

    @property
    def weights(self) -> np.ndarray:
        """Membership as a 0/1 float vector, handy for dot products."""
        return self._weights

    @property
    def members(self) -> tuple[int, ...]:
        if self._members is None:
            self._members = tuple(int(i) for i in np.flatnonzero(self._mask))
        return self._members

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def n_chars(self) -> int:
        return self._mask.shape[0]

    def __contains__(self, m) -> bool:
        return bool(self._mask[m])

    def __eq__(self, other) -> bool:
        if not isinstance(other, FlashGroup):
            return NotImplemented
        return self._mask.shape == other._mask.shape and bool(np.array_equal(self._mask, other._mask))

    def __hash__(self) -> int:
        return hash((self.n_chars, self.members))

    def __repr__(self) -> str:
        return f"FlashGroup({list(self.members)})"


@dataclass(frozen=True)
class LikelihoodModel:
    """Gaussian classifier-score model for non-target (``mu0``) and target (``mu1``) flashes."""

    mu0: float = 0.0
    mu1: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @classmethod
    def from_dprime(cls, dprime: float) -> "LikelihoodModel":
        """Canonical model with ``mu0=0``, ``sigma=1`` and ``mu1=dprime``."""
        return cls(mu0=0.0, mu1=float(dprime), sigma=1.0)

    @property
    def dprime(self) -> float:
        return (self.mu1 - self.mu0) / self.sigma

    def logpdf(self, z, is_target: bool):
        mu = self.mu1 if is_target else self.mu0
        u = (np.asarray(z, dtype=float) - mu) / self.sigma
        return -0.5 * u * u - _LOG_SQRT_2PI - math.log(self.sigma)

    def log_ratio(self, z: float) -> float:
        """``log l1(z) - log l0(z)``, the only quantity a posterior update needs."""
        s2 = self.sigma * self.sigma
        return ((z - self.mu0) ** 2 - (z - self.mu1) ** 2) / (2.0 * s2)


def likelihood_density(model: LikelihoodModel, z, is_target: bool):
    """Gaussian density of score ``z`` under the target or non-target distribution."""
    return np.exp(model.logpdf(z, is_target))


@dataclass(frozen=True)
class StoppingRule:
    p_threshold: float = 0.9
    t_max: int = 120

    def __post_init__(self):
        if not 0.0 < self.p_threshold <= 1.0:
            raise ValueError(f"p_threshold must lie in (0, 1], got {self.p_threshold}")
        if int(self.t_max) < 1:
            raise ValueError(f"t_max must be >= 1, got {self.t_max}")


class StopDecision(enum.Enum):
    THRESHOLD = "threshold"
    TMAX = "tmax"
    CONTINUE = "continue"


@dataclass(frozen=True)
class PosteriorState:
    """Character posterior kept as normalized log-probabilities.

    ``history`` holds ``(flash, score)`` pairs in presentation order; the
    score is ``None`` while a presented flash is still awaiting its score.
    """

    log_probs: np.ndarray
    flashes_presented: int = 0
    scores_observed: int = 0
    history: tuple = field(default=(), repr=False)

    @classmethod
    def uniform(cls, n_chars: int) -> "PosteriorState":
        return cls(np.full(n_chars, -math.log(n_chars)))

    @classmethod
    def from_probs(cls, probs) -> "PosteriorState":
        p = np.asarray(probs, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or not np.isclose(p.sum(), 1.0, rtol=0, atol=1e-9):
            raise ValueError("probs must be a nonnegative vector summing to 1")
        with np.errstate(divide="ignore"):
            return cls(np.log(p))

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def n_chars(self) -> int:
        return self.log_probs.shape[0]


def _log_update(log_probs: np.ndarray, weights: np.ndarray, llr: float) -> np.ndarray:
    # Only the ratio l1/l0 matters: flashed entries gain llr, the rest stay put.
    out = log_probs + llr * weights
    top = out.max()
    if not math.isfinite(top):
        raise DegenerateStateError("posterior update produced a non-finite normalizer")
    out -= top + math.log(np.exp(out - top).sum())
    return out


def update_posterior(
    state: PosteriorState,
    flash: FlashGroup,
    z: float,
    model: LikelihoodModel,
    *,
    presented: bool = False,
) -> PosteriorState:
    """Bayes update of the character posterior with one classifier score.

    Parameters
    ----------
    state : PosteriorState
        Current (normalized) posterior.
    flash : FlashGroup
        Group whose presentation produced ``z``.
    z : float
        Classifier score.
    model : LikelihoodModel
        Score likelihoods.
    presented : bool, default False
        Also count ``flash`` as a new presentation. Leave False when the flash
        was already recorded as presented and only its score is arriving.

    Returns
    -------
    PosteriorState
        New state with ``scores_observed`` incremented.

    Raises
    ------
    DegenerateStateError
        If ``z`` is not finite or the normalizer collapses.
    """
    if flash.n_chars != state.n_chars:
        raise ValueError("flash group and posterior disagree on the number of characters")
    z = float(z)
    if not math.isfinite(z):
        raise DegenerateStateError(f"non-finite score {z!r}")
    log_probs = _log_update(state.log_probs, flash.weights, model.log_ratio(z))
    return PosteriorState(
        log_probs,
        flashes_presented=max(state.flashes_presented + int(presented), state.scores_observed + 1),
        scores_observed=state.scores_observed + 1,
        history=state.history + ((flash, z),),
    )


def should_stop(state: PosteriorState, rule: StoppingRule) -> StopDecision:
    if math.exp(state.log_probs.max()) >= rule.p_threshold:
        return StopDecision.THRESHOLD
    if state.scores_observed >= rule.t_max:
        return StopDecision.TMAX
    return StopDecision.CONTINUE


def select_character(state_or_probs) -> int:
    """Index of the most probable character; ties go to the lowest index."""
    if isinstance(state_or_probs, PosteriorState):
        values = state_or_probs.log_probs
    else:
        values = np.asarray(state_or_probs, dtype=float)
    return int(np.argmax(values))
