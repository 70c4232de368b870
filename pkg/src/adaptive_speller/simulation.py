"""Monte Carlo character-selection trials and d' sweeps."""

from __future__ import annotations

import logging
import zlib
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .gain import GainCurve, cached_gain_curve
from .grid import (
    FlashGroup,
    GridLayout,
    LikelihoodModel,
    PosteriorState,
    StopDecision,
    StoppingRule,
    select_character,
    should_stop,
    update_posterior,
)
from .policies import (
    ConstraintTracker,
    Paradigm,
    PolicyConfig,
    RcRandomSequence,
    advance_tracker,
    next_flash_greedy,
    next_flash_rc_adaptive,
    predict_posterior,
    rc_groups,
)

__all__ = [
    "ConfigurationError",
    "TrialConfig",
    "FlashRecord",
    "TrialResult",
    "CellSummary",
    "SweepResult",
    "trial_rng",
    "sample_score",
    "run_trial",
    "run_sweep",
    "baseline_policy",
    "DEFAULT_DPRIMES",
]

log = logging.getLogger(__name__)

DEFAULT_DPRIMES = tuple(np.round(np.arange(0.25, 4.0 + 1e-9, 0.25), 2).tolist())
Z95 = 1.959963984540054


class ConfigurationError(ValueError):
    """Trial configuration that cannot be simulated."""


@dataclass(frozen=True)
class TrialConfig:
    """Everything needed to reproduce one simulated character selection.

    The trial's random stream is derived from ``(seed, stream, trial_index)``
    only; ``stream`` lets a sweep give each condition its own independent
    family of streams.
    """

    grid: GridLayout = field(default_factory=GridLayout)
    model: LikelihoodModel = field(default_factory=LikelihoodModel)
    rule: StoppingRule = field(default_factory=StoppingRule)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    seed: int = 0
    trial_index: int = 0
    stream: tuple = ()
    curve_grid_size: int = 1001


class FlashRecord(NamedTuple):
    """One presentation. ``score`` is None if the trial stopped before it was scored."""

    step: int
    flash: FlashGroup
    score: Optional[float]
    posterior_max: float


@dataclass
class TrialResult:
    target: int
    selected: int
    flashes_scored: int
    flashes_presented: int
    stop_reason: StopDecision
    final_probs: np.ndarray = field(repr=False)
    flash_log: list = field(default_factory=list, repr=False)

    @property
    def correct(self) -> bool:
        return self.target == self.selected


def trial_rng(seed: int, trial_index: int, stream: Sequence[int] = ()) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(*map(int, stream), int(trial_index)))
    return np.random.default_rng(ss)


def sample_score(flash: FlashGroup, target: int, model: LikelihoodModel, rng: np.random.Generator) -> float:
    mu = model.mu1 if flash.mask[target] else model.mu0
    return float(rng.normal(mu, model.sigma))


def _check_config(config: TrialConfig) -> None:
    policy, grid = config.policy, config.grid
    try:
        policy.check_grid(grid)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    if policy.paradigm is Paradigm.RC_RANDOM and policy.tti_min > 1:
        raise ConfigurationError("rc-random ignores the posterior and cannot honour a refractory window")
    if policy.paradigm is Paradigm.GREEDY_ADAPTIVE:
        if grid.n_chars - (policy.tti_min - 1) * policy.max_flash_size < 1:
            raise ConfigurationError(
                f"tti_min={policy.tti_min} with max_flash_size={policy.max_flash_size} can block all "
                f"{grid.n_chars} characters"
            )


def run_trial(
    config: TrialConfig,
    curve: Optional[GainCurve] = None,
    record_log: bool = True,
) -> TrialResult:
    """Simulate one character selection under lockstep presentation and scoring.

    Each step presents one flash. The score of the flash presented
    ``observation_delay`` steps earlier is then incorporated into the
    confirmed posterior, and the stopping rule is checked. Adaptive paradigms
    choose flashes from the posterior predicted through the unscored flashes.
    """
    _check_config(config)
    grid, model, rule, policy = config.grid, config.model, config.rule, config.policy
    n = grid.n_chars
    rng = trial_rng(config.seed, config.trial_index, config.stream)
    target = int(rng.integers(n))

    paradigm = policy.paradigm
    groups = rc_groups(grid)
    group_matrix = np.array([g.mask for g in groups], dtype=float)
    if paradigm is not Paradigm.RC_RANDOM and curve is None:
        curve = cached_gain_curve(model, config.curve_grid_size)
    sequence = RcRandomSequence(groups, rng) if paradigm is Paradigm.RC_RANDOM else None

    state = PosteriorState.uniform(n)
    tracker = ConstraintTracker.for_config(policy, n)
    in_flight: deque = deque()
    flash_log: list = []
    presented = 0
    decision = StopDecision.CONTINUE

    while decision is StopDecision.CONTINUE:
        if paradigm is Paradigm.RC_RANDOM:
            flash = sequence.next()
        else:
            probs = predict_posterior(state, tracker.pending, model, policy.od_predictor)
            if paradigm is Paradigm.RC_ADAPTIVE:
                flash = next_flash_rc_adaptive(probs, curve, tracker, rng, groups, group_matrix)
            else:
                flash = next_flash_greedy(probs, curve, tracker, policy, rng)
        z = sample_score(flash, target, model, rng)
        presented += 1
        in_flight.append((presented, flash, z))
        scored = len(in_flight) > policy.observation_delay
        advance_tracker(tracker, flash, scored)
        if scored:
            step, f, zz = in_flight.popleft()
            state = update_posterior(state, f, zz, model)
            decision = should_stop(state, rule)
            if record_log:
                flash_log.append(FlashRecord(step, f, zz, float(np.exp(state.log_probs.max()))))

    if record_log:
        pmax = float(np.exp(state.log_probs.max()))
        flash_log.extend(FlashRecord(step, f, None, pmax) for step, f, _ in in_flight)
    state = replace(state, flashes_presented=presented)
    return TrialResult(
        target=target,
        selected=select_character(state),
        flashes_scored=state.scores_observed,
        flashes_presented=presented,
        stop_reason=decision,
        final_probs=state.probs,
        flash_log=flash_log,
    )


@dataclass
class CellSummary:
    """Aggregate over the trials of one (paradigm, d') cell."""

    paradigm: str
    dprime: float
    trials: int
    accuracy: float
    acc_ci95: float
    est_scored: float
    est_presented: float
    est_ci95: float
    stop_tmax_fraction: float
    results: list = field(default_factory=list, repr=False)

    @classmethod
    def from_results(cls, paradigm: str, dprime: float, results: Sequence[TrialResult], keep: bool = False):
        n = len(results)
        correct = np.array([r.correct for r in results], dtype=float)
        scored = np.array([r.flashes_scored for r in results], dtype=float)
        presented = np.array([r.flashes_presented for r in results], dtype=float)
        tmax = np.array([r.stop_reason is StopDecision.TMAX for r in results], dtype=float)
        acc = float(correct.mean())
        est_sd = float(scored.std(ddof=1)) if n > 1 else 0.0
        return cls(
            paradigm=str(paradigm),
            dprime=float(dprime),
            trials=n,
            accuracy=acc,
            acc_ci95=Z95 * float(np.sqrt(acc * (1.0 - acc) / n)),
            est_scored=float(scored.mean()),
            est_presented=float(presented.mean()),
            est_ci95=Z95 * est_sd / float(np.sqrt(n)),
            stop_tmax_fraction=float(tmax.mean()),
            results=list(results) if keep else [],
        )


@dataclass
class SweepResult:
    """Accuracy and expected stopping time per paradigm over a d' grid."""

    dprime_values: list
    paradigms: list
    trials: int
    cells: dict = field(default_factory=dict)  # (paradigm, dprime) -> CellSummary
    label: str = ""

    def cell(self, paradigm, dprime) -> CellSummary:
        return self.cells[(str(paradigm), float(dprime))]

    def series(self, paradigm, attr: str) -> np.ndarray:
        return np.array([getattr(self.cell(paradigm, d), attr) for d in self.dprime_values])

    def accuracy(self, paradigm) -> np.ndarray:
        return self.series(paradigm, "accuracy")

    def est(self, paradigm) -> np.ndarray:
        return self.series(paradigm, "est_scored")

    def rows(self):
        """Cells in deterministic (paradigm order, ascending d') order."""
        for p in self.paradigms:
            for d in self.dprime_values:
                yield self.cell(p, d)


def baseline_policy(policy: PolicyConfig) -> PolicyConfig:
    """Unconstrained row/column baseline used alongside any condition."""
    return PolicyConfig(paradigm=Paradigm.RC_RANDOM, max_flash_size=policy.max_flash_size)


def _stream_key(policy: PolicyConfig, dprime: float) -> tuple:
    if policy.paradigm is Paradigm.RC_RANDOM:
        tag = f"{policy.paradigm.value}|{dprime!r}"
    else:
        tag = (
            f"{policy.paradigm.value}|{dprime!r}|{policy.max_flash_size}|{policy.observation_delay}|"
            f"{policy.tti_min}|{policy.od_predictor.value}"
        )
    return (zlib.crc32(tag.encode()),)


def _run_chunk(configs: Sequence[TrialConfig], curve: Optional[GainCurve], record_log: bool):
    return [run_trial(c, curve, record_log) for c in configs]


def run_sweep(
    base: TrialConfig,
    dprimes: Sequence[float] = DEFAULT_DPRIMES,
    paradigms: Sequence = tuple(Paradigm),
    trials: int = 1500,
    *,
    n_jobs: int = 1,
    keep_results: bool = False,
    label: str = "",
) -> SweepResult:
    """Run ``trials`` independent trials for every (paradigm, d') pair.

    ``base.policy`` supplies the constraints for the adaptive paradigms;
    ``rc-random`` always runs as the unconstrained baseline. Results are
    aggregated in trial-index order, so ``n_jobs`` does not affect them.
    """
    trials = int(trials)
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    paradigms = [Paradigm(p) for p in paradigms]
    dprimes = [float(d) for d in dprimes]
    sweep = SweepResult(dprime_values=dprimes, paradigms=[p.value for p in paradigms], trials=trials, label=label)
    model0 = base.model

    executor = ProcessPoolExecutor(max_workers=n_jobs) if n_jobs > 1 else None
    try:
        for paradigm in paradigms:
            policy = (
                baseline_policy(base.policy)
                if paradigm is Paradigm.RC_RANDOM
                else replace(base.policy, paradigm=paradigm)
            )
            for d in dprimes:
                model = LikelihoodModel(model0.mu0, model0.mu0 + d * model0.sigma, model0.sigma)
                curve = None
                if paradigm is not Paradigm.RC_RANDOM:
                    curve = cached_gain_curve(model, base.curve_grid_size)
                cfg = replace(base, model=model, policy=policy, stream=_stream_key(policy, d))
                configs = [replace(cfg, trial_index=i) for i in range(trials)]
                if executor is None:
                    results = _run_chunk(configs, curve, keep_results)
                else:
                    size = -(-trials // (4 * n_jobs))
                    chunks = [configs[i:i + size] for i in range(0, trials, size)]
                    results = [
                        r for part in executor.map(_run_chunk, chunks, [curve] * len(chunks),
                                                   [keep_results] * len(chunks))
                        for r in part
                    ]
                summary = CellSummary.from_results(paradigm.value, d, results, keep=keep_results)
                sweep.cells[(paradigm.value, d)] = summary
                log.info(
                    "%s d'=%.2f acc=%.3f est=%.1f", paradigm.value, d, summary.accuracy, summary.est_scored
                )
    finally:
        if executor is not None:
            executor.shutdown()
    return sweep
