"""Adaptive stimulus selection for ERP spellers by maximizing expected discrimination gain."""

from .gain import (
    GainCurve,
    QuadratureError,
    build_gain_curve,
    cached_gain_curve,
    expected_gain,
    gain_integrand,
    kl_divergence,
    load_gain_curve,
    lookup_gain,
    save_gain_curve,
)
from .grid import (
    DegenerateStateError,
    FlashGroup,
    GridLayout,
    LikelihoodModel,
    PosteriorState,
    StopDecision,
    StoppingRule,
    likelihood_density,
    select_character,
    should_stop,
    update_posterior,
)
from .policies import (
    ConstraintTracker,
    ODPredictor,
    Paradigm,
    PolicyConfig,
    RcRandomSequence,
    TrackerError,
    advance_tracker,
    feasible_groups,
    next_flash_greedy,
    next_flash_rc_adaptive,
    next_flash_rc_random,
    predict_posterior,
    rc_groups,
)
from .simulation import (
    ConfigurationError,
    SweepResult,
    TrialConfig,
    TrialResult,
    run_sweep,
    run_trial,
    sample_score,
)

__version__ = "0.1.0"
