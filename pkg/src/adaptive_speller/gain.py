"""Expected discrimination gain of a flash group as a function of its prior mass.

The expected KL divergence between the next posterior and the current one
depends on the flashed characters only through ``p1``, the summed prior
probability of the group, so it can be tabulated once per likelihood model
and looked up during stimulus selection.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate

from .grid import LikelihoodModel

__all__ = [
    "QuadratureError",
    "GainCurve",
    "kl_divergence",
    "gain_integrand",
    "expected_gain",
    "build_gain_curve",
    "cached_gain_curve",
    "lookup_gain",
    "save_gain_curve",
    "load_gain_curve",
]

TAIL_SIGMAS = 8.0
QUAD_TOL = 1e-8
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach the requested accuracy."""


def kl_divergence(g, q) -> float:
    """Discrete Kullback-Leibler divergence ``sum g log(g/q)`` in nats.

    Terms with ``g_i == 0`` contribute nothing.

    Raises
    ------
    ValueError
        If the inputs differ in length, or ``q_i == 0`` where ``g_i > 0``.
    """
    g = np.asarray(g, dtype=float)
    q = np.asarray(q, dtype=float)
    if g.shape != q.shape:
        raise ValueError(f"shape mismatch: {g.shape} vs {q.shape}")
    support = g > 0
    if np.any(q[support] <= 0):
        raise ValueError("q must be positive wherever g is positive")
    return float(np.sum(g[support] * np.log(g[support] / q[support])))


def gain_integrand(p1: float, z, model: LikelihoodModel):
    """Integrand of the expected gain at score(s) ``z``.

    Two-term form: the flashed mass ``p1`` shares likelihood ``l1`` and the
    rest shares ``l0``, each weighted by the log ratio of its likelihood to
    the mixture ``l0 (1 - p1) + l1 p1``.
    """
    z = np.asarray(z, dtype=float)
    if p1 <= 0.0 or p1 >= 1.0 or model.mu0 == model.mu1:
        return np.zeros_like(z) if z.ndim else 0.0
    log_l0 = model.logpdf(z, False)
    log_l1 = model.logpdf(z, True)
    log_mix = np.logaddexp(log_l0 + math.log1p(-p1), log_l1 + math.log(p1))
    out = p1 * np.exp(log_l1) * (log_l1 - log_mix) + (1.0 - p1) * np.exp(log_l0) * (log_l0 - log_mix)
    return out if out.ndim else float(out)


def _integrand_in_z(z: float, p1: float, model: LikelihoodModel) -> float:
    return gain_integrand(p1, z, model)


def _integration_limits(model: LikelihoodModel) -> tuple[float, float]:
    lo = min(model.mu0, model.mu1) - TAIL_SIGMAS * model.sigma
    hi = max(model.mu0, model.mu1) + TAIL_SIGMAS * model.sigma
    return lo, hi


def expected_gain(p1: float, model: LikelihoodModel) -> float:
    """Expected discrimination gain (nats) for a group holding prior mass ``p1``.

    Raises
    ------
    QuadratureError
        If the adaptive scheme cannot certify an absolute error below 1e-8.
    """
    p1 = float(p1)
    if not 0.0 <= p1 <= 1.0:
        raise ValueError(f"p1 must lie in [0, 1], got {p1}")
    if p1 == 0.0 or p1 == 1.0 or model.mu0 == model.mu1:
        return 0.0
    lo, hi = _integration_limits(model)
    mid = 0.5 * (model.mu0 + model.mu1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, err, info = integrate.quad(
            _integrand_in_z, lo, hi, args=(p1, model),
            epsabs=1e-11, epsrel=1e-11, limit=200, points=[model.mu0, mid, model.mu1],
            full_output=True,
        )[:3]
    if not err <= QUAD_TOL:
        raise QuadratureError(f"quadrature error estimate {err:.3g} exceeds {QUAD_TOL:g} (p1={p1}, model={model})")
    return max(float(value), 0.0)


@dataclass(frozen=True)
class GainCurve:
    """Tabulated expected gain over a uniform grid of ``p1`` values."""

    mu0: float
    mu1: float
    sigma: float
    p1_grid: np.ndarray
    gain_values: np.ndarray
    p_opt: float
    gain_max: float

    @property
    def dprime(self) -> float:
        return (self.mu1 - self.mu0) / self.sigma

    @property
    def grid_size(self) -> int:
        return self.p1_grid.shape[0]

    @property
    def model(self) -> LikelihoodModel:
        return LikelihoodModel(self.mu0, self.mu1, self.sigma)

    def __call__(self, p1):
        return lookup_gain(self, p1)


def _golden_section_max(f, a: float, b: float, tol: float) -> float:
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def build_gain_curve(model: LikelihoodModel, grid_size: int = 1001) -> GainCurve:
    """Tabulate :func:`expected_gain` on ``grid_size`` evenly spaced ``p1`` values.

    The maximizer ``p_opt`` starts at the grid argmax and is refined by
    golden-section search over the two neighbouring cells to 1e-6. A flat
    (zero-information) curve gets ``p_opt = 0.5``.
    """
    grid_size = int(grid_size)
    if grid_size < 101:
        raise ValueError(f"grid_size must be >= 101, got {grid_size}")
    p1_grid = np.linspace(0.0, 1.0, grid_size)
    gains = np.array([expected_gain(p, model) for p in p1_grid])
    gains[0] = gains[-1] = 0.0

    if not np.any(gains > 0.0):
        p_opt, gain_max = 0.5, 0.0
    else:
        k = int(np.argmax(gains))
        a = p1_grid[max(k - 1, 0)]
        b = p1_grid[min(k + 1, grid_size - 1)]
        p_opt = _golden_section_max(lambda p: expected_gain(p, model), a, b, 1e-7)
        gain_max = float(gains.max())
    p1_grid.flags.writeable = False
    gains.flags.writeable = False
    return GainCurve(model.mu0, model.mu1, model.sigma, p1_grid, gains, float(p_opt), gain_max)


@lru_cache(maxsize=64)
def _cached_curve(mu0: float, mu1: float, sigma: float, grid_size: int) -> GainCurve:
    return build_gain_curve(LikelihoodModel(mu0, mu1, sigma), grid_size)


def cached_gain_curve(model: LikelihoodModel, grid_size: int = 1001) -> GainCurve:
    """Memoized :func:`build_gain_curve`, keyed by ``(mu0, mu1, sigma, grid_size)``."""
    return _cached_curve(float(model.mu0), float(model.mu1), float(model.sigma), int(grid_size))


def lookup_gain(curve: GainCurve, p1):
    """Linearly interpolated gain at ``p1`` (scalar or array)."""
    out = np.interp(p1, curve.p1_grid, curve.gain_values)
    return out if np.ndim(out) else float(out)


def save_gain_curve(curve: GainCurve, path) -> Path:
    """Write a curve to an ``.npz`` file; :func:`load_gain_curve` restores it bit-exactly."""
    path = Path(path)
    header = np.array([curve.mu0, curve.mu1, curve.sigma, curve.grid_size, curve.p_opt, curve.gain_max])
    with open(path, "wb") as fh:
        np.savez(fh, header=header, p1_grid=curve.p1_grid, gain_values=curve.gain_values)
    return path


def load_gain_curve(path) -> GainCurve:
    with np.load(Path(path)) as data:
        mu0, mu1, sigma, grid_size, p_opt, gain_max = data["header"].tolist()
        p1_grid = data["p1_grid"]
        gains = data["gain_values"]
    if p1_grid.shape != (int(grid_size),) or gains.shape != p1_grid.shape:
        raise ValueError(f"corrupt gain curve file {path}")
    p1_grid.flags.writeable = False
    gains.flags.writeable = False
    return GainCurve(mu0, mu1, sigma, p1_grid, gains, p_opt, gain_max)
