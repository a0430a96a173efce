"""Adaptive sampling-rate controller.

The controller watches the norm of the sharpness correction (the difference
between the perturbed-point gradient and the plain gradient) on sampled
iterations. Two statistics drive the rate: the sliced variance of the last N
sampled norms, and the ratio of correction norm to plain-gradient norm. The
per-window sample budget s is scaled by the averaged relative change of both
series, and the per-iteration Bernoulli probability is p = s / N.

All statistics here are computed with plain Python floats and strict
left-to-right summation. That makes the incremental state bit-identical to a
from-scratch replay of the recorded history, which the test suite checks
exactly rather than within a tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError


@dataclass
class SamplerConfig:
    n_window: int = 50          # window length N: buffer capacity and rate-update cadence
    m_slices: int = 5           # number of variance slices M
    alpha: float = 0.13         # gain on the averaged change rates
    s1: float = 25.0            # initial per-window sample budget
    i_start: int = 250          # warmup iterations with unconditional sampling
    p_max: float = 0.8          # hard ceiling on the sampling rate
    subset_segments: list[str] | None = None  # None: last two parameter segments
    eps: float = 1e-12          # division guard
    force: str | None = None    # None | "always" | "never" (post-warmup override)

    def __post_init__(self):
        if self.m_slices < 2:
            raise ConfigurationError("need at least 2 variance slices")
        if self.n_window % self.m_slices != 0:
            raise ConfigurationError("window length must be divisible by the slice count")
        if not (0.0 < self.p_max <= 1.0):
            raise ConfigurationError("p_max must be in (0, 1]")
        if not (1.0 <= self.s1 <= self.p_max * self.n_window):
            raise ConfigurationError("s1 must lie in [1, p_max * N]")
        if self.i_start < 0:
            raise ConfigurationError("i_start must be nonnegative")
        if self.force not in (None, "always", "never"):
            raise ConfigurationError("force must be None, 'always', or 'never'")

    @property
    def sample_cap(self) -> int:
        """Most samples allowed inside one window: floor(p_max * N)."""
        return math.floor(self.p_max * self.n_window)


@dataclass
class SamplerState:
    gnorm_buffer: list[float] = field(default_factory=list)  # sampled correction norms
    v_history: list[float] = field(default_factory=list)     # sliced variances
    r_history: list[float] = field(default_factory=list)     # norm ratios
    s: float = 0.0
    p: float = 0.0
    window_iter: int = 0
    window_samples: int = 0
    rng_stream: np.random.Generator | None = None
    # exposed for per-iteration logging
    last_v: float | None = None
    last_r: float | None = None
    last_c_var: float | None = None
    last_c_norm: float | None = None
    last_v_fallback: bool = False


def init_sampler(config: SamplerConfig, seed: int) -> SamplerState:
    return SamplerState(
        s=float(config.s1),
        p=min(float(config.s1) / config.n_window, config.p_max),
        rng_stream=np.random.default_rng([seed, 0x5A]),
    )


def population_variance(values) -> float:
    """Sum of squared deviations over count, accumulated left to right."""
    count = len(values)
    total = 0.0
    for v in values:
        total += v
    mean = total / count
    acc = 0.0
    for v in values:
        d = v - mean
        acc += d * d
    return acc / count


def sliced_variance(values, m_slices: int) -> float:
    """Mean of per-slice population variances of the ascending-sorted values.

    Sorting first makes the statistic robust to isolated extreme norms: an
    outlier inflates only its own slice. With fewer values than slices the
    population variance of everything is returned instead.
    """
    if len(values) == 0:
        raise ConfigurationError("sliced_variance needs at least one value")
    if m_slices < 1:
        raise ConfigurationError("need at least one slice")
    ordered = sorted(float(v) for v in values)
    if len(ordered) < m_slices:
        return population_variance(ordered)
    bounds = _slice_bounds(len(ordered), m_slices)
    total = 0.0
    for lo, hi in bounds:
        total += population_variance(ordered[lo:hi])
    return total / m_slices


def _slice_bounds(n, m):
    """Contiguous as-even-as-possible slices; the first n % m get the extra."""
    base, extra = divmod(n, m)
    bounds = []
    lo = 0
    for j in range(m):
        hi = lo + base + (1 if j < extra else 0)
        bounds.append((lo, hi))
        lo = hi
    return bounds


def change_rate_series(history, eps: float) -> float:
    """Mean consecutive relative change, (h[i] - h[i-1]) / h[i-1].

    Terms whose denominator is smaller than eps in magnitude contribute zero
    but still count toward the mean's denominator. Histories shorter than two
    carry no information and yield zero.
    """
    n = len(history)
    if n < 2:
        return 0.0
    total = 0.0
    for i in range(1, n):
        prev = history[i - 1]
        if abs(prev) >= eps:
            total += (history[i] - prev) / prev
    return total / (n - 1)


def norm_ratio(l2_psf: float, l2_sgd: float, eps: float) -> float:
    """Correction-to-gradient norm ratio with a guarded denominator."""
    if l2_psf < 0.0 or l2_sgd < 0.0:
        raise ConfigurationError("norms must be nonnegative")
    return l2_psf / max(l2_sgd, eps)


def record_sample(state: SamplerState, config: SamplerConfig,
                  l2_psf_subset: float, l2_sgd_subset: float) -> None:
    """Fold one sampled iteration's norms into the rolling statistics."""
    _push(state.gnorm_buffer, float(l2_psf_subset), config.n_window)
    v = sliced_variance(state.gnorm_buffer, config.m_slices)
    _push(state.v_history, v, config.n_window)
    r = norm_ratio(float(l2_psf_subset), float(l2_sgd_subset), config.eps)
    _push(state.r_history, r, config.n_window)
    state.window_samples += 1
    state.last_v = v
    state.last_r = r
    state.last_v_fallback = len(state.gnorm_buffer) < config.m_slices


def _push(buffer, value, capacity):
    buffer.append(value)
    if len(buffer) > capacity:
        del buffer[0]


def update_rate(state: SamplerState, config: SamplerConfig) -> None:
    """End-of-window budget update: s *= 1 + alpha*(c_var + c_norm), clamped.

    The budget is kept inside [1, p_max * N] so the controller can neither
    die out nor exceed the sampling-rate ceiling; p follows as s / N.
    """
    c_var = change_rate_series(state.v_history, config.eps)
    c_norm = change_rate_series(state.r_history, config.eps)
    s = state.s * (1.0 + config.alpha * c_var + config.alpha * c_norm)
    s = min(max(s, 1.0), config.p_max * config.n_window)
    state.s = s
    # the extra min guards the one-ulp case where s/N rounds above p_max
    state.p = min(s / config.n_window, config.p_max)
    state.window_iter = 0
    state.window_samples = 0
    state.last_c_var = c_var
    state.last_c_norm = c_norm


def should_sample(state: SamplerState, config: SamplerConfig, i: int) -> bool:
    """Sampling decision for iteration i (1-based).

    Warmup iterations always sample and leave the window clock untouched;
    the clock starts once the adaptive phase begins. After warmup the window
    sample cap blocks further sampling without consuming randomness, and a
    'force' override short-circuits the Bernoulli draw entirely.
    """
    if i <= config.i_start:
        return True
    state.window_iter += 1
    if config.force == "always":
        return True
    if config.force == "never":
        return False
    if state.window_samples >= config.sample_cap:
        return False
    return float(state.rng_stream.random()) < state.p


def begin_windowing(state: SamplerState) -> None:
    """Reset window counters when warmup ends and adaptive sampling starts."""
    state.window_iter = 0
    state.window_samples = 0
