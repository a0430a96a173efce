"""Optimizer update rules and training loops.

A SAM step evaluates the gradient twice on the same mini-batch: once at w,
and once at w + rho * g/||g||. The difference between the two gradients is
the sharpness correction (called the PSF throughout this package); the
adaptive variant computes it only on sampled iterations and otherwise reuses
the most recent one, decayed by gamma per iteration of staleness.

All runners are deterministic given (config, seed): batches, initialization,
and sampling decisions each draw from their own seeded generator.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Batch, Dataset, batches_per_epoch, make_batches, train_test_split
from .errors import ConfigurationError, ContractViolationError, NumericError
from .metrics import MetricsRecord
from .objectives import ObjectiveSpec, eval_grad, eval_loss, init_params, mlp_accuracy
from .params import ParamVector, default_subset, subset_norm
from .sampler import (SamplerConfig, SamplerState, begin_windowing, init_sampler,
                      record_sample, should_sample, update_rate)

LR_SCHEDULES = ("constant", "cosine", "inverse_t")

DEGENERATE_GRAD_NORM = 1e-12
REUSE_UNDERFLOW = 1e-12


@dataclass
class OptimizerConfig:
    eta0: float = 0.1
    rho: float = 0.05
    gamma: float = 0.9
    momentum: float = 0.0
    lr_schedule: str = "cosine"
    grad_eval_budget: int | None = None

    def __post_init__(self):
        if self.eta0 <= 0.0:
            raise ConfigurationError("eta0 must be positive")
        if self.rho <= 0.0:
            raise ConfigurationError("rho must be positive")
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigurationError("gamma must be in (0, 1]")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigurationError("momentum must be in [0, 1)")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigurationError(f"unknown lr_schedule {self.lr_schedule!r}")


@dataclass
class GradientTriple:
    g_sgd: np.ndarray
    g_sam: np.ndarray
    psf: np.ndarray
    l2_sgd: float
    l2_psf: float
    l2_sgd_subset: float
    l2_psf_subset: float


@dataclass
class PSFCache:
    psf: np.ndarray | None = None
    sampled_at: int = -1
    valid: bool = False


def learning_rate(opt: OptimizerConfig, t: int, total: int) -> float:
    """Learning rate at 1-based iteration t of a run planned for `total`."""
    if opt.lr_schedule == "constant":
        return opt.eta0
    if opt.lr_schedule == "inverse_t":
        return opt.eta0 / t
    return 0.5 * opt.eta0 * (1.0 + math.cos(math.pi * (t - 1) / total))


def perturbation(g: np.ndarray, rho: float) -> np.ndarray:
    """rho * g / ||g||; the zero vector when the gradient is degenerate."""
    if rho <= 0.0:
        raise ConfigurationError("rho must be positive")
    norm = float(np.linalg.norm(g))
    if norm < DEGENERATE_GRAD_NORM:
        return np.zeros_like(g)
    return (rho / norm) * g


def _make_triple(g_sgd, g_sam, pv: ParamVector, subset_names) -> GradientTriple:
    psf = g_sam - g_sgd
    return GradientTriple(
        g_sgd=g_sgd,
        g_sam=g_sam,
        psf=psf,
        l2_sgd=float(np.linalg.norm(g_sgd)),
        l2_psf=float(np.linalg.norm(psf)),
        l2_sgd_subset=subset_norm(g_sgd, pv, subset_names),
        l2_psf_subset=subset_norm(psf, pv, subset_names),
    )


def _second_grad(spec, w, batch, rho, g_sgd):
    w_pert = w.with_values(w.values + perturbation(g_sgd, rho))
    _, g_sam = eval_grad(spec, w_pert, batch)
    return g_sam


def sam_gradient(spec: ObjectiveSpec, w: ParamVector, batch: Batch | None,
                 rho: float, subset_names=None) -> GradientTriple:
    """Both gradient evaluations of one SAM step (cost: exactly two)."""
    if subset_names is None:
        subset_names = default_subset(w)
    _, g_sgd = eval_grad(spec, w, batch)
    g_sam = _second_grad(spec, w, batch, rho, g_sgd)
    return _make_triple(g_sgd, g_sam, w, subset_names)


def _apply_step(values, direction, eta, momentum, m_state):
    m_new = momentum * m_state + direction
    return values - eta * m_new, m_new


def step_sgd(w: ParamVector, g_sgd, eta, momentum=0.0, momentum_state=None):
    """Momentum SGD update; with momentum 0 this is w - eta * g."""
    if momentum_state is None:
        momentum_state = np.zeros_like(w.values)
    values, m_new = _apply_step(w.values, g_sgd, eta, momentum, momentum_state)
    return w.with_values(values), m_new


def step_sampling(w: ParamVector, triple: GradientTriple, eta, momentum=0.0,
                  momentum_state=None, cache: PSFCache | None = None,
                  iteration: int | None = None):
    """Full SAM update from a sampled triple; caches the correction for reuse."""
    if momentum_state is None:
        momentum_state = np.zeros_like(w.values)
    values, m_new = _apply_step(w.values, triple.g_sam, eta, momentum, momentum_state)
    if cache is not None:
        cache.psf = triple.psf
        cache.sampled_at = iteration
        cache.valid = True
    return w.with_values(values), m_new


def reuse_coefficient(gamma: float, staleness: int) -> float:
    """gamma ** staleness, treated as exactly zero below the underflow cutoff."""
    coef = gamma**staleness
    return coef if coef >= REUSE_UNDERFLOW else 0.0


def step_reuse(w: ParamVector, g_sgd, cache: PSFCache, i: int, eta, gamma,
               momentum=0.0, momentum_state=None):
    """Single-gradient update reusing the cached correction, decayed by staleness."""
    if not cache.valid:
        raise ContractViolationError("reuse step before any correction was sampled")
    if i <= cache.sampled_at:
        raise ContractViolationError("reuse step must come after the cached sample")
    if momentum_state is None:
        momentum_state = np.zeros_like(w.values)
    coef = reuse_coefficient(gamma, i - cache.sampled_at)
    if coef == 0.0:
        direction = g_sgd
    else:
        direction = g_sgd + coef * cache.psf
    values, m_new = _apply_step(w.values, direction, eta, momentum, momentum_state)
    return w.with_values(values), m_new


# ---------------------------------------------------------------------------
# training loops

@dataclass
class RunResult:
    records: list[MetricsRecord]
    w_final: ParamVector
    momentum_final: np.ndarray
    params_history: list[np.ndarray] | None = None
    sampler_state: SamplerState | None = None


class _Run:
    """Shared loop scaffolding: batch stream, eval cadence, record emission."""

    def __init__(self, spec, dataset: Dataset | None, opt: OptimizerConfig,
                 iterations, seed, batch_size, w0, momentum0, start_iteration,
                 schedule_total, collect_params, subset_names):
        if iterations < 1:
            raise ConfigurationError("need at least one iteration")
        self.spec = spec
        self.opt = opt
        self.iterations = iterations
        self.start_iteration = start_iteration
        self.schedule_total = schedule_total or (start_iteration + iterations)
        self.w = w0 if w0 is not None else init_params(spec, seed)
        self.m = momentum0 if momentum0 is not None else np.zeros(self.w.size)
        self.subset_names = subset_names or default_subset(self.w)
        self.collect = collect_params
        self.history = [] if collect_params else None
        self.records = []
        self.evals = 0
        self.t0 = time.perf_counter()

        if dataset is not None:
            if batch_size is None:
                raise ConfigurationError("batch_size is required when a dataset is given")
            self.train, self.test = train_test_split(dataset)
            self.batch_size = batch_size
            self.bpe = batches_per_epoch(self.train.n, batch_size)
            self.batch_seed = seed
            self._epoch = -1
            self._batches = None
            self.test_batch = Batch(self.test.inputs, self.test.targets,
                                    np.arange(self.test.n))
        else:
            self.train = self.test = None
            self.bpe = 1

    def batch_at(self, t):
        if self.train is None:
            return None, 0
        epoch = (t - 1) // self.bpe
        if epoch != self._epoch:
            self._batches = make_batches(self.train, self.batch_size, self.batch_seed, epoch)
            self._epoch = epoch
        return self._batches[(t - 1) % self.bpe], epoch

    def eta_at(self, t):
        return learning_rate(self.opt, t, self.schedule_total)

    def grad(self, t, batch):
        try:
            loss, g = eval_grad(self.spec, self.w, batch)
        except NumericError as err:
            raise self._with_context(err, t) from err
        self.evals += 1
        return loss, g

    def _with_context(self, err, t):
        out = err if err.iteration is not None else NumericError(str(err), iteration=t)
        out.partial_records = self.records  # lets the harness flush a partial trace
        return out

    def second_grad(self, t, batch, g_sgd):
        try:
            g_sam = _second_grad(self.spec, self.w, batch, self.opt.rho, g_sgd)
        except NumericError as err:
            raise self._with_context(err, t) from err
        self.evals += 1
        return g_sam

    def guard(self, t, fn, *args, **kwargs):
        """Attach iteration context to numeric failures from a step."""
        try:
            return fn(*args, **kwargs)
        except NumericError as err:
            wrapped = self._with_context(err, t)
            if wrapped is err:
                raise
            raise wrapped from err

    def emit(self, t, epoch, loss, g_sgd, sampled, **extra):
        is_epoch_end = self.train is not None and t % self.bpe == 0
        eval_loss_v = eval_acc = None
        if is_epoch_end and self.spec.kind == "mlp_classifier":
            eval_loss_v = eval_loss(self.spec, self.w, self.test_batch)
            eval_acc = mlp_accuracy(self.spec, self.w, self.test.inputs, self.test.targets)
        self.records.append(MetricsRecord(
            iteration=t,
            epoch=epoch,
            train_loss=loss,
            l2_sgd=float(np.linalg.norm(g_sgd)),
            l2_sgd_subset=subset_norm(g_sgd, self.w, self.subset_names),
            sampled=sampled,
            cumulative_grad_evals=self.evals,
            wall_clock_seconds=time.perf_counter() - self.t0,
            eval_loss=eval_loss_v,
            eval_accuracy=eval_acc,
            **extra,
        ))
        if self.collect:
            self.history.append(self.w.values.copy())

    def over_budget(self):
        budget = self.opt.grad_eval_budget
        return budget is not None and self.evals >= budget

    def result(self, sampler_state=None):
        return RunResult(self.records, self.w, self.m, self.history, sampler_state)


def run_sgd(spec, dataset, opt: OptimizerConfig, iterations: int, seed: int,
            batch_size=None, w0=None, momentum0=None, start_iteration=0,
            schedule_total=None, collect_params=False):
    run = _Run(spec, dataset, opt, iterations, seed, batch_size, w0, momentum0,
               start_iteration, schedule_total, collect_params, None)
    for i in range(1, iterations + 1):
        t = start_iteration + i
        batch, epoch = run.batch_at(t)
        loss, g = run.grad(t, batch)
        run.w, run.m = run.guard(t, step_sgd, run.w, g, run.eta_at(t),
                                 opt.momentum, run.m)
        run.emit(t, epoch, loss, g, sampled=False)
        if run.over_budget():
            break
    return run.result()


def run_sam(spec, dataset, opt: OptimizerConfig, iterations: int, seed: int,
            batch_size=None, w0=None, momentum0=None, start_iteration=0,
            schedule_total=None, collect_params=False, subset_names=None):
    run = _Run(spec, dataset, opt, iterations, seed, batch_size, w0, momentum0,
               start_iteration, schedule_total, collect_params, subset_names)
    for i in range(1, iterations + 1):
        t = start_iteration + i
        batch, epoch = run.batch_at(t)
        loss, g_sgd = run.grad(t, batch)
        g_sam = run.second_grad(t, batch, g_sgd)
        triple = _make_triple(g_sgd, g_sam, run.w, run.subset_names)
        run.w, run.m = run.guard(t, step_sampling, run.w, triple, run.eta_at(t),
                                 opt.momentum, run.m)
        run.emit(t, epoch, loss, g_sgd, sampled=True,
                 l2_psf=triple.l2_psf, psf_stale=False,
                 l2_psf_subset=triple.l2_psf_subset,
                 dot_sgd_psf=float(g_sgd @ triple.psf))
        if run.over_budget():
            break
    return run.result()


def run_sam_k(spec, dataset, opt: OptimizerConfig, k: int, iterations: int,
              seed: int, batch_size=None, w0=None, momentum0=None,
              start_iteration=0, schedule_total=None, collect_params=False,
              subset_names=None):
    """SAM every k-th iteration (1-based), plain SGD otherwise; k=1 is SAM."""
    if k < 1:
        raise ConfigurationError("k must be at least 1")
    run = _Run(spec, dataset, opt, iterations, seed, batch_size, w0, momentum0,
               start_iteration, schedule_total, collect_params, subset_names)
    for i in range(1, iterations + 1):
        t = start_iteration + i
        batch, epoch = run.batch_at(t)
        loss, g_sgd = run.grad(t, batch)
        if i % k == 0:
            g_sam = run.second_grad(t, batch, g_sgd)
            triple = _make_triple(g_sgd, g_sam, run.w, run.subset_names)
            run.w, run.m = run.guard(t, step_sampling, run.w, triple, run.eta_at(t),
                                     opt.momentum, run.m)
            run.emit(t, epoch, loss, g_sgd, sampled=True,
                     l2_psf=triple.l2_psf, psf_stale=False,
                     l2_psf_subset=triple.l2_psf_subset,
                     dot_sgd_psf=float(g_sgd @ triple.psf))
        else:
            run.w, run.m = run.guard(t, step_sgd, run.w, g_sgd, run.eta_at(t),
                                     opt.momentum, run.m)
            run.emit(t, epoch, loss, g_sgd, sampled=False)
        if run.over_budget():
            break
    return run.result()


def run_vsam(spec, dataset, opt: OptimizerConfig, sampler_config: SamplerConfig,
             iterations: int, seed: int, batch_size=None, w0=None, momentum0=None,
             start_iteration=0, schedule_total=None, collect_params=False):
    """Adaptive-sampling SAM.

    Every iteration evaluates the plain gradient. Warmup iterations and
    sampled iterations additionally evaluate the perturbed gradient and take
    the full SAM step; other iterations reuse the cached correction with
    gamma decay. Once the warmup ends, the sampling rate is re-estimated at
    the end of every N-iteration window.
    """
    if sampler_config.i_start < 1 and sampler_config.force != "always":
        raise ConfigurationError("need at least one warmup iteration to fill the cache")
    run = _Run(spec, dataset, opt, iterations, seed, batch_size, w0, momentum0,
               start_iteration, schedule_total, collect_params,
               sampler_config.subset_segments)
    state = init_sampler(sampler_config, seed)
    cache = PSFCache()
    for i in range(1, iterations + 1):
        t = start_iteration + i
        batch, epoch = run.batch_at(t)
        eta = run.eta_at(t)
        loss, g_sgd = run.grad(t, batch)
        fire = should_sample(state, sampler_config, t)
        p_now, s_now = state.p, state.s
        if fire:
            g_sam = run.second_grad(t, batch, g_sgd)
            triple = _make_triple(g_sgd, g_sam, run.w, run.subset_names)
            record_sample(state, sampler_config, triple.l2_psf_subset,
                          triple.l2_sgd_subset)
            run.w, run.m = run.guard(t, step_sampling, run.w, triple, eta,
                                     opt.momentum, run.m, cache, t)
            row = dict(l2_psf=triple.l2_psf, psf_stale=False,
                       l2_psf_subset=triple.l2_psf_subset,
                       v=state.last_v, r=state.last_r,
                       v_fallback=state.last_v_fallback,
                       dot_sgd_psf=float(g_sgd @ triple.psf))
        else:
            run.w, run.m = run.guard(t, step_reuse, run.w, g_sgd, cache, t, eta,
                                     opt.gamma, opt.momentum, run.m)
            row = dict(l2_psf=float(np.linalg.norm(cache.psf)), psf_stale=True,
                       l2_psf_subset=subset_norm(cache.psf, run.w, run.subset_names),
                       dot_sgd_psf=float(g_sgd @ cache.psf))
        if t == sampler_config.i_start:
            begin_windowing(state)
        elif t > sampler_config.i_start and state.window_iter == sampler_config.n_window:
            update_rate(state, sampler_config)
        run.emit(t, epoch, loss, g_sgd, sampled=fire, p=p_now, s=s_now,
                 c_var=state.last_c_var, c_norm=state.last_c_norm, **row)
        if run.over_budget():
            break
    return run.result(sampler_state=state)
