"""The PAGE loop as a deterministic, seedable state machine.

One iteration moves x along the current estimate g, then flips a Bernoulli(p)
coin: with probability p the estimate is recomputed from a fresh size-b batch
(the full gradient when b = n), with probability 1-p it is corrected in place
with a size-b' batch of gradient differences:

    x_{t+1} = x_t - eta g_t
    g_{t+1} = mean_{i in I} nabla f_i(x_{t+1})                       w.p. p
    g_{t+1} = g_t + mean_{i in I'} (nabla f_i(x_{t+1}) - nabla f_i(x_t))
                                                                     w.p. 1-p

p = 1 with b = n is exactly gradient descent; p = 1 with b < n is minibatch
SGD. Batches are i.i.d. uniform with replacement. Three counter-based RNG
streams (branch coin, fresh batch, correction batch) are derived from one
seed so that changing b' never perturbs the branch sequence; a fourth stream
drives the output-index draw.

Two cost counters are kept. grad_evals charges the wall cost of a correction
step, 2 b' (gradients at both endpoints); grad_evals_paper charges b', the
convention used by the complexity budgets in the planning module.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DivergenceError, UsageError
from .problems import Problem

BRANCH_INIT = "init"
BRANCH_FULL = "full"
BRANCH_RECURSIVE = "recursive"

OUTPUT_UNIFORM = "uniform_iterate"
OUTPUT_LAST = "last_iterate"


@dataclass(frozen=True)
class PageConfig:
    """Run parameters. b is the fresh-batch size, b_prime the correction
    batch, p the switch probability."""

    eta: float
    b: int
    b_prime: int = 1
    p: float = 1.0
    seed: int = 0
    max_iters: int = 1000
    target_eps: float = 0.0
    output_mode: str = OUTPUT_UNIFORM
    early_stop: bool = True
    stop_window: int = 16
    diagnostics: bool = True

    def validate(self):
        if not self.eta > 0:
            raise ConfigError(f"stepsize must be positive, got {self.eta}")
        if self.b < 1 or self.b_prime < 1:
            raise ConfigError(f"batch sizes must be >= 1, got b={self.b}, b'={self.b_prime}")
        if self.b_prime > self.b:
            raise ConfigError(f"need b' <= b, got b'={self.b_prime} > b={self.b}")
        if not 0 < self.p <= 1:
            raise ConfigError(f"switch probability must be in (0, 1], got {self.p}")
        if self.max_iters < 0:
            raise ConfigError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.target_eps < 0:
            raise ConfigError(f"target_eps must be >= 0, got {self.target_eps}")
        if self.output_mode not in (OUTPUT_UNIFORM, OUTPUT_LAST):
            raise ConfigError(f"unknown output mode {self.output_mode!r}")
        if self.stop_window < 1:
            raise ConfigError(f"stop_window must be >= 1, got {self.stop_window}")


@dataclass
class PageState:
    """Iterate, estimate, counters, and the three private RNG streams."""

    x: np.ndarray
    g: np.ndarray
    t: int
    grad_evals: int
    grad_evals_paper: int
    rng_branch: np.random.Generator
    rng_batch: np.random.Generator
    rng_correction: np.random.Generator


@dataclass(frozen=True)
class StepRecord:
    t: int
    branch: str
    grad_norm: Optional[float]
    f_gap: Optional[float]
    grad_evals_after: int
    grad_evals_paper_after: int
    estimator_err_sq: Optional[float]


@dataclass
class Trace:
    """Per-iteration records, t = 0 (the init record) through the last
    iteration, with no gaps."""

    records: list
    config_echo: PageConfig
    problem_id: str
    output_index: int = 0

    @property
    def last_t(self) -> int:
        return self.records[-1].t


def rng_streams(seed: int) -> list:
    """Four Philox streams derived from one seed: branch coin, fresh batch,
    correction batch, output draw."""
    children = np.random.SeedSequence(seed).spawn(4)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def _diagnose(problem: Problem, x, g):
    grad = problem.grad(x)
    err = g - grad
    gap = problem.gap(x)
    return (
        float(np.linalg.norm(grad)),
        None if gap is None else float(gap),
        float(np.dot(err, err)),
    )


def _check_finite(vec, t):
    if not np.all(np.isfinite(vec)):
        raise DivergenceError(f"non-finite values at iteration {t}", t=t)


def init_state(problem: Problem, config: PageConfig) -> PageState:
    """Line-1 initialization: g0 from a size-b batch at x0 (the exact full
    gradient when b = n)."""
    config.validate()
    if problem.x0.shape != (problem.d,):
        raise ConfigError(
            f"start point shape {problem.x0.shape} does not match dimension {problem.d}"
        )
    if config.b > problem.n:
        raise ConfigError(f"batch size b={config.b} exceeds component count n={problem.n}")
    branch, batch, correction, _ = rng_streams(config.seed)
    x0 = problem.x0.astype(float, copy=True)
    if config.b == problem.n:
        g0 = problem.grad(x0)
    else:
        idx = batch.integers(problem.n, size=config.b)
        g0 = problem.mean_grad_at(idx, x0)
    _check_finite(g0, 0)
    return PageState(
        x=x0,
        g=np.asarray(g0, dtype=float),
        t=0,
        grad_evals=config.b,
        grad_evals_paper=config.b,
        rng_branch=branch,
        rng_batch=batch,
        rng_correction=correction,
    )


def init_record(problem: Problem, state: PageState, config: PageConfig) -> StepRecord:
    """The t = 0 trace row describing the start point and g0."""
    gn, gap, err = _diagnose(problem, state.x, state.g) if config.diagnostics else (None, None, None)
    return StepRecord(
        t=0,
        branch=BRANCH_INIT,
        grad_norm=gn,
        f_gap=gap,
        grad_evals_after=state.grad_evals,
        grad_evals_paper_after=state.grad_evals_paper,
        estimator_err_sq=err,
    )


def step(state: PageState, problem: Problem, config: PageConfig):
    """One iteration. Mutates state in place and returns (state, record)."""
    if state.t >= config.max_iters:
        raise UsageError(f"step called at t={state.t} with max_iters={config.max_iters}")
    t_new = state.t + 1
    x_new = state.x - config.eta * state.g
    _check_finite(x_new, t_new)

    if state.rng_branch.random() < config.p:
        branch = BRANCH_FULL
        if config.b == problem.n:
            g_new = problem.grad(x_new)
        else:
            idx = state.rng_batch.integers(problem.n, size=config.b)
            g_new = problem.mean_grad_at(idx, x_new)
        state.grad_evals += config.b
        state.grad_evals_paper += config.b
    else:
        branch = BRANCH_RECURSIVE
        idx = state.rng_correction.integers(problem.n, size=config.b_prime)
        diff = problem.grads_at(idx, x_new) - problem.grads_at(idx, state.x)
        g_new = state.g + diff.sum(axis=0) / config.b_prime
        state.grad_evals += 2 * config.b_prime
        state.grad_evals_paper += config.b_prime
    _check_finite(g_new, t_new)

    state.x = x_new
    state.g = np.asarray(g_new, dtype=float)
    state.t = t_new

    gn, gap, err = _diagnose(problem, state.x, state.g) if config.diagnostics else (None, None, None)
    record = StepRecord(
        t=t_new,
        branch=branch,
        grad_norm=gn,
        f_gap=gap,
        grad_evals_after=state.grad_evals,
        grad_evals_paper_after=state.grad_evals_paper,
        estimator_err_sq=err,
    )
    return state, record


def window_reached(records, window: int, eps: float) -> bool:
    """Early-stop predicate: the trailing window of gradient norms has mean
    at or below eps."""
    if eps <= 0 or len(records) < window:
        return False
    tail = [r.grad_norm for r in records[-window:]]
    if any(v is None for v in tail):
        return False
    return float(np.mean(tail)) <= eps


def run(problem: Problem, config: PageConfig) -> Trace:
    """Full loop: init, iterate to max_iters or until the trailing window of
    gradient norms drops below target_eps, then pick the output index."""
    state = init_state(problem, config)
    records = [init_record(problem, state, config)]
    trace = Trace(records=records, config_echo=config, problem_id=problem.name)
    try:
        for _ in range(config.max_iters):
            state, record = step(state, problem, config)
            records.append(record)
            if config.early_stop and window_reached(records, config.stop_window, config.target_eps):
                break
    except DivergenceError as exc:
        exc.partial_trace = trace
        raise
    out_rng = rng_streams(config.seed)[3]
    trace.output_index = select_output(trace, config.output_mode, out_rng)
    return trace


def select_output(trace: Trace, mode: str, rng: np.random.Generator) -> int:
    """Output index x_hat: uniform over {0, ..., T-1}, or the last iterate T."""
    if not trace.records:
        raise UsageError("cannot select an output from an empty trace")
    T = trace.last_t
    if mode == OUTPUT_LAST:
        return T
    if mode == OUTPUT_UNIFORM:
        return 0 if T == 0 else int(rng.integers(0, T))
    raise ConfigError(f"unknown output mode {mode!r}")


def replay_iterate(problem: Problem, config: PageConfig, index: int) -> np.ndarray:
    """Recompute x at a given iteration by deterministic replay."""
    if index < 0 or index > config.max_iters:
        raise UsageError(f"index {index} outside [0, {config.max_iters}]")
    quiet = PageConfig(**{**config.__dict__, "diagnostics": False, "early_stop": False})
    state = init_state(problem, quiet)
    for _ in range(index):
        state, _ = step(state, problem, quiet)
    return state.x.copy()


def gd_reference(problem: Problem, eta: float, steps: int) -> list:
    """Plain gradient-descent iterates [x0, x1, ..., x_steps], the comparison
    loop for the p = 1, b = n equivalence contract."""
    x = problem.x0.astype(float, copy=True)
    out = [x.copy()]
    for _ in range(steps):
        x = x - eta * problem.grad(x)
        out.append(x.copy())
    return out


def expected_step_cost(config: PageConfig, wall: bool = False) -> float:
    """Mean stochastic-gradient evaluations per iteration: p b + (1-p) b'
    under the paper convention, with 2 b' for the wall cost."""
    corr = 2 * config.b_prime if wall else config.b_prime
    return config.p * config.b + (1.0 - config.p) * corr
