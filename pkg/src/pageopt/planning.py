"""Parameter planning and gradient-complexity budgets.

Each planner turns problem constants (L, sigma, mu, delta0 = f(x0) - f*) and
a target accuracy into a full parameter bundle (eta, b, b', p, T) plus the
predicted #grad under the paper convention (b' charged per correction step).

Regimes and their sources:

  gd         p = 1, b = n, eta <= 1/L, T = 2 delta0 L / eps^2
  finite     b = n, b' <= sqrt(b), p = b'/(b+b'),
             eta <= 1/(L (1 + sqrt(b)/b')), T = (2 delta0 L / eps^2)(1 + sqrt(b)/b'),
             #grad <= n + 8 delta0 L sqrt(n) / eps^2
  sgd        p = 1, b = min(ceil(2 sigma^2/eps^2), n), eta <= 1/L,
             T = 4 delta0 L / eps^2 + 1
  online     b = min(ceil(2 sigma^2/eps^2), n), otherwise as finite with the
             4x iteration constant and a +(b+b')/b' term,
             #grad <= 3b + 16 delta0 L sqrt(b) / eps^2
  finite_pl  eta <= min(1/(L(1+sqrt(b)/b')), b'/(2 mu (b+b'))),
             T = ((1+sqrt(b)/b') kappa + 2(b+b')/b') log(delta0/eps)
  online_pl  b = min(ceil(2 sigma^2/(mu eps)), n), log(2 delta0/eps) constant

T is an iteration count, so we ceil it; grad_budget keeps the pre-ceiling T
(bound comparisons should allow +1 iteration of slack). Targets are
E||nabla f(x_hat)|| <= eps for the first four regimes (uniform output) and
E[f(x_T) - f*] <= eps for the PL regimes (last iterate).
"""

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, EstimationError, UnsupportedProblemError
from .estimator import OUTPUT_LAST, OUTPUT_UNIFORM
from .problems import Problem

REGIMES = ("gd", "finite", "sgd", "online", "finite_pl", "online_pl")


@dataclass(frozen=True)
class Plan:
    regime: str
    eta: float
    b: int
    b_prime: int
    p: float
    T: int
    grad_budget: float
    kappa: Optional[float] = None
    output_mode: str = OUTPUT_UNIFORM
    warning: Optional[str] = None

    def as_dict(self) -> dict:
        return asdict(self)


def switch_term(p: float, b_prime: int) -> float:
    """sqrt((1-p)/(p b')), the factor multiplying L in the stepsize bound.
    With p = b'/(b+b') this equals sqrt(b)/b' exactly."""
    if not 0 < p <= 1:
        raise ConfigError(f"p must be in (0, 1], got {p}")
    if p == 1.0:
        return 0.0
    return math.sqrt((1.0 - p) / (p * b_prime))


def expected_iter_cost(b: int, b_prime: int, p: float) -> float:
    """Expected stochastic gradients per iteration, paper convention."""
    return p * b + (1.0 - p) * b_prime


def _default_b_prime(b: int, b_prime_opt: Optional[int]) -> int:
    root = max(1, math.isqrt(b))
    if b_prime_opt is None:
        return root
    if b_prime_opt < 1:
        raise ConfigError(f"b' must be >= 1, got {b_prime_opt}")
    if b_prime_opt * b_prime_opt > b:
        raise ConfigError(f"optimal regimes require b' <= sqrt(b), got b'={b_prime_opt}, b={b}")
    return b_prime_opt


def _check_positive(**kwargs):
    for name, val in kwargs.items():
        if val is None or not val > 0:
            raise ConfigError(f"{name} must be positive, got {val}")


def _ceil_T(T_real: float) -> int:
    return int(math.ceil(T_real - 1e-12)) if T_real > 0 else 0


def plan_gd(n: int, L: float, delta0: float, eps: float) -> Plan:
    """Full-batch deterministic plan (p = 1, b = n)."""
    _check_positive(n=n, L=L, delta0=delta0, eps=eps)
    T_real = 2.0 * delta0 * L / eps**2
    return Plan(
        regime="gd",
        eta=1.0 / L,
        b=int(n),
        b_prime=1,
        p=1.0,
        T=_ceil_T(T_real),
        grad_budget=n + T_real * n,
    )


def plan_finite(
    n: int, L: float, delta0: float, eps: float, b_prime_opt: Optional[int] = None
) -> Plan:
    """Optimal finite-sum plan: b = n, p = b'/(b+b')."""
    _check_positive(n=n, L=L, delta0=delta0, eps=eps)
    b = int(n)
    bp = _default_b_prime(b, b_prime_opt)
    p = bp / (b + bp)
    ratio = math.sqrt(b) / bp
    eta = 1.0 / (L * (1.0 + ratio))
    T_real = (2.0 * delta0 * L / eps**2) * (1.0 + ratio)
    return Plan(
        regime="finite",
        eta=eta,
        b=b,
        b_prime=bp,
        p=p,
        T=_ceil_T(T_real),
        grad_budget=b + T_real * expected_iter_cost(b, bp, p),
    )


def _online_batch(sigma: Optional[float], n: Optional[int], scale: float) -> int:
    """min(ceil(2 sigma^2 / scale), n); n may be None for a true stream."""
    if sigma is None or sigma <= 0:
        if n is None:
            raise ConfigError("online plans need sigma > 0 or a finite component count")
        return int(n)
    b_rule = math.ceil(2.0 * sigma * sigma / scale)
    return int(b_rule) if n is None else int(min(b_rule, n))


def plan_sgd(
    sigma: float, L: float, delta0: float, eps: float, n: Optional[int] = None
) -> Plan:
    """Minibatch SGD plan (p = 1) with the variance-matched batch size."""
    _check_positive(L=L, delta0=delta0, eps=eps)
    b = _online_batch(sigma, n, eps**2)
    T_real = 4.0 * delta0 * L / eps**2 + 1.0
    return Plan(
        regime="sgd",
        eta=1.0 / L,
        b=b,
        b_prime=1,
        p=1.0,
        T=_ceil_T(T_real),
        grad_budget=b + T_real * b,
    )


def plan_online(
    sigma: float,
    n: Optional[int],
    L: float,
    delta0: float,
    eps: float,
    b_prime_opt: Optional[int] = None,
) -> Plan:
    """Optimal online plan: b from the variance rule, p = b'/(b+b')."""
    _check_positive(L=L, delta0=delta0, eps=eps)
    b = _online_batch(sigma, n, eps**2)
    bp = _default_b_prime(b, b_prime_opt)
    p = bp / (b + bp)
    ratio = math.sqrt(b) / bp
    eta = 1.0 / (L * (1.0 + ratio))
    T_real = (4.0 * delta0 * L / eps**2) * (1.0 + ratio) + (b + bp) / bp
    return Plan(
        regime="online",
        eta=eta,
        b=b,
        b_prime=bp,
        p=p,
        T=_ceil_T(T_real),
        grad_budget=b + T_real * expected_iter_cost(b, bp, p),
    )


def _pl_plan(
    regime: str,
    b: int,
    L: float,
    mu: float,
    delta0: float,
    eps: float,
    b_prime_opt: Optional[int],
    log_scale: float,
) -> Plan:
    bp = _default_b_prime(b, b_prime_opt)
    p = bp / (b + bp)
    ratio = math.sqrt(b) / bp
    kappa = L / mu
    eta = min(1.0 / (L * (1.0 + ratio)), bp / (2.0 * mu * (b + bp)))
    log_arg = log_scale * delta0 / eps
    warning = None
    if log_arg <= 1.0:
        T_real = 0.0
        warning = "target not below the initial gap; bound met at t=0"
    else:
        T_real = ((1.0 + ratio) * kappa + 2.0 * (b + bp) / bp) * math.log(log_arg)
    return Plan(
        regime=regime,
        eta=eta,
        b=b,
        b_prime=bp,
        p=p,
        T=_ceil_T(T_real),
        grad_budget=b + T_real * expected_iter_cost(b, bp, p),
        kappa=kappa,
        output_mode=OUTPUT_LAST,
        warning=warning,
    )


def plan_finite_pl(
    n: int,
    L: float,
    mu: float,
    delta0: float,
    eps: float,
    b_prime_opt: Optional[int] = None,
) -> Plan:
    """Linear-rate finite-sum plan under the PL condition."""
    _check_positive(n=n, L=L, mu=mu, delta0=delta0, eps=eps)
    if mu > L:
        raise ConfigError(f"need mu <= L, got mu={mu} > L={L}")
    return _pl_plan("finite_pl", int(n), L, mu, delta0, eps, b_prime_opt, log_scale=1.0)


def plan_online_pl(
    sigma: float,
    n: Optional[int],
    L: float,
    mu: float,
    delta0: float,
    eps: float,
    b_prime_opt: Optional[int] = None,
) -> Plan:
    """Linear-rate online plan: b = min(ceil(2 sigma^2/(mu eps)), n)."""
    _check_positive(L=L, mu=mu, delta0=delta0, eps=eps)
    if mu > L:
        raise ConfigError(f"need mu <= L, got mu={mu} > L={L}")
    b = _online_batch(sigma, n, mu * eps)
    return _pl_plan("online_pl", b, L, mu, delta0, eps, b_prime_opt, log_scale=2.0)


def iterations_general_finite(L: float, delta0: float, eps: float, p: float, b_prime: int) -> float:
    """Iteration bound of the general finite-sum theorem at arbitrary p:
    (2 delta0 L / eps^2)(1 + sqrt((1-p)/(p b')))."""
    return (2.0 * delta0 * L / eps**2) * (1.0 + switch_term(p, b_prime))


def budget_general_finite(
    n: int, L: float, delta0: float, eps: float, p: float, b_prime: int
) -> float:
    """#grad bound of the general finite-sum theorem at arbitrary p."""
    T = iterations_general_finite(L, delta0, eps, p, b_prime)
    return n + T * expected_iter_cost(n, b_prime, p)


def stepsize_slack(plan: Plan, L: float, mu: Optional[float] = None) -> float:
    """How far a plan sits from its stepsize precondition; <= 0 means valid.

    Checks eta L (1 + sqrt((1-p)/(p b'))) <= 1 and, when mu is given,
    eta <= p/(2 mu)."""
    slack = plan.eta * L * (1.0 + switch_term(plan.p, plan.b_prime)) - 1.0
    if mu is not None:
        slack = max(slack, plan.eta - plan.p / (2.0 * mu))
    return slack


def _component_subset(n: int, cap: int, rng: np.random.Generator) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    return rng.choice(n, size=cap, replace=False)


def estimate_L(
    problem: Problem,
    num_pairs: int = 32,
    radius: float = 1.0,
    seed: int = 0,
    safety: float = 1.1,
    component_cap: int = 10_000,
) -> float:
    """Empirical average-smoothness constant.

    Maximizes sqrt(E_i ||nabla f_i(x) - nabla f_i(y)||^2) / ||x - y|| over
    sampled pairs in a ball around x0, exhaustively over components up to
    component_cap, then applies the safety factor.
    """
    if num_pairs < 1:
        raise ConfigError(f"num_pairs must be >= 1, got {num_pairs}")
    rng = np.random.default_rng(seed)
    idx = _component_subset(problem.n, component_cap, rng)
    worst = 0.0
    found = 0
    for _ in range(num_pairs):
        for _attempt in range(100):
            x = problem.x0 + radius * rng.standard_normal(problem.d)
            y = problem.x0 + radius * rng.standard_normal(problem.d)
            dist = np.linalg.norm(x - y)
            if dist > 1e-12 * (1.0 + np.linalg.norm(x)):
                break
        else:
            continue
        diff = problem.grads_at(idx, x) - problem.grads_at(idx, y)
        msq = float((diff * diff).sum(axis=1).mean())
        worst = max(worst, msq / (dist * dist))
        found += 1
    if found == 0:
        raise EstimationError("all sampled pairs were degenerate")
    return safety * math.sqrt(worst)


def estimate_sigma(
    problem: Problem,
    num_points: int = 32,
    radius: float = 1.0,
    seed: int = 0,
    safety: float = 1.1,
    component_cap: int = 10_000,
) -> float:
    """Empirical gradient-variance bound over a sampled ball around x0."""
    if num_points < 1:
        raise ConfigError(f"num_points must be >= 1, got {num_points}")
    if problem.n == 1:
        return 0.0
    rng = np.random.default_rng(seed)
    idx = _component_subset(problem.n, component_cap, rng)
    worst = 0.0
    for k in range(num_points):
        x = problem.x0 if k == 0 else problem.x0 + radius * rng.standard_normal(problem.d)
        rows = problem.grads_at(idx, x)
        dev = rows - rows.mean(axis=0)
        worst = max(worst, float((dev * dev).sum(axis=1).mean()))
    return safety * math.sqrt(worst)


def estimate_mu_pl(problem: Problem, grid) -> float:
    """Empirical PL constant: inf over grid of ||nabla f||^2 / (2 (f - f*)),
    skipping points with f - f* < 1e-12 where the ratio is 0/0.

    grid is either an (k, d) array of points or a (lo, hi, num) tuple for
    one-dimensional problems.
    """
    if problem.f_star is None:
        raise UnsupportedProblemError("PL estimation needs a known optimal value")
    if isinstance(grid, tuple):
        lo, hi, num = grid
        if problem.d != 1:
            raise ConfigError("(lo, hi, num) grids are for one-dimensional problems")
        points = np.linspace(lo, hi, int(num))[:, None]
    else:
        points = np.atleast_2d(np.asarray(grid, dtype=float))
    best = math.inf
    admissible = 0
    for x in points:
        gap = problem.value(x) - problem.f_star
        if gap < 1e-12:
            continue
        g = problem.grad(x)
        best = min(best, float(np.dot(g, g)) / (2.0 * gap))
        admissible += 1
    if admissible == 0:
        raise EstimationError("no grid point clears the f - f* exclusion threshold")
    return best
