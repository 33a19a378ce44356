"""Finite-sum problem oracles with known or estimated constants.

Every problem is an average f(x) = (1/n) sum_i f_i(x) exposing the value,
per-component gradients nabla f_i, and the full gradient. Generators record
whatever constants are exactly known for the construction:

  L      average smoothness: E_i ||nabla f_i(x) - nabla f_i(y)||^2 <= L^2 ||x-y||^2
  sigma  gradient variance:  E_i ||nabla f_i(x) - nabla f(x)||^2   <= sigma^2
  mu     PL constant:        ||nabla f(x)||^2 >= 2 mu (f(x) - f*)
  f_star optimal value, when it has a closed form

sigma is uniform in x only for the block instance; for the quadratic family
it is an empirical bound over a sampled ball around the start point (with a
1.1 safety factor) and is documented as such.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError


@dataclass
class Problem:
    """A finite-sum oracle. Immutable after construction by convention;
    all callables must be safe to invoke concurrently."""

    name: str
    n: int
    d: int
    value: Callable[[np.ndarray], float]
    comp_grad: Callable[[int, np.ndarray], np.ndarray]
    full_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    comp_grads: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    L: Optional[float] = None
    sigma: Optional[float] = None
    mu: Optional[float] = None
    f_star: Optional[float] = None
    x0: Optional[np.ndarray] = None
    x_star: Optional[np.ndarray] = None
    online: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ConfigError(f"need n >= 1 and d >= 1, got n={self.n}, d={self.d}")
        if self.x0 is None:
            self.x0 = np.zeros(self.d)
        else:
            self.x0 = np.asarray(self.x0, dtype=float)
        if self.x0.shape != (self.d,):
            raise ConfigError(
                f"start point has shape {self.x0.shape}, problem dimension is {self.d}"
            )

    def grad(self, x: np.ndarray) -> np.ndarray:
        """Full gradient nabla f(x), via the fast path when available."""
        if self.full_grad is not None:
            return self.full_grad(x)
        return self.mean_grad_at(np.arange(self.n), x)

    def grads_at(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Per-component gradients stacked as rows, in the order of idx."""
        if self.comp_grads is not None:
            return self.comp_grads(idx, x)
        return np.stack([self.comp_grad(int(i), x) for i in idx])

    def mean_grad_at(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Minibatch mean gradient, accumulated in the order of idx."""
        rows = self.grads_at(idx, x)
        return rows.sum(axis=0) / len(idx)

    def gap(self, x: np.ndarray) -> Optional[float]:
        """f(x) - f*, when the optimal value is known."""
        if self.f_star is None:
            return None
        return float(self.value(x)) - self.f_star


def make_quadratic(
    n: int,
    d: int,
    mu: float,
    L: float,
    seed: int,
    x0_radius: float = 2.0,
    b_noise: float = 0.25,
) -> Problem:
    """Strongly convex quadratic family f_i(x) = 0.5 x'A_i x - b_i'x.

    A_i are diagonal with entries in [mu, L]; the first coordinate is pinned
    to mu for every component (so the mean Hessian has smallest eigenvalue
    exactly mu, hence PL with mu) and the last coordinate is pinned to L
    (so the average-smoothness constant is exactly L, attained). b_i are
    Gaussian with scale b_noise, giving heterogeneous component gradients.
    x*, f* and an empirical sigma over a ball around x* are recorded.
    """
    if not 0 < mu <= L:
        raise ConfigError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    if d == 1 and mu != L:
        raise ConfigError("d=1 quadratic has a single eigenvalue; requires mu == L")
    rng = np.random.default_rng(seed)
    a = rng.uniform(mu, L, size=(n, d))
    a[:, 0] = mu
    a[:, -1] = L
    bvec = rng.normal(0.0, b_noise, size=(n, d))

    abar = a.mean(axis=0)
    bbar = bvec.mean(axis=0)
    x_star = bbar / abar
    f_star = float(-0.5 * np.dot(bbar, x_star))

    u = rng.standard_normal(d)
    x0 = x_star + x0_radius * u / max(np.linalg.norm(u), 1e-30)

    def value(x):
        return float(0.5 * np.dot(abar * x, x) - np.dot(bbar, x))

    def full_grad(x):
        return abar * x - bbar

    def comp_grad(i, x):
        return a[i] * x - bvec[i]

    def comp_grads(idx, x):
        return a[idx] * x - bvec[idx]

    # Empirical variance bound: exhaustive over components, maximized over a
    # sampled ball that covers the descent trajectory from x0, times 1.1.
    da = a - abar
    db = bvec - bbar
    radius = 2.0 * x0_radius + float(np.linalg.norm(x_star))
    probe = [x0, x_star, np.zeros(d)]
    for _ in range(61):
        v = rng.standard_normal(d)
        probe.append(x_star + rng.uniform(0.0, radius) * v / max(np.linalg.norm(v), 1e-30))
    var_max = max(float(((da * x - db) ** 2).sum(axis=1).mean()) for x in probe)
    sigma = 1.1 * np.sqrt(var_max)

    return Problem(
        name=f"quadratic(n={n},d={d},mu={mu},L={L},seed={seed})",
        n=n,
        d=d,
        value=value,
        comp_grad=comp_grad,
        full_grad=full_grad,
        comp_grads=comp_grads,
        L=float(L),
        sigma=float(sigma),
        mu=float(mu),
        f_star=f_star,
        x0=x0,
        x_star=x_star,
        meta={"sigma_radius": radius, "hessian_diag": abar},
    )


def make_pl_sine(x0: float = 3.0) -> Problem:
    """One-dimensional f(x) = x^2 + 3 sin^2 x: nonconvex, PL with mu = 1/32.

    f'(x) = 2x + 3 sin(2x), f''(x) = 2 + 6 cos(2x) in [-4, 8], so the
    smoothness constant is 8. Global minimum f* = 0 at x = 0.
    """

    def value(x):
        return float(x[0] ** 2 + 3.0 * np.sin(x[0]) ** 2)

    def full_grad(x):
        return np.array([2.0 * x[0] + 3.0 * np.sin(2.0 * x[0])])

    def comp_grad(i, x):
        return full_grad(x)

    def comp_grads(idx, x):
        return np.repeat(full_grad(x)[None, :], len(idx), axis=0)

    return Problem(
        name="pl_sine",
        n=1,
        d=1,
        value=value,
        comp_grad=comp_grad,
        full_grad=full_grad,
        comp_grads=comp_grads,
        L=8.0,
        sigma=0.0,
        mu=1.0 / 32.0,
        f_star=0.0,
        x0=np.array([float(x0)]),
        x_star=np.array([0.0]),
    )


def make_hard_instance(n: int, d: int, L: float, delta0: float) -> Problem:
    """Block linear-plus-quadratic instance with closed-form optimum.

    f_i(x) = c <v_i, x> + (L/2) ||x||^2 where v_i is the indicator of the
    i-th block of d/n coordinates, and c = n sqrt(2 L delta0 / d) so that
    f(x0) - f* = delta0 from x0 = 0. Component gradients are c v_i + L x,
    so E_i ||nabla f_i(x) - nabla f_i(y)||^2 = L^2 ||x-y||^2 with equality,
    and the component variance c^2 (d/n)(1 - 1/n) is independent of x.
    The optimum is x* = -(c/(L n)) 1 with f* = -delta0.
    """
    if d % n != 0:
        raise ConfigError(f"dimension {d} not divisible by component count {n}")
    if L <= 0 or delta0 <= 0:
        raise ConfigError(f"need L > 0 and delta0 > 0, got L={L}, delta0={delta0}")
    bs = d // n
    c = n * np.sqrt(2.0 * L * delta0 / d)
    x_star = np.full(d, -c / (L * n))
    f_star = float(-(c * c * d) / (2.0 * L * n * n))
    sigma = c * np.sqrt((d / n) * (1.0 - 1.0 / n)) if n > 1 else 0.0

    def value(x):
        return float((c / n) * x.sum() + 0.5 * L * np.dot(x, x))

    def full_grad(x):
        return (c / n) + L * x

    def comp_grad(i, x):
        g = L * x.copy()
        g[i * bs : (i + 1) * bs] += c
        return g

    def comp_grads(idx, x):
        k = len(idx)
        rows = np.repeat((L * x)[None, :], k, axis=0)
        cols = np.asarray(idx)[:, None] * bs + np.arange(bs)[None, :]
        rows[np.arange(k)[:, None], cols] += c
        return rows

    return Problem(
        name=f"hard(n={n},d={d},L={L},delta0={delta0})",
        n=n,
        d=d,
        value=value,
        comp_grad=comp_grad,
        full_grad=full_grad,
        comp_grads=comp_grads,
        L=float(L),
        sigma=float(sigma),
        mu=float(L),
        f_star=f_star,
        x0=np.zeros(d),
        x_star=x_star,
        meta={"c": float(c), "block_size": bs},
    )


def make_nonconvex_logreg(
    features: np.ndarray, labels: np.ndarray, alpha: float = 0.1
) -> Problem:
    """Logistic loss with a nonconvex regularizer alpha sum_j x_j^2/(1+x_j^2).

    Labels must be in {-1, +1}. No closed-form constants: L is left for the
    estimator, f* is unknown.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DataError(f"inconsistent shapes: features {X.shape}, labels {y.shape}")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DataError("labels must be -1 or +1")
    if alpha < 0:
        raise DataError(f"alpha must be >= 0, got {alpha}")
    n, d = X.shape

    def reg_value(x):
        return alpha * float((x * x / (1.0 + x * x)).sum())

    def reg_grad(x):
        return alpha * 2.0 * x / (1.0 + x * x) ** 2

    def value(x):
        margins = y * (X @ x)
        return float(np.logaddexp(0.0, -margins).mean()) + reg_value(x)

    def full_grad(x):
        margins = y * (X @ x)
        w = -y * expit(-margins)
        return (X.T @ w) / n + reg_grad(x)

    def comp_grads(idx, x):
        Xi = X[idx]
        yi = y[idx]
        w = -yi * expit(-yi * (Xi @ x))
        return w[:, None] * Xi + reg_grad(x)[None, :]

    def comp_grad(i, x):
        return comp_grads(np.array([i]), x)[0]

    return Problem(
        name=f"logreg(n={n},d={d},alpha={alpha})",
        n=n,
        d=d,
        value=value,
        comp_grad=comp_grad,
        full_grad=full_grad,
        comp_grads=comp_grads,
        x0=np.zeros(d),
    )


def stream_view(problem: Problem) -> Problem:
    """Online view of a finite-sum problem.

    The oracles are passed through unchanged; the flag tells planners to use
    the variance-based batch rule instead of assuming full gradients.
    """
    return replace(problem, online=True, name=problem.name + "+stream")


def load_dense_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Load a dense CSV dataset: one sample per row, last column is the
    label in {-1, +1}, remaining columns are features. No header row."""
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.shape[1] < 2:
        raise DataError(f"{path}: need at least one feature column plus a label")
    X, y = data[:, :-1], data[:, -1]
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DataError(f"{path}: labels must be -1 or +1")
    return X, y


def load_libsvm(path, d: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Load the sparse text format 'label idx:val idx:val ...'.

    Indices are 1-based; unlisted entries are zero. The dimension is the
    largest index seen unless d is given. Returns dense arrays.
    """
    rows = []
    labels = []
    max_idx = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                lab = float(parts[0])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad label {parts[0]!r}") from exc
            if lab not in (-1.0, 1.0):
                raise DataError(f"{path}:{lineno}: labels must be -1 or +1")
            entries = []
            for tok in parts[1:]:
                try:
                    idx_s, val_s = tok.split(":", 1)
                    idx, val = int(idx_s), float(val_s)
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: bad entry {tok!r}") from exc
                if idx < 1:
                    raise DataError(f"{path}:{lineno}: indices are 1-based, got {idx}")
                entries.append((idx, val))
                max_idx = max(max_idx, idx)
            labels.append(lab)
            rows.append(entries)
    if not rows:
        raise DataError(f"{path}: empty dataset")
    dim = d if d is not None else max_idx
    if max_idx > dim:
        raise DataError(f"{path}: index {max_idx} exceeds declared dimension {dim}")
    X = np.zeros((len(rows), dim))
    for r, entries in enumerate(rows):
        for idx, val in entries:
            X[r, idx - 1] = val
    return X, np.array(labels)
