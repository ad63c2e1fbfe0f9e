"""Checks of the squared-error bound between a PReLU block and its linearised form.

For a two-layer block ``Y_a = W2 prelu_a(W1 x + b1) + b2`` and its linear
counterpart ``Y_lin = W2 W1 x + W2 b1 + b2`` the claimed bound is::

    |Y_lin - Y_a|^2 <= C (1 - a)^2,   C = smax(W2 W1)^2 |x_d|^2 + |W2 b1|^2

with probability above ``1 - d``, where ``|x_d|`` is the norm exceeded by the
input with probability below ``d``. Norms are Euclidean throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InsufficientDataError, UnsupportedConfigurationError
from .nn import CollapsibleBlock

MIN_SAMPLES = 100


@dataclass
class BoundReport:
    delta: float
    x_delta_norm: float
    sigma_max: float
    C: float
    alpha: float
    violation_rate: float
    n_calibration: int
    n_evaluation: int

    def csv_row(self, block: str = "") -> dict:
        return {"block": block, "delta": self.delta, "alpha": self.alpha,
                "x_delta_norm": self.x_delta_norm, "sigma_max": self.sigma_max,
                "C": self.C, "bound": self.C * (1 - self.alpha) ** 2,
                "violation_rate": self.violation_rate,
                "n_calibration": self.n_calibration, "n_evaluation": self.n_evaluation}


def sigma_max(M, seed: int = 0, tol: float = 1e-8, max_iter: int = 1000) -> float:
    """Largest singular value by power iteration on the smaller Gram matrix.

    Stops once the Rayleigh quotient changes by less than ``tol`` relative.
    """
    M = np.asarray(getattr(M, "data", M), dtype=np.float64)
    if M.ndim != 2:
        raise DimensionError(f"sigma_max needs a matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DimensionError("sigma_max: matrix has non-finite entries")
    A = M.T @ M if M.shape[1] <= M.shape[0] else M @ M.T
    if not np.any(A):
        return 0.0
    v = np.random.default_rng(seed).standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # start vector landed in the null space; restart on a basis vector
            v = np.eye(A.shape[0])[np.argmax(np.diag(A))]
            continue
        new_lam = float(v @ w)
        v = w / norm
        if abs(new_lam - lam) <= tol * abs(new_lam):
            lam = new_lam
            break
        lam = new_lam
    return math.sqrt(max(lam, 0.0))


def estimate_x_delta(samples, delta: float) -> float:
    """Nearest-rank ``(1 - delta)`` quantile of the sample Euclidean norms."""
    if not 0.0 < delta < 1.0:
        raise DimensionError(f"delta must be in (0, 1), got {delta}")
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    norms = np.sort(np.linalg.norm(X.reshape(X.shape[0], -1), axis=1))
    if norms.size == 0:
        raise InsufficientDataError("estimate_x_delta: no samples")
    rank = max(1, math.ceil(round((1.0 - delta) * norms.size, 9)))
    return float(norms[rank - 1])


def bound_constant(W1, b1, W2, x_delta_norm: float, seed: int = 0) -> float:
    W1, b1, W2 = (np.asarray(getattr(a, "data", a), dtype=np.float64) for a in (W1, b1, W2))
    s = sigma_max(W2 @ W1, seed=seed)
    return s * s * x_delta_norm ** 2 + float(np.sum((W2 @ b1) ** 2))


def _block_arrays(block: CollapsibleBlock):
    if block.bn is not None:
        raise UnsupportedConfigurationError(
            "the error bound covers blocks without batch normalisation")
    return (block.fc1.W.data, block.fc1.b.data, block.fc2.W.data, block.fc2.b.data,
            block.act.value)


def block_outputs(W1, b1, W2, b2, alpha, X) -> tuple[np.ndarray, np.ndarray]:
    """``(Y_alpha, Y_linear)`` for row-stacked inputs ``X``."""
    z = X @ W1.T + b1
    act = np.maximum(z, 0.0) + alpha * np.minimum(z, 0.0)
    # both outputs share the pre-activation so they agree bit for bit at alpha == 1
    return act @ W2.T + b2, z @ W2.T + b2


def squared_errors(block: CollapsibleBlock, X) -> np.ndarray:
    W1, b1, W2, b2, alpha = _block_arrays(block)
    y_a, y_lin = block_outputs(W1, b1, W2, b2, alpha, np.asarray(X, dtype=np.float64))
    return np.sum((y_lin - y_a) ** 2, axis=1)


def verify_bound(block: CollapsibleBlock, samples, delta: float, seed: int = 0,
                 calibration_fraction: float = 0.5) -> BoundReport:
    """Estimate ``|x_d|`` on one half of ``samples`` and count bound violations on the other.

    The split is a seeded random permutation, so calibration and evaluation
    sets are disjoint.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < MIN_SAMPLES:
        raise InsufficientDataError(
            f"verify_bound needs at least {MIN_SAMPLES} samples, got {X.shape[0]}")
    W1, b1, W2, b2, alpha = _block_arrays(block)
    if X.shape[1] != W1.shape[1]:
        raise DimensionError(f"samples have width {X.shape[1]}, block expects {W1.shape[1]}")
    perm = np.random.default_rng(seed).permutation(X.shape[0])
    n_cal = int(round(X.shape[0] * calibration_fraction))
    cal, ev = X[perm[:n_cal]], X[perm[n_cal:]]
    x_d = estimate_x_delta(cal, delta)
    s = sigma_max(W2 @ W1, seed=seed)
    C = s * s * x_d ** 2 + float(np.sum((W2 @ b1) ** 2))
    y_a, y_lin = block_outputs(W1, b1, W2, b2, alpha, ev)
    err = np.sum((y_lin - y_a) ** 2, axis=1)
    rate = float(np.mean(err > C * (1.0 - alpha) ** 2))
    return BoundReport(delta, x_d, s, C, alpha, rate, cal.shape[0], ev.shape[0])


# -- pathwise forms -----------------------------------------------------------

def pathwise_terms(W1, b1, W2, b2, alpha, X) -> dict[str, np.ndarray]:
    """Per-sample left side and candidate right sides of the pathwise inequality.

    ``sum_of_squares``  (1-a)^2 (smax^2 |x|^2 + |W2 b1|^2)
    ``square_of_sum``   (1-a)^2 (smax |x| + |W2 b1|)^2
    ``operator``        (1-a)^2 smax(W2)^2 (smax(W1) |x| + |b1|)^2

    The first two use ``smax = smax(W2 W1)``. The first two rely on every
    hidden unit sharing one sign (a scalar indicator), which holds when the
    hidden width is 1; ``operator`` holds for any width.
    """
    X = np.asarray(X, dtype=np.float64)
    y_a, y_lin = block_outputs(W1, b1, W2, b2, alpha, X)
    err = np.sum((y_lin - y_a) ** 2, axis=1)
    s = sigma_max(W2 @ W1)
    xn = np.linalg.norm(X, axis=1)
    wb = float(np.linalg.norm(W2 @ b1))
    f = (1.0 - alpha) ** 2
    s2, s1 = sigma_max(W2), sigma_max(W1)
    return {
        "error": err,
        "sum_of_squares": f * (s * s * xn ** 2 + wb * wb),
        "square_of_sum": f * (s * xn + wb) ** 2,
        "operator": f * (s2 * (s1 * xn + float(np.linalg.norm(b1)))) ** 2,
    }
