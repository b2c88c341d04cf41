"""Binary soft-margin SVM with squared hinge loss and an unregularised bias.

The objective is ``|w|^2 + C * sum_k max(0, 1 - y_k (w.x_k + b))^2``.

:func:`train_svm` runs an active-set Newton method: on the current active set
the loss is an ordinary quadratic, whose minimiser is the Newton target, and
an exact line search along the direction to that target keeps every step a
descent step. When there are fewer points than dimensions the same iteration
runs in the span of the data (``w = X.T @ beta``) on the Gram matrix, which is
what keeps 4096-dimensional bags cheap.

:func:`brute_force_svm` is an independent oracle (plain gradient descent) used
by the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _backend
from .errors import DegenerateLabels, DimensionMismatch, SizeLimitExceeded


@dataclass(frozen=True)
class Hyperplane:
    w: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(w)) and np.isfinite(self.b)):
            raise ValueError("hyperplane coordinates must be finite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))

    @property
    def dim(self):
        return self.w.shape[0]

    def as_vector(self):
        return np.append(self.w, self.b)


@dataclass(frozen=True)
class LabeledSet:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if X.ndim != 2:
            raise DimensionMismatch("features must be a 2-D array")
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"{X.shape[0]} features but {y.shape[0]} labels")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be +1 or -1")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class SvmFit:
    hyperplane: Hyperplane
    objective: float
    iterations: int
    converged: bool
    grad_norm: float
    trace: tuple = field(default=(), repr=False)


def default_tol(c, n):
    return 1e-8 * (1.0 + c * n)


def predict(h: Hyperplane, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != h.dim:
        raise DimensionMismatch(f"input has dimension {x.shape[-1]}, hyperplane {h.dim}")
    return x @ h.w + h.b


def primal_objective(h: Hyperplane, data: LabeledSet, c):
    if data.dim != h.dim:
        raise DimensionMismatch(f"data has dimension {data.dim}, hyperplane {h.dim}")
    r = np.maximum(0.0, 1.0 - data.labels * (data.features @ h.w + h.b))
    return float(h.w @ h.w + c * (r @ r))


def _check_trainable(data):
    y = data.labels
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DegenerateLabels("training needs both +1 and -1 labels")


class SquaredHingeProblem:
    """One training set, solvable repeatedly for different C with warm starts.

    ``method`` is ``"primal"`` (Newton in ``p+1`` dimensions), ``"gram"``
    (Newton on the ``n x n`` Gram matrix) or ``"auto"``.
    """

    def __init__(self, X, y, method="auto"):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        n, p = self.X.shape
        if method == "auto":
            method = "gram" if n < p + 1 else "primal"
        if method not in ("primal", "gram"):
            raise ValueError(f"unknown method {method!r}")
        self.method = method
        if method == "gram":
            self.K = self.X @ self.X.T
        else:
            self.Xt = np.hstack([self.X, np.ones((n, 1))])

    # state is (coef, b): coef is w for primal, beta for gram
    def _outputs(self, coef, b):
        if self.method == "gram":
            return self.K @ coef + b
        return self.X @ coef + b

    def _sq_norm_w(self, coef):
        if self.method == "gram":
            return float(coef @ self.K @ coef)
        return float(coef @ coef)

    def _objective(self, coef, o, c):
        r = np.maximum(0.0, 1.0 - self.y * o)
        return self._sq_norm_w(coef) + c * float(r @ r)

    def _gradient_norm(self, coef, o, c, active):
        e = np.where(active, self.y - o, 0.0)
        gb = -2.0 * c * e.sum()
        if self.method == "gram":
            u = 2.0 * coef - 2.0 * c * e
            gw2 = max(float(u @ self.K @ u), 0.0)
        else:
            gw = 2.0 * coef - 2.0 * c * (self.X.T @ e)
            gw2 = float(gw @ gw)
        return float(np.sqrt(gw2 + gb * gb))

    def _target(self, coef, b, c, active):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            return np.zeros_like(coef), b
        if self.method == "gram":
            m = idx.size
            A = np.empty((m + 1, m + 1))
            A[:m, :m] = self.K[np.ix_(idx, idx)]
            A[np.arange(m), np.arange(m)] += 1.0 / c
            A[:m, m] = 1.0
            A[m, :m] = 1.0
            A[m, m] = 0.0
            rhs = np.append(self.y[idx], 0.0)
            sol = scipy.linalg.solve(A, rhs, assume_a="sym")
            target = np.zeros_like(coef)
            target[idx] = sol[:m]
            return target, float(sol[m])
        Xa = self.Xt[idx]
        p = self.X.shape[1]
        H = c * (Xa.T @ Xa)
        H[np.arange(p), np.arange(p)] += 1.0
        sol = scipy.linalg.solve(H, c * (Xa.T @ self.y[idx]), assume_a="pos")
        return sol[:p], float(sol[p])

    def solve(self, c, tol=None, max_iter=100, init=None):
        """Minimise the objective for regularisation ``c``.

        ``init`` is a previous ``(coef, b)`` state (see :attr:`state`). Returns
        an :class:`SvmFit`; the final state is kept on ``self.state``.
        """
        n = self.X.shape[0]
        if tol is None:
            tol = default_tol(c, n)
        if init is None:
            coef = np.zeros(n if self.method == "gram" else self.X.shape[1])
            b = 0.0
        else:
            coef, b = np.array(init[0], dtype=np.float64), float(init[1])
        y = self.y
        o = self._outputs(coef, b)
        obj = self._objective(coef, o, c)
        trace = [obj]
        converged = False
        it = 0
        gnorm = np.inf
        while True:
            margins = y * o
            active = margins < 1.0
            gnorm = self._gradient_norm(coef, o, c, active)
            if gnorm <= tol:
                converged = True
                break
            if it >= max_iter:
                break
            t_coef, t_b = self._target(coef, b, c, active)
            d_coef = t_coef - coef
            d_b = t_b - b
            d_o = self._outputs(d_coef, d_b)
            if self.method == "gram":
                Kd = self.K @ d_coef
                quad = float(d_coef @ Kd)
                lin = 2.0 * float(coef @ Kd)
            else:
                quad = float(d_coef @ d_coef)
                lin = 2.0 * float(coef @ d_coef)
            step = _backend.sqhinge_line_search(margins, y * d_o, quad, lin, c)
            it += 1
            if step <= 0.0:
                break
            new_coef = coef + step * d_coef
            new_b = b + step * d_b
            new_o = self._outputs(new_coef, new_b)
            new_obj = self._objective(new_coef, new_o, c)
            if new_obj > obj:
                # rounding noise at the optimum; keep the better iterate
                break
            coef, b, o, obj = new_coef, new_b, new_o, new_obj
            trace.append(obj)
        self.state = (coef, b)
        w = self.X.T @ coef if self.method == "gram" else coef
        return SvmFit(Hyperplane(w, b), obj, it, converged, gnorm, tuple(trace))


def train_svm(data: LabeledSet, c, tol=None, max_iter=100, method="auto") -> SvmFit:
    """Fit the squared-hinge SVM. Non-convergence is reported, not raised."""
    if not c > 0:
        raise ValueError("C must be positive")
    _check_trainable(data)
    return SquaredHingeProblem(data.features, data.labels, method).solve(c, tol, max_iter)


def lipschitz_bound(X, reg_weight, loss_weight, fit_bias):
    """Upper bound on the gradient Lipschitz constant of the squared-hinge objective."""
    Xt = np.hstack([X, np.ones((X.shape[0], 1))]) if fit_bias else X
    top = np.linalg.norm(Xt, 2) ** 2 if Xt.size else 0.0
    return 2.0 * reg_weight + 2.0 * loss_weight * top


def brute_force_svm(data: LabeledSet, c, iterations=1_000_000, grad_tol=None) -> SvmFit:
    """Oracle: plain gradient descent with a decaying step for a fixed budget.

    Only meant for small instances (``n * p <= 10**4``).
    """
    if data.n * data.dim > 10_000:
        raise SizeLimitExceeded(f"brute force limited to n*p <= 1e4, got {data.n * data.dim}")
    _check_trainable(data)
    if grad_tol is None:
        grad_tol = 1e-13 * (1.0 + c * data.n)
    L = lipschitz_bound(data.features, 1.0, c, True)
    w, b, it = _backend.gd_sqhinge(
        data.features, data.labels, 1.0, c, True, 1.0 / L, int(iterations), grad_tol
    )
    h = Hyperplane(w, b)
    r = np.maximum(0.0, 1.0 - data.labels * predict(h, data.features))
    gw = 2.0 * h.w - 2.0 * c * data.features.T @ (data.labels * r)
    gb = -2.0 * c * float(data.labels @ r)
    gnorm = float(np.sqrt(gw @ gw + gb * gb))
    return SvmFit(h, primal_objective(h, data, c), int(it), gnorm <= grad_tol, gnorm)
