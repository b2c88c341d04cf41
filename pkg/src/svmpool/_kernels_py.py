"""Pure-Python reference versions of the compiled kernels in ``_kernels.pyx``.

Both modules expose the same functions with the same semantics; which one is
used is decided in :mod:`svmpool._backend`.
"""

import numpy as np


def sqhinge_line_search(margins, rates, quad, lin, loss_weight):
    """Exact minimiser over ``t >= 0`` of a convex piecewise quadratic.

    The function is ``quad*t**2 + lin*t + loss_weight * sum(max(0, 1 - m - t*g)**2)``
    with ``m = margins`` and ``g = rates``. Its derivative is piecewise linear
    and non-decreasing, so the root is found with one sweep over the sorted
    breakpoints ``(1 - m) / g``.
    """
    m = np.asarray(margins, dtype=np.float64)
    g = np.asarray(rates, dtype=np.float64)
    slack = 1.0 - m
    active = (slack > 0) | ((slack == 0) & (g > 0))
    # derivative on the current piece is alpha*t + beta
    alpha = 2.0 * quad + 2.0 * loss_weight * np.sum(g[active] ** 2)
    beta = lin - 2.0 * loss_weight * np.sum(g[active] * slack[active])
    if beta >= 0:
        return 0.0

    moving = g != 0
    t_break = np.full(m.shape, np.inf)
    t_break[moving] = slack[moving] / g[moving]
    # leaving: active points with g > 0; entering: inactive points with g < 0
    events = np.flatnonzero(((active & (g > 0)) | (~active & (g < 0))) & (t_break > 0))
    if events.size:
        order = np.argsort(t_break[events], kind="stable")
        events = events[order]
        sign = np.where(active[events], -1.0, 1.0)
        d_alpha = sign * 2.0 * loss_weight * g[events] ** 2
        d_beta = -sign * 2.0 * loss_weight * g[events] * slack[events]
        alphas = alpha + np.concatenate(([0.0], np.cumsum(d_alpha)))
        betas = beta + np.concatenate(([0.0], np.cumsum(d_beta)))
        ends = np.concatenate((t_break[events], [np.inf]))
    else:
        alphas = np.array([alpha])
        betas = np.array([beta])
        ends = np.array([np.inf])

    for a, b, end in zip(alphas, betas, ends):
        if a > 0:
            root = -b / a
            if root <= end:
                return float(root)
        elif b >= 0:
            return 0.0
    return 0.0


def gd_sqhinge(X, y, reg_weight, loss_weight, fit_bias, step_scale, iterations, grad_tol):
    """Plain gradient descent on ``reg*|w|^2 + loss*sum(max(0, 1 - y(Xw + b))^2)``.

    The step at iteration ``t`` is ``step_scale * (1 + 0.9 * tau / (tau + t))``
    with ``tau = iterations / 100``, which decays from ``1.9*step_scale`` to
    ``step_scale``. ``step_scale`` should be ``1/L`` for the gradient Lipschitz
    constant ``L``. Stops early once the gradient norm is below ``grad_tol``.
    Returns ``(w, b, iterations_run)``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    w = np.zeros(p)
    b = 0.0
    tau = max(iterations / 100.0, 1.0)
    it = 0
    for it in range(1, iterations + 1):
        r = np.maximum(0.0, 1.0 - y * (X @ w + b))
        coef = -2.0 * loss_weight * y * r
        gw = 2.0 * reg_weight * w + X.T @ coef
        gb = coef.sum() if fit_bias else 0.0
        if np.sqrt(gw @ gw + gb * gb) <= grad_tol:
            break
        step = step_scale * (1.0 + 0.9 * tau / (tau + it - 1))
        w -= step * gw
        b -= step * gb
    return w, b, it
