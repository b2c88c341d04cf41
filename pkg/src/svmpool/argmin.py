"""Bias-free SVM pooling as a differentiable layer.

The layer maps a set of features ``z_j`` with frozen labels ``theta_j`` to

    w* = argmin_w  1/2 |w|^2 + lam/2 * sum_j max(0, 1 - theta_j w.z_j)^2

and its Jacobian with respect to every ``z_j`` follows from the implicit
function theorem: with ``H = I + lam * sum_{active} z_j z_j^T`` and the cross
derivative ``C_j = lam * (z_j w^T + (w.z_j - theta_j) I)`` of the gradient,
``dw*/dz_j = -H^{-1} C_j`` for active features and zero otherwise. Active
means ``theta_j w.z_j < 1``, i.e. the hinge is switched on. The smooth part
of the loss is used throughout, so the layer is differentiable everywhere
except on the kinks ``theta_j w.z_j = 1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _backend
from .errors import AtKink, DegenerateLabels, DimensionMismatch, NotConverged, SizeLimitExceeded
from .features import Dataset
from .svm import lipschitz_bound

log = logging.getLogger(__name__)

KINK_MARGIN = 1e-7


@dataclass(frozen=True)
class SvmpLayerInput:
    z: np.ndarray  # (n, p)
    theta: np.ndarray  # (n,) of +-1, held fixed
    lam: float

    def __post_init__(self):
        z = np.atleast_2d(np.asarray(self.z, dtype=np.float64))
        theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if z.shape[0] != theta.shape[0]:
            raise DimensionMismatch(f"{z.shape[0]} features but {theta.shape[0]} labels")
        if not np.all(np.isin(theta, (-1.0, 1.0))):
            raise ValueError("theta must be +1 or -1")
        if not self.lam >= 0:
            raise ValueError("lam must be >= 0")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def n(self):
        return self.z.shape[0]

    @property
    def dim(self):
        return self.z.shape[1]

    def margins(self, w):
        return self.theta * (self.z @ w)

    def objective(self, w):
        r = np.maximum(0.0, 1.0 - self.margins(w))
        return 0.5 * float(w @ w) + 0.5 * self.lam * float(r @ r)

    def gradient(self, w):
        r = np.maximum(0.0, 1.0 - self.margins(w))
        return w - self.lam * (self.z.T @ (self.theta * r))

    def default_tol(self):
        return 1e-10 * (1.0 + self.lam * self.n)


@dataclass(frozen=True)
class ArgminJacobian:
    blocks: np.ndarray  # (n, p, p); blocks[j][:, k] = dw*/dz_j[k]
    active: np.ndarray  # (n,) bool

    def as_matrix(self):
        """``(p, n p)`` matrix, columns ordered feature-major like ``z.ravel()``."""
        n, p, _ = self.blocks.shape
        return self.blocks.transpose(1, 0, 2).reshape(p, n * p)

    def relative_error(self, other: "ArgminJacobian"):
        """Largest entry difference, normalised by ``|self| + 1e-8`` (Frobenius)."""
        diff = np.max(np.abs(self.blocks - other.blocks)) if self.blocks.size else 0.0
        return float(diff / (np.linalg.norm(self.blocks) + 1e-8))


def _check_labels(inp):
    if not (np.any(inp.theta > 0) and np.any(inp.theta < 0)):
        raise DegenerateLabels("the layer needs features of both labels")


def solve_layer(inp: SvmpLayerInput, tol=None, max_iter=100, init=None):
    """Newton's method with exact line search on the active-set quadratic."""
    _check_labels(inp)
    if tol is None:
        tol = inp.default_tol()
    p = inp.dim
    w = np.zeros(p) if init is None else np.array(init, dtype=np.float64)
    if inp.lam == 0.0:
        return np.zeros(p)
    Z, theta, lam = inp.z, inp.theta, inp.lam
    obj = inp.objective(w)
    for _ in range(max_iter):
        if np.linalg.norm(inp.gradient(w)) <= tol:
            break
        margins = inp.margins(w)
        active = margins < 1.0
        Za = Z[active]
        H = lam * (Za.T @ Za)
        H[np.arange(p), np.arange(p)] += 1.0
        target = scipy.linalg.solve(H, lam * (Za.T @ theta[active]), assume_a="pos")
        d = target - w
        step = _backend.sqhinge_line_search(margins, theta * (Z @ d), 0.5 * float(d @ d), float(w @ d), 0.5 * lam)
        if step <= 0.0:
            break
        new_w = w + step * d
        new_obj = inp.objective(new_w)
        if new_obj > obj:
            break
        w, obj = new_w, new_obj
    return w


def brute_force_layer(inp: SvmpLayerInput, iterations=1_000_000, grad_tol=None):
    """Oracle for :func:`solve_layer`: plain gradient descent, no shared code path."""
    _check_labels(inp)
    if grad_tol is None:
        grad_tol = 1e-13 * (1.0 + inp.lam * inp.n)
    L = lipschitz_bound(inp.z, 0.5, 0.5 * inp.lam, False)
    w, _, _ = _backend.gd_sqhinge(inp.z, inp.theta, 0.5, 0.5 * inp.lam, False, 1.0 / L, int(iterations), grad_tol)
    return w


def grad_wrt_input(w, inp: SvmpLayerInput, mode="verify", tol=None) -> ArgminJacobian:
    """Closed-form Jacobian of the layer solution with respect to each feature.

    In ``"verify"`` mode a feature within ``KINK_MARGIN`` of its hinge
    boundary raises :class:`AtKink`. In ``"train"`` mode such features are
    treated as inactive (the sub-gradient convention).
    """
    if mode not in ("verify", "train"):
        raise ValueError(f"unknown mode {mode!r}")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (inp.dim,):
        raise DimensionMismatch(f"w has shape {w.shape}, expected ({inp.dim},)")
    if tol is None:
        tol = 1e3 * inp.default_tol()
    gnorm = float(np.linalg.norm(inp.gradient(w)))
    if gnorm > tol:
        raise NotConverged(f"gradient norm {gnorm:.3g} exceeds {tol:.3g}; w is not the layer solution")
    margins = inp.margins(w)
    near = np.abs(1.0 - margins) <= KINK_MARGIN
    if mode == "verify" and np.any(near):
        raise AtKink(f"{int(near.sum())} feature(s) sit on the hinge boundary")
    active = (margins < 1.0) & ~near
    n, p = inp.n, inp.dim
    blocks = np.zeros((n, p, p))
    idx = np.flatnonzero(active)
    if idx.size == 0 or inp.lam == 0.0:
        return ArgminJacobian(blocks, active)
    lam = inp.lam
    Za = inp.z[idx]
    H = lam * (Za.T @ Za)
    H[np.arange(p), np.arange(p)] += 1.0
    factor = scipy.linalg.cho_factor(H)
    eye = np.eye(p)
    for j in idx:
        zj, tj = inp.z[j], inp.theta[j]
        C = lam * (np.outer(zj, w) + (tj * tj * (w @ zj) - tj) * eye)
        blocks[j] = -scipy.linalg.cho_solve(factor, C)
    return ArgminJacobian(blocks, active)


def finite_diff_jacobian(inp: SvmpLayerInput, h=1e-5) -> ArgminJacobian:
    """Central differences of :func:`solve_layer`, one coordinate at a time."""
    n, p = inp.n, inp.dim
    if n * p > 500:
        raise SizeLimitExceeded(f"finite differences limited to n*p <= 500, got {n * p}")
    tight = 1e-12
    w0 = solve_layer(inp, tol=tight)
    blocks = np.zeros((n, p, p))
    for j in range(n):
        for k in range(p):
            zp = inp.z.copy()
            zm = inp.z.copy()
            zp[j, k] += h
            zm[j, k] -= h
            wp = solve_layer(SvmpLayerInput(zp, inp.theta, inp.lam), tol=tight, init=w0)
            wm = solve_layer(SvmpLayerInput(zm, inp.theta, inp.lam), tol=tight, init=w0)
            blocks[j, :, k] = (wp - wm) / (2.0 * h)
    return ArgminJacobian(blocks, inp.margins(w0) < 1.0)


def random_layer_input(rng, n, p, lam, min_gap=1e-3, max_tries=1000):
    """Random Gaussian instance whose margins all stay ``min_gap`` away from a kink."""
    for _ in range(max_tries):
        z = rng.standard_normal((n, p))
        theta = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        if theta.min() == theta.max():
            continue
        inp = SvmpLayerInput(z, theta, lam)
        w = solve_layer(inp)
        if np.min(np.abs(1.0 - inp.margins(w))) > min_gap:
            return inp, w
    raise NotConverged(f"no non-degenerate instance found in {max_tries} draws")


def gradient_check(n=12, p=5, lam=4.0, trials=100, seed=1, h=1e-5):
    """Analytic against finite-difference Jacobians on random instances.

    Also checks on every instance that features with satisfied margins get
    exactly zero blocks, and reports how many instances had any.
    """
    rng = np.random.default_rng(seed)
    errors = []
    zero_law_violations = 0
    inactive_features = 0
    for _ in range(trials):
        inp, w = random_layer_input(rng, n, p, lam)
        jac = grad_wrt_input(w, inp)
        errors.append(jac.relative_error(finite_diff_jacobian(inp, h)))
        idle = ~jac.active
        inactive_features += int(idle.sum())
        zero_law_violations += int(np.count_nonzero(jac.blocks[idle]))
    return {
        "n": n,
        "p": p,
        "lambda": lam,
        "trials": trials,
        "seed": seed,
        "h": h,
        "max_rel_error": float(max(errors)),
        "mean_rel_error": float(np.mean(errors)),
        "inactive_features": inactive_features,
        "zero_law_violations": zero_law_violations,
    }


# -- toy end-to-end pipeline --------------------------------------------------


@dataclass(frozen=True)
class ToyTrace:
    losses: tuple  # loss before training, then after every epoch
    accuracy: float  # training accuracy after the last epoch
    transform: np.ndarray
    weights: np.ndarray  # (classes, p + 1) softmax classifier, bias last
    steps: tuple = ()  # step size actually taken per epoch (0 when rejected)


def _softmax_loss(W, descs, y):
    """Mean cross-entropy and its gradients w.r.t. W and each descriptor."""
    S = descs @ W[:, :-1].T + W[:, -1]
    S = S - S.max(axis=1, keepdims=True)
    P = np.exp(S)
    P /= P.sum(axis=1, keepdims=True)
    m = descs.shape[0]
    loss = -float(np.mean(np.log(P[np.arange(m), y])))
    G = P.copy()
    G[np.arange(m), y] -= 1.0
    G /= m
    gW = np.hstack([G.T @ descs, G.sum(axis=0)[:, None]])
    g_desc = G @ W[:, :-1]
    return loss, gW, g_desc, P


class _ToyModel:
    def __init__(self, ds: Dataset, lam):
        self.bags = [b.features for b in ds.bags]
        self.neg = ds.negatives.features
        self.classes = sorted(set(ds.labels))
        self.y = np.array([self.classes.index(lab) for lab in ds.labels])
        self.lam = lam
        self._cache = None

    def _layer_input(self, A, X):
        z = np.vstack([X @ A.T, self.neg])
        theta = np.concatenate([np.ones(X.shape[0]), -np.ones(self.neg.shape[0])])
        return SvmpLayerInput(z, theta, self.lam)

    def descriptors(self, A):
        out = []
        for X in self.bags:
            out.append(solve_layer(self._layer_input(A, X)))
        return np.array(out)

    def loss(self, A, W):
        return _softmax_loss(W, self.descriptors(A), self.y)[0]

    def loss_and_grads(self, A, W, train_transform):
        descs = self.descriptors(A)
        loss, gW, g_desc, P = _softmax_loss(W, descs, self.y)
        gA = np.zeros_like(A)
        if train_transform:
            for X, w, g in zip(self.bags, descs, g_desc):
                inp = self._layer_input(A, X)
                jac = grad_wrt_input(w, inp, mode="train")
                # dL/dz_j = J_j^T g for the bag's own (transformed) frames
                gz = np.einsum("jpk,p->jk", jac.blocks[: X.shape[0]], g)
                gA += gz.T @ X
        acc = float(np.mean(np.argmax(P, axis=1) == self.y))
        return loss, gA, gW, acc


def toy_pipeline_train(ds: Dataset, epochs, step_size, *, train_transform=True, lam=1.0,
                       max_backtrack=30) -> ToyTrace:
    """Linear transform, SVM pooling layer and softmax classifier, trained jointly.

    Every frame ``x`` is mapped to ``A x`` (``A`` starts at the identity) and
    pooled against the fixed negatives; the pooled ``w*`` of each bag goes
    through a linear softmax classifier. Full-batch gradient descent with
    backtracking: a step is halved until the loss decreases, and is skipped
    if it never does, so the loss trace is non-increasing. With
    ``train_transform=False`` ``A`` stays at the identity and only the
    classifier learns.
    """
    if ds.negatives is None:
        raise DegenerateLabels("the pooling layer needs a negative bag")
    model = _ToyModel(ds, lam)
    p = ds.dim
    A = np.eye(p)
    W = np.zeros((len(model.classes), p + 1))
    loss, gA, gW, acc = model.loss_and_grads(A, W, train_transform)
    losses = [loss]
    steps = []
    for _ in range(epochs):
        step = float(step_size)
        taken = 0.0
        for _ in range(max_backtrack):
            if step <= 0.0:
                break
            A_new = A - step * gA if train_transform else A
            W_new = W - step * gW
            trial = model.loss(A_new, W_new)
            if trial < loss:
                A, W, taken = A_new, W_new, step
                break
            step *= 0.5
        steps.append(taken)
        if taken:
            loss, gA, gW, acc = model.loss_and_grads(A, W, train_transform)
        losses.append(loss)
        log.debug("epoch %d: loss %.6g step %.3g", len(steps), loss, taken)
    return ToyTrace(tuple(losses), acc, A, W, tuple(steps))
