"""Video-level one-vs-rest classifiers and the block-coordinate joint trainer."""

from __future__ import annotations

import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateLabels, DimensionMismatch, FormatError, InsufficientData
from .features import Dataset, FeatureBag, decode_dataset, encode_dataset
from .pooling import PoolConfig, SvmpDescriptor, canonical_order, classified_fraction, compute_svmp, pool_dataset
from .svm import Hyperplane, SquaredHingeProblem, default_tol

log = logging.getLogger(__name__)

# Target margin for the one-vs-rest fits. Both rules give 1 for every
# (descriptor, class) pair of a one-vs-rest problem; they differ only in the
# pairwise reading (Delta(y, y) = 0 for zero_one, 1 for unit).
DELTA_RULES = {
    "zero_one": lambda y, z: 0.0 if y == z else 1.0,
    "unit": lambda y, z: 1.0,
}


def _ovr_margin(rule):
    # margin demanded of a one-vs-rest score: Delta between a class and "rest"
    return DELTA_RULES[rule](0, 1)


@dataclass(frozen=True)
class ClassifierBank:
    classes: tuple
    z: tuple  # Hyperplane per class over descriptor space
    c2: float
    delta_rule: str = "zero_one"
    objective: float = float("nan")

    @property
    def dim(self):
        return self.z[0].dim

    def weights(self):
        """``(d, q + 1)`` matrix of ``[Z_j, bias_j]`` rows."""
        return np.array([h.as_vector() for h in self.z])

    def scores(self, descriptors):
        D = _as_matrix(descriptors)
        if D.shape[1] != self.dim:
            raise DimensionMismatch(f"descriptor dimension {D.shape[1]} != classifier {self.dim}")
        W = self.weights()
        return D @ W[:, :-1].T + W[:, -1]


def _as_matrix(descriptors):
    if isinstance(descriptors, SvmpDescriptor):
        descriptors = [descriptors]
    if isinstance(descriptors, np.ndarray):
        return np.atleast_2d(descriptors.astype(np.float64))
    rows = [d.as_vector() if isinstance(d, SvmpDescriptor) else np.asarray(d, dtype=np.float64)
            for d in descriptors]
    return np.atleast_2d(np.array(rows, dtype=np.float64))


def ovr_objective(bank: ClassifierBank, descriptors, labels):
    """Sum over classes of ``|Z_j|^2 + C2 * sum_i max(0, m - y_ij s_ij)^2``."""
    S = bank.scores(descriptors)
    labels = np.asarray(labels)
    m = _ovr_margin(bank.delta_rule)
    total = 0.0
    for j, cls in enumerate(bank.classes):
        y = np.where(labels == cls, 1.0, -1.0)
        r = np.maximum(0.0, m - y * S[:, j])
        total += float(bank.z[j].w @ bank.z[j].w) + bank.c2 * float(r @ r)
    return total


def ovr_terms(bank: ClassifierBank, descriptors, labels):
    """Per-descriptor share of the classifier loss, ``C2 * sum_j hinge_ij^2``."""
    S = bank.scores(descriptors)
    labels = np.asarray(labels)
    m = _ovr_margin(bank.delta_rule)
    Y = np.where(labels[:, None] == np.asarray(bank.classes)[None, :], 1.0, -1.0)
    R = np.maximum(0.0, m - Y * S)
    return bank.c2 * np.sum(R * R, axis=1)


def train_multiclass(descriptors, labels, c2=1.0, delta_rule="zero_one", *, init=None, threads=1,
                     tol=None, max_iter=200) -> ClassifierBank:
    """One squared-hinge SVM per class, class vs. rest.

    ``init`` is a previous bank over the same classes; its hyperplanes seed the
    Newton iterations, which never increase the objective from there.
    """
    D = _as_matrix(descriptors)
    labels = np.asarray(labels)
    if D.shape[0] != labels.shape[0]:
        raise DimensionMismatch(f"{D.shape[0]} descriptors but {labels.shape[0]} labels")
    if any(lab is None for lab in labels.tolist()):
        raise DegenerateLabels("unlabeled descriptors cannot be used for training")
    classes = tuple(sorted(set(labels.tolist())))
    if len(classes) < 2:
        raise DegenerateLabels("need at least two classes")
    if not np.all(np.isfinite(D)):
        raise ValueError("descriptors must be finite")
    if delta_rule not in DELTA_RULES:
        raise ValueError(f"unknown delta rule {delta_rule!r}")
    m = _ovr_margin(delta_rule)

    def fit(j):
        cls = classes[j]
        y = np.where(labels == cls, 1.0, -1.0)
        problem = SquaredHingeProblem(D, y, method="primal")
        start = None
        if init is not None:
            h = init.z[init.classes.index(cls)]
            start = (h.w / m, h.b / m)
        fit = problem.solve(c2, tol if tol is not None else default_tol(c2, D.shape[0]), max_iter, init=start)
        # uniform margin m: scale the unit-margin solution
        return Hyperplane(m * fit.hyperplane.w, m * fit.hyperplane.b)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            z = tuple(pool.map(fit, range(len(classes))))
    else:
        z = tuple(fit(j) for j in range(len(classes)))
    bank = ClassifierBank(classes, z, float(c2), delta_rule)
    return replace(bank, objective=ovr_objective(bank, D, labels))


def predict_action(bank: ClassifierBank, descriptor):
    """Class with the highest score; ties go to the smallest class id."""
    S = bank.scores(descriptor)
    idx = np.argmax(S, axis=1)
    out = [bank.classes[i] for i in idx]
    return out[0] if np.ndim(descriptor) == 1 or isinstance(descriptor, SvmpDescriptor) else out


def accuracy(bank, descriptors, labels):
    pred = np.asarray(predict_action(bank, _as_matrix(descriptors)))
    return float(np.mean(pred == np.asarray(labels)))


@dataclass(frozen=True)
class JointState:
    descriptors: tuple
    bank: ClassifierBank
    outer_iteration: int
    objective_trace: tuple
    converged: bool = False
    c_values: tuple = ()
    # per bag, the virtual point currently appended to it (None before the first update)
    virtual_points: tuple = ()
    accepted: tuple = field(default=(), repr=False)  # accepted descriptor updates per outer pass

    def augmented_bag(self, bag: FeatureBag, index):
        v = self.virtual_points[index]
        if v is None:
            return bag
        return replace(bag, features=np.vstack([bag.features, v]))


def _bag_svm_objective(desc, bag, neg, c):
    w, b = desc.w, desc.b
    rp = np.maximum(0.0, 1.0 - (bag.features @ w + b))
    rn = np.maximum(0.0, 1.0 + (neg.features @ w + b))
    return float(w @ w) + c * float(rp @ rp + rn @ rn)


def joint_objective(ds: Dataset, descriptors, bank: ClassifierBank, c_values):
    """Joint objective with squared hinges: per-bag SVM objectives plus the classifier objective.

    Per-bag SVM terms use the bag's frozen C and exclude the virtual point;
    the classifier term couples descriptors and ``Z`` directly.
    """
    svm_part = sum(
        _bag_svm_objective(d, bag, ds.negatives, c) for d, bag, c in zip(descriptors, ds.bags, c_values)
    )
    return svm_part + ovr_objective(bank, descriptors, [bag.label for bag in ds.bags])


def _fit_with_virtual(bag, neg, virtual, c, cfg: PoolConfig, start):
    frames = np.vstack([bag.features, virtual])
    P = frames[canonical_order(frames)]
    X = np.vstack([P, neg.features])
    y = np.concatenate([np.ones(P.shape[0]), -np.ones(neg.n)])
    problem = SquaredHingeProblem(X, y, method=cfg.method)
    init = None
    if start is not None and problem.method == "primal":
        init = (start.w, start.b)
    fit = problem.solve(c, cfg.tol, cfg.max_iter, init=init)
    w, b = fit.hyperplane.w, fit.hyperplane.b
    if cfg.normalize:
        norm = float(np.hypot(np.linalg.norm(w), b))
        if norm > 0:
            w, b = w / norm, b / norm
    frac = classified_fraction(Hyperplane(w, b), P)
    return SvmpDescriptor(w, b, c, frac, 1, (c,), fit.objective)


def train_joint(ds: Dataset, pool_cfg: PoolConfig = PoolConfig(), c2=1.0, max_outer=10, *,
                tol=1e-6, delta_rule="zero_one", threads=1) -> JointState:
    """Block-coordinate descent on descriptors and classifiers.

    Pass 1 is plain SVM pooling followed by one-vs-rest training, which also
    freezes each bag's C at the value the C schedule settled on. Later passes
    append the class hyperplane ``Z_y`` (weights on ``w``, bias dropped) to
    each bag as a virtual positive frame, refit at the frozen C, and keep the
    new descriptor only if it lowers that bag's share of the joint objective;
    then the classifiers are refit from their previous values. Both steps are
    therefore non-increasing in the joint objective.
    """
    if ds.negatives is None:
        raise InsufficientData("dataset has no negative bag")
    labels = [bag.label for bag in ds.bags]
    if any(lab is None for lab in labels):
        raise DegenerateLabels("joint training needs labeled bags")
    p = ds.dim

    descriptors = list(pool_dataset(ds, pool_cfg, threads=threads))
    c_values = tuple(d.c_used for d in descriptors)
    bank = train_multiclass(descriptors, labels, c2, delta_rule, threads=threads)
    obj = joint_objective(ds, descriptors, bank, c_values)
    trace = [obj]
    virtual = [None] * len(ds.bags)
    accepted = []
    converged = False
    outer = 1
    while outer < max_outer:
        outer += 1
        class_index = {cls: j for j, cls in enumerate(bank.classes)}
        share = ovr_terms(bank, descriptors, labels)

        def update(i):
            bag = ds.bags[i]
            z = bank.z[class_index[bag.label]].w[:p]
            cand = _fit_with_virtual(bag, ds.negatives, z, c_values[i], pool_cfg, descriptors[i])
            old = _bag_svm_objective(descriptors[i], bag, ds.negatives, c_values[i]) + share[i]
            new = _bag_svm_objective(cand, bag, ds.negatives, c_values[i]) + float(
                ovr_terms(bank, [cand], [bag.label])[0]
            )
            return z, cand if new < old else None

        if threads and threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(update, range(len(ds.bags))))
        else:
            results = [update(i) for i in range(len(ds.bags))]
        n_acc = 0
        for i, (z, cand) in enumerate(results):
            virtual[i] = z  # replaced in place, never accumulated
            if cand is not None:
                descriptors[i] = cand
                n_acc += 1
        accepted.append(n_acc)
        bank = train_multiclass(descriptors, labels, c2, delta_rule, init=bank, threads=threads)
        new_obj = joint_objective(ds, descriptors, bank, c_values)
        trace.append(new_obj)
        log.debug("outer %d: objective %.12g, %d descriptors updated", outer, new_obj, n_acc)
        if abs(obj - new_obj) <= tol * max(abs(obj), 1e-300):
            converged = True
            obj = new_obj
            break
        obj = new_obj
    return JointState(
        tuple(descriptors), bank, outer, tuple(trace), converged, c_values, tuple(virtual), tuple(accepted)
    )


# -- model files --------------------------------------------------------------

MODEL_TAG = b"JNTM"


def descriptor_dataset(descriptors, source: Dataset):
    """Descriptors as one-frame bags ``[w, b]`` carrying the source bag ids and labels."""
    bags = [
        FeatureBag(d.as_vector()[None, :], bag.label, bag.source_id)
        for d, bag in zip(descriptors, source.bags)
    ]
    return Dataset(bags, None)


def save_model(path, descriptors: Dataset, bank: ClassifierBank, meta=None):
    """Descriptor container followed by a ``JNTM`` section holding the bank.

    The section is the tag, a little-endian ``uint32`` JSON length, the JSON
    header (classes, C2, delta rule, caller metadata), the ``uint32`` shape
    ``(d, q + 1)`` and the float64 weight matrix.
    """
    header = json.dumps({
        "classes": list(bank.classes),
        "c2": bank.c2,
        "delta_rule": bank.delta_rule,
        "objective": bank.objective,
        "meta": meta or {},
    }).encode("utf-8")
    W = np.ascontiguousarray(bank.weights(), dtype="<f8")
    blob = b"".join([
        encode_dataset(descriptors),
        MODEL_TAG,
        struct.pack("<I", len(header)),
        header,
        struct.pack("<II", *W.shape),
        W.tobytes(),
    ])
    with open(path, "wb") as fh:
        fh.write(blob)


def load_model(path):
    """Returns ``(descriptors, bank, meta)`` from a file written by :func:`save_model`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    descriptors, pos = decode_dataset(blob, partial=True)
    try:
        if blob[pos : pos + 4] != MODEL_TAG:
            raise FormatError("missing JNTM section")
        pos += 4
        (hlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
        pos += hlen
        d, q1 = struct.unpack_from("<II", blob, pos)
        pos += 8
    except (struct.error, ValueError) as exc:
        raise FormatError(f"corrupt JNTM section: {exc}") from exc
    if pos + 8 * d * q1 != len(blob):
        raise FormatError("JNTM weight block has the wrong size")
    W = np.frombuffer(blob, dtype="<f8", count=d * q1, offset=pos).reshape(d, q1)
    z = tuple(Hyperplane(row[:-1], row[-1]) for row in W)
    bank = ClassifierBank(tuple(header["classes"]), z, header["c2"], header["delta_rule"], header["objective"])
    return descriptors, bank, header["meta"]
