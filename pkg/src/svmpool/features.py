"""Feature bags, datasets and their on-disk formats.

Two formats are supported.

CSV
    One row per frame, ``bag_id,label,coord_1,...,coord_p``. ``label`` is
    ``-1`` for unlabeled bags. Negatives use the reserved bag id ``__neg__``
    and the global mean of a centered dataset the reserved id ``__mean__``.
    Values are written with 9 significant digits.

Binary (little-endian throughout)
    ``b"SVMP"``, ``u16`` version (=1), ``u32`` p, ``u32`` record count, then
    per record: ``u16`` id length, UTF-8 id, ``i32`` label, ``u32`` n and
    ``n*p`` ``f32`` values. Negatives are the ``__neg__`` record; its label
    field stores the origin (0 white noise, 1 external). A centered dataset
    carries one extra ``__mean__`` record with n=1.
"""

from __future__ import annotations

import csv
import enum
import io
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import AlreadyCentered, DimensionMismatch, FormatError, NonFiniteError

MAGIC = b"SVMP"
FORMAT_VERSION = 1
NEG_ID = "__neg__"
MEAN_ID = "__mean__"
_RESERVED = {NEG_ID, MEAN_ID}


class Origin(enum.IntEnum):
    WHITE_NOISE = 0
    EXTERNAL_FILE = 1


class Format(str, enum.Enum):
    CSV = "csv"
    BINARY = "binary"


def _as_matrix(features, what):
    arr = np.array(features, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{what}: expected a 2-D array of frames, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise FormatError(f"{what}: needs at least one frame of dimension >= 1")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what}: non-finite coordinate")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class FeatureBag:
    """The frames of one sequence, stored as an ``(n, p)`` float64 array."""

    features: np.ndarray
    label: int | None = None
    source_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "features", _as_matrix(self.features, f"bag {self.source_id!r}"))
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, FeatureBag):
            return NotImplemented
        return (
            self.label == other.label
            and self.source_id == other.source_id
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True, eq=False)
class NegativeBag:
    features: np.ndarray
    origin: Origin = Origin.EXTERNAL_FILE

    def __post_init__(self):
        object.__setattr__(self, "features", _as_matrix(self.features, "negative bag"))
        object.__setattr__(self, "origin", Origin(self.origin))

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, NegativeBag):
            return NotImplemented
        return self.origin == other.origin and np.array_equal(self.features, other.features)


@dataclass(frozen=True, eq=False)
class Dataset:
    bags: tuple
    negatives: NegativeBag | None
    global_mean: np.ndarray | None = None
    centered: bool = False

    def __post_init__(self):
        object.__setattr__(self, "bags", tuple(self.bags))
        if self.negatives is not None:
            p = self.negatives.dim
        elif self.bags:
            p = self.bags[0].dim
        else:
            raise FormatError("a dataset needs at least one bag or a negative bag")
        object.__setattr__(self, "_dim", p)
        for bag in self.bags:
            if bag.dim != p:
                raise DimensionMismatch(
                    f"bag {bag.source_id!r} has dimension {bag.dim}, dataset has {p}"
                )
        if self.global_mean is not None:
            mean = np.array(self.global_mean, dtype=np.float64).reshape(-1)
            if mean.shape != (p,):
                raise DimensionMismatch("global_mean dimension does not match the features")
            mean.flags.writeable = False
            object.__setattr__(self, "global_mean", mean)
        if self.centered and self.global_mean is None:
            raise FormatError("a centered dataset must carry its global mean")

    @property
    def dim(self):
        return self._dim

    @property
    def labels(self):
        return [bag.label for bag in self.bags]

    def all_features(self):
        parts = [bag.features for bag in self.bags]
        if self.negatives is not None:
            parts.append(self.negatives.features)
        return np.vstack(parts)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        same_mean = (self.global_mean is None and other.global_mean is None) or (
            self.global_mean is not None
            and other.global_mean is not None
            and np.array_equal(self.global_mean, other.global_mean)
        )
        return (
            self.centered == other.centered
            and same_mean
            and self.negatives == other.negatives
            and self.dim == other.dim
            and self.bags == other.bags
        )


def centralize(dataset: Dataset) -> Dataset:
    """Subtract the joint mean of all positive and negative frames."""
    if dataset.centered:
        raise AlreadyCentered("dataset is already centered")
    mean = dataset.all_features().mean(axis=0)
    bags = [replace(bag, features=bag.features - mean) for bag in dataset.bags]
    negatives = dataset.negatives
    if negatives is not None:
        negatives = replace(negatives, features=negatives.features - mean)
    return Dataset(bags, negatives, global_mean=mean, centered=True)


# --------------------------------------------------------------------------
# persistence


def _check_savable(dataset):
    if not dataset.bags:
        raise FormatError("refusing to save a dataset without bags")
    for bag in dataset.bags:
        if bag.source_id in _RESERVED:
            raise FormatError(f"bag id {bag.source_id!r} is reserved")


def save_dataset(dataset: Dataset, path, format=Format.BINARY):
    _check_savable(dataset)
    fmt = Format(format)
    path = Path(path)
    if fmt is Format.BINARY:
        path.write_bytes(_to_binary(dataset))
    else:
        path.write_text(_to_csv(dataset), encoding="utf-8")


def load_dataset(path, format=Format.BINARY) -> Dataset:
    fmt = Format(format)
    path = Path(path)
    if fmt is Format.BINARY:
        return _from_binary(path.read_bytes())
    return _from_csv(path.read_text(encoding="utf-8"))


def _records(dataset):
    for bag in dataset.bags:
        yield bag.source_id, -1 if bag.label is None else bag.label, bag.features
    if dataset.negatives is not None:
        yield NEG_ID, int(dataset.negatives.origin), dataset.negatives.features
    if dataset.centered:
        yield MEAN_ID, -1, dataset.global_mean.reshape(1, -1)


def _to_binary(dataset):
    records = list(_records(dataset))
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<HII", FORMAT_VERSION, dataset.dim, len(records)))
    for rid, label, feats in records:
        raw = rid.encode("utf-8")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(struct.pack("<iI", label, feats.shape[0]))
        out.write(np.ascontiguousarray(feats, dtype="<f4").tobytes())
    return out.getvalue()


def _assemble(p, records):
    bags, negatives, mean = [], None, None
    for rid, label, feats in records:
        if rid == NEG_ID:
            if negatives is not None:
                raise FormatError("duplicate negative record")
            try:
                origin = Origin(label)
            except ValueError:
                origin = Origin.EXTERNAL_FILE
            negatives = NegativeBag(feats, origin)
        elif rid == MEAN_ID:
            mean = feats.reshape(-1)
        else:
            bags.append(FeatureBag(feats, None if label == -1 else label, rid))
    if negatives is None and not bags:
        raise FormatError("file holds neither bags nor negatives")
    return Dataset(bags, negatives, global_mean=mean, centered=mean is not None)


def encode_dataset(dataset: Dataset) -> bytes:
    """Binary encoding of a dataset, as written by :func:`save_dataset`."""
    _check_savable(dataset)
    return _to_binary(dataset)


def decode_dataset(blob, *, partial=False):
    """Inverse of :func:`encode_dataset`.

    With ``partial=True`` bytes may follow the dataset (other sections of a
    container file); returns ``(dataset, end_offset)`` in that case.
    """
    return _from_binary(blob, partial)


def _from_binary(blob, partial=False):
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise FormatError("bad magic bytes")
    try:
        version, p, count = struct.unpack_from("<HII", view, 4)
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}")
        if p < 1:
            raise FormatError("feature dimension must be >= 1")
        pos = 14
        records = []
        for _ in range(count):
            (idlen,) = struct.unpack_from("<H", view, pos)
            pos += 2
            rid = bytes(view[pos : pos + idlen]).decode("utf-8")
            pos += idlen
            label, n = struct.unpack_from("<iI", view, pos)
            pos += 8
            nbytes = 4 * n * p
            if pos + nbytes > len(view):
                raise FormatError("truncated feature block")
            feats = np.frombuffer(view[pos : pos + nbytes], dtype="<f4").reshape(n, p)
            pos += nbytes
            if not np.all(np.isfinite(feats)):
                raise NonFiniteError(f"non-finite value in record {rid!r}")
            records.append((rid, label, feats.astype(np.float64)))
    except struct.error as exc:
        raise FormatError(f"truncated file: {exc}") from exc
    if partial:
        return _assemble(p, records), pos
    if pos != len(view):
        raise FormatError("trailing bytes after last record")
    return _assemble(p, records)


def _to_csv(dataset):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    for rid, label, feats in _records(dataset):
        for row in feats:
            writer.writerow([rid, label] + [repr(float(v)) for v in row])
    return out.getvalue()


def _from_csv(text):
    groups = {}
    p = None
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row:
            continue
        if len(row) < 3:
            raise FormatError(f"line {lineno}: expected bag_id,label,coords...")
        if p is None:
            p = len(row) - 2
        elif len(row) - 2 != p:
            raise FormatError(f"line {lineno}: row has {len(row) - 2} coordinates, expected {p}")
        rid = row[0]
        try:
            label = int(row[1])
            coords = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from exc
        if not all(np.isfinite(coords)):
            raise NonFiniteError(f"line {lineno}: non-finite coordinate")
        entry = groups.setdefault(rid, [label, []])
        if entry[0] != label:
            raise FormatError(f"line {lineno}: bag {rid!r} changes label")
        entry[1].append(coords)
    if p is None:
        raise FormatError("empty CSV file")
    records = [(rid, lab, np.array(rows, dtype=np.float64)) for rid, (lab, rows) in groups.items()]
    return _assemble(p, records)
