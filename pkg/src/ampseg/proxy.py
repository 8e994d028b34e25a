"""Normalized masked average pooling, weight imprinting and proxy adaptation.

A soft mask is an ``(H, W)`` float array with weights in ``[0, 1]``; binary
masks are the special case of zeros and ones. A :class:`ClassifierBank`
holds one bias-free 1x1 filter matrix per pyramid level, with one row per
class, and is treated as an immutable value: every operation returns a new
bank and leaves its argument untouched.
"""
import struct
from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyMaskError, FormatError, ShapeError
from .numerics import bilinear_resize, l2_normalize

BACKGROUND = 0
BANK_MAGIC = b"AMPCB1"


@dataclass(frozen=True)
class Proxy:
    class_id: int
    vectors: tuple


@dataclass(frozen=True)
class ClassifierBank:
    class_ids: tuple
    filters: tuple

    def __post_init__(self):
        ids = tuple(int(c) for c in self.class_ids)
        filters = tuple(np.asarray(f, dtype=np.float64) for f in self.filters)
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate class ids in {ids}")
        for f in filters:
            if f.ndim != 2 or f.shape[0] != len(ids):
                raise ShapeError(f"filter matrix {f.shape} does not have {len(ids)} rows")
        object.__setattr__(self, "class_ids", ids)
        object.__setattr__(self, "filters", filters)

    @classmethod
    def empty(cls, channels):
        return cls((), tuple(np.zeros((0, c)) for c in channels))

    @property
    def num_classes(self):
        return len(self.class_ids)

    @property
    def channels(self):
        return tuple(f.shape[1] for f in self.filters)

    def __contains__(self, class_id):
        return int(class_id) in self.class_ids

    def row_index(self, class_id):
        try:
            return self.class_ids.index(int(class_id))
        except ValueError:
            raise KeyError(f"class {class_id} is not in the bank {self.class_ids}") from None

    def rows(self, class_id):
        i = self.row_index(class_id)
        return tuple(f[i] for f in self.filters)

    def append(self, class_id, vectors):
        if class_id in self:
            raise ValueError(f"class {class_id} is already in the bank")
        self._check_vectors(vectors)
        filters = tuple(np.vstack([f, np.asarray(v, dtype=np.float64)[None]])
                        for f, v in zip(self.filters, vectors))
        return ClassifierBank(self.class_ids + (int(class_id),), filters)

    def replace(self, class_id, vectors):
        i = self.row_index(class_id)
        self._check_vectors(vectors)
        filters = []
        for f, v in zip(self.filters, vectors):
            f = f.copy()
            f[i] = v
            filters.append(f)
        return ClassifierBank(self.class_ids, tuple(filters))

    def with_filters(self, filters):
        return ClassifierBank(self.class_ids, tuple(filters))

    def equals(self, other):
        """Bitwise equality of ids and every filter entry."""
        return (self.class_ids == other.class_ids
                and len(self.filters) == len(other.filters)
                and all(np.array_equal(a, b) for a, b in zip(self.filters, other.filters)))

    def _check_vectors(self, vectors):
        if len(vectors) != len(self.filters):
            raise ShapeError(f"expected {len(self.filters)} vectors, got {len(vectors)}")
        for f, v in zip(self.filters, vectors):
            if np.shape(v) != (f.shape[1],):
                raise ShapeError(f"vector of shape {np.shape(v)} for {f.shape[1]}-channel level")


def masked_mean(features, mask):
    """Mean feature vector over a soft mask; features are ``(C, H, W)``."""
    total = float(mask.sum())
    if not total > 0.0:
        raise EmptyMaskError("mask has no foreground weight")
    c = features.shape[0]
    return features.reshape(c, -1) @ mask.reshape(-1) / total


def nmap(pyramids, masks, class_id):
    """Build the normalized masked average pooling proxy for one class.

    Each level is upsampled to its mask's resolution, pooled under the mask
    with its own foreground count, averaged over the shots, and only then
    L2-normalized.
    """
    if len(pyramids) == 0 or len(pyramids) != len(masks):
        raise ValueError(f"need matching non-empty pyramids/masks, got {len(pyramids)}/{len(masks)}")
    masks = [np.asarray(m, dtype=np.float64) for m in masks]
    for m in masks:
        if m.min() < 0.0 or m.max() > 1.0:
            raise ValueError("soft mask weights must lie in [0, 1]")
        if not m.sum() > 0.0:
            raise EmptyMaskError(f"empty support mask for class {class_id}")
    vectors = []
    for r in range(len(pyramids[0].levels)):
        pooled = 0.0
        for pyr, m in zip(pyramids, masks):
            up = bilinear_resize(pyr.levels[r], *m.shape)
            pooled = pooled + masked_mean(up, m)
        vectors.append(l2_normalize(pooled / len(pyramids)))
    return Proxy(int(class_id), tuple(vectors))


def imprint(bank, proxy):
    """Append the proxy vectors as the filter rows of a new class."""
    return bank.append(proxy.class_id, proxy.vectors)


def adapt(bank, proxy, alpha):
    """Blend a known class's rows toward the proxy: ``alpha*P + (1-alpha)*W``.

    The blend is not renormalized.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if proxy.class_id not in bank:
        raise KeyError(f"class {proxy.class_id} is not in the bank {bank.class_ids}")
    if alpha == 0.0:
        return bank
    old = bank.rows(proxy.class_id)
    if alpha == 1.0:
        new = tuple(np.array(p, dtype=np.float64) for p in proxy.vectors)
    else:
        new = tuple(alpha * p + (1.0 - alpha) * w for p, w in zip(proxy.vectors, old))
    return bank.replace(proxy.class_id, new)


def adapt_or_imprint(bank, proxy, alpha):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if proxy.class_id in bank:
        return adapt(bank, proxy, alpha)
    return imprint(bank, proxy)


def save_bank(bank, path):
    with open(path, "wb") as fh:
        fh.write(BANK_MAGIC)
        fh.write(struct.pack("<2I", bank.num_classes, len(bank.filters)))
        fh.write(struct.pack(f"<{len(bank.filters)}I", *bank.channels))
        fh.write(struct.pack(f"<{bank.num_classes}I", *bank.class_ids))
        for f in bank.filters:
            fh.write(np.ascontiguousarray(f, dtype="<f8").tobytes())


def load_bank(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:6] != BANK_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:6]!r}", 0)
    offset = 6
    try:
        n, levels = struct.unpack_from("<2I", data, offset)
        offset += 8
        channels = struct.unpack_from(f"<{levels}I", data, offset)
        offset += 4 * levels
        ids = struct.unpack_from(f"<{n}I", data, offset)
        offset += 4 * n
    except struct.error:
        raise FormatError(f"{path}: truncated header", len(data)) from None
    filters = []
    for c in channels:
        if offset + 8 * n * c > len(data):
            raise FormatError(f"{path}: truncated filter payload", len(data))
        filters.append(np.frombuffer(data, "<f8", n * c, offset).astype(np.float64).reshape(n, c))
        offset += 8 * n * c
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes", offset)
    return ClassifierBank(ids, tuple(filters))
