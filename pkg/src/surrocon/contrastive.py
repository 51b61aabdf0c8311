"""Two-view batches, surrogate-label positive/negative sets, and the losses.

A batch of N samples becomes 2N augmented views (views 2k and 2k+1 come from
sample k and share its surrogate label). The positive set C(i) holds every
other view with the same label key; the candidate set A(i) holds every view
except the anchor. The supervised contrastive loss averages, over anchors
with at least one positive, the per-anchor mean of -log softmax similarity;
with all-unique labels it degenerates to NT-Xent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import (
    ContractError,
    DimensionError,
    EmptyLossError,
    ParameterError,
)
from .numcore import Tensor
from .seeding import stream

_LABEL_KINDS = ("eye", "bcva", "cst", "unique")


@dataclass(frozen=True)
class LabelKey:
    """Which surrogate value defines contrastive positives.

    `cst` supports an optional bin width: value v maps to floor(v / bin_width).
    `unique` keys every sample by its own id, which reduces the supervised
    loss to the augmentation-only (SimCLR-style) case.
    """

    kind: str
    bin_width: int | None = None

    def __post_init__(self):
        if self.kind not in _LABEL_KINDS:
            raise ParameterError(f"label key must be one of {_LABEL_KINDS}, got {self.kind!r}")
        if self.bin_width is not None:
            if self.kind != "cst":
                raise ParameterError("bin_width only applies to the cst key")
            if self.bin_width < 1:
                raise ParameterError("bin_width must be >= 1")

    def of(self, sample):
        if self.kind == "eye":
            return int(sample.eye_id)
        if self.kind == "bcva":
            return int(sample.bcva)
        if self.kind == "cst":
            v = int(sample.cst)
            return v if self.bin_width is None else v // self.bin_width
        return int(sample.sample_id)


@dataclass(frozen=True)
class AugmentSpec:
    """Vector/grid augmentation: optional flip and shift, then noise, then masking.

    sigma        additive Gaussian noise scale (>= 0)
    mask_p       per-coordinate zeroing probability, in [0, 1)
    flip         reverse the coordinate order with probability 1/2
    crop_pad     shift by a uniform offset in [-crop_pad, crop_pad], zero-filled
    """

    sigma: float = 0.0
    mask_p: float = 0.0
    flip: bool = False
    crop_pad: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ParameterError(f"augment sigma must be >= 0, got {self.sigma}")
        if not 0.0 <= self.mask_p < 1.0:
            raise ParameterError(f"augment mask_p must be in [0, 1), got {self.mask_p}")
        if self.crop_pad < 0:
            raise ParameterError(f"augment crop_pad must be >= 0, got {self.crop_pad}")

    @property
    def is_identity(self):
        return self.sigma == 0.0 and self.mask_p == 0.0 and not self.flip and self.crop_pad == 0


def augment(x, spec, rng):
    """One augmented copy of a feature vector; draws come from `rng` in a fixed order."""
    arr = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"augment expects a vector, got shape {arr.shape}")
    if spec.flip and rng.random() < 0.5:
        arr = arr[::-1].copy()
    if spec.crop_pad > 0:
        shift = int(rng.integers(-spec.crop_pad, spec.crop_pad + 1))
        out = np.zeros_like(arr)
        if shift >= 0:
            out[shift:] = arr[: arr.size - shift]
        else:
            out[:shift] = arr[-shift:]
        arr = out
    if spec.sigma > 0:
        arr = arr + spec.sigma * rng.standard_normal(arr.size)
    if spec.mask_p > 0:
        arr = arr * (rng.random(arr.size) >= spec.mask_p)
    return Tensor(arr)


@dataclass
class ViewBatch:
    """2N augmented views; views 2k and 2k+1 come from sample k."""

    views: Tensor  # (2N, input_dim)
    labels: np.ndarray  # (2N,) surrogate-label keys
    origin: np.ndarray  # (2N,) source sample index within the batch

    @property
    def n_views(self):
        return self.views.shape[0]

    def twin(self, i):
        return i ^ 1


def make_views(samples, key, aug, rng_seed):
    """Augment each sample twice and duplicate its label key; deterministic per seed."""
    n = len(samples)
    if n < 2:
        raise ContractError(f"need at least 2 samples for a view batch, got {n}")
    rng = stream(rng_seed, "views")
    views, labels, origin = [], [], []
    for k, s in enumerate(samples):
        lab = key.of(s)
        for _ in range(2):
            views.append(augment(s.features, aug, rng).data)
            labels.append(lab)
            origin.append(k)
    return ViewBatch(
        views=Tensor(np.stack(views)),
        labels=np.asarray(labels, dtype=np.int64),
        origin=np.asarray(origin, dtype=np.int64),
    )


@dataclass
class PosNegSets:
    """Per-anchor index sets: positives C(i) and candidates A(i) = everyone but i."""

    pos: list  # list of int arrays, C(i)
    others: list  # list of int arrays, A(i)

    @property
    def n(self):
        return len(self.pos)

    def contributing(self):
        return [i for i in range(self.n) if self.pos[i].size > 0]

    def validate(self):
        n = self.n
        for i in range(n):
            a = set(self.others[i].tolist())
            if i in a or len(a) != n - 1:
                raise ContractError(f"A({i}) must be all {n - 1} non-anchor views")
            if not set(self.pos[i].tolist()) <= a:
                raise ContractError(f"C({i}) must be a subset of A({i})")


def build_sets(vb):
    """Positive/candidate sets from view labels; twins always land in C(i)."""
    labels = vb.labels
    n = labels.shape[0]
    idx = np.arange(n)
    pos, others = [], []
    for i in range(n):
        not_self = idx != i
        pos.append(idx[not_self & (labels == labels[i])])
        others.append(idx[not_self])
    return PosNegSets(pos=pos, others=others)


def _check_embeddings(z, sets, temperature):
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    zv = z.value.data
    if zv.ndim != 2:
        raise DimensionError(f"embeddings must be a matrix, got shape {zv.shape}")
    if zv.shape[0] != sets.n:
        raise DimensionError(f"{zv.shape[0]} embedding rows vs {sets.n} anchors")
    norms = np.sqrt((zv * zv).sum(axis=1))
    if np.abs(norms - 1.0).max() > 1e-3:
        raise ContractError("embedding rows must be unit-norm (l2_normalize the head output)")


def _anchor_term(sim, n, i, pos_idx, others_idx):
    # per-anchor loss: logsumexp over A(i) minus mean similarity over C(i)
    lse = nc.log_sum_exp(nc.take(sim, i * n + others_idx))
    pos_mean = nc.mean_all(nc.take(sim, i * n + pos_idx))
    return nc.sub(lse, pos_mean)


def _set_loss(z, sets, temperature, anchors):
    n = sets.n
    sim = nc.scale(nc.matmul(z, nc.transpose(z)), 1.0 / temperature)
    acc = None
    for i in anchors:
        term = _anchor_term(sim, n, i, sets.pos[i], sets.others[i])
        acc = term if acc is None else nc.add(acc, term)
    return nc.scale(acc, 1.0 / len(anchors))


def supcon_loss(z, sets, temperature):
    """Supervised contrastive loss over unit-norm embeddings.

    Anchors with an empty positive set are skipped; the result is the mean
    over contributing anchors. Raises EmptyLossError when nothing contributes.
    """
    _check_embeddings(z, sets, temperature)
    anchors = sets.contributing()
    if not anchors:
        raise EmptyLossError("every anchor has an empty positive set")
    return _set_loss(z, sets, temperature, anchors)


def ntxent_loss(z, sets, temperature):
    """Augmentation-only loss: the degenerate case where C(i) is exactly the twin."""
    _check_embeddings(z, sets, temperature)
    for i in range(sets.n):
        if sets.pos[i].size != 1:
            raise ContractError("ntxent_loss needs unique-label sets (|C(i)| == 1 for all anchors)")
    return _set_loss(z, sets, temperature, list(range(sets.n)))
