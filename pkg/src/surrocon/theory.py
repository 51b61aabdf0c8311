"""Monte-Carlo simulator for the latent-class view of contrastive learning.

A model holds K latent classes with a prior and one spherical-Gaussian
feature law per class. Positive pairs draw one class and two points from it;
negatives draw from the class marginal. A surrogate labeler is modeled as a
symmetric confusion noise on the class assignment: given an observed
surrogate value, the induced class distribution is the Bayes posterior, and
noise 0 recovers exact supervised selection.

`decompose_loss` splits the mean per-tuple loss into the collision stratum
(some negative shares the anchor's class) and its complement; the split is an
exact partition, so mean_all == (1-rate)*mean_noncollision + rate*mean_collision
holds to float precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dataforge
from .errors import (
    ContractError,
    DimensionError,
    DivergenceUndefinedError,
    ParameterError,
)
from .seeding import stream


@dataclass(frozen=True)
class LatentClassModel:
    """K latent classes: prior plus spherical-Gaussian feature law per class."""

    means: np.ndarray  # (K, d)
    sigmas: np.ndarray  # (K,)
    prior: np.ndarray  # (K,)

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "sigmas", np.asarray(self.sigmas, dtype=np.float64))
        object.__setattr__(self, "prior", np.asarray(self.prior, dtype=np.float64))
        if self.means.ndim != 2:
            raise DimensionError("means must be (K, d)")
        k = self.means.shape[0]
        if self.sigmas.shape != (k,) or self.prior.shape != (k,):
            raise DimensionError("sigmas and prior must have one entry per class")
        if (self.sigmas <= 0).any():
            raise ParameterError("class sigmas must be > 0")
        if (self.prior < 0).any() or abs(self.prior.sum() - 1.0) > 1e-12:
            raise ParameterError("prior must sum to 1 (within 1e-12)")

    @property
    def n_classes(self):
        return self.means.shape[0]


def model_from_generator(cfg, seed):
    """Latent classes shared with the dataset generator (same means, same prior)."""
    means = dataforge.class_means(cfg, seed)
    sigmas = np.full(cfg.classes, cfg.feature_sigma)
    return LatentClassModel(means=means, sigmas=sigmas, prior=cfg.prior)


@dataclass(frozen=True)
class SurrogateAssignment:
    """Surrogate value -> induced class distribution (rows of `cond` sum to 1)."""

    marginal: np.ndarray  # (V,) P(v)
    cond: np.ndarray  # (V, K) P(class | v)

    def __post_init__(self):
        object.__setattr__(self, "marginal", np.asarray(self.marginal, dtype=np.float64))
        object.__setattr__(self, "cond", np.asarray(self.cond, dtype=np.float64))
        if self.cond.ndim != 2 or self.marginal.shape != (self.cond.shape[0],):
            raise DimensionError("marginal must have one entry per surrogate value")
        if (self.marginal < 0).any() or abs(self.marginal.sum() - 1.0) > 1e-9:
            raise ParameterError("surrogate marginal must sum to 1")
        rows = self.cond.sum(axis=1)
        if (self.cond < 0).any() or np.abs(rows - 1.0).max() > 1e-9:
            raise ParameterError("each induced class distribution must sum to 1")

    @classmethod
    def from_symmetric_noise(cls, prior, noise):
        """Observed value = true class flipped to a uniform other class w.p. `noise`;
        rows are the Bayes posterior under `prior`."""
        prior = np.asarray(prior, dtype=np.float64)
        k = prior.shape[0]
        if not 0.0 <= noise <= 1.0:
            raise ParameterError(f"noise must be in [0, 1], got {noise}")
        if k == 1:
            return cls(marginal=np.ones(1), cond=np.ones((1, 1)))
        flip = np.full((k, k), noise / (k - 1))
        np.fill_diagonal(flip, 1.0 - noise)  # flip[c, v] = P(v | c)
        joint = prior[:, None] * flip  # joint[c, v]
        marginal = joint.sum(axis=0)
        cond = (joint / marginal[None, :]).T  # cond[v, c] = P(c | v)
        return cls(marginal=marginal, cond=cond)

    def support_within(self, prior):
        """Check every induced distribution stays inside the prior's support."""
        prior = np.asarray(prior, dtype=np.float64)
        return not ((self.cond > 0) & (prior[None, :] == 0)).any()


def _draw_conditional(rng, cond_rows, values):
    """One class per row: row i drawn from cond_rows[values[i]]."""
    cum = np.cumsum(cond_rows[values], axis=1)
    u = rng.random(values.shape[0])
    return (u[:, None] > cum).sum(axis=1)


def _features_for(model, classes, rng):
    d = model.means.shape[1]
    noise = rng.standard_normal((classes.shape[0], d))
    return model.means[classes] + model.sigmas[classes][:, None] * noise


def _draw_classes(model, source, n, rng, per_row=1):
    """Hidden classes for n tuples: `per_row` iid class draws per surrogate value."""
    if source is None:
        out = np.stack([rng.choice(model.n_classes, size=n, p=model.prior) for _ in range(per_row)], axis=1)
        return out
    # draw surrogate values from the marginal, then classes iid from the induced rows
    v = rng.choice(source.marginal.size, size=n, p=source.marginal)
    cols = [_draw_conditional(rng, source.cond, v) for _ in range(per_row)]
    return np.stack(cols, axis=1)


def sample_positive_pairs(model, source, n, rng):
    """n (anchor, positive) pairs; both elements share one drawn class per pair
    under true labels, or two iid induced classes under a surrogate assignment.

    Returns (anchors, positives, pair_classes) with pair_classes shaped (n, 2).
    """
    if n < 1:
        raise ContractError("need n >= 1 pairs")
    if source is None:
        c = rng.choice(model.n_classes, size=n, p=model.prior)
        pair_classes = np.stack([c, c], axis=1)
    else:
        pair_classes = _draw_classes(model, source, n, rng, per_row=2)
    x = _features_for(model, pair_classes[:, 0], rng)
    xp = _features_for(model, pair_classes[:, 1], rng)
    return x, xp, pair_classes


def sample_negatives(model, source, n, rng):
    """n marginal draws with hidden classes recorded; returns (features, classes)."""
    if n < 1:
        raise ContractError("need n >= 1 samples")
    classes = _draw_classes(model, source, n, rng, per_row=1)[:, 0]
    return _features_for(model, classes, rng), classes


@dataclass
class ContrastiveSampleSet:
    """Tuples (anchor, positive, k negatives) with their hidden classes."""

    anchors: np.ndarray  # (n, d)
    positives: np.ndarray  # (n, d)
    negatives: np.ndarray  # (n, k, d)
    anchor_class: np.ndarray  # (n,)
    positive_class: np.ndarray  # (n,)
    negative_classes: np.ndarray  # (n, k)

    @property
    def n(self):
        return self.anchors.shape[0]

    @property
    def k(self):
        return self.negatives.shape[1]


def sample_contrastive_set(model, source, n, k, rng):
    """Draw n tuples with k iid negatives each."""
    if k < 1:
        raise ParameterError("need k >= 1 negatives per tuple")
    x, xp, pair_classes = sample_positive_pairs(model, source, n, rng)
    neg_feats = np.empty((n, k, model.means.shape[1]))
    neg_classes = np.empty((n, k), dtype=np.int64)
    for j in range(k):
        f, c = sample_negatives(model, source, n, rng)
        neg_feats[:, j] = f
        neg_classes[:, j] = c
    return ContrastiveSampleSet(
        anchors=x,
        positives=xp,
        negatives=neg_feats,
        anchor_class=pair_classes[:, 0],
        positive_class=pair_classes[:, 1],
        negative_classes=neg_classes,
    )


def collision_rate(sample_set):
    """Fraction of (anchor, negative) pairs whose hidden classes coincide."""
    if sample_set.n == 0:
        raise ContractError("collision rate of an empty sample set")
    hits = sample_set.negative_classes == sample_set.anchor_class[:, None]
    return float(hits.mean())


def unit_rows(x):
    """Row-normalized copy; the default embedding for loss decomposition."""
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    norms = np.maximum(norms, 1e-12)
    return x / norms


@dataclass
class LossDecomposition:
    """Mean tuple loss split by whether any negative collided with the anchor."""

    l_un: float
    l_noncollision: float  # nan when every tuple collides
    l_collision: float  # nan when no tuple collides
    collision_fraction: float  # tuple-level fraction used by the identity
    n: int
    n_collision: int


def decompose_loss(embed, sample_set):
    """Per-tuple softmax loss, split into collision / non-collision strata.

    The per-tuple loss is -log softmax of the positive similarity against the
    k negative similarities: log(1 + sum_j exp(s_neg_j - s_pos)). A tuple is
    in the collision stratum when any of its negatives shares the anchor's
    hidden class.
    """
    if sample_set.n == 0:
        raise ContractError("cannot decompose an empty sample set")
    ea = embed(sample_set.anchors)
    ep = embed(sample_set.positives)
    n, k, d = sample_set.negatives.shape
    en = embed(sample_set.negatives.reshape(n * k, d)).reshape(n, k, -1)
    s_pos = (ea * ep).sum(axis=1)
    s_neg = (ea[:, None, :] * en).sum(axis=2)
    losses = np.log1p(np.exp(s_neg - s_pos[:, None]).sum(axis=1))
    collides = (sample_set.negative_classes == sample_set.anchor_class[:, None]).any(axis=1)
    n_coll = int(collides.sum())
    l_un = float(losses.mean())
    l_eq = float(losses[collides].mean()) if n_coll > 0 else float("nan")
    l_neq = float(losses[~collides].mean()) if n_coll < n else float("nan")
    return LossDecomposition(
        l_un=l_un,
        l_noncollision=l_neq,
        l_collision=l_eq,
        collision_fraction=n_coll / n,
        n=n,
        n_collision=n_coll,
    )


def kl_divergence(p, q):
    """KL(p || q) in nats for categorical vectors of equal support size."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise DimensionError(f"distributions must be equal-length vectors, got {p.shape} vs {q.shape}")
    if (p < 0).any() or (q < 0).any() or abs(p.sum() - 1.0) > 1e-9 or abs(q.sum() - 1.0) > 1e-9:
        raise ParameterError("inputs must be probability vectors")
    mass = p > 0
    if (q[mass] == 0).any():
        raise DivergenceUndefinedError("p puts mass where q has none")
    return float((p[mass] * np.log(p[mass] / q[mass])).sum())


def pairing_distributions(prior, assignment):
    """Joint class distribution of a positive pair, flattened to K*K.

    Truth: both elements share one class drawn from the prior (diagonal).
    Induced: a surrogate value is drawn, then two iid classes from its row.
    """
    prior = np.asarray(prior, dtype=np.float64)
    k = prior.shape[0]
    truth = np.zeros((k, k))
    np.fill_diagonal(truth, prior)
    induced = np.einsum("v,vi,vj->ij", assignment.marginal, assignment.cond, assignment.cond)
    return truth.reshape(-1), induced.reshape(-1)


@dataclass(frozen=True)
class SweepRow:
    noise: float
    kl_nats: float
    collision_rate: float
    l_un: float
    l_neq: float
    l_eq: float
    n: int


SWEEP_CSV_HEADER = "noise,kl_nats,collision_rate,l_un,l_neq,l_eq,n"


def sweep_surrogate_fidelity(model, noise_grid, n, seed, k=1, embed=unit_rows):
    """One row per noise level: pairing KL from truth, measured collision rate,
    and the decomposed loss. Each level uses its own derived stream, so the
    table is byte-stable for a fixed seed regardless of chunking."""
    grid = [float(v) for v in noise_grid]
    if grid != sorted(grid):
        raise ParameterError("noise grid must be sorted ascending")
    rows = []
    for i, noise in enumerate(grid):
        assignment = SurrogateAssignment.from_symmetric_noise(model.prior, noise)
        truth, induced = pairing_distributions(model.prior, assignment)
        kl = kl_divergence(truth, induced)
        rng = stream(seed, "sweep", i)
        sample_set = sample_contrastive_set(model, assignment, n, k, rng)
        dec = decompose_loss(embed, sample_set)
        rows.append(
            SweepRow(
                noise=noise,
                kl_nats=kl,
                collision_rate=collision_rate(sample_set),
                l_un=dec.l_un,
                l_neq=dec.l_noncollision,
                l_eq=dec.l_collision,
                n=n,
            )
        )
    return rows


def sweep_to_csv(rows):
    """Deterministic CSV text (shortest round-trip float formatting)."""
    lines = [SWEEP_CSV_HEADER]
    for r in rows:
        lines.append(
            ",".join(
                [repr(r.noise), repr(r.kl_nats), repr(r.collision_rate), repr(r.l_un), repr(r.l_neq), repr(r.l_eq), str(r.n)]
            )
        )
    return "\n".join(lines) + "\n"
