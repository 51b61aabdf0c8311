"""Two-stage pipeline: contrastive pretraining on a surrogate label, then a
frozen-encoder linear probe trained with masked per-slot BCE.

All shuffling/augmentation randomness is derived from the run seed via
per-purpose streams (shuffle seeds are hash(base_seed, epoch)), so a fixed
(config, seed, dataset) triple reproduces checkpoints and reports
byte-for-byte.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .contrastive import AugmentSpec, LabelKey, build_sets, make_views, supcon_loss
from .dataforge import SPLIT_PROBE, SPLIT_TEST, balanced_test_set
from .encoder import LinearProbe, probe_logits
from .errors import ContractError, NonFiniteError, ParameterError
from .metrics import aggregate_reports, build_report, slot_metrics
from .numcore import Tensor
from .seeding import child_seed, stream


@dataclass(frozen=True)
class TrainConfig:
    """Pretraining hyperparameters (paper-scale values stay expressible)."""

    label_key: LabelKey = LabelKey("cst", bin_width=10)
    temperature: float = 0.07
    batch_size: int = 32
    epochs: int = 10
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 1
    augment: AugmentSpec = field(default_factory=lambda: AugmentSpec(sigma=0.4, mask_p=0.1))
    pretrain_pool: str = "train"  # "train" = all train-side samples, "pretrain" = unlabeled only

    def __post_init__(self):
        if self.lr <= 0:
            raise ParameterError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 2:
            raise ParameterError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.temperature <= 0:
            raise ParameterError(f"temperature must be > 0, got {self.temperature}")
        if self.pretrain_pool not in ("train", "pretrain"):
            raise ParameterError(f"pretrain_pool must be 'train' or 'pretrain', got {self.pretrain_pool!r}")


@dataclass(frozen=True)
class ProbeConfig:
    """Linear-probe hyperparameters; `max_samples` caps the probe pool (0 = no cap)."""

    slots: tuple = (0, 1, 2, 3, 4)
    epochs: int = 25
    lr: float = 0.2
    momentum: float = 0.9
    batch_size: int = 64
    max_samples: int = 400
    seed: int = 1

    def __post_init__(self):
        if not self.slots:
            raise ParameterError("probe needs at least one biomarker slot")
        if len(set(self.slots)) != len(self.slots):
            raise ParameterError("probe slots must be distinct")
        if self.lr <= 0 or not 0.0 <= self.momentum < 1.0:
            raise ParameterError("bad probe lr/momentum")
        if self.epochs < 1 or self.batch_size < 1 or self.max_samples < 0:
            raise ParameterError("bad probe epochs/batch_size/max_samples")


@dataclass
class RunRecord:
    """Per-epoch losses plus identifying hashes. Wall time is kept on the
    object for operator output but deliberately left out of the serialized
    form so identical runs produce identical artifact bytes."""

    stage: str
    epoch_losses: list
    config_hash: str = ""
    dataset_hash: str = ""
    checkpoint: str | None = None
    wall_time_s: float | None = None

    def to_json_dict(self):
        return {
            "stage": self.stage,
            "epoch_losses": list(self.epoch_losses),
            "config_hash": self.config_hash,
            "dataset_hash": self.dataset_hash,
            "checkpoint": self.checkpoint,
        }


def sgd_step(value, grad, velocity, lr, momentum):
    """One momentum step: v <- momentum*v + g; p <- p - lr*v. Pure on arrays."""
    value = np.asarray(value, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    if value.shape != grad.shape or value.shape != velocity.shape:
        raise ContractError(
            f"sgd_step shapes differ: value {value.shape}, grad {grad.shape}, velocity {velocity.shape}"
        )
    new_velocity = momentum * velocity + grad
    return value - lr * new_velocity, new_velocity


class SgdMomentum:
    """Momentum SGD over a fixed list of parameter nodes."""

    def __init__(self, params, lr, momentum):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = [np.zeros(p.value.shape) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                grad = np.zeros(p.value.shape)
            else:
                grad = p.grad
            new_value, self.velocity[i] = sgd_step(p.value.data, grad, self.velocity[i], self.lr, self.momentum)
            p.set_value(Tensor(new_value))


def _pretrain_pool(ds, which):
    if ds.split is None:
        return list(ds.samples)
    if which == "train":
        return ds.train_side()
    return ds.subset("pretrain")


def pretrain(ds, encoder, head, cfg):
    """Contrastive pretraining of encoder+head; returns a RunRecord.

    Batches are a fresh per-epoch permutation of the pool; trailing fragments
    of fewer than 2 samples are dropped (a view batch needs 2 samples).
    """
    pool = _pretrain_pool(ds, cfg.pretrain_pool)
    if len(pool) < 2:
        raise ContractError(f"pretraining pool has {len(pool)} samples, need >= 2")
    t0 = time.monotonic()
    opt = SgdMomentum(encoder.params + head.params, cfg.lr, cfg.momentum)
    epoch_losses = []
    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, "shuffle", epoch).permutation(len(pool))
        batch_losses = []
        for bi, start in enumerate(range(0, len(pool), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            if idx.size < 2:
                continue
            batch = [pool[i] for i in idx]
            vb = make_views(batch, cfg.label_key, cfg.augment, child_seed(cfg.seed, "views", epoch, bi))
            sets = build_sets(vb)
            try:
                z = head.project(encoder.encode(vb.views))
                loss = supcon_loss(z, sets, cfg.temperature)
                opt.zero_grad()
                nc.backward(loss)
                opt.step()
            except NonFiniteError as exc:
                labels, counts = np.unique(vb.labels, return_counts=True)
                raise NonFiniteError(
                    f"pretraining aborted at epoch {epoch} batch {bi}: {exc} "
                    f"(views={vb.n_views}, contributing={len(sets.contributing())}, "
                    f"label sizes={counts.tolist()})"
                ) from exc
            batch_losses.append(loss.value.item())
        if not batch_losses:
            raise ContractError("no batch had >= 2 samples; lower batch_size or add data")
        epoch_losses.append(float(np.mean(batch_losses)))
    return RunRecord(stage="pretrain", epoch_losses=epoch_losses, wall_time_s=time.monotonic() - t0)


def _probe_pool(ds, slots, cfg):
    if ds.split is None:
        pool = [s for s in ds.samples if s.has_biomarkers]
    else:
        pool = ds.subset(SPLIT_PROBE)
    pool = [s for s in pool if (s.biomarkers[list(slots)] >= 0).any()]
    for j in slots:
        if not any(s.biomarkers[j] >= 0 for s in pool):
            raise ContractError(f"biomarker slot {j} is unknown for every probe sample")
    if cfg.max_samples and len(pool) > cfg.max_samples:
        pick = stream(cfg.seed, "probe-subsample").choice(len(pool), size=cfg.max_samples, replace=False)
        pool = [pool[i] for i in sorted(pick)]
    return pool


def _probe_targets(samples, slots):
    raw = np.stack([s.biomarkers[list(slots)] for s in samples]).astype(np.float64)
    mask = (raw >= 0).astype(np.float64)
    return np.where(raw > 0, 1.0, 0.0), mask


def masked_bce_loss(logits, targets, mask):
    """Mean sigmoid BCE over known slots only; unknown slots get zero gradient."""
    known = float(mask.sum())
    if known == 0:
        raise ContractError("no known labels in batch")
    per = nc.sub(nc.softplus(logits), nc.mul_const(logits, targets))
    return nc.scale(nc.sum_all(nc.mul_const(per, mask)), 1.0 / known)


def train_probe(ds, encoder, cfg):
    """Train a linear probe on frozen representations; encoder params untouched."""
    pool = _probe_pool(ds, cfg.slots, cfg)
    if not pool:
        raise ContractError("probe pool is empty")
    t0 = time.monotonic()
    feats = np.stack([s.features.data for s in pool])
    reps = encoder.encode_values(feats).data  # frozen: plain values, no tape into f
    targets, mask = _probe_targets(pool, cfg.slots)
    probe = LinearProbe(encoder.repr_dim, len(cfg.slots), child_seed(cfg.seed, "probe-init"))
    opt = SgdMomentum(probe.params, cfg.lr, cfg.momentum)
    epoch_losses = []
    n = len(pool)
    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, "probe-shuffle", epoch).permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            m = mask[idx]
            if m.sum() == 0:
                continue
            loss = masked_bce_loss(probe.logits_node(reps[idx]), targets[idx], m)
            opt.zero_grad()
            nc.backward(loss)
            opt.step()
            batch_losses.append(loss.value.item())
        epoch_losses.append(float(np.mean(batch_losses)))
    record = RunRecord(stage="probe", epoch_losses=epoch_losses, wall_time_s=time.monotonic() - t0)
    return record, probe


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def evaluate(encoder, probe, ds, slots, n_per_class, eval_seed):
    """Balanced per-slot test sets -> confusion metrics at threshold 0.5 + AUROC."""
    if tuple(slots) == ():
        raise ContractError("evaluate needs at least one slot")
    if probe.num_outputs != len(slots):
        raise ContractError(f"probe has {probe.num_outputs} outputs for {len(slots)} slots")
    per_slot = []
    for col, j in enumerate(slots):
        chosen = balanced_test_set(ds, j, n_per_class, eval_seed)
        feats = np.stack([s.features.data for s in chosen])
        reps = encoder.encode_values(feats)
        scores = _sigmoid(probe_logits(probe, reps).data[:, col])
        labels = np.asarray([int(s.biomarkers[j]) for s in chosen])
        per_slot.append(slot_metrics(f"b{j}", labels, scores))
    return build_report(per_slot)


def probe_and_evaluate(ds, encoder, probe_cfg, n_per_class, eval_seed, seeds=None):
    """Train/evaluate the probe for one or more seeds; multi-seed runs are
    aggregated into mean/std statistics over a fixed set of balanced test sets."""
    seeds = list(seeds) if seeds is not None else [probe_cfg.seed]
    before = encoder.checksum()
    reports, records = [], []
    for s in seeds:
        cfg = ProbeConfig(
            slots=probe_cfg.slots,
            epochs=probe_cfg.epochs,
            lr=probe_cfg.lr,
            momentum=probe_cfg.momentum,
            batch_size=probe_cfg.batch_size,
            max_samples=probe_cfg.max_samples,
            seed=s,
        )
        record, probe = train_probe(ds, encoder, cfg)
        reports.append(evaluate(encoder, probe, ds, cfg.slots, n_per_class, eval_seed))
        records.append(record)
    if encoder.checksum() != before:
        raise ContractError("probe training modified the frozen encoder")
    if len(reports) == 1:
        return reports[0], records
    return aggregate_reports(reports, seeds), records
