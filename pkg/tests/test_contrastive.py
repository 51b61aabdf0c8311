import math

import numpy as np
import pytest

from surrocon import numcore as nc
from surrocon.contrastive import (
    AugmentSpec,
    LabelKey,
    PosNegSets,
    augment,
    build_sets,
    make_views,
    ntxent_loss,
    supcon_loss,
)
from surrocon.dataforge import Sample
from surrocon.errors import ContractError, EmptyLossError, ParameterError
from surrocon.numcore import Tensor
from surrocon.seeding import stream

from conftest import central_diff, rel_err


def _sample(sid, eye=0, bcva=70, cst=250, features=None):
    return Sample(
        sample_id=sid,
        eye_id=eye,
        bcva=bcva,
        cst=cst,
        biomarkers=np.full(16, -1, dtype=np.int8),
        features=Tensor(features if features is not None else np.arange(4, dtype=float) + sid),
    )


def _unit_rows(rng, n, d):
    z = rng.standard_normal((n, d))
    return z / np.sqrt((z * z).sum(axis=1, keepdims=True))


def supcon_oracle(z, sets, tau):
    """Term-by-term scalar evaluation of the loss formula (no numpy reductions)."""
    z = np.asarray(z)
    total, contributing = 0.0, 0
    for i in range(sets.n):
        pos = sets.pos[i].tolist()
        if not pos:
            continue
        denom = sum(math.exp(float(np.dot(z[i], z[a])) / tau) for a in sets.others[i].tolist())
        per_anchor = 0.0
        for c in pos:
            per_anchor += -math.log(math.exp(float(np.dot(z[i], z[c])) / tau) / denom)
        total += per_anchor / len(pos)
        contributing += 1
    return total / contributing


# --- label keys & augmentation ----------------------------------------------


def test_label_key_kinds():
    s = _sample(3, eye=9, bcva=55, cst=287)
    assert LabelKey("eye").of(s) == 9
    assert LabelKey("bcva").of(s) == 55
    assert LabelKey("cst").of(s) == 287
    assert LabelKey("cst", bin_width=10).of(s) == 28
    assert LabelKey("unique").of(s) == 3
    with pytest.raises(ParameterError):
        LabelKey("visit")
    with pytest.raises(ParameterError):
        LabelKey("bcva", bin_width=5)


def test_augment_spec_validation():
    with pytest.raises(ParameterError):
        AugmentSpec(mask_p=1.0)
    with pytest.raises(ParameterError):
        AugmentSpec(sigma=-0.1)
    assert AugmentSpec().is_identity


def test_augment_identity():
    x = Tensor(np.arange(8, dtype=float))
    out = augment(x, AugmentSpec(), stream(0, "t"))
    assert out.data.tolist() == x.data.tolist()


def test_augment_mask_binomial_bound():
    x = Tensor(np.ones(1000))
    out = augment(x, AugmentSpec(mask_p=0.5), stream(42, "t"))
    zeros = int((out.data == 0).sum())
    assert abs(zeros - 500) <= 4 * math.sqrt(1000 * 0.25)


def test_augment_deterministic():
    x = Tensor(np.arange(16, dtype=float))
    spec = AugmentSpec(sigma=0.3, mask_p=0.2, flip=True, crop_pad=2)
    a = augment(x, spec, stream(7, "aug"))
    b = augment(x, spec, stream(7, "aug"))
    assert a.data.tolist() == b.data.tolist()


def test_augment_crop_shifts_with_zero_fill():
    x = Tensor(np.arange(1, 7, dtype=float))
    # draw until both directions observed; each shifted output keeps a zero pad
    seen = set()
    for s in range(30):
        out = augment(x, AugmentSpec(crop_pad=2), stream(s, "crop")).data
        nz = out != 0
        seen.add(out.tolist()[0])
        assert out.sum() <= x.data.sum() and nz.sum() >= 4
    assert 0.0 in seen  # at least one positive shift zeroed the front


# --- view batches -------------------------------------------------------------


def test_make_views_duplicates_labels():
    samples = [_sample(0, cst=5), _sample(1, cst=5), _sample(2, cst=7)]
    vb = make_views(samples, LabelKey("cst"), AugmentSpec(), rng_seed=0)
    assert vb.labels.tolist() == [5, 5, 5, 5, 7, 7]
    assert vb.origin.tolist() == [0, 0, 1, 1, 2, 2]
    assert vb.n_views == 6


def test_make_views_identity_twins_equal():
    samples = [_sample(i) for i in range(3)]
    vb = make_views(samples, LabelKey("unique"), AugmentSpec(), rng_seed=1)
    v = vb.views.data
    for k in range(3):
        assert v[2 * k].tolist() == v[2 * k + 1].tolist()


def test_make_views_deterministic():
    samples = [_sample(i) for i in range(4)]
    spec = AugmentSpec(sigma=0.5, mask_p=0.25)
    a = make_views(samples, LabelKey("eye"), spec, rng_seed=9)
    b = make_views(samples, LabelKey("eye"), spec, rng_seed=9)
    assert a.views.data.tolist() == b.views.data.tolist()
    assert a.labels.tolist() == b.labels.tolist()


def test_make_views_rejects_tiny_batch():
    with pytest.raises(ContractError):
        make_views([_sample(0)], LabelKey("eye"), AugmentSpec(), rng_seed=0)


def test_label_key_swap_changes_only_labels():
    samples = [_sample(i, eye=i // 2, cst=300 + i) for i in range(4)]
    spec = AugmentSpec(sigma=0.5, mask_p=0.1)
    a = make_views(samples, LabelKey("eye"), spec, rng_seed=3)
    b = make_views(samples, LabelKey("unique"), spec, rng_seed=3)
    assert a.views.data.tolist() == b.views.data.tolist()
    assert a.labels.tolist() != b.labels.tolist()


# --- positive/candidate sets --------------------------------------------------


def test_build_sets_enumeration():
    samples = [_sample(0, cst=5), _sample(1, cst=5), _sample(2, cst=7)]
    vb = make_views(samples, LabelKey("cst"), AugmentSpec(), rng_seed=0)
    sets = build_sets(vb)
    sets.validate()
    assert sets.pos[0].tolist() == [1, 2, 3]
    assert sets.others[0].tolist() == [1, 2, 3, 4, 5]
    assert all(sets.others[i].size == 5 for i in range(6))


def test_build_sets_unique_labels_gives_twins():
    samples = [_sample(i) for i in range(4)]
    vb = make_views(samples, LabelKey("unique"), AugmentSpec(), rng_seed=0)
    sets = build_sets(vb)
    for i in range(8):
        assert sets.pos[i].tolist() == [vb.twin(i)]


def test_build_sets_all_equal_labels():
    samples = [_sample(i, eye=1) for i in range(3)]
    vb = make_views(samples, LabelKey("eye"), AugmentSpec(), rng_seed=0)
    sets = build_sets(vb)
    for i in range(6):
        assert sets.pos[i].tolist() == sets.others[i].tolist()


# --- losses -------------------------------------------------------------------


def test_supcon_two_views_loss_zero(rng):
    z = nc.leaf(_unit_rows(rng, 2, 4))
    sets = PosNegSets(pos=[np.array([1]), np.array([0])], others=[np.array([1]), np.array([0])])
    assert abs(supcon_loss(z, sets, 0.07).value.item()) < 1e-12


def test_supcon_symmetric_anchor_ln2():
    # anchor 0 with one positive and one negative at equal similarity
    z = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    sets = PosNegSets(
        pos=[np.array([1]), np.array([], dtype=int), np.array([], dtype=int)],
        others=[np.array([1, 2]), np.array([0, 2]), np.array([0, 1])],
    )
    for tau in (0.07, 0.5, 1.0):
        loss = supcon_loss(nc.leaf(z), sets, tau)
        assert loss.value.item() == pytest.approx(math.log(2), abs=1e-12)


def test_supcon_matches_direct_summation_oracle(rng):
    samples = [_sample(i, eye=[0, 0, 1, 1][i]) for i in range(4)]
    vb = make_views(samples, LabelKey("eye"), AugmentSpec(sigma=0.1), rng_seed=5)
    sets = build_sets(vb)
    z = _unit_rows(rng, 8, 6)
    loss = supcon_loss(nc.leaf(z), sets, 0.07)
    assert loss.value.item() == pytest.approx(supcon_oracle(z, sets, 0.07), abs=1e-10)


def test_supcon_parameter_and_empty_errors(rng):
    z = nc.leaf(_unit_rows(rng, 4, 3))
    samples = [_sample(i) for i in range(2)]
    sets = build_sets(make_views(samples, LabelKey("unique"), AugmentSpec(), rng_seed=0))
    with pytest.raises(ParameterError):
        supcon_loss(z, sets, 0.0)
    empty = PosNegSets(
        pos=[np.array([], dtype=int)] * 4,
        others=[np.delete(np.arange(4), i) for i in range(4)],
    )
    with pytest.raises(EmptyLossError):
        supcon_loss(z, empty, 0.07)


def test_supcon_rejects_unnormalized_rows(rng):
    z = nc.leaf(rng.standard_normal((4, 3)) * 3)
    samples = [_sample(i) for i in range(2)]
    sets = build_sets(make_views(samples, LabelKey("unique"), AugmentSpec(), rng_seed=0))
    with pytest.raises(ContractError):
        supcon_loss(z, sets, 0.07)


def test_ntxent_identity_with_unique_supcon(rng):
    samples = [_sample(i) for i in range(4)]
    sets = build_sets(make_views(samples, LabelKey("unique"), AugmentSpec(), rng_seed=0))
    z = _unit_rows(rng, 8, 5)
    a = supcon_loss(nc.leaf(z), sets, 0.07).value.item()
    b = ntxent_loss(nc.leaf(z), sets, 0.07).value.item()
    assert a == b  # bit-for-bit


def test_ntxent_matches_oracle_and_rejects_rich_sets(rng):
    samples = [_sample(i) for i in range(2)]
    sets = build_sets(make_views(samples, LabelKey("unique"), AugmentSpec(), rng_seed=0))
    z = _unit_rows(rng, 4, 4)
    loss = ntxent_loss(nc.leaf(z), sets, 0.07)
    assert loss.value.item() == pytest.approx(supcon_oracle(z, sets, 0.07), abs=1e-10)
    rich = PosNegSets(
        pos=[np.array([1, 2]), np.array([0]), np.array([0]), np.array([], dtype=int)],
        others=[np.delete(np.arange(4), i) for i in range(4)],
    )
    with pytest.raises(ContractError):
        ntxent_loss(nc.leaf(z), rich, 0.07)


def test_supcon_invariant_to_set_order(rng):
    samples = [_sample(i, eye=i % 2) for i in range(4)]
    sets = build_sets(make_views(samples, LabelKey("eye"), AugmentSpec(), rng_seed=2))
    z = _unit_rows(rng, 8, 4)
    base = supcon_loss(nc.leaf(z), sets, 0.07).value.item()
    perm = PosNegSets(
        pos=[np.random.default_rng(i).permutation(p) for i, p in enumerate(sets.pos)],
        others=[np.random.default_rng(100 + i).permutation(a) for i, a in enumerate(sets.others)],
    )
    assert supcon_loss(nc.leaf(z), perm, 0.07).value.item() == pytest.approx(base, abs=1e-12)


def test_supcon_invariant_under_rotation(rng):
    samples = [_sample(i, eye=i % 2) for i in range(4)]
    sets = build_sets(make_views(samples, LabelKey("eye"), AugmentSpec(), rng_seed=2))
    z = _unit_rows(rng, 8, 5)
    q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    base = supcon_loss(nc.leaf(z), sets, 0.07).value.item()
    rotated = supcon_loss(nc.leaf(z @ q), sets, 0.07).value.item()
    assert rotated == pytest.approx(base, abs=1e-9)


def test_supcon_gradcheck(rng):
    for seed in range(5):
        r = np.random.default_rng(seed)
        samples = [_sample(i, eye=i % 2) for i in range(3)]
        sets = build_sets(make_views(samples, LabelKey("eye"), AugmentSpec(), rng_seed=seed))
        z0 = _unit_rows(r, 6, 4)
        z = nc.leaf(z0)
        nc.backward(supcon_loss(z, sets, 0.07))

        def f(v):
            return supcon_oracle(v, sets, 0.07)

        assert rel_err(z.grad, central_diff(f, z0)) < 1e-4


def test_ntxent_gradcheck(rng):
    samples = [_sample(i) for i in range(3)]
    sets = build_sets(make_views(samples, LabelKey("unique"), AugmentSpec(), rng_seed=1))
    z0 = _unit_rows(rng, 6, 4)
    z = nc.leaf(z0)
    nc.backward(ntxent_loss(z, sets, 0.07))
    assert rel_err(z.grad, central_diff(lambda v: supcon_oracle(v, sets, 0.07), z0)) < 1e-4


def test_loss_decreases_under_gradient_descent(rng):
    samples = [_sample(i, eye=i % 2) for i in range(4)]
    sets = build_sets(make_views(samples, LabelKey("eye"), AugmentSpec(), rng_seed=3))
    u0 = rng.standard_normal((8, 4))
    u = nc.leaf(u0)
    losses = []
    for _ in range(10):
        loss = supcon_loss(nc.l2_normalize(u), sets, 0.5)
        losses.append(loss.value.item())
        u.zero_grad()
        nc.backward(loss)
        u.set_value(Tensor(u.value.data - 0.1 * u.grad))
    increases = sum(1 for a, b in zip(losses, losses[1:]) if b >= a)
    assert increases <= 1
    assert losses[-1] < losses[0]
