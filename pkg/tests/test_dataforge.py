import numpy as np
import pytest
from scipy import stats

from surrocon import dataforge as df
from surrocon.errors import ContractError, IntegrityError, ParameterError, ParseError, ShortageError


def _tiny_cfg(**kw):
    base = dict(n_eyes=12, visits_per_eye=5, input_dim=6, labeled_fraction=0.6)
    base.update(kw)
    return df.GeneratorConfig(**base)


def _datasets_equal(a, b):
    if len(a) != len(b):
        return False
    for s, t in zip(a.samples, b.samples):
        if (s.sample_id, s.eye_id, s.bcva, s.cst) != (t.sample_id, t.eye_id, t.bcva, t.cst):
            return False
        if s.biomarkers.tolist() != t.biomarkers.tolist():
            return False
        if s.features.to_bytes() != t.features.to_bytes():
            return False
    return True


# --- generator ----------------------------------------------------------------


def test_generate_shapes_and_ranges():
    ds = df.generate(_tiny_cfg(), seed=3)
    assert len(ds) == 60
    for s in ds.samples:
        assert df.BCVA_RANGE[0] <= s.bcva <= df.BCVA_RANGE[1]
        assert df.CST_RANGE[0] <= s.cst <= df.CST_RANGE[1]
        assert s.features.shape == (6,)
    labeled = sum(s.has_biomarkers for s in ds.samples)
    assert 0 < labeled < 60


def test_generate_deterministic(tmp_path):
    cfg = _tiny_cfg()
    a, b = df.generate(cfg, seed=5), df.generate(cfg, seed=5)
    assert _datasets_equal(a, b)
    df.save_manifest(a, tmp_path / "a.manifest")
    df.save_manifest(b, tmp_path / "b.manifest")
    assert (tmp_path / "a.manifest").read_bytes() == (tmp_path / "b.manifest").read_bytes()
    assert (tmp_path / "a.f64").read_bytes() == (tmp_path / "b.f64").read_bytes()


def test_generate_eye_has_one_trajectory():
    cfg = _tiny_cfg()
    ds = df.generate(cfg, seed=9)
    classes = df.eye_severity_classes(cfg, 9)
    # all samples of one eye share the class-conditional biomarker behavior:
    # regenerate and check eye ids group contiguous sample ids
    for s in ds.samples:
        assert s.eye_id == s.sample_id // cfg.visits_per_eye
    assert classes.shape == (cfg.n_eyes,)


def test_delta_zero_clinical_laws_identical():
    cfg = df.GeneratorConfig(n_eyes=200, visits_per_eye=50, input_dim=4, delta=0.0, labeled_fraction=0.0)
    ds = df.generate(cfg, seed=17)
    classes = df.eye_severity_classes(cfg, 17)
    by_class = {}
    for s in ds.samples:
        by_class.setdefault(int(classes[s.eye_id]), []).append(s.bcva)
    groups = sorted(by_class.items(), key=lambda kv: -len(kv[1]))[:2]
    _, p = stats.ttest_ind(groups[0][1], groups[1][1], equal_var=False)
    assert p > 0.01  # same law across classes at delta=0


def test_delta_large_separates_clinical_by_biomarker():
    cfg = df.GeneratorConfig(n_eyes=150, visits_per_eye=30, input_dim=4, delta=3.0, labeled_fraction=0.8)
    ds = df.generate(cfg, seed=21)
    slot = 1  # threshold slot: present only above a severity class
    present = [s.cst for s in ds.samples if s.biomarkers[slot] == 1]
    absent = [s.cst for s in ds.samples if s.biomarkers[slot] == 0]
    assert np.mean(present) - np.mean(absent) > cfg.cst_sigma  # clearly separated means


def test_generator_config_validation():
    with pytest.raises(ParameterError):
        df.GeneratorConfig(labeled_fraction=1.5)
    with pytest.raises(ParameterError):
        df.GeneratorConfig(delta=-1.0)
    with pytest.raises(ParameterError):
        df.GeneratorConfig(class_prior=(0.5, 0.2), classes=3)


# --- manifest I/O ---------------------------------------------------------------


def test_manifest_roundtrip(tmp_path):
    ds = df.generate(_tiny_cfg(), seed=5)
    path, side = df.save_manifest(ds, tmp_path / "data.manifest")
    back = df.load_manifest(path)
    assert _datasets_equal(ds, back)
    first = path.read_bytes().decode().splitlines()[0]
    assert first == "surrocon-manifest v1 input_dim=6"


def test_manifest_unknown_slots_roundtrip(tmp_path):
    ds = df.generate(_tiny_cfg(labeled_fraction=0.3), seed=6)
    assert any(not s.has_biomarkers for s in ds.samples)
    back = df.load_manifest(df.save_manifest(ds, tmp_path / "d.manifest")[0])
    unlabeled = [s for s in back.samples if not s.has_biomarkers]
    assert unlabeled and all((s.biomarkers == -1).all() for s in unlabeled)


def test_manifest_truncated_blob_names_sample(tmp_path):
    ds = df.generate(_tiny_cfg(), seed=7)
    path, side = df.save_manifest(ds, tmp_path / "d.manifest")
    side.write_bytes(side.read_bytes()[:-16])
    with pytest.raises(IntegrityError, match=f"sample {ds.samples[-1].sample_id}"):
        df.load_manifest(path)


def test_manifest_malformed_row_reports_line(tmp_path):
    ds = df.generate(_tiny_cfg(), seed=7)
    path, _ = df.save_manifest(ds, tmp_path / "d.manifest")
    lines = path.read_bytes().decode().splitlines()
    lines[4] = lines[4].rsplit(",", 1)[0]  # drop a field on manifest line 5
    path.write_bytes(("\n".join(lines) + "\n").encode())
    with pytest.raises(ParseError, match="line 5"):
        df.load_manifest(path)


def test_manifest_bad_header(tmp_path):
    p = tmp_path / "x.manifest"
    p.write_text("not-a-manifest v9 input_dim=4\n")
    (tmp_path / "x.f64").write_bytes(b"")
    with pytest.raises(ParseError):
        df.load_manifest(p)


def test_manifest_missing_file(tmp_path):
    with pytest.raises(ParseError):
        df.load_manifest(tmp_path / "nope.manifest")


def test_dataset_hash_stable(tmp_path):
    ds = df.generate(_tiny_cfg(), seed=5)
    path, _ = df.save_manifest(ds, tmp_path / "d.manifest")
    assert df.dataset_hash(path) == df.dataset_hash(path)


# --- splits ---------------------------------------------------------------------


def test_split_by_eye_counts_and_leakage():
    cfg = df.GeneratorConfig(n_eyes=96, visits_per_eye=2, input_dim=4)
    ds = df.split_by_eye(df.generate(cfg, seed=1), test_fraction=20 / 96, seed=11)
    ds.validate_split_leakage()
    test_eyes = {s.eye_id for s in ds.subset(df.SPLIT_TEST)}
    train_eyes = {s.eye_id for s in ds.train_side()}
    assert len(test_eyes) == 20
    assert not (test_eyes & train_eyes)
    for s in ds.samples:  # every sample of a test eye is test-side
        if s.eye_id in test_eyes:
            assert ds.split[s.sample_id] == df.SPLIT_TEST


def test_split_deterministic():
    ds = df.generate(_tiny_cfg(), seed=2)
    a = df.split_by_eye(ds, 0.25, seed=4)
    b = df.split_by_eye(ds, 0.25, seed=4)
    assert a.split == b.split


def test_split_needs_two_eyes():
    cfg = _tiny_cfg()
    ds = df.generate(cfg, seed=2)
    one_eye = df.Dataset(samples=[s for s in ds.samples if s.eye_id == 0])
    with pytest.raises(ContractError):
        df.split_by_eye(one_eye, 0.5, seed=0)


def test_probe_split_is_labeled_train_side():
    ds = df.split_by_eye(df.generate(_tiny_cfg(), seed=3), 0.25, seed=5)
    for s in ds.subset(df.SPLIT_PROBE):
        assert s.has_biomarkers
    for s in ds.subset(df.SPLIT_PRETRAIN):
        assert not s.has_biomarkers


# --- balanced test sets -----------------------------------------------------------


def test_balanced_test_set_exact():
    cfg = df.GeneratorConfig(n_eyes=60, visits_per_eye=20, input_dim=4, labeled_fraction=0.9)
    ds = df.split_by_eye(df.generate(cfg, seed=8), 0.3, seed=9)
    chosen = df.balanced_test_set(ds, biomarker_index=1, n_per_class=50, seed=13)
    values = [int(s.biomarkers[1]) for s in chosen]
    assert len(chosen) == 100
    assert values.count(1) == 50 and values.count(0) == 50
    assert all(v in (0, 1) for v in values)  # never unknown
    ids = [s.sample_id for s in chosen]
    assert len(set(ids)) == len(ids)  # without replacement


def test_balanced_test_set_deterministic():
    cfg = df.GeneratorConfig(n_eyes=40, visits_per_eye=10, input_dim=4, labeled_fraction=0.9)
    ds = df.split_by_eye(df.generate(cfg, seed=8), 0.3, seed=9)
    a = df.balanced_test_set(ds, 2, 10, seed=3)
    b = df.balanced_test_set(ds, 2, 10, seed=3)
    assert [s.sample_id for s in a] == [s.sample_id for s in b]


def test_balanced_test_set_shortage_reports_counts():
    ds = df.split_by_eye(df.generate(_tiny_cfg(), seed=3), 0.25, seed=5)
    with pytest.raises(ShortageError, match="present"):
        df.balanced_test_set(ds, 0, 10_000, seed=1)
