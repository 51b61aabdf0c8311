"""Synthetic dataset generation, manifest ingestion, and leakage-free splits.

Each eye is assigned one latent severity class; every visit produces a sample
whose features, clinical values (BCVA, CST), and biomarkers are drawn from
that class. A separation dial `delta` scales how far apart the per-class
clinical-value means sit (in units of the clinical sigma); at delta=0 the
clinical laws are identical across classes and clinical labels carry no class
information.

Manifest format (bit-exact):
  line 1   ``surrocon-manifest v1 input_dim=<d>``
  line 2   CSV header ``sample_id,eye_id,bcva,cst,b0,...,b15,offset``
  rows     one sample per line; biomarker slots are 0/1 or -1 for unknown;
           `offset` is the byte offset of the row's features in the sidecar
           ``.f64`` file (raw little-endian float64, row-major).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, IntegrityError, ParameterError, ParseError, ShortageError
from .numcore import Tensor
from .seeding import stream

N_BIOMARKER_SLOTS = 16
BCVA_RANGE = (0, 100)
CST_RANGE = (150, 600)

SPLIT_PRETRAIN = "pretrain"
SPLIT_PROBE = "probe"
SPLIT_TEST = "test"


@dataclass
class Sample:
    """One scan: features plus surrogate labels and a 16-slot biomarker vector."""

    sample_id: int
    eye_id: int
    bcva: int
    cst: int
    biomarkers: np.ndarray  # (16,) int8 of {0, 1, -1}; -1 means unknown
    features: Tensor

    def __post_init__(self):
        self.biomarkers = np.asarray(self.biomarkers, dtype=np.int8)
        if self.biomarkers.shape != (N_BIOMARKER_SLOTS,):
            raise ContractError(f"biomarker vector must have {N_BIOMARKER_SLOTS} slots")
        if not np.isin(self.biomarkers, (-1, 0, 1)).all():
            raise ContractError("biomarker slots must be 0, 1, or -1 (unknown)")

    @property
    def has_biomarkers(self):
        return bool((self.biomarkers >= 0).any())


@dataclass
class Dataset:
    """Samples plus an optional split assignment and a provenance string."""

    samples: list
    split: dict | None = None  # sample_id -> split name
    provenance: str = ""

    def __len__(self):
        return len(self.samples)

    @property
    def input_dim(self):
        return self.samples[0].features.shape[0]

    def eyes(self):
        return sorted({s.eye_id for s in self.samples})

    def subset(self, split_name):
        if self.split is None:
            raise ContractError("dataset has no split assignment yet")
        return [s for s in self.samples if self.split[s.sample_id] == split_name]

    def train_side(self):
        """Pretrain + probe samples (everything that is not test)."""
        if self.split is None:
            raise ContractError("dataset has no split assignment yet")
        return [s for s in self.samples if self.split[s.sample_id] != SPLIT_TEST]

    def validate_split_leakage(self):
        """Exhaustive eye-level leakage check: no eye on both sides."""
        if self.split is None:
            raise ContractError("dataset has no split assignment yet")
        train_eyes = {s.eye_id for s in self.samples if self.split[s.sample_id] != SPLIT_TEST}
        test_eyes = {s.eye_id for s in self.samples if self.split[s.sample_id] == SPLIT_TEST}
        overlap = train_eyes & test_eyes
        if overlap:
            raise ContractError(f"eyes on both sides of the split: {sorted(overlap)}")


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for the latent-class generator; `delta` is the clinical separability dial."""

    classes: int = 4
    class_prior: tuple = ()  # empty -> uniform
    input_dim: int = 24
    n_eyes: int = 96
    visits_per_eye: int = 40
    labeled_fraction: float = 0.35
    feature_sigma: float = 1.0
    feature_mean_scale: float = 0.3
    delta: float = 3.0
    bcva_base: int = 70
    bcva_sigma: float = 6.0
    cst_base: int = 260
    cst_sigma: float = 25.0
    biomarker_hi: float = 0.88
    biomarker_lo: float = 0.08

    def __post_init__(self):
        if self.classes < 1:
            raise ParameterError("classes must be >= 1")
        if self.class_prior and len(self.class_prior) != self.classes:
            raise ParameterError(f"class_prior needs {self.classes} entries")
        if self.class_prior and (min(self.class_prior) < 0 or abs(sum(self.class_prior) - 1.0) > 1e-9):
            raise ParameterError("class_prior must be a probability vector")
        for name in ("labeled_fraction", "biomarker_hi", "biomarker_lo"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name} must be in [0, 1], got {v}")
        if self.delta < 0:
            raise ParameterError("delta must be >= 0")
        if self.feature_sigma <= 0 or self.bcva_sigma <= 0 or self.cst_sigma <= 0:
            raise ParameterError("sigmas must be > 0")
        if self.n_eyes < 2 or self.visits_per_eye < 1 or self.input_dim < 1:
            raise ParameterError("counts must be positive (and n_eyes >= 2)")

    @property
    def prior(self):
        if self.class_prior:
            return np.asarray(self.class_prior, dtype=np.float64)
        return np.full(self.classes, 1.0 / self.classes)


def class_means(cfg, seed):
    """Per-class feature means, shared with the theory simulator."""
    rng = stream(seed, "class-means")
    return cfg.feature_mean_scale * rng.standard_normal((cfg.classes, cfg.input_dim))


def biomarker_probs(cfg):
    """p[slot, class]: presence probability; slots switch from lo to hi at a
    class threshold that cycles over slots, so severity makes biomarkers appear."""
    k = cfg.classes
    probs = np.empty((N_BIOMARKER_SLOTS, k))
    for j in range(N_BIOMARKER_SLOTS):
        threshold = 1 + (j % max(k - 1, 1))
        probs[j] = np.where(np.arange(k) >= threshold, cfg.biomarker_hi, cfg.biomarker_lo)
    return probs


def clinical_means(cfg):
    """Per-class BCVA/CST means: separated by delta sigmas per severity step."""
    c = np.arange(cfg.classes)
    bcva = cfg.bcva_base - c * cfg.delta * cfg.bcva_sigma
    cst = cfg.cst_base + c * cfg.delta * cfg.cst_sigma
    return bcva, cst


def _discretized_normal(rng, mean, sigma, lo, hi):
    return int(np.clip(round(rng.normal(mean, sigma)), lo, hi))


def eye_severity_classes(cfg, seed):
    """Hidden severity class per eye (one trajectory per eye, drawn from the prior)."""
    rng = stream(seed, "eye-classes")
    return rng.choice(cfg.classes, size=cfg.n_eyes, p=cfg.prior)


def generate(cfg, seed):
    """Draw a full synthetic dataset; identical (cfg, seed) gives identical bytes."""
    means = class_means(cfg, seed)
    bm_probs = biomarker_probs(cfg)
    bcva_means, cst_means = clinical_means(cfg)
    rng = stream(seed, "generate")
    eye_classes = eye_severity_classes(cfg, seed)
    samples = []
    sid = 0
    for eye in range(cfg.n_eyes):
        c = int(eye_classes[eye])
        for _ in range(cfg.visits_per_eye):
            features = means[c] + cfg.feature_sigma * rng.standard_normal(cfg.input_dim)
            bcva = _discretized_normal(rng, bcva_means[c], cfg.bcva_sigma, *BCVA_RANGE)
            cst = _discretized_normal(rng, cst_means[c], cfg.cst_sigma, *CST_RANGE)
            labeled = rng.random() < cfg.labeled_fraction
            draws = rng.random(N_BIOMARKER_SLOTS)
            if labeled:
                biomarkers = (draws < bm_probs[:, c]).astype(np.int8)
            else:
                biomarkers = np.full(N_BIOMARKER_SLOTS, -1, dtype=np.int8)
            samples.append(
                Sample(
                    sample_id=sid,
                    eye_id=eye,
                    bcva=bcva,
                    cst=cst,
                    biomarkers=biomarkers,
                    features=Tensor(features),
                )
            )
            sid += 1
    return Dataset(samples=samples, split=None, provenance=f"generated seed={seed}")


# --- manifest I/O -----------------------------------------------------------

_MANIFEST_V1 = "surrocon-manifest v1"
_CSV_COLUMNS = ["sample_id", "eye_id", "bcva", "cst"] + [f"b{j}" for j in range(N_BIOMARKER_SLOTS)] + ["offset"]


def sidecar_path(manifest_path):
    return Path(manifest_path).with_suffix(".f64")


def save_manifest(ds, manifest_path):
    """Write manifest text + feature sidecar; returns (manifest_path, sidecar_path)."""
    manifest_path = Path(manifest_path)
    side = sidecar_path(manifest_path)
    dim = ds.input_dim
    lines = [f"{_MANIFEST_V1} input_dim={dim}", ",".join(_CSV_COLUMNS)]
    blob = bytearray()
    for s in ds.samples:
        offset = len(blob)
        blob += s.features.to_bytes()
        fields = [s.sample_id, s.eye_id, s.bcva, s.cst, *s.biomarkers.tolist(), offset]
        lines.append(",".join(str(int(v)) for v in fields))
    manifest_path.write_bytes(("\n".join(lines) + "\n").encode())
    side.write_bytes(bytes(blob))
    return manifest_path, side


def load_manifest(manifest_path):
    """Parse a manifest + sidecar back into a Dataset."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ParseError(f"manifest not found: {manifest_path}")
    side = sidecar_path(manifest_path)
    if not side.exists():
        raise IntegrityError(f"feature sidecar not found: {side}")
    text = manifest_path.read_bytes().decode()
    lines = text.splitlines()
    if not lines:
        raise ParseError(f"{manifest_path}: empty manifest")
    header = lines[0].split()
    if len(header) != 3 or " ".join(header[:2]) != _MANIFEST_V1 or not header[2].startswith("input_dim="):
        raise ParseError(f"{manifest_path}: line 1: bad header {lines[0]!r}")
    try:
        dim = int(header[2].split("=", 1)[1])
    except ValueError as exc:
        raise ParseError(f"{manifest_path}: line 1: bad input_dim") from exc
    if dim < 1:
        raise ParseError(f"{manifest_path}: line 1: input_dim must be >= 1")
    if len(lines) < 2 or lines[1] != ",".join(_CSV_COLUMNS):
        raise ParseError(f"{manifest_path}: line 2: bad column header")
    blob = side.read_bytes()
    row_bytes = dim * 8
    samples = []
    for ln, line in enumerate(lines[2:], start=3):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != len(_CSV_COLUMNS):
            raise ParseError(f"{manifest_path}: line {ln}: expected {len(_CSV_COLUMNS)} fields, got {len(parts)}")
        try:
            values = [int(p) for p in parts]
        except ValueError as exc:
            raise ParseError(f"{manifest_path}: line {ln}: non-integer field") from exc
        sid, eye, bcva, cst = values[:4]
        biomarkers = np.asarray(values[4 : 4 + N_BIOMARKER_SLOTS], dtype=np.int8)
        offset = values[-1]
        if offset < 0 or offset + row_bytes > len(blob):
            raise IntegrityError(
                f"sample {sid}: feature blob truncated (offset {offset} + {row_bytes} > {len(blob)} bytes)"
            )
        features = Tensor.from_bytes(blob[offset : offset + row_bytes], (dim,))
        samples.append(
            Sample(sample_id=sid, eye_id=eye, bcva=bcva, cst=cst, biomarkers=biomarkers, features=features)
        )
    if not samples:
        raise ParseError(f"{manifest_path}: no sample rows")
    return Dataset(samples=samples, split=None, provenance=str(manifest_path))


def dataset_hash(manifest_path):
    """SHA-256 over manifest bytes + sidecar bytes."""
    manifest_path = Path(manifest_path)
    h = hashlib.sha256()
    h.update(manifest_path.read_bytes())
    h.update(sidecar_path(manifest_path).read_bytes())
    return h.hexdigest()


# --- splitting --------------------------------------------------------------


def split_by_eye(ds, test_fraction, seed):
    """Partition eyes into train/test sides; labeled train-side samples become
    the probe pool, the rest pretrain. Returns a new Dataset with assignments."""
    eyes = ds.eyes()
    if len(eyes) < 2:
        raise ContractError(f"need at least 2 eyes to split, got {len(eyes)}")
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n_test = int(np.clip(round(test_fraction * len(eyes)), 1, len(eyes) - 1))
    order = stream(seed, "eye-split").permutation(len(eyes))
    test_eyes = {eyes[i] for i in order[:n_test]}
    split = {}
    for s in ds.samples:
        if s.eye_id in test_eyes:
            split[s.sample_id] = SPLIT_TEST
        elif s.has_biomarkers:
            split[s.sample_id] = SPLIT_PROBE
        else:
            split[s.sample_id] = SPLIT_PRETRAIN
    out = Dataset(samples=ds.samples, split=split, provenance=ds.provenance)
    out.validate_split_leakage()
    return out


def balanced_test_set(ds, biomarker_index, n_per_class, seed):
    """Exactly n_per_class present + n_per_class absent test samples for one slot."""
    if not 0 <= biomarker_index < N_BIOMARKER_SLOTS:
        raise ParameterError(f"biomarker index must be in [0, {N_BIOMARKER_SLOTS}), got {biomarker_index}")
    if n_per_class < 1:
        raise ParameterError("n_per_class must be >= 1")
    pool = ds.subset(SPLIT_TEST)
    present = [s for s in pool if s.biomarkers[biomarker_index] == 1]
    absent = [s for s in pool if s.biomarkers[biomarker_index] == 0]
    if len(present) < n_per_class or len(absent) < n_per_class:
        raise ShortageError(
            f"slot {biomarker_index}: need {n_per_class} per class, "
            f"have {len(present)} present / {len(absent)} absent"
        )
    rng = stream(seed, "balanced", biomarker_index)
    pick_p = rng.choice(len(present), size=n_per_class, replace=False)
    pick_a = rng.choice(len(absent), size=n_per_class, replace=False)
    return [present[i] for i in pick_p] + [absent[i] for i in pick_a]
