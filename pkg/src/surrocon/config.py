"""Flat `section.key = value` run configs with a strict key registry.

Unknown keys are rejected by name; every artifact a run writes embeds (or is
accompanied by) the SHA-256 hash of the fully resolved config, so outputs can
always be traced back to the exact settings that produced them.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from .contrastive import AugmentSpec, LabelKey
from .dataforge import GeneratorConfig
from .errors import ConfigError
from .trainloop import ProbeConfig, TrainConfig

_LIST_FLOAT = "list_float"
_LIST_INT = "list_int"

# key -> (type, default, choices-or-None)
KEY_SPEC = {
    "generator.classes": (int, 4, None),
    "generator.class_prior": (_LIST_FLOAT, (), None),
    "generator.input_dim": (int, 24, None),
    "generator.n_eyes": (int, 96, None),
    "generator.visits_per_eye": (int, 40, None),
    "generator.labeled_fraction": (float, 0.35, None),
    "generator.feature_sigma": (float, 1.0, None),
    "generator.feature_mean_scale": (float, 0.3, None),
    "generator.delta": (float, 3.0, None),
    "generator.bcva_base": (int, 70, None),
    "generator.bcva_sigma": (float, 6.0, None),
    "generator.cst_base": (int, 260, None),
    "generator.cst_sigma": (float, 25.0, None),
    "generator.biomarker_hi": (float, 0.88, None),
    "generator.biomarker_lo": (float, 0.08, None),
    "generator.seed": (int, 7, None),
    "split.test_fraction": (float, 20 / 96, None),
    "split.seed": (int, 11, None),
    "augment.sigma": (float, 0.4, None),
    "augment.mask_p": (float, 0.1, None),
    "augment.flip": (bool, False, None),
    "augment.crop_pad": (int, 0, None),
    "encoder.hidden_dims": (_LIST_INT, (256,), None),
    "encoder.repr_dim": (int, 64, None),
    "encoder.proj_hidden": (int, 64, None),
    "encoder.proj_dim": (int, 32, None),
    "train.label_key": (str, "cst", ("eye", "bcva", "cst", "unique")),
    "train.cst_bin_width": (int, 10, None),
    "train.temperature": (float, 0.07, None),
    "train.batch_size": (int, 32, None),
    "train.epochs": (int, 10, None),
    "train.lr": (float, 0.05, None),
    "train.momentum": (float, 0.9, None),
    "train.seed": (int, 1, None),
    "train.pretrain_pool": (str, "train", ("train", "pretrain")),
    "probe.slots": (_LIST_INT, (0, 1, 2, 3, 4), None),
    "probe.epochs": (int, 25, None),
    "probe.lr": (float, 0.2, None),
    "probe.momentum": (float, 0.9, None),
    "probe.batch_size": (int, 64, None),
    "probe.max_samples": (int, 400, None),
    "probe.seed": (int, 1, None),
    "eval.n_per_class": (int, 50, None),
    "eval.seed": (int, 5, None),
    "theory.noise_grid": (_LIST_FLOAT, (0.0, 0.05, 0.1, 0.2, 0.3, 0.4), None),
    "theory.n": (int, 20000, None),
    "theory.k": (int, 1, None),
    "theory.seed": (int, 3, None),
    "theory.embedding": (str, "unit", ("unit", "raw")),
}


def _parse_value(key, text):
    kind, _, choices = KEY_SPEC[key]
    text = text.strip()
    try:
        if kind is bool:
            if text.lower() not in ("true", "false"):
                raise ValueError("expected true/false")
            return text.lower() == "true"
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind == _LIST_FLOAT:
            return tuple(float(t) for t in text.split(",") if t.strip()) if text else ()
        if kind == _LIST_INT:
            return tuple(int(t) for t in text.split(",") if t.strip()) if text else ()
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {getattr(kind, '__name__', kind)}") from exc
    if choices is not None and text not in choices:
        raise ConfigError(f"{key}: must be one of {choices}, got {text!r}")
    return text


def defaults():
    return {k: v for k, (_, v, _) in KEY_SPEC.items()}


def load_config(path=None, overrides=None):
    """Defaults, then the file, then explicit overrides. Unknown keys fail by name."""
    cfg = defaults()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        for ln, raw in enumerate(p.read_text().splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{p}:{ln}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in KEY_SPEC:
                raise ConfigError(f"{p}:{ln}: unknown config key {key!r}")
            cfg[key] = _parse_value(key, value)
    for key, value in (overrides or {}).items():
        if key not in KEY_SPEC:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _parse_value(key, str(value)) if isinstance(value, str) else value
    return cfg


def _canonical_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_canonical_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def canonical_text(cfg):
    return "\n".join(f"{k} = {_canonical_value(cfg[k])}" for k in sorted(cfg)) + "\n"


def config_hash(cfg):
    """SHA-256 of the fully resolved config."""
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()


# --- typed views ------------------------------------------------------------


def generator_config(cfg):
    return GeneratorConfig(
        classes=cfg["generator.classes"],
        class_prior=cfg["generator.class_prior"],
        input_dim=cfg["generator.input_dim"],
        n_eyes=cfg["generator.n_eyes"],
        visits_per_eye=cfg["generator.visits_per_eye"],
        labeled_fraction=cfg["generator.labeled_fraction"],
        feature_sigma=cfg["generator.feature_sigma"],
        feature_mean_scale=cfg["generator.feature_mean_scale"],
        delta=cfg["generator.delta"],
        bcva_base=cfg["generator.bcva_base"],
        bcva_sigma=cfg["generator.bcva_sigma"],
        cst_base=cfg["generator.cst_base"],
        cst_sigma=cfg["generator.cst_sigma"],
        biomarker_hi=cfg["generator.biomarker_hi"],
        biomarker_lo=cfg["generator.biomarker_lo"],
    )


def augment_spec(cfg):
    return AugmentSpec(
        sigma=cfg["augment.sigma"],
        mask_p=cfg["augment.mask_p"],
        flip=cfg["augment.flip"],
        crop_pad=cfg["augment.crop_pad"],
    )


def label_key(cfg):
    kind = cfg["train.label_key"]
    if kind == "cst":
        return LabelKey("cst", bin_width=cfg["train.cst_bin_width"])
    return LabelKey(kind)


def train_config(cfg):
    return TrainConfig(
        label_key=label_key(cfg),
        temperature=cfg["train.temperature"],
        batch_size=cfg["train.batch_size"],
        epochs=cfg["train.epochs"],
        lr=cfg["train.lr"],
        momentum=cfg["train.momentum"],
        seed=cfg["train.seed"],
        augment=augment_spec(cfg),
        pretrain_pool=cfg["train.pretrain_pool"],
    )


def probe_config(cfg, seed=None):
    return ProbeConfig(
        slots=tuple(cfg["probe.slots"]),
        epochs=cfg["probe.epochs"],
        lr=cfg["probe.lr"],
        momentum=cfg["probe.momentum"],
        batch_size=cfg["probe.batch_size"],
        max_samples=cfg["probe.max_samples"],
        seed=cfg["probe.seed"] if seed is None else seed,
    )
