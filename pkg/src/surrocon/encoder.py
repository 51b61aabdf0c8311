"""Encoder MLP, projection head, and linear probe.

The encoder maps input features to a representation vector; a two-layer
projection head compresses that to a unit-norm embedding for the contrastive
loss and is dropped afterwards; the probe is a single affine layer trained on
frozen representations.

Checkpoints are one JSON header line followed by the raw little-endian
float64 parameter blob, so identical seeds and configs produce identical
bytes.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from . import numcore as nc
from .errors import ContractError, DimensionError, ParseError
from .seeding import stream


def _glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _linear_params(rng, fan_in, fan_out):
    # biases share the weight range: a zero bias would make the projection
    # head positively homogeneous (scaling invisible after normalization)
    # and yield a zero row whenever a ReLU layer goes fully dead
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    w = nc.leaf(_glorot(rng, fan_in, fan_out))
    b = nc.leaf(rng.uniform(-limit, limit, size=fan_out))
    return w, b


class EncoderNet:
    """MLP encoder f: input_dim -> hidden dims -> repr_dim (ReLU on hidden layers)."""

    def __init__(self, input_dim, hidden_dims, repr_dim, seed):
        if input_dim < 1 or repr_dim < 1 or any(h < 1 for h in hidden_dims):
            raise DimensionError("encoder dims must be >= 1")
        self.input_dim = int(input_dim)
        self.hidden_dims = tuple(int(h) for h in hidden_dims)
        self.repr_dim = int(repr_dim)
        self.seed = int(seed)
        rng = stream(seed, "encoder-init")
        dims = [self.input_dim, *self.hidden_dims, self.repr_dim]
        self.layers = [_linear_params(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    @property
    def params(self):
        return [p for w, b in self.layers for p in (w, b)]

    def encode(self, x):
        """Forward a (n, input_dim) Tensor/array to a (n, repr_dim) node."""
        arr = x.data if isinstance(x, nc.Tensor) else np.asarray(x, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != self.input_dim:
            raise DimensionError(f"encoder expects (n, {self.input_dim}), got {arr.shape}")
        h = nc.leaf(arr)
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = nc.add(nc.matmul(h, w), b)
            if i != last:
                h = nc.relu(h)
        return h

    def encode_values(self, x):
        """Encode without keeping a tape; returns a plain Tensor (frozen use)."""
        return self.encode(x).value

    def checksum(self):
        """SHA-256 over the parameter blob; used to prove the encoder stayed frozen."""
        h = hashlib.sha256()
        for p in self.params:
            h.update(p.value.to_bytes())
        return h.hexdigest()


class ProjectionHead:
    """Projection G: repr_dim -> hidden -> proj_dim with a final unit-norm constraint."""

    def __init__(self, repr_dim, hidden_dim, proj_dim, seed):
        if repr_dim < 1 or hidden_dim < 1 or proj_dim < 1:
            raise DimensionError("projection dims must be >= 1")
        self.repr_dim = int(repr_dim)
        self.hidden_dim = int(hidden_dim)
        self.proj_dim = int(proj_dim)
        self.seed = int(seed)
        rng = stream(seed, "head-init")
        self.w1, self.b1 = _linear_params(rng, self.repr_dim, self.hidden_dim)
        self.w2, self.b2 = _linear_params(rng, self.hidden_dim, self.proj_dim)

    @property
    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def project(self, r):
        """Map (n, repr_dim) representations to unit-norm (n, proj_dim) embeddings."""
        if r.value.ndim != 2 or r.value.shape[1] != self.repr_dim:
            raise DimensionError(f"head expects (n, {self.repr_dim}), got {r.value.shape}")
        h = nc.relu(nc.add(nc.matmul(r, self.w1), self.b1))
        z = nc.add(nc.matmul(h, self.w2), self.b2)
        return nc.l2_normalize(z)


class LinearProbe:
    """Single affine layer on frozen representations."""

    def __init__(self, repr_dim, num_outputs, seed):
        if repr_dim < 1 or num_outputs < 1:
            raise DimensionError("probe dims must be >= 1")
        self.repr_dim = int(repr_dim)
        self.num_outputs = int(num_outputs)
        self.seed = int(seed)
        rng = stream(seed, "probe-init")
        self.w, self.b = _linear_params(rng, self.repr_dim, self.num_outputs)

    @property
    def params(self):
        return [self.w, self.b]

    def logits_node(self, r):
        """Affine logits as a tape node; `r` is a frozen value, never a node."""
        if isinstance(r, nc.Node):
            raise ContractError("probe input must be detached values, not a tape node")
        arr = r.data if isinstance(r, nc.Tensor) else np.asarray(r, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != self.repr_dim:
            raise DimensionError(f"probe expects (n, {self.repr_dim}), got {arr.shape}")
        return nc.add(nc.matmul(nc.leaf(arr), self.w), self.b)


def probe_logits(probe, r):
    """Pure affine map of frozen representations to a logits Tensor."""
    return probe.logits_node(r).value


# --- checkpoint I/O ---------------------------------------------------------

_MAGIC = "surrocon-checkpoint"


def _param_blob(params):
    return b"".join(p.value.to_bytes() for p in params)


def save_checkpoint(path, encoder, head=None, meta=None):
    """Write JSON header + float64 parameter blob; byte-stable for fixed inputs."""
    header = {
        "format": _MAGIC,
        "version": 1,
        "encoder": {
            "input_dim": encoder.input_dim,
            "hidden_dims": list(encoder.hidden_dims),
            "repr_dim": encoder.repr_dim,
            "seed": encoder.seed,
        },
        "head": None
        if head is None
        else {
            "hidden_dim": head.hidden_dim,
            "proj_dim": head.proj_dim,
            "seed": head.seed,
        },
        "meta": dict(sorted((meta or {}).items())),
    }
    blob = _param_blob(encoder.params) + (b"" if head is None else _param_blob(head.params))
    text = json.dumps(header, sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(text.encode() + b"\n" + blob)


def save_probe_checkpoint(path, probe, meta=None):
    """Probe weights in the same header+blob format."""
    header = {
        "format": _MAGIC,
        "version": 1,
        "probe": {"repr_dim": probe.repr_dim, "num_outputs": probe.num_outputs, "seed": probe.seed},
        "meta": dict(sorted((meta or {}).items())),
    }
    text = json.dumps(header, sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(text.encode() + b"\n" + _param_blob(probe.params))


def load_probe_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ParseError(f"{path}: missing checkpoint header line")
    header = json.loads(raw[:nl].decode())
    if header.get("format") != _MAGIC or "probe" not in header:
        raise ParseError(f"{path}: not a probe checkpoint")
    cfg = header["probe"]
    probe = LinearProbe(cfg["repr_dim"], cfg["num_outputs"], cfg["seed"])
    blob = raw[nl + 1 :]
    expected = sum(p.value.size for p in probe.params) * 8
    if len(blob) != expected:
        raise ParseError(f"{path}: blob is {len(blob)} bytes, header implies {expected}")
    offset = 0
    for p in probe.params:
        nbytes = p.value.size * 8
        p.set_value(nc.Tensor.from_bytes(blob[offset : offset + nbytes], p.value.shape))
        offset += nbytes
    return probe, header


def load_checkpoint(path):
    """Read a checkpoint; returns (encoder, head-or-None, header dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ParseError(f"{path}: missing checkpoint header line")
    try:
        header = json.loads(raw[:nl].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: bad checkpoint header: {exc}") from exc
    if header.get("format") != _MAGIC:
        raise ParseError(f"{path}: not a {_MAGIC} file")
    enc_cfg = header["encoder"]
    encoder = EncoderNet(enc_cfg["input_dim"], enc_cfg["hidden_dims"], enc_cfg["repr_dim"], enc_cfg["seed"])
    head = None
    if header.get("head") is not None:
        h = header["head"]
        head = ProjectionHead(encoder.repr_dim, h["hidden_dim"], h["proj_dim"], h["seed"])
    params = encoder.params + (head.params if head is not None else [])
    blob = raw[nl + 1 :]
    expected = sum(p.value.size for p in params) * 8
    if len(blob) != expected:
        raise ParseError(f"{path}: blob is {len(blob)} bytes, header implies {expected}")
    offset = 0
    for p in params:
        nbytes = p.value.size * 8
        p.set_value(nc.Tensor.from_bytes(blob[offset : offset + nbytes], p.value.shape))
        offset += nbytes
    return encoder, head, header
