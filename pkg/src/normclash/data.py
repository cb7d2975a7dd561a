"""Datasets: synthetic generators and IDX ingestion.

Synthetic tasks are described by compact spec strings such as
``blobs:d=100,n=2000,margin=0.3`` so runs can be reproduced from their
manifest alone.  The task geometry (cluster direction, centers) is derived
from the seed but shared across splits; only the sample noise differs
between train and test.
"""

from __future__ import annotations

import gzip
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import substream

__all__ = [
    "Dataset",
    "DataError",
    "BadMagic",
    "TruncatedPayload",
    "CountMismatch",
    "gen_synthetic",
    "load_idx",
    "parse_dataset_spec",
    "dataset_from_spec",
    "IMAGE_MAGIC",
    "LABEL_MAGIC",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

_SPLIT_STREAMS = {"train": 1, "test": 2, "val": 3}


class DataError(ValueError):
    """Base class for dataset ingestion failures."""

    code = "data_error"


class BadMagic(DataError):
    code = "bad_magic"


class TruncatedPayload(DataError):
    code = "truncated_payload"


class CountMismatch(DataError):
    code = "count_mismatch"


@dataclass
class Dataset:
    x: np.ndarray          # (n, d) float64 in [0, 1]
    y: np.ndarray          # (n,) int64 class indices
    n_classes: int
    split: str
    provenance: str

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise DataError("inputs must be (n, d) with labels (n,)")
        if self.x.shape[0] == 0:
            raise DataError("dataset is empty")
        if np.any(self.x < 0.0) or np.any(self.x > 1.0):
            raise DataError("inputs must lie in [0, 1]")
        if self.n_classes < 2:
            raise DataError("need at least two classes")
        if self.y.min() < 0 or self.y.max() >= self.n_classes:
            raise DataError("label out of range")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.x.tobytes())
        h.update(self.y.tobytes())
        return h.hexdigest()[:12]


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------

def gen_synthetic(kind: str, d: int, n: int, margin: float, seed: int,
                  sigma: float | None = None, split: str = "train") -> Dataset:
    """Balanced two-class synthetic data clipped to [0, 1]^d.

    blobs: two Gaussian clusters of per-coordinate spread `sigma`
    (default margin / 3) separated by `margin` along a random unit
    direction; the optimal accuracy is Phi(margin / (2 sigma)).

    ring: two concentric circles in a random 2-D subspace at radii
    margin/2 and margin, with radial spread `sigma` (default margin / 8).
    """
    if kind not in ("blobs", "ring"):
        raise DataError(f"unknown synthetic kind {kind!r}")
    if d < 2:
        raise DataError(f"d must be >= 2, got {d}")
    if n < 100:
        raise DataError(f"n must be >= 100, got {n}")
    if margin <= 0.0:
        raise DataError(f"margin must be positive, got {margin}")
    task_rng = substream(seed, 0)
    noise_rng = substream(seed, _SPLIT_STREAMS.get(split, 7))
    y = (np.arange(n) % 2).astype(np.int64)

    if kind == "blobs":
        sigma = margin / 3.0 if sigma is None else sigma
        u = task_rng.standard_normal(d)
        u /= np.linalg.norm(u)
        centers = 0.5 + np.outer([-0.5, 0.5], margin * u)
        x = centers[y] + sigma * noise_rng.standard_normal((n, d))
    else:
        sigma = margin / 8.0 if sigma is None else sigma
        basis = np.linalg.qr(task_rng.standard_normal((d, 2)))[0]
        radii = np.where(y == 0, 0.5 * margin, margin)
        radii = radii + sigma * noise_rng.standard_normal(n)
        theta = noise_rng.uniform(0.0, 2.0 * np.pi, n)
        plane = np.stack([radii * np.cos(theta), radii * np.sin(theta)], axis=1)
        x = 0.5 + plane @ basis.T
    if sigma <= 0.0:
        raise DataError(f"sigma must be positive, got {sigma}")

    prov = f"{kind}:d={d},n={n},margin={margin:g},sigma={sigma:g},seed={seed},split={split}"
    return Dataset(x=np.clip(x, 0.0, 1.0), y=y, n_classes=2, split=split,
                   provenance=prov)


# ---------------------------------------------------------------------------
# IDX ingestion
# ---------------------------------------------------------------------------

def _open_maybe_gzip(path: Path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise TruncatedPayload(f"{what}: expected {count} bytes, got {len(data)}")
    return data


def _read_be32(fh, what: str) -> int:
    return struct.unpack(">I", _read_exact(fh, 4, what))[0]


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Big-endian IDX image/label pair; u8 pixels scaled by 1/255."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    with _open_maybe_gzip(images_path) as fh:
        magic = _read_be32(fh, "image header")
        if magic != IMAGE_MAGIC:
            raise BadMagic(f"image file magic 0x{magic:08x} != 0x{IMAGE_MAGIC:08x}")
        count = _read_be32(fh, "image header")
        rows = _read_be32(fh, "image header")
        cols = _read_be32(fh, "image header")
        payload = _read_exact(fh, count * rows * cols, "image payload")
        pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols)
    with _open_maybe_gzip(labels_path) as fh:
        magic = _read_be32(fh, "label header")
        if magic != LABEL_MAGIC:
            raise BadMagic(f"label file magic 0x{magic:08x} != 0x{LABEL_MAGIC:08x}")
        label_count = _read_be32(fh, "label header")
        labels = np.frombuffer(_read_exact(fh, label_count, "label payload"),
                               dtype=np.uint8)
    if label_count != count:
        raise CountMismatch(f"{count} images but {label_count} labels")
    digest = hashlib.sha256(payload).hexdigest()[:12]
    return Dataset(
        x=pixels.astype(np.float64) / 255.0,
        y=labels.astype(np.int64),
        n_classes=int(labels.max()) + 1 if labels.size else 2,
        split=split,
        provenance=f"idx:{images_path.name},{labels_path.name},sha={digest}",
    )


# ---------------------------------------------------------------------------
# Spec strings
# ---------------------------------------------------------------------------

def parse_dataset_spec(text: str) -> dict:
    """Parse ``blobs:d=100,n=2000,margin=0.3`` or ``idx:images.idx,labels.idx``."""
    if ":" not in text:
        raise DataError(f"dataset spec needs 'kind:...', got {text!r}")
    kind, _, rest = text.partition(":")
    kind = kind.strip()
    if kind == "idx":
        paths = [p.strip() for p in rest.split(",")]
        if len(paths) != 2 or not all(paths):
            raise DataError("idx spec needs 'idx:<images>,<labels>'")
        return {"kind": "idx", "images": paths[0], "labels": paths[1]}
    if kind not in ("blobs", "ring"):
        raise DataError(f"unknown dataset kind {kind!r}")
    params: dict = {"kind": kind}
    known = {"d": int, "n": int, "margin": float, "sigma": float}
    for item in rest.split(","):
        if not item.strip():
            continue
        key, eq, value = item.partition("=")
        key = key.strip()
        if not eq or key not in known:
            raise DataError(f"unknown dataset spec key {key!r} in {text!r}")
        try:
            params[key] = known[key](value.strip())
        except ValueError as exc:
            raise DataError(f"bad value for {key!r}: {value!r}") from exc
    for required in ("d", "n", "margin"):
        if required not in params:
            raise DataError(f"dataset spec {text!r} is missing {required!r}")
    return params


def dataset_from_spec(text: str, seed: int, split: str = "train",
                      n_override: int | None = None) -> Dataset:
    """Materialize a dataset from its spec string."""
    params = parse_dataset_spec(text)
    if params["kind"] == "idx":
        return load_idx(params["images"], params["labels"], split=split)
    return gen_synthetic(
        kind=params["kind"], d=params["d"],
        n=n_override if n_override is not None else params["n"],
        margin=params["margin"], seed=seed,
        sigma=params.get("sigma"), split=split,
    )
