"""Dataset ingestion (IDX and synthetic blobs) and checkpoint persistence.

All randomness flows through explicitly seeded PCG64 generators so a seed
reproduces the same dataset on every platform; the platform-default global
RNG is never touched.

Checkpoints are versioned UTF-8 JSON documents.  Parameter arrays are
serialized as C-order lists of hexadecimal float literals (``float.hex()``),
which round-trip bit for bit, including exact zeros written by pruning.
Writes go through a temporary file plus an atomic rename.

Checkpoint schema (version 1)::

    {
      "version": 1,
      "model": {
        "num_classes": <int>,
        "layers": [
          {
            "activation": "relu" | "none",
            "factors": [{"shape": [K, I], "data": ["0x1.8p+1", ...]}, ...],
            "bias": {"shape": [n], "data": [...]} | null
          }, ...
        ]
      },
      "train_config": <object or null>,   # opaque snapshot of the run config
      "metrics": <object or null>         # final metrics of the producing run
    }
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .network import ACTIVATIONS, SepMlp
from .transform import SeparableTransform

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CHECKPOINT_VERSION = 1


class IdxFormatError(ValueError):
    """Malformed IDX payload: bad magic, truncation, or count mismatch."""


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint document."""


@dataclass
class Dataset:
    """Labelled tensors sharing one input shape, with values in [0, 1]."""

    samples: list[tuple[np.ndarray, int]]
    num_classes: int
    input_shape: tuple[int, ...]

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if self.num_classes < 1:
            raise ValueError("need at least one class")
        checked = []
        for x, y in self.samples:
            x = np.asarray(x, dtype=float)
            if x.shape != self.input_shape:
                raise ValueError(
                    f"sample shape {x.shape} does not match declared {self.input_shape}"
                )
            if not 0 <= int(y) < self.num_classes:
                raise ValueError(f"label {y} out of range")
            if np.any(x < 0.0) or np.any(x > 1.0):
                raise ValueError("sample values must lie in [0, 1]")
            checked.append((x, int(y)))
        self.samples = checked

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> tuple[np.ndarray, int]:
        return self.samples[i]

    def __iter__(self):
        return iter(self.samples)


def synthetic_gaussians(
    classes: int,
    per_class: int,
    shape,
    separation: float,
    seed: int,
    noise_std: float = 0.05,
) -> Dataset:
    """Seeded Gaussian blobs at mutually separated means, clipped to [0, 1].

    Class means sit at ``0.5 + (separation/sqrt(2)) * q_c`` with orthonormal
    directions ``q_c``, so every pair of means is exactly ``separation``
    apart (requires ``classes <= prod(shape)``).  Samples are the means plus
    isotropic noise, clipped into the unit box.
    """
    if classes < 1 or per_class < 0:
        raise ValueError("classes must be >= 1 and per_class >= 0")
    if separation <= 0:
        raise ValueError("separation must be positive")
    shape = tuple(int(s) for s in shape)
    dims = int(np.prod(shape))
    if classes > dims:
        raise ValueError(f"cannot separate {classes} means in {dims} dimensions")
    rng = np.random.Generator(np.random.PCG64(seed))
    q, _ = np.linalg.qr(rng.standard_normal((dims, classes)))
    means = 0.5 + (separation / np.sqrt(2.0)) * q.T  # row c = mean of class c
    samples = []
    for c in range(classes):
        for _ in range(per_class):
            x = means[c] + noise_std * rng.standard_normal(dims)
            samples.append((np.clip(x, 0.0, 1.0).reshape(shape), c))
    return Dataset(samples=samples, num_classes=classes, input_shape=shape)


def _read_file(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IdxFormatError(f"cannot read {path}: {exc}") from exc


def load_idx(images_path, labels_path, shape=None, num_classes: int = 10) -> Dataset:
    """Parse big-endian IDX image/label files into a dataset.

    Pixel bytes are scaled to [0, 1] by division with 255.  ``shape``
    optionally reshapes each image (its size must match rows*cols), e.g. to
    feed a three-factor model.  Every header field is validated and the file
    lengths must match the declared counts exactly; trailing bytes are
    rejected.
    """
    raw = _read_file(images_path)
    if len(raw) < 16:
        raise IdxFormatError(f"image file truncated: {len(raw)} bytes of header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise IdxFormatError(
            f"image magic mismatch: got 0x{magic:08x}, want 0x{IDX_IMAGE_MAGIC:08x}"
        )
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise IdxFormatError(
            f"image payload is {len(raw) - 16} bytes, header declares {count * rows * cols}"
        )

    raw_labels = _read_file(labels_path)
    if len(raw_labels) < 8:
        raise IdxFormatError(f"label file truncated: {len(raw_labels)} bytes of header")
    lmagic, lcount = struct.unpack(">II", raw_labels[:8])
    if lmagic != IDX_LABEL_MAGIC:
        raise IdxFormatError(
            f"label magic mismatch: got 0x{lmagic:08x}, want 0x{IDX_LABEL_MAGIC:08x}"
        )
    if len(raw_labels) != 8 + lcount:
        raise IdxFormatError(
            f"label payload is {len(raw_labels) - 8} bytes, header declares {lcount}"
        )
    if lcount != count:
        raise IdxFormatError(f"{count} images but {lcount} labels")

    if count > 0 and (rows < 1 or cols < 1):
        raise IdxFormatError(f"degenerate image extents {rows}x{cols}")
    target = (rows, cols) if shape is None else tuple(int(s) for s in shape)
    if count > 0 and int(np.prod(target)) != rows * cols:
        raise ValueError(f"cannot reshape {rows}x{cols} images to {target}")

    pixels = np.frombuffer(raw[16:], dtype=np.uint8).reshape(count, rows * cols)
    labels = np.frombuffer(raw_labels[8:], dtype=np.uint8)
    samples = []
    for i in range(count):
        img = pixels[i].astype(float) / 255.0
        samples.append((img.reshape(target), int(labels[i])))
    return Dataset(samples=samples, num_classes=num_classes, input_shape=target)


def _array_doc(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v).hex() for v in a.ravel()]}


def _array_from_doc(doc, what: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in doc["shape"])
        data = [float.fromhex(v) for v in doc["data"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed {what} array: {exc}") from exc
    if len(data) != int(np.prod(shape)):
        raise CheckpointError(f"{what} array length does not match its shape")
    return np.array(data, dtype=float).reshape(shape)


def save_checkpoint(model: SepMlp, path, report=None, config=None) -> None:
    """Write a version-1 checkpoint atomically (temp file + rename)."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "model": {
            "num_classes": model.num_classes,
            "layers": [
                {
                    "activation": act,
                    "factors": [_array_doc(f) for f in layer.factors],
                    "bias": None if layer.bias is None else _array_doc(layer.bias),
                }
                for layer, act in zip(model.layers, model.activations)
            ],
        },
        "train_config": config,
        "metrics": report,
    }
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".checkpoint-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_checkpoint(path) -> dict:
    """Load and structurally validate a checkpoint document."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise CheckpointError("checkpoint lacks a version field")
    if doc["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {doc['version']!r} (expected {CHECKPOINT_VERSION})"
        )
    if "model" not in doc or not isinstance(doc["model"], dict):
        raise CheckpointError("checkpoint lacks a model section")
    return doc


def load_checkpoint(path) -> SepMlp:
    """Rebuild the model from a checkpoint; parameters are bit-identical."""
    doc = read_checkpoint(path)
    mdoc = doc["model"]
    try:
        num_classes = int(mdoc["num_classes"])
        layer_docs = mdoc["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed model section: {exc}") from exc
    layers = []
    acts = []
    for i, ld in enumerate(layer_docs):
        act = ld.get("activation")
        if act not in ACTIVATIONS:
            raise CheckpointError(f"layer {i}: unknown activation {act!r}")
        factors = [_array_doc_matrix(fd, f"layer {i} factor") for fd in ld.get("factors", [])]
        if not factors:
            raise CheckpointError(f"layer {i} has no factors")
        bias_doc = ld.get("bias")
        bias = None if bias_doc is None else _array_from_doc(bias_doc, f"layer {i} bias")
        try:
            layers.append(SeparableTransform(factors, bias))
        except ValueError as exc:
            raise CheckpointError(f"layer {i}: {exc}") from exc
        acts.append(act)
    try:
        return SepMlp(layers, acts, num_classes)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc


def _array_doc_matrix(doc, what: str) -> np.ndarray:
    a = _array_from_doc(doc, what)
    if a.ndim != 2:
        raise CheckpointError(f"{what} is not a matrix")
    return a
