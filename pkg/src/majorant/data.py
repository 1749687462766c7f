"""Dataset ingestion: IDX files, two-class preprocessing onto the
hypersphere, and a synthetic teacher-labelled stand-in for image data.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import (
    BalanceError,
    IdxConsistencyError,
    IdxFormatError,
    IdxLengthError,
    InsufficientClassError,
    InvalidInputError,
)
from .mlp import init_rms_one, mlp_outputs
from .numerics import RngStream, sign_pm1

__all__ = [
    "IdxDataset",
    "TrainSample",
    "SynthSpec",
    "load_idx",
    "preprocess",
    "synth_teacher_data",
]

_IMAGE_MAGIC = 0x00000803
_LABEL_MAGIC = 0x00000801


@dataclass
class IdxDataset:
    images: np.ndarray  # (count, rows, cols) uint8
    labels: np.ndarray  # (count,) uint8


@dataclass
class TrainSample:
    X: np.ndarray  # (m, d0) float64, rows on the radius-sqrt(d0) hypersphere
    Y: np.ndarray  # (m,) float64 in {+1, -1}

    @property
    def m(self) -> int:
        return self.X.shape[0]


def _read_exact(blob: bytes, offset: int, n: int, what: str) -> bytes:
    if offset + n > len(blob):
        raise IdxLengthError(f"file ends inside the {what}")
    return blob[offset : offset + n]


def load_idx(images_path, labels_path) -> IdxDataset:
    """Parse the big-endian IDX image/label pair byte-exactly.

    Image files carry magic 0x00000803 then (count, rows, cols); label
    files carry 0x00000801 then count. Bad magic raises a format error,
    short or over-long payloads a length error, and differing counts
    between the two files a consistency error.
    """
    with open(images_path, "rb") as fh:
        img_blob = fh.read()
    with open(labels_path, "rb") as fh:
        lab_blob = fh.read()

    (magic,) = struct.unpack(">I", _read_exact(img_blob, 0, 4, "image header"))
    if magic != _IMAGE_MAGIC:
        raise IdxFormatError(f"image magic 0x{magic:08x} != 0x{_IMAGE_MAGIC:08x}")
    count, rows, cols = struct.unpack(
        ">III", _read_exact(img_blob, 4, 12, "image header")
    )
    expected = 16 + count * rows * cols
    if len(img_blob) != expected:
        raise IdxLengthError(
            f"image file holds {len(img_blob)} bytes, header promises {expected}"
        )
    images = np.frombuffer(img_blob, dtype=np.uint8, offset=16).reshape(
        count, rows, cols
    )

    (magic,) = struct.unpack(">I", _read_exact(lab_blob, 0, 4, "label header"))
    if magic != _LABEL_MAGIC:
        raise IdxFormatError(f"label magic 0x{magic:08x} != 0x{_LABEL_MAGIC:08x}")
    (lab_count,) = struct.unpack(">I", _read_exact(lab_blob, 4, 4, "label header"))
    if len(lab_blob) != 8 + lab_count:
        raise IdxLengthError(
            f"label file holds {len(lab_blob)} bytes, header promises {8 + lab_count}"
        )
    if lab_count != count:
        raise IdxConsistencyError(
            f"{count} images but {lab_count} labels"
        )
    labels = np.frombuffer(lab_blob, dtype=np.uint8, offset=8)
    return IdxDataset(images=images.copy(), labels=labels.copy())


def preprocess(
    dataset: IdxDataset,
    pair: Tuple[int, int],
    m_train: int,
    m_test: int,
    rng: RngStream,
) -> Tuple[TrainSample, TrainSample]:
    """Two-class hypersphere pipeline.

    Keeps classes a (-> +1) and b (-> -1), flattens to d_0 = rows*cols,
    subtracts each image's own mean, rescales rows to norm sqrt(d_0)
    (to 1e-10), and drops images that are identically zero after
    centring (with a warning). The train/test split is a seeded shuffle
    of the filtered pool, so it is a pure function of the rng key.
    """
    a, b = pair
    if a == b:
        raise InvalidInputError("the two classes must differ")
    mask = (dataset.labels == a) | (dataset.labels == b)
    X = dataset.images[mask].astype(np.float64).reshape(int(np.sum(mask)), -1)
    y = np.where(dataset.labels[mask] == a, 1.0, -1.0)

    X = X - X.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(X, axis=1)
    flat = norms == 0.0
    if np.any(flat):
        warnings.warn(
            f"dropping {int(np.sum(flat))} constant image(s) that centre to zero"
        )
        X, y, norms = X[~flat], y[~flat], norms[~flat]
    d0 = X.shape[1]
    X = X * (np.sqrt(d0) / norms)[:, None]

    for cls, name in ((1.0, a), (-1.0, b)):
        if not np.any(y == cls):
            raise InsufficientClassError(f"no usable examples of class {name}")
    if X.shape[0] < m_train + m_test:
        raise InsufficientClassError(
            f"need {m_train + m_test} examples, have {X.shape[0]}"
        )

    order = rng.substream("preprocess").generator.permutation(X.shape[0])
    tr, te = order[:m_train], order[m_train : m_train + m_test]
    return TrainSample(X[tr], y[tr]), TrainSample(X[te], y[te])


@dataclass
class SynthSpec:
    d0: int
    m_train: int
    m_test: int
    teacher_depth: int = 2
    teacher_width: int = 32

    def __post_init__(self):
        if min(self.d0, self.m_train, self.m_test) <= 0:
            raise InvalidInputError("sizes must be positive")
        if self.teacher_depth < 1:
            raise InvalidInputError("teacher depth must be at least 1")


def _sphere_points(n: int, d0: int, gen) -> np.ndarray:
    g = gen.standard_normal((n, d0))
    norms = np.linalg.norm(g, axis=1)
    while np.any(norms == 0.0):  # pragma: no cover - measure-zero event
        redo = norms == 0.0
        g[redo] = gen.standard_normal((int(np.sum(redo)), d0))
        norms = np.linalg.norm(g, axis=1)
    return g * (np.sqrt(d0) / norms)[:, None]


def synth_teacher_data(spec: SynthSpec, rng: RngStream):
    """Uniform hypersphere inputs labelled by a fixed random scaled-relu
    teacher network. A random teacher often biases its sign output, so
    on a balance miss the whole attempt — teacher and inputs — is
    redrawn, up to 20 retries.

    Returns (train, test, teacher).
    """
    widths = (
        [spec.d0]
        + [spec.teacher_width] * (spec.teacher_depth - 1)
        + [1]
    )
    n = spec.m_train + spec.m_test
    for attempt in range(20):
        teacher = init_rms_one(widths, rng.substream("teacher", attempt))
        gen = rng.substream("inputs", attempt).generator
        X = _sphere_points(n, spec.d0, gen)
        y = sign_pm1(mlp_outputs(teacher, X)[:, 0])
        frac = float(np.mean(y > 0))
        if 0.4 <= frac <= 0.6:
            train = TrainSample(X[: spec.m_train], y[: spec.m_train])
            test = TrainSample(X[spec.m_train :], y[spec.m_train :])
            return train, test, teacher
    raise BalanceError("teacher labels stayed outside 60/40 after 20 retries")
