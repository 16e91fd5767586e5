"""
Reader and writer for the CIFAR-10 binary distribution.

Each record is 3073 bytes: one label byte followed by 3072 pixel bytes in
channel-major order (1024 red, 1024 green, 1024 blue, rows of 32).
"""

import logging
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from src.Auxiliary.Errors import CifarParseError
from src.Data.Labeled_Batch import LabeledBatch

logger = logging.getLogger(__name__)

IMAGE_SHAPE = (3, 32, 32)
RECORD_BYTES = 1 + 3 * 32 * 32
N_CLASSES = 10
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"

PathLike = Union[str, Path]


def read_cifar10_file(path: PathLike) -> LabeledBatch:
    path = Path(path)
    raw = path.read_bytes()
    complete = len(raw) // RECORD_BYTES
    if len(raw) % RECORD_BYTES:
        raise CifarParseError(str(path), complete * RECORD_BYTES, "truncated record")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(complete, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= N_CLASSES)
    if bad.size:
        first = int(bad[0])
        raise CifarParseError(str(path), first * RECORD_BYTES, f"label byte {int(labels[first])} > 9")
    images = records[:, 1:].reshape((complete,) + IMAGE_SHAPE).astype(np.float64) / 255.0
    return LabeledBatch(images=images, labels=labels, n_classes=N_CLASSES)


def write_cifar10_file(path: PathLike, batch: LabeledBatch) -> Path:
    """Write `batch` in the binary layout; pixels are quantised to round(255 * x)."""
    if batch.image_shape != IMAGE_SHAPE:
        raise ValueError(f"CIFAR-10 records hold {IMAGE_SHAPE} images, got {batch.image_shape}")
    if len(batch) and batch.labels.max() >= N_CLASSES:
        raise ValueError("CIFAR-10 labels must lie in [0, 10)")
    pixels = np.rint(batch.images * 255.0).astype(np.uint8).reshape(len(batch), -1)
    records = np.concatenate([batch.labels.astype(np.uint8)[:, None], pixels], axis=1)
    path = Path(path)
    path.write_bytes(records.tobytes())
    return path


def load_cifar10(path: PathLike) -> Tuple[LabeledBatch, LabeledBatch]:
    """Load (train, test) from a directory holding data_batch_1..5.bin and test_batch.bin."""
    root = Path(path)
    missing = [name for name in TRAIN_FILES + (TEST_FILE,) if not (root / name).is_file()]
    if missing:
        raise FileNotFoundError(f"CIFAR-10 files missing under {root}: {', '.join(missing)}")
    train = LabeledBatch.concat(read_cifar10_file(root / name) for name in TRAIN_FILES)
    test = read_cifar10_file(root / TEST_FILE)
    logger.info("Loaded CIFAR-10 from %s: %d train / %d test", root, len(train), len(test))
    return train, test
