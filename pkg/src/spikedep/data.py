"""Datasets, deterministic batching, and poisoned-batch construction.

Datasets are immutable after construction: inputs live in [0,1], labels are
class indices, and train/test splits are disjoint by construction. Batch
composition is fully determined by (seed, epoch).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import attacks, snn

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3*32*32 pixel bytes


class TruncatedFile(RuntimeError):
    """File size does not hold a whole number of records."""


class BadMagnitude(RuntimeError):
    """A label byte outside the valid class range."""


@dataclass(frozen=True)
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, x, y in (
            ("train", self.train_x, self.train_y),
            ("test", self.test_x, self.test_y),
        ):
            if len(x) != len(y):
                raise ValueError(f"{name}: {len(x)} inputs vs {len(y)} labels")
            if len(x) and (x.min() < 0.0 or x.max() > 1.0):
                raise ValueError(f"{name} inputs must lie in [0,1]")
            if len(y) and (y.min() < 0 or y.max() >= self.num_classes):
                raise ValueError(f"{name} labels must be < {self.num_classes}")

    @property
    def input_shape(self) -> tuple:
        return self.train_x.shape[1:]


def synth_gaussians(
    num_classes: int,
    shape,
    samples_per_class,
    spread: float,
    seed: int,
    test_fraction: float = 0.2,
    mean_lo: float = 0.3,
    mean_hi: float = 0.7,
) -> Dataset:
    """Isotropic Gaussian blobs clipped to [0,1], deterministic per seed.

    `shape` is an int (flat dimension) or a tuple (image shape). Class means
    are drawn uniformly in [mean_lo, mean_hi] per coordinate; narrowing that
    window shrinks inter-class margins relative to a fixed pixel budget.
    `samples_per_class` is an int (balanced classes) or a per-class sequence
    of counts (weighted classes; test proportions follow the same weights).
    Each class is split train/test by `test_fraction`, and both splits are
    shuffled so any prefix matches the class weights in expectation.
    """
    if spread <= 0.0:
        raise ValueError("spread must be > 0")
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if not 0.0 <= mean_lo < mean_hi <= 1.0:
        raise ValueError("need 0 <= mean_lo < mean_hi <= 1")
    if isinstance(samples_per_class, int):
        counts = [samples_per_class] * num_classes
    else:
        counts = [int(c) for c in samples_per_class]
        if len(counts) != num_classes:
            raise ValueError(
                f"per-class counts: got {len(counts)} entries "
                f"for {num_classes} classes"
            )
    if min(counts) < 1:
        raise ValueError("per-class counts must be >= 1")
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    rng = np.random.default_rng(seed)
    means = rng.uniform(mean_lo, mean_hi, (num_classes,) + shape)
    xs, ys = [], []
    for c in range(num_classes):
        draw = means[c] + rng.normal(0.0, spread, (counts[c],) + shape)
        xs.append(np.clip(draw, 0.0, 1.0))
        ys.append(np.full(counts[c], c, dtype=np.intp))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    test_mask = np.zeros(len(x), dtype=bool)
    start = 0
    for c in range(num_classes):
        n_test = int(round(counts[c] * test_fraction))
        test_mask[start : start + n_test] = True
        start += counts[c]
    train_x, train_y = x[~test_mask], y[~test_mask]
    test_x, test_y = x[test_mask], y[test_mask]
    train_perm = rng.permutation(len(train_x))
    test_perm = rng.permutation(len(test_x))
    return Dataset(
        train_x=train_x[train_perm],
        train_y=train_y[train_perm],
        test_x=test_x[test_perm],
        test_y=test_y[test_perm],
        num_classes=num_classes,
        provenance={
            "kind": "synthetic_gaussians",
            "num_classes": num_classes,
            "shape": list(shape),
            "samples_per_class": counts if len(set(counts)) > 1 else counts[0],
            "spread": spread,
            "seed": seed,
            "test_fraction": test_fraction,
            "mean_lo": mean_lo,
            "mean_hi": mean_hi,
        },
    )


def _read_cifar_records(path: str):
    with open(path, "rb") as fh:
        raw = fh.read()
    n, rem = divmod(len(raw), CIFAR_RECORD_BYTES)
    if rem != 0:
        raise TruncatedFile(
            f"{path}: {len(raw)} bytes is not a whole number of "
            f"{CIFAR_RECORD_BYTES}-byte records (expected "
            f"{(n + 1) * CIFAR_RECORD_BYTES} for {n + 1} records, "
            f"short by {CIFAR_RECORD_BYTES - rem})"
        )
    data = np.frombuffer(raw, dtype=np.uint8).reshape(n, CIFAR_RECORD_BYTES)
    labels = data[:, 0].astype(np.intp)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise BadMagnitude(
            f"{path}: label byte {int(labels[bad[0]])} > 9 at record "
            f"{int(bad[0])} (byte offset {int(bad[0]) * CIFAR_RECORD_BYTES})"
        )
    pixels = data[:, 1:].reshape(n, 3, 32, 32).astype(np.float64) / 255.0
    return pixels, labels


def load_cifar10_binary(train_paths, test_path: str | None = None) -> Dataset:
    """Standard CIFAR-10 binary files: per record 1 label byte then 3072
    pixel bytes (3x32x32, channel-major). Pixels scale to [0,1] exactly."""
    if isinstance(train_paths, str):
        train_paths = [train_paths]
    xs, ys = [], []
    for p in train_paths:
        x, y = _read_cifar_records(p)
        xs.append(x)
        ys.append(y)
    train_x = np.concatenate(xs)
    train_y = np.concatenate(ys)
    if test_path is not None:
        test_x, test_y = _read_cifar_records(test_path)
    else:
        test_x = np.zeros((0, 3, 32, 32))
        test_y = np.zeros(0, dtype=np.intp)
    return Dataset(
        train_x=train_x,
        train_y=train_y,
        test_x=test_x,
        test_y=test_y,
        num_classes=10,
        provenance={
            "kind": "cifar10_binary",
            "train_paths": list(train_paths),
            "test_path": test_path,
        },
    )


@dataclass(frozen=True)
class BatchPlan:
    """Epoch-deterministic shuffled batching: (seed, epoch) -> batch order."""

    batch_size: int
    seed: int

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def epoch_batches(self, n: int, epoch: int) -> list:
        rng = np.random.default_rng((self.seed, epoch))
        perm = rng.permutation(n)
        return [
            perm[i : i + self.batch_size] for i in range(0, n, self.batch_size)
        ]


def make_poisoned_batch(
    model: snn.Model,
    x: np.ndarray,
    y: np.ndarray,
    attack_cfg: attacks.AttackConfig,
    mode: str,
    t_steps: int,
):
    """Poison constructor for the hetero protocols.

    perturb: white-box FGSM against the current model, labels unchanged.
    clean_passthrough: identity (the poison IS clean data, for the scheme
    whose base stream is perturbed).
    """
    if mode == "clean_passthrough":
        return x, y
    if mode == "perturb":
        return attacks.fgsm(model, x, y, attack_cfg, t_steps), y
    raise ValueError(f"unknown poison mode {mode!r}")
