"""Datasets, removal-scenario splits, synthetic generators, and the KS check.

Every generator is a pure function of (seed, parameters); train/test partitions
of the same synthetic world share their class layout but draw independent
sample noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import FormatError, ShapeError

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 32*32*3 pixel bytes


@dataclass
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = "dataset"

    def __post_init__(self):
        if len(self.samples) != len(self.labels):
            raise ShapeError(
                f"{self.name}: {len(self.samples)} samples but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"{self.name}: labels outside [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.samples.shape[1:]

    def subset(self, index, name: str | None = None) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            samples=self.samples[index],
            labels=self.labels[index],
            class_count=self.class_count,
            name=name or self.name,
        )


@dataclass
class SurrogateDataset:
    """Unlabeled out-of-distribution samples used for distillation."""

    samples: np.ndarray
    kind: str

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ValueError("surrogate dataset must be non-empty")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class ScenarioSplit:
    scenario: str  # "cr" | "hr"
    retain: Dataset
    forget: Dataset
    retain_test: Dataset | None = None
    forget_test: Dataset | None = None
    test: Dataset | None = None
    provenance: dict = field(default_factory=dict)


class DataAccessAudit:
    """Read-counting view of a dataset, for proving a code path never touched it."""

    def __init__(self, dataset: Dataset):
        self._dataset = dataset
        self.reads = 0

    @property
    def samples(self):
        self.reads += 1
        return self._dataset.samples

    @property
    def labels(self):
        self.reads += 1
        return self._dataset.labels

    @property
    def class_count(self):
        return self._dataset.class_count

    @property
    def name(self):
        return self._dataset.name

    def __len__(self):
        return len(self._dataset)


# -- removal scenarios --------------------------------------------------------

def split_cr(train: Dataset, test: Dataset, class_id: int) -> ScenarioSplit:
    """Class removal: partition train and test by the removed class's label."""
    class_id = int(class_id)
    if not 0 <= class_id < train.class_count:
        raise ValueError(f"class {class_id} outside [0, {train.class_count})")
    train_mask = train.labels == class_id
    test_mask = test.labels == class_id
    if not train_mask.any() or not test_mask.any():
        raise ValueError(f"class {class_id} absent from train or test split")
    return ScenarioSplit(
        scenario="cr",
        retain=train.subset(~train_mask, name=f"{train.name}/retain"),
        forget=train.subset(train_mask, name=f"{train.name}/forget"),
        retain_test=test.subset(~test_mask, name=f"{test.name}/retain"),
        forget_test=test.subset(test_mask, name=f"{test.name}/forget"),
        provenance={"class_id": class_id},
    )


def split_hr(train: Dataset, seed: int, fraction: float = 0.10) -> ScenarioSplit:
    """Homogeneous removal: a seed-deterministic uniform sample of the train set."""
    if len(train) < 10:
        raise ValueError(f"need at least 10 samples for an HR split, got {len(train)}")
    n_forget = int(round(fraction * len(train)))
    order = np.random.default_rng(seed).permutation(len(train))
    return ScenarioSplit(
        scenario="hr",
        retain=train.subset(np.sort(order[n_forget:]), name=f"{train.name}/retain"),
        forget=train.subset(np.sort(order[:n_forget]), name=f"{train.name}/forget"),
        provenance={"seed": int(seed), "fraction": fraction},
    )


def default_cr_run_list(num_classes: int, runs: int = 10) -> list[int]:
    """Evenly spaced removed-class ids; 100 classes -> [0, 10, ..., 90]."""
    step = max(1, num_classes // runs)
    return list(range(0, num_classes, step))[:runs]


HR_SEED_PROTOCOL = [0, 1, 2, 3, 4, 5, 6, 7, 8, 42]


# -- synthetic generators -----------------------------------------------------

def _partition_rng(seed: int, partition: str) -> np.random.Generator:
    codes = {"train": 1, "test": 2}
    if partition not in codes:
        raise ValueError(f"partition must be train or test, got {partition!r}")
    return np.random.default_rng([int(seed), codes[partition]])


def gen_blobs(
    classes: int,
    per_class: int,
    dim: int,
    spread: float,
    seed: int,
    partition: str = "train",
    mean_scale: float = 2.5,
) -> Dataset:
    """Gaussian class clusters with seed-fixed means shared across partitions."""
    if classes < 2:
        raise ValueError("need at least 2 classes")
    means = mean_scale * np.random.default_rng(seed).standard_normal((classes, dim))
    rng = _partition_rng(seed, partition)
    samples = np.concatenate(
        [means[k] + spread * rng.standard_normal((per_class, dim)) for k in range(classes)]
    )
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    return Dataset(samples, labels, classes, name=f"blobs{classes}x{per_class}/{partition}")


def _draw_shape(canvas: np.ndarray, family: int, rng: np.random.Generator) -> None:
    size = canvas.shape[0]
    lo, hi = size // 4, 3 * size // 4
    pos = int(rng.integers(lo, hi))
    value = float(rng.uniform(0.7, 1.0))
    thick = 2
    if family == 0:  # horizontal bar
        canvas[pos:pos + thick, :] = value
    elif family == 1:  # vertical bar
        canvas[:, pos:pos + thick] = value
    elif family == 2:  # cross
        canvas[pos:pos + thick, :] = value
        canvas[:, pos:pos + thick] = value
    elif family == 3:  # filled disk
        radius = size // 4
        yy, xx = np.mgrid[:size, :size]
        cy = int(rng.integers(radius, size - radius))
        cx = int(rng.integers(radius, size - radius))
        canvas[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2] = value
    elif family == 4:  # main diagonal
        offset = int(rng.integers(-size // 4, size // 4))
        for i in range(size):
            j = i + offset
            if 0 <= j < size:
                canvas[i, j:min(j + thick, size)] = value
    elif family == 5:  # anti-diagonal
        offset = int(rng.integers(-size // 4, size // 4))
        for i in range(size):
            j = size - 1 - i + offset
            if 0 <= j < size:
                canvas[i, max(j - thick + 1, 0):j + 1] = value
    elif family == 6:  # hollow square
        half = size // 3
        cy = int(rng.integers(half, size - half))
        cx = int(rng.integers(half, size - half))
        canvas[cy - half:cy + half, cx - half:cx + half] = value
        inner = half - thick
        canvas[cy - inner:cy + inner, cx - inner:cx + inner] = 0.0
    elif family == 7:  # two horizontal bars
        other = (pos + size // 2) % (size - thick)
        canvas[pos:pos + thick, :] = value
        canvas[other:other + thick, :] = value
    elif family == 8:  # corner dots
        d = max(2, size // 6)
        for cy in (1, size - 1 - d):
            for cx in (1, size - 1 - d):
                canvas[cy:cy + d, cx:cx + d] = value
    else:  # ring
        radius = size // 3
        yy, xx = np.mgrid[:size, :size]
        cy = int(rng.integers(radius, size - radius))
        cx = int(rng.integers(radius, size - radius))
        rr = (yy - cy) ** 2 + (xx - cx) ** 2
        canvas[(rr <= radius**2) & (rr >= (radius - thick) ** 2)] = value


def gen_shapes(
    classes: int,
    per_class: int,
    image_size: int,
    seed: int,
    partition: str = "train",
) -> Dataset:
    """Procedural grayscale images; class k draws shape family k (bars, crosses,
    disks, diagonals, ...) at jittered positions over weak background noise."""
    if classes < 2 or classes > 10:
        raise ValueError("shape generator supports 2..10 classes")
    rng = _partition_rng(seed, partition)
    images = np.zeros((classes * per_class, image_size, image_size, 1))
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    for i, k in enumerate(labels):
        canvas = rng.uniform(0.0, 0.08, size=(image_size, image_size))
        _draw_shape(canvas, int(k), rng)
        images[i, :, :, 0] = np.clip(canvas, 0.0, 1.0)
    return Dataset(images, labels, classes, name=f"shapes{classes}x{per_class}/{partition}")


def gen_surrogate(
    kind: str,
    size: int,
    shape: tuple[int, ...],
    seed: int,
    scale: float = 1.0,
    noise_mean: float = 0.0,
    noise_std: float = 1.0,
) -> SurrogateDataset:
    """Unlabeled surrogate data.

    ``structured`` draws correlated sparse patterns (vectors) or sinusoidal
    gratings (images) — families disjoint from the blob/shape generators.
    ``noise`` draws i.i.d. Gaussian values with the configured mean/std.
    """
    if size < 1:
        raise ValueError("surrogate size must be >= 1")
    shape = tuple(int(v) for v in shape)
    rng = np.random.default_rng([int(seed), 77])
    if kind == "noise":
        samples = rng.normal(noise_mean, noise_std, size=(size, *shape))
    elif kind == "structured":
        if len(shape) == 1:
            samples = _structured_vectors(size, shape[0], scale, rng)
        elif len(shape) == 3:
            samples = _structured_gratings(size, shape, rng)
        else:
            raise ShapeError(f"structured surrogate needs a 1-D or H,W,C shape, got {shape}")
    else:
        raise ValueError(f"surrogate kind must be structured or noise, got {kind!r}")
    return SurrogateDataset(samples=samples, kind=kind)


def _structured_vectors(size: int, dim: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    # correlated directions with sparse support and a wide radius mixture
    mixing = rng.standard_normal((dim, dim)) * (np.arange(1, dim + 1) ** -0.5)
    z = rng.standard_normal((size, dim))
    mask = rng.random((size, dim)) < 0.85
    raw = (z @ mixing.T) * mask
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    radius = rng.uniform(0.35, 1.45, size=(size, 1)) * scale * np.sqrt(dim)
    return raw / norms * radius


def _structured_gratings(size: int, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    h, w, c = shape
    yy, xx = np.mgrid[:h, :w]
    samples = np.empty((size, h, w, c))
    for i in range(size):
        fx = rng.uniform(0.5, 3.0) / w
        fy = rng.uniform(0.5, 3.0) / h
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.3, 0.5)
        wave = 0.5 + amp * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
        samples[i] = wave[:, :, None]
    return samples


# -- CIFAR-10 binary ingestion -------------------------------------------------

def load_cifar_binary(path) -> Dataset:
    """Read the standard CIFAR-10 binary layout: 3073-byte records of one label
    byte followed by 32x32 R,G,B planes. Pixels are scaled to [0, 1]."""
    raw = Path(path).read_bytes()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
        complete = (len(raw) // CIFAR_RECORD_BYTES) * CIFAR_RECORD_BYTES
        raise FormatError(
            f"{path}: incomplete record, file holds {len(raw)} bytes", offset=complete
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.nonzero(labels >= 10)[0]
    if bad.size:
        raise FormatError(
            f"{path}: label {labels[bad[0]]} out of range [0, 10)",
            offset=int(bad[0]) * CIFAR_RECORD_BYTES,
        )
    pixels = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return Dataset(pixels.astype(np.float64) / 255.0, labels, 10, name=Path(path).stem)


# -- Kolmogorov-Smirnov two-sample check ----------------------------------------

def kolmogorov_sf(x: float) -> float:
    """Survival function of the Kolmogorov distribution (asymptotic limit)."""
    if x <= 0:
        return 1.0
    if x < 1.18:
        # theta-function form converges fast for small arguments
        t = np.exp(-np.pi**2 / (8.0 * x * x))
        value = 1.0 - np.sqrt(2.0 * np.pi) / x * (t + t**9 + t**25 + t**49)
    else:
        v = np.exp(-2.0 * x * x)
        value = 2.0 * (v - v**4 + v**9 - v**16 + v**25)
    return float(min(1.0, max(0.0, value)))


def ks_test(samples_a, samples_b) -> tuple[float, float]:
    """Two-sample KS statistic sup|F_a - F_b| with its asymptotic p-value."""
    a = np.sort(np.asarray(samples_a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(samples_b, dtype=np.float64).ravel())
    if len(a) == 0 or len(b) == 0:
        raise ValueError("ks_test requires two non-empty samples")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / len(a)
    cdf_b = np.searchsorted(b, pooled, side="right") / len(b)
    statistic = float(np.abs(cdf_a - cdf_b).max())
    effective = np.sqrt(len(a) * len(b) / (len(a) + len(b)))
    return statistic, kolmogorov_sf(effective * statistic)


def pixel_pool(samples: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Deterministic subsample of pooled scalar values for distribution checks."""
    flat = np.asarray(samples, dtype=np.float64).ravel()
    if len(flat) <= n:
        return flat
    idx = np.random.default_rng(seed).choice(len(flat), size=n, replace=False)
    return flat[idx]
