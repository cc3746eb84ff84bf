"""Task-stream construction: class splits, domain shifts, NC/NI streams, IDX ingestion.

Streams are immutable once built and fully determined by (source data, spec,
seed), so runs can share them across threads and reproduce them bit for bit.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError

CLASS_IL = "class"
TASK_IL = "task"
DOMAIN_IL = "domain"
SCENARIOS = (CLASS_IL, TASK_IL, DOMAIN_IL)

CATEGORY = "category"
OBJECT = "object"

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix (n x d) with integer class labels and optional category map."""

    features: np.ndarray
    labels: np.ndarray
    category_of: dict[int, int] | None = None
    name: str = ""

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ConfigError(f"features must be a nonempty matrix, got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ConfigError("labels must align with feature rows")
        if not np.isfinite(self.features).all():
            raise ConfigError("non-finite features")
        if self.category_of is not None:
            missing = set(np.unique(self.labels)) - set(self.category_of)
            if missing:
                raise ConfigError(f"labels without a category mapping: {sorted(missing)}")

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def select(self, mask: np.ndarray, name: str | None = None) -> "LabeledDataset":
        return LabeledDataset(
            self.features[mask], self.labels[mask], self.category_of,
            self.name if name is None else name,
        )


@dataclass(frozen=True)
class SourceData:
    """A train/test pair the stream generators carve tasks out of."""

    train: LabeledDataset
    test: LabeledDataset
    name: str = ""


@dataclass(frozen=True)
class Task:
    train: LabeledDataset
    test: LabeledDataset
    class_set: tuple[int, ...]
    task_id: int
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TaskStream:
    tasks: tuple[Task, ...]
    scenario: str
    granularity: str = OBJECT
    provides_task_labels_at_test: bool = False
    name: str = ""

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if (self.scenario == TASK_IL) != self.provides_task_labels_at_test:
            raise ConfigError("task labels at test are provided exactly for task-incremental streams")
        sets = [set(t.class_set) for t in self.tasks]
        if self.scenario in (CLASS_IL, TASK_IL):
            for a in range(len(sets)):
                for b in range(a + 1, len(sets)):
                    if sets[a] & sets[b]:
                        raise ConfigError(f"tasks {a} and {b} share classes in a {self.scenario} stream")
        else:
            if any(s != sets[0] for s in sets):
                raise ConfigError("domain-incremental tasks must share one class set")
        ids = [t.task_id for t in self.tasks]
        if ids != list(range(len(self.tasks))):
            raise ConfigError(f"task ids must be 0..T-1 in order, got {ids}")

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def all_classes(self) -> tuple[int, ...]:
        out = set()
        for t in self.tasks:
            out |= set(t.class_set)
        return tuple(sorted(out))

    @property
    def num_classes(self) -> int:
        return len(self.all_classes())

    @property
    def input_dim(self) -> int:
        return self.tasks[0].train.dim


@dataclass(frozen=True)
class SynthSpec:
    """Gaussian category/species hierarchy standing in for the image corpora.

    Objects of one category sit species_spread around a shared center, so
    same-category classes are mutually closer than cross-category ones.
    """

    num_categories: int
    species_per_category: int
    dim: int
    train_per_class: int
    test_per_class: int
    category_spread: float = 10.0
    species_spread: float = 3.0
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("num_categories", "species_per_category", "dim", "train_per_class", "test_per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.noise_sigma < 0 or self.category_spread <= 0 or self.species_spread <= 0:
            raise ConfigError("spreads must be positive and noise_sigma nonnegative")
        if not self.species_spread < self.category_spread:
            raise ConfigError(
                f"species_spread {self.species_spread} must be < category_spread "
                f"{self.category_spread}"
            )

    @property
    def num_classes(self) -> int:
        return self.num_categories * self.species_per_category


def _read_be_u32(data: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(data):
        raise DataFormatError(f"{path}: truncated header at byte {offset}")
    return struct.unpack_from(">I", data, offset)[0]


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Load an IDX image/label file pair; pixels scaled to [0,1] by /255."""
    with open(images_path, "rb") as f:
        img = f.read()
    with open(labels_path, "rb") as f:
        lab = f.read()

    magic = _read_be_u32(img, 0, str(images_path))
    if magic != IDX_IMAGE_MAGIC:
        raise DataFormatError(
            f"{images_path}: bad image magic 0x{magic:08x} at byte 0 "
            f"(expected 0x{IDX_IMAGE_MAGIC:08x})"
        )
    n = _read_be_u32(img, 4, str(images_path))
    rows = _read_be_u32(img, 8, str(images_path))
    cols = _read_be_u32(img, 12, str(images_path))
    need = 16 + n * rows * cols
    if len(img) < need:
        raise DataFormatError(
            f"{images_path}: truncated pixel payload at byte {len(img)} (need {need})"
        )

    magic = _read_be_u32(lab, 0, str(labels_path))
    if magic != IDX_LABEL_MAGIC:
        raise DataFormatError(
            f"{labels_path}: bad label magic 0x{magic:08x} at byte 0 "
            f"(expected 0x{IDX_LABEL_MAGIC:08x})"
        )
    n_lab = _read_be_u32(lab, 4, str(labels_path))
    if n_lab != n:
        raise DataFormatError(f"{labels_path}: {n_lab} labels for {n} images")
    if len(lab) < 8 + n:
        raise DataFormatError(
            f"{labels_path}: truncated label payload at byte {len(lab)} (need {8 + n})"
        )

    pixels = np.frombuffer(img, dtype=np.uint8, count=n * rows * cols, offset=16)
    features = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lab, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    return LabeledDataset(features, labels, name=str(images_path))


def synth_generate(spec: SynthSpec) -> SourceData:
    """Sample the hierarchical Gaussian corpus; deterministic in spec.seed."""
    rng = np.random.default_rng(spec.seed)
    cat_centers = spec.category_spread * rng.standard_normal((spec.num_categories, spec.dim))
    centers = np.empty((spec.num_classes, spec.dim))
    category_of = {}
    for c in range(spec.num_categories):
        for s in range(spec.species_per_category):
            k = c * spec.species_per_category + s
            centers[k] = cat_centers[c] + spec.species_spread * rng.standard_normal(spec.dim)
            category_of[k] = c

    def draw(per_class: int, tag: str) -> LabeledDataset:
        feats = np.empty((spec.num_classes * per_class, spec.dim))
        labels = np.empty(spec.num_classes * per_class, dtype=np.int64)
        for k in range(spec.num_classes):
            lo = k * per_class
            feats[lo : lo + per_class] = centers[k] + spec.noise_sigma * rng.standard_normal(
                (per_class, spec.dim)
            )
            labels[lo : lo + per_class] = k
        return LabeledDataset(feats, labels, dict(category_of), f"synth-{tag}")

    train = draw(spec.train_per_class, "train")
    test = draw(spec.test_per_class, "test")
    return SourceData(train, test, name="synth")


def _class_partition_tasks(source: SourceData, groups: list[np.ndarray], scenario: str,
                           granularity: str = OBJECT, name: str = "") -> TaskStream:
    tasks = []
    for tid, group in enumerate(groups):
        gset = set(int(c) for c in group)
        tr = source.train.select(np.isin(source.train.labels, group))
        te = source.test.select(np.isin(source.test.labels, group))
        tasks.append(Task(tr, te, tuple(sorted(gset)), tid))
    return TaskStream(
        tuple(tasks), scenario, granularity,
        provides_task_labels_at_test=(scenario == TASK_IL), name=name,
    )


def split_by_classes(source: SourceData, num_tasks: int, scenario: str = CLASS_IL,
                     class_order_seed: int = 0) -> TaskStream:
    """Shuffle classes by seed, partition into contiguous equal groups, one task each."""
    if scenario not in (CLASS_IL, TASK_IL):
        raise ConfigError(f"class splits are class- or task-incremental, got {scenario!r}")
    classes = source.train.classes()
    if len(classes) % num_tasks != 0:
        raise ConfigError(
            f"{len(classes)} classes not divisible into {num_tasks} equal tasks"
        )
    order = np.random.default_rng(class_order_seed).permutation(classes)
    groups = [np.sort(g) for g in np.split(order, num_tasks)]
    return _class_partition_tasks(
        source, groups, scenario, name=f"{source.name}-split{num_tasks}",
    )


def make_permuted_stream(source: SourceData, num_tasks: int, seed: int = 0) -> TaskStream:
    """Domain shift by feature-index permutation; task 1 keeps the identity order."""
    if num_tasks < 1:
        raise ConfigError("need at least one task")
    rng = np.random.default_rng(seed)
    classes = tuple(int(c) for c in source.train.classes())
    dim = source.train.dim
    tasks = []
    for tid in range(num_tasks):
        perm = np.arange(dim) if tid == 0 else rng.permutation(dim)
        tr = LabeledDataset(source.train.features[:, perm], source.train.labels,
                            source.train.category_of, f"{source.name}-perm{tid}")
        te = LabeledDataset(source.test.features[:, perm], source.test.labels,
                            source.test.category_of, f"{source.name}-perm{tid}-test")
        tasks.append(Task(tr, te, classes, tid, meta={"permutation": perm}))
    return TaskStream(tuple(tasks), DOMAIN_IL, name=f"{source.name}-permuted{num_tasks}")


def rotate_images(features: np.ndarray, side: int, angle_degrees: float) -> np.ndarray:
    """Rotate each row (an side x side image) about its center, bilinear, zero fill."""
    theta = np.deg2rad(angle_degrees)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    center = (side - 1) / 2.0
    cols, rows = np.meshgrid(np.arange(side), np.arange(side))
    dx = cols - center
    dy = rows - center
    # Inverse map: where each output pixel samples from in the source image.
    sx = center + cos_t * dx + sin_t * dy
    sy = center - sin_t * dx + cos_t * dy
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0

    imgs = features.reshape(-1, side, side)
    out = np.zeros_like(imgs)
    for ddy, ddx, w in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                        (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        xi = x0 + ddx
        yi = y0 + ddy
        valid = (xi >= 0) & (xi < side) & (yi >= 0) & (yi < side)
        xi_c = np.clip(xi, 0, side - 1)
        yi_c = np.clip(yi, 0, side - 1)
        out += np.where(valid, w, 0.0)[None] * imgs[:, yi_c, xi_c]
    return out.reshape(features.shape[0], side * side)


def make_rotated_stream(source: SourceData, num_tasks: int, max_angle_degrees: float) -> TaskStream:
    """Domain shift by image rotation; angles evenly spaced in [0, max], first 0."""
    if num_tasks < 1:
        raise ConfigError("need at least one task")
    dim = source.train.dim
    side = int(round(np.sqrt(dim)))
    if side * side != dim:
        raise ConfigError(f"feature dim {dim} is not a square image")
    angles = np.linspace(0.0, max_angle_degrees, num_tasks) if num_tasks > 1 else np.array([0.0])
    classes = tuple(int(c) for c in source.train.classes())
    tasks = []
    for tid, angle in enumerate(angles):
        if angle == 0.0:
            tr_f, te_f = source.train.features, source.test.features
        else:
            tr_f = rotate_images(source.train.features, side, angle)
            te_f = rotate_images(source.test.features, side, angle)
        tr = LabeledDataset(tr_f, source.train.labels, source.train.category_of,
                            f"{source.name}-rot{tid}")
        te = LabeledDataset(te_f, source.test.labels, source.test.category_of,
                            f"{source.name}-rot{tid}-test")
        tasks.append(Task(tr, te, classes, tid, meta={"angle_degrees": float(angle)}))
    return TaskStream(tuple(tasks), DOMAIN_IL, name=f"{source.name}-rotated{num_tasks}")


def relabel_to_categories(data: LabeledDataset) -> LabeledDataset:
    if data.category_of is None:
        raise ConfigError(f"{data.name}: no category mapping for category-level tasks")
    lut_size = int(max(data.category_of)) + 1
    lut = np.full(lut_size, -1, dtype=np.int64)
    for obj, cat in data.category_of.items():
        lut[obj] = cat
    labels = lut[data.labels]
    cats = sorted(set(data.category_of.values()))
    return LabeledDataset(data.features, labels, {c: c for c in cats}, f"{data.name}-cat")


def make_nc_stream(source: SourceData, granularity: str, num_tasks: int,
                   scenario: str = CLASS_IL) -> TaskStream:
    """New-Classes stream; a larger first task makes the remaining tasks equal-sized."""
    if granularity not in (CATEGORY, OBJECT):
        raise ConfigError(f"unknown granularity {granularity!r}")
    if granularity == CATEGORY:
        source = SourceData(relabel_to_categories(source.train),
                            relabel_to_categories(source.test), source.name)
    classes = source.train.classes()
    c = len(classes)
    if num_tasks > c:
        raise ConfigError(f"{num_tasks} tasks infeasible for {c} classes")
    per_rest = c // num_tasks
    first = c - per_rest * (num_tasks - 1)
    groups = [classes[:first]]
    for t in range(1, num_tasks):
        lo = first + (t - 1) * per_rest
        groups.append(classes[lo : lo + per_rest])
    return _class_partition_tasks(
        source, groups, scenario, granularity,
        name=f"{source.name}-nc{num_tasks}-{granularity}",
    )


def make_ni_stream(source: SourceData, num_tasks: int, seed: int = 0,
                   session_jitter: float = 0.0) -> TaskStream:
    """New-Instances stream: every class in every task, disjoint per-class slices.

    Each task tests against the full test set (the output space is fixed).
    session_jitter > 0 adds a per-task feature offset to the train slices to
    model drifting recording sessions; the default keeps slices verbatim.
    """
    rng = np.random.default_rng(seed)
    classes = source.train.classes()
    per_task_rows: list[list[np.ndarray]] = [[] for _ in range(num_tasks)]
    for cls in classes:
        idx = np.flatnonzero(source.train.labels == cls)
        if len(idx) < num_tasks:
            raise ConfigError(
                f"class {cls} has {len(idx)} samples, fewer than {num_tasks} tasks"
            )
        idx = rng.permutation(idx)
        for t, chunk in enumerate(np.array_split(idx, num_tasks)):
            per_task_rows[t].append(chunk)
    class_tuple = tuple(int(c) for c in classes)
    tasks = []
    for tid in range(num_tasks):
        rows = np.sort(np.concatenate(per_task_rows[tid]))
        feats = source.train.features[rows]
        if session_jitter > 0.0:
            feats = feats + session_jitter * rng.standard_normal(feats.shape[1])
        tr = LabeledDataset(feats, source.train.labels[rows], source.train.category_of,
                            f"{source.name}-ni{tid}")
        tasks.append(Task(tr, source.test, class_tuple, tid, meta={"source_rows": rows}))
    return TaskStream(tuple(tasks), DOMAIN_IL, name=f"{source.name}-ni{num_tasks}")


def stream_manifest_csv(stream: TaskStream) -> str:
    """Audit manifest: one row per sample with (task_id, split, row_index, label)."""
    buf = io.StringIO()
    buf.write("task_id,split,row_index,label\n")
    for task in stream.tasks:
        for split_name, ds in (("train", task.train), ("test", task.test)):
            for i, lab in enumerate(ds.labels):
                buf.write(f"{task.task_id},{split_name},{i},{int(lab)}\n")
    return buf.getvalue()


def stream_provenance_hash(stream: TaskStream) -> str:
    """SHA-256 over the manifest plus feature bytes; identifies a stream exactly."""
    h = hashlib.sha256(stream_manifest_csv(stream).encode())
    for task in stream.tasks:
        h.update(np.ascontiguousarray(task.train.features).tobytes())
        h.update(np.ascontiguousarray(task.test.features).tobytes())
    return h.hexdigest()
