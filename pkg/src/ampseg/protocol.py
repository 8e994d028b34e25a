"""Datasets, fold splits, few-shot episodes, class-incremental task streams
and base-class pretraining."""
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .backbone import extract
from .numerics import l2_normalize
from .pnm import read_pgm, read_ppm
from .proxy import BACKGROUND, ClassifierBank
from .segmenter import IGNORE, OptimizerState, finetune, predict

log = logging.getLogger(__name__)

NUM_FOREGROUND = 20
ALL_CLASSES = tuple(range(1, NUM_FOREGROUND + 1))
TASK_BATCH_CAP = 20
NUM_TASKS = 5
DEFAULT_HOLDOUT_EVERY = 5
PRETRAIN_EPOCHS = 6
PRETRAIN_LR = 0.01
PRETRAIN_BATCH = 8


def image_to_tensor(image):
    """uint8 ``(H, W, 3)`` image to a centred float64 ``(3, H, W)`` tensor."""
    return np.asarray(image, dtype=np.float64).transpose(2, 0, 1) / 255.0 - 0.5


@dataclass(frozen=True)
class DatasetItem:
    image_path: str
    label_path: str
    class_ids: tuple


def write_manifest(path, items):
    with open(path, "w") as fh:
        for item in items:
            ids = ",".join(str(c) for c in item.class_ids)
            fh.write(f"{item.image_path}\t{item.label_path}\t{ids}\n")


def read_manifest(path):
    items = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
            ids = tuple(int(c) for c in parts[2].split(",") if c)
            items.append(DatasetItem(parts[0], parts[1], ids))
    return items


@dataclass(frozen=True)
class Dataset:
    root: str
    items: tuple
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def load(cls, root):
        manifest = os.path.join(root, "manifest.tsv")
        if not os.path.exists(manifest):
            raise FileNotFoundError(f"no manifest.tsv in {root}")
        return cls(root, tuple(read_manifest(manifest)))

    def __len__(self):
        return len(self.items)

    def image(self, i):
        """Centred float image tensor of item ``i`` (cached, do not mutate)."""
        key = ("img", i)
        if key not in self._cache:
            path = os.path.join(self.root, self.items[i].image_path)
            self._cache[key] = image_to_tensor(read_ppm(path))
        return self._cache[key]

    def labels(self, i):
        key = ("lbl", i)
        if key not in self._cache:
            self._cache[key] = read_pgm(os.path.join(self.root, self.items[i].label_path))
        return self._cache[key]

    def pyramid(self, backbone, i):
        key = ("pyr", id(backbone), i)
        if key not in self._cache:
            self._cache[key] = extract(backbone, self.image(i))
        return self._cache[key]

    def items_with(self, class_id, indices=None):
        indices = range(len(self.items)) if indices is None else indices
        return [i for i in indices if class_id in self.items[i].class_ids]

    def dominant_class(self, i):
        """Foreground class covering the most pixels of item ``i``."""
        key = ("dom", i)
        if key not in self._cache:
            counts = np.bincount(self.labels(i).ravel(), minlength=256)
            counts[[BACKGROUND, IGNORE]] = 0
            self._cache[key] = int(np.argmax(counts))
        return self._cache[key]

    def split(self, holdout_every=DEFAULT_HOLDOUT_EVERY):
        """Deterministic ``(train, test)`` index split: every n-th item is held out."""
        test = [i for i in range(len(self.items)) if i % holdout_every == holdout_every - 1]
        held = set(test)
        return [i for i in range(len(self.items)) if i not in held], test


@dataclass(frozen=True)
class FoldSpec:
    fold_index: int
    test_classes: tuple
    train_classes: tuple

    def __post_init__(self):
        if set(self.test_classes) & set(self.train_classes):
            raise ValueError("train and test classes overlap")


def make_folds(seed=0):
    """Four 5-class test folds; seed 0 gives the canonical ordered split."""
    order = np.array(ALL_CLASSES)
    if seed:
        order = np.random.default_rng(seed).permutation(order)
    folds = []
    for f in range(4):
        test = tuple(sorted(int(c) for c in order[5 * f:5 * f + 5]))
        train = tuple(c for c in ALL_CLASSES if c not in test)
        folds.append(FoldSpec(f, test, train))
    return folds


@dataclass(frozen=True)
class Episode:
    """One 1-way k-shot task: supports and query as ``(image, binary mask)``."""

    novel_class: int
    support: tuple
    query: tuple
    support_ids: tuple
    query_id: int
    seed: int = 0

    @property
    def k(self):
        return len(self.support)


def make_episode(ds, novel_class, support_ids, query_id, seed=0):
    def pair(i):
        return ds.image(i), (ds.labels(i) == novel_class).astype(np.uint8)

    return Episode(int(novel_class), tuple(pair(i) for i in support_ids), pair(query_id),
                   tuple(int(i) for i in support_ids), int(query_id), int(seed))


def sample_episodes(ds, fold, k, count, seed=0):
    """Sample ``count`` episodes, cycling through the fold's test classes.

    Supports and queries for class ``c`` come from items where ``c`` is the
    dominant labelled class, so a small distractor never defines a task.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pools = {}
    for c in fold.test_classes:
        pools[c] = [i for i in ds.items_with(c) if ds.dominant_class(i) == c]
        if len(pools[c]) < k + 1:
            raise ValueError(f"class {c} has {len(pools[c])} items, need at least {k + 1}")
    rng = np.random.default_rng([seed, fold.fold_index, k])
    episodes = []
    for e in range(count):
        c = fold.test_classes[e % len(fold.test_classes)]
        picks = rng.choice(pools[c], size=k + 1, replace=False)
        episodes.append(make_episode(ds, c, picks[:k], picks[k], int(rng.integers(2**63))))
    return episodes


@dataclass(frozen=True)
class Task:
    classes: tuple
    items: tuple


@dataclass(frozen=True)
class TaskStream:
    base_classes: tuple
    tasks: tuple
    seed: int

    def visible_classes(self, task_index):
        """Foreground classes whose labels are exposed at ``task_index``."""
        seen = list(self.base_classes)
        for t in self.tasks[:task_index + 1]:
            seen.extend(t.classes)
        return tuple(sorted(seen))


def restrict_labels(labels, visible):
    """Relabel foreground pixels outside ``visible`` as ignore."""
    keep = np.isin(labels, list(visible) + [BACKGROUND, IGNORE])
    return np.where(keep, labels, IGNORE).astype(np.uint8)


def build_task_stream(ds, seed=0, indices=None, cap=TASK_BATCH_CAP):
    """Random 10/10 base/incremental split and five 2-class tasks."""
    rng = np.random.default_rng(seed)
    order = [int(c) for c in rng.permutation(ALL_CLASSES)]
    base = tuple(sorted(order[:10]))
    tasks = []
    for t in range(NUM_TASKS):
        pair = tuple(order[10 + 2 * t:12 + 2 * t])
        pool = sorted(set(ds.items_with(pair[0], indices)) | set(ds.items_with(pair[1], indices)))
        if len(pool) > cap:
            pool = sorted(int(i) for i in rng.choice(pool, size=cap, replace=False))
        tasks.append(Task(pair, tuple(pool)))
    return TaskStream(base, tuple(tasks), seed)


def init_bank(classes, channels, rng, scale=0.01):
    """Background plus ``classes``, rows drawn from a small normal."""
    ids = (BACKGROUND,) + tuple(int(c) for c in classes)
    return ClassifierBank(ids, tuple(rng.normal(0.0, scale, (len(ids), c)) for c in channels))


def normalize_rows(bank):
    return bank.with_filters(tuple(np.stack([l2_normalize(r) for r in f]) for f in bank.filters))


def pretrain(backbone, ds, classes, epochs=PRETRAIN_EPOCHS, lr=PRETRAIN_LR, seed=0,
             indices=None, batch_size=PRETRAIN_BATCH, multi_res=True):
    """Train background + ``classes`` head rows on items containing those classes.

    Foreground pixels of other classes are ignored. Rows are L2-normalized
    once training ends.
    """
    rng = np.random.default_rng(seed)
    bank = init_bank(classes, backbone.spec.stage_channels, rng)
    candidates = range(len(ds)) if indices is None else indices
    train = [i for i in candidates if set(ds.items[i].class_ids) & set(classes)]
    samples = [(ds.pyramid(backbone, i), restrict_labels(ds.labels(i), classes)) for i in train]
    opt = OptimizerState()
    for epoch in range(epochs):
        order = rng.permutation(len(samples))
        bank, opt = finetune(bank, [samples[j] for j in order], lr, 1, opt,
                             multi_res=multi_res, batch_size=batch_size)
        log.debug("pretrain epoch %d done", epoch)
    return normalize_rows(bank)


def pixel_accuracy(bank, backbone, ds, indices, multi_res=True):
    """Fraction of non-ignored pixels labelled correctly (other classes ignored)."""
    correct = total = 0
    visible = [c for c in bank.class_ids if c != BACKGROUND]
    for i in indices:
        gt = restrict_labels(ds.labels(i), visible)
        pred, _ = predict(bank, ds.pyramid(backbone, i), multi_res)
        valid = gt != IGNORE
        correct += int((pred[valid] == gt[valid]).sum())
        total += int(valid.sum())
    return correct / total if total else float("nan")
