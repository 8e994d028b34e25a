"""End-to-end experiment drivers: few-shot evaluation, the ablation grid,
the class-incremental stream and video self-adaptation."""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .backbone import extract
from .metrics import ConfusionCounts, binary_iou, episode_result, miou_fg_bg, miou_foreground
from .protocol import (build_task_stream, init_bank, pretrain, restrict_labels,
                       sample_episodes, image_to_tensor)
from .proxy import BACKGROUND, ClassifierBank, adapt, adapt_or_imprint, imprint, nmap
from .segmenter import (FewShotConfig, build_episode_bank, finetune, predict, random_rows,
                        self_adapt)
from .synthdata import VideoSpec, gen_video

log = logging.getLogger(__name__)

CONTINUAL_ALPHA = 0.26
NAIVE_LR = 9.06e-5
NAIVE_ITERATIONS = 5

# (name, k, config) rows of the ablation grid
ABLATION_GRID = (
    ("ft_only", 5, FewShotConfig(imprint=False, adaptation=False, ft_iterations=2)),
    ("imprint", 5, FewShotConfig()),
    ("imprint_ft", 5, FewShotConfig(ft_iterations=2)),
    ("imprint_no_adapt", 1, FewShotConfig(adaptation=False)),
    ("imprint_no_multires", 1, FewShotConfig(multi_res=False)),
    ("imprint_full", 1, FewShotConfig()),
)


def _episode_record(index, episode, pred, cfg_name=None):
    res = episode_result(pred, episode.query[1], episode.novel_class)
    rec = {"episode": index, "k": episode.k, "supports": list(episode.support_ids),
           "query": episode.query_id, **res.to_record()}
    if cfg_name is not None:
        rec["config"] = cfg_name
    return res, rec


def _run_one(args):
    base_bank, backbone, episode, cfg = args
    bank, _ = build_episode_bank(base_bank, backbone, episode, cfg)
    pred, _ = predict(bank, extract(backbone, episode.query[0]), cfg.multi_res)
    return pred


def run_episodes(base_bank, backbone, episodes, cfg, workers=1):
    """Predictions for every episode, in episode order regardless of ``workers``."""
    jobs = [(base_bank, backbone, e, cfg) for e in episodes]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [_run_one(j) for j in jobs]


@dataclass
class FewShotRun:
    results: list
    records: list
    classes: tuple
    predictions: list = None

    @property
    def miou(self):
        return miou_foreground(self.results, self.classes)

    @property
    def miou_fg_bg(self):
        return miou_fg_bg(self.results, self.classes)

    def summary(self):
        return {"episodes": len(self.results), "miou_fg": self.miou,
                "miou_fg_bg": self.miou_fg_bg, "aggregation": "count-sum per class"}


def run_fewshot(base_bank, backbone, episodes, cfg=FewShotConfig(), classes=None,
                workers=1, name=None):
    preds = run_episodes(base_bank, backbone, episodes, cfg, workers)
    results, records = [], []
    for i, (e, p) in enumerate(zip(episodes, preds)):
        res, rec = _episode_record(i, e, p, name)
        results.append(res)
        records.append(rec)
    classes = tuple(sorted({e.novel_class for e in episodes})) if classes is None else classes
    return FewShotRun(results, records, tuple(classes), preds)


def run_ablation(base_bank, backbone, ds, fold, count, seed=0, workers=1, grid=ABLATION_GRID):
    """Evaluate every grid row; returns ``{name: FewShotRun}``."""
    episodes = {}
    runs = {}
    for name, k, cfg in grid:
        if k not in episodes:
            episodes[k] = sample_episodes(ds, fold, k, count, seed)
        runs[name] = run_fewshot(base_bank, backbone, episodes[k], cfg, fold.test_classes,
                                 workers, name)
        log.info("ablation %s (k=%d): mIoU %.4f", name, k, runs[name].miou)
    return runs


# -- class-incremental stream -------------------------------------------------

def _batch(ds, backbone, items, visible):
    return [(ds.pyramid(backbone, i), restrict_labels(ds.labels(i), visible)) for i in items]


def imprint_task(bank, batch, alpha=CONTINUAL_ALPHA):
    """Imprint unseen classes and adapt every seen class present in the batch."""
    present = sorted({int(c) for _, lbl in batch for c in np.unique(lbl) if c != 255})
    for c in present:
        pairs = [(p, (lbl == c).astype(np.float64)) for p, lbl in batch if (lbl == c).any()]
        proxy = nmap([p for p, _ in pairs], [m for _, m in pairs], c)
        bank = adapt_or_imprint(bank, proxy, alpha)
    return bank, present


def naive_task(bank, batch, new_classes, rng, lr=NAIVE_LR, iterations=NAIVE_ITERATIONS):
    """Append random rows for the new classes, then fine-tune per sample."""
    for c in new_classes:
        bank = bank.append(c, random_rows(bank.channels, rng))
    bank, _ = finetune(bank, batch, lr, iterations, batch_size=1)
    return bank


def evaluate_nway(bank, backbone, ds, items, visible):
    counts = ConfusionCounts(visible)
    for i in items:
        pred, _ = predict(bank, ds.pyramid(backbone, i))
        counts.update(pred, restrict_labels(ds.labels(i), visible))
    return counts


def run_continual(ds, backbone, seed, method="imprint", alpha=CONTINUAL_ALPHA,
                  naive_lr=NAIVE_LR, naive_iterations=NAIVE_ITERATIONS, pretrain_kwargs=None,
                  base_bank=None):
    """One seed of the incremental stream; returns one record per task.

    mIoU at task ``i`` averages the foreground IoU of all classes seen so
    far, measured on held-out items whose dominant class has been seen.
    """
    train, test = ds.split()
    stream = build_task_stream(ds, seed, indices=train)
    if base_bank is None:
        base_bank = pretrain(backbone, ds, stream.base_classes, seed=seed, indices=train,
                             **(pretrain_kwargs or {}))
    bank = base_bank
    rng = np.random.default_rng([seed, 1])
    records = []
    for t, task in enumerate(stream.tasks):
        visible = stream.visible_classes(t)
        batch = _batch(ds, backbone, task.items, visible)
        before = bank
        if method == "imprint":
            bank, present = imprint_task(bank, batch, alpha)
        elif method == "naive":
            bank = naive_task(bank, batch, task.classes, rng, naive_lr, naive_iterations)
            present = sorted(set(visible) | {BACKGROUND})
        else:
            raise ValueError(f"unknown method {method!r}")
        changed = sorted(c for c in bank.class_ids
                         if c not in before or any(not np.array_equal(a, b) for a, b in
                                                   zip(bank.rows(c), before.rows(c))))
        eval_items = [i for i in test if ds.dominant_class(i) in visible]
        counts = evaluate_nway(bank, backbone, ds, eval_items, visible)
        records.append({"seed": seed, "method": method, "task": t,
                        "new_classes": list(task.classes), "batch_items": len(task.items),
                        "batch_classes": present, "changed_classes": changed,
                        "num_classes": len(visible), "miou": counts.miou(),
                        "per_class": {str(c): v for c, v in counts.per_class().items()}})
    return records


# -- video self-adaptation ----------------------------------------------------

def video_initial_bank(backbone, frame, labels, class_id, base_bank=None, alpha_bg=0.26):
    """Imprint the target from the first annotated frame and adapt background."""
    pyr = extract(backbone, frame)
    fg = (labels == class_id).astype(np.float64)
    if base_bank is None:
        base_bank = ClassifierBank.empty(pyr.channels)
    if BACKGROUND in base_bank:
        bank = adapt(base_bank, nmap([pyr], [1.0 - fg], BACKGROUND), alpha_bg)
    else:
        bank = imprint(base_bank, nmap([pyr], [1.0 - fg], BACKGROUND))
    return imprint(bank, nmap([pyr], [fg], class_id))


def run_video(backbone, spec=VideoSpec(), class_id=1, alpha=0.001, base_bank=None,
              multi_res=True):
    """Adapted vs frozen per-frame foreground IoU on frames 1..T-1."""
    frames, labels = gen_video(spec, class_id)
    tensors = [image_to_tensor(f) for f in frames]
    bank = video_initial_bank(backbone, tensors[0], labels[0], class_id, base_bank)
    adapted = self_adapt(bank, backbone, tensors[1:], alpha, class_id, multi_res)
    frozen = self_adapt(bank, backbone, tensors[1:], 0.0, class_id, multi_res)
    records = []
    for t, (pa, pf, gt) in enumerate(zip(adapted.predictions, frozen.predictions, labels[1:]), 1):
        target = gt == class_id
        records.append({"frame": t, "iou_adapted": binary_iou(pa == class_id, target),
                        "iou_frozen": binary_iou(pf == class_id, target)})
    return records, adapted

