"""Multi-resolution scoring heads, head fine-tuning and the episode/video loops."""
import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .backbone import extract
from .exceptions import ShapeError
from .numerics import (argmax_channels, bilinear_resize, bilinear_resize_adjoint,
                       conv1x1, l2_normalize, log_softmax_channels, softmax_channels)
from .proxy import BACKGROUND, adapt, imprint, nmap

log = logging.getLogger(__name__)

IGNORE = 255
TAU_AREA = 1.0


@dataclass(frozen=True)
class FewShotConfig:
    alpha_bg: float = 0.26
    ft_iterations: int = 0
    ft_learning_rate: float = 7.6e-5
    multi_res: bool = True
    adaptation: bool = True
    imprint: bool = True  # False: novel rows start random ("fine-tune only")

    def __post_init__(self):
        if not 0.0 <= self.alpha_bg <= 1.0:
            raise ValueError(f"alpha_bg must be in [0, 1], got {self.alpha_bg}")
        if self.ft_iterations < 0:
            raise ValueError("ft_iterations must be >= 0")
        if not self.ft_learning_rate > 0:
            raise ValueError("ft_learning_rate must be > 0")


@dataclass
class OptimizerState:
    """RMSProp running mean of squared gradients, one array per level."""

    accumulators: tuple = None
    decay: float = 0.9
    epsilon: float = 1e-8

    def matching(self, bank):
        shapes = [f.shape for f in bank.filters]
        if self.accumulators is None or [a.shape for a in self.accumulators] != shapes:
            return replace(self, accumulators=tuple(np.zeros(s) for s in shapes))
        return replace(self, accumulators=tuple(a.copy() for a in self.accumulators))


def _used_levels(pyr, multi_res):
    n = len(pyr.levels)
    return range(n) if multi_res else range(n - 1, n)


def _check_dims(bank, pyr):
    if bank.channels != pyr.channels:
        raise ShapeError(f"bank channels {bank.channels} do not match pyramid {pyr.channels}")


def score(bank, pyr, multi_res=True):
    """Fused logits ``(num_classes, H, W)`` at the pyramid's source resolution.

    Per-level 1x1 responses are upsampled and summed; with ``multi_res`` off
    only the coarsest level contributes.
    """
    _check_dims(bank, pyr)
    fused = None
    for r in _used_levels(pyr, multi_res):
        s = bilinear_resize(conv1x1(pyr.levels[r], bank.filters[r]),
                            pyr.source_height, pyr.source_width)
        fused = s if fused is None else fused + s
    return fused


def predict(bank, pyr, multi_res=True):
    logits = score(bank, pyr, multi_res)
    ids = np.asarray(bank.class_ids, dtype=np.uint8)
    return ids[argmax_channels(logits)], softmax_channels(logits)


def _target_rows(bank, labels):
    labels = np.asarray(labels)
    lookup = np.full(256, -1, dtype=np.intp)
    lookup[list(bank.class_ids)] = np.arange(bank.num_classes)
    rows = lookup[labels.astype(np.intp)]
    bad = (rows < 0) & (labels != IGNORE)
    if bad.any():
        raise ValueError(f"labels {sorted(set(labels[bad].tolist()))} are not in the bank "
                         f"{bank.class_ids} and not ignore ({IGNORE})")
    return rows


def loss_and_grad(bank, samples, multi_res=True):
    """Mean pixel-wise cross-entropy over non-ignored pixels and its gradient.

    ``samples`` is a sequence of ``(FeaturePyramid, LabelMap)``; the mean runs
    over all valid pixels of all samples jointly. Returns
    ``(loss, grads)`` with one gradient matrix per level.
    """
    grads = [np.zeros_like(f) for f in bank.filters]
    total, count = 0.0, 0
    cached = []
    for pyr, labels in samples:
        rows = _target_rows(bank, labels)
        if rows.shape != (pyr.source_height, pyr.source_width):
            raise ShapeError(f"label map {rows.shape} does not match pyramid source size")
        valid = rows >= 0
        logp = log_softmax_channels(score(bank, pyr, multi_res))
        yy, xx = np.nonzero(valid)
        total -= logp[rows[valid], yy, xx].sum()
        count += int(valid.sum())
        cached.append((pyr, rows, valid, logp))
    if count == 0:
        return 0.0, tuple(grads)
    for pyr, rows, valid, logp in cached:
        g = np.exp(logp)
        yy, xx = np.nonzero(valid)
        g[rows[valid], yy, xx] -= 1.0
        g *= valid[None]
        g /= count
        for r in _used_levels(pyr, multi_res):
            feat = pyr.levels[r]
            gr = bilinear_resize_adjoint(g, feat.shape[1], feat.shape[2])
            grads[r] += gr.reshape(gr.shape[0], -1) @ feat.reshape(feat.shape[0], -1).T
    return total / count, tuple(grads)


def loss(bank, samples, multi_res=True):
    return loss_and_grad(bank, samples, multi_res)[0]


def finetune(bank, batches, lr, iterations, opt=None, multi_res=True, batch_size=None):
    """RMSProp on the head rows only; the backbone is never touched.

    Each iteration is one full pass over ``batches`` in order, taking one step
    per chunk of ``batch_size`` samples (all samples jointly when ``None``).
    """
    opt = (opt or OptimizerState()).matching(bank)
    if iterations == 0 or not batches:
        return bank, opt
    if not lr > 0:
        raise ValueError("learning rate must be > 0")
    step = batch_size or len(batches)
    params = [f.copy() for f in bank.filters]
    acc = list(opt.accumulators)
    for _ in range(iterations):
        for start in range(0, len(batches), step):
            current = bank.with_filters(params)
            _, grads = loss_and_grad(current, batches[start:start + step], multi_res)
            for r, g in enumerate(grads):
                acc[r] = opt.decay * acc[r] + (1.0 - opt.decay) * g * g
                params[r] = params[r] - lr * g / (np.sqrt(acc[r]) + opt.epsilon)
    return bank.with_filters(params), replace(opt, accumulators=tuple(acc))


def random_rows(channels, rng):
    """Unit-norm random filter rows, one per level."""
    return tuple(l2_normalize(rng.standard_normal(c)) for c in channels)


def build_episode_bank(base_bank, backbone, episode, cfg, pyramids=None):
    """Imprint (or randomly initialise) the novel class and adapt background.

    Returns ``(bank, support_pyramids)``.
    """
    if episode.novel_class in base_bank:
        raise ValueError(f"novel class {episode.novel_class} is already in the base bank")
    if pyramids is None:
        pyramids = [extract(backbone, img) for img, _ in episode.support]
    fg = [np.asarray(m, dtype=np.float64) for _, m in episode.support]
    if cfg.imprint:
        bank = imprint(base_bank, nmap(pyramids, fg, episode.novel_class))
    else:
        rng = np.random.default_rng(episode.seed)
        bank = base_bank.append(episode.novel_class, random_rows(base_bank.channels, rng))
    if cfg.adaptation and cfg.alpha_bg > 0:
        bg = [1.0 - m for m in fg]
        bank = adapt(bank, nmap(pyramids, bg, BACKGROUND), cfg.alpha_bg)
    if cfg.ft_iterations > 0:
        samples = [(p, np.where(m > 0, episode.novel_class, BACKGROUND).astype(np.uint8))
                   for p, m in zip(pyramids, fg)]
        bank, _ = finetune(bank, samples, cfg.ft_learning_rate, cfg.ft_iterations,
                           multi_res=cfg.multi_res)
    return bank, pyramids


def run_fewshot_episode(base_bank, backbone, episode, cfg=FewShotConfig()):
    """Run one independent episode; returns ``(prediction, foreground IoU)``."""
    from .metrics import binary_iou

    bank, _ = build_episode_bank(base_bank, backbone, episode, cfg)
    query_img, query_mask = episode.query
    pred, _ = predict(bank, extract(backbone, query_img), cfg.multi_res)
    return pred, binary_iou(pred == episode.novel_class, np.asarray(query_mask) > 0)


class SelfAdaptResult(NamedTuple):
    predictions: list
    bank: object
    skipped_frames: int


def self_adapt(bank, backbone, frames, alpha, target_class, multi_res=True, tau_area=TAU_AREA):
    """Online adaptation of target and background rows from the model's own output.

    Each frame is predicted with the current bank; the target probability
    channel then serves as a soft mask for a new target proxy, and its
    complement for a background proxy. Frames whose mask weight does not
    exceed ``tau_area`` are not used for that class.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    t_row = bank.row_index(target_class)
    predictions, skipped = [], 0
    for frame in frames:
        pyr = extract(backbone, frame)
        labels, probs = predict(bank, pyr, multi_res)
        predictions.append(labels)
        if alpha == 0.0:
            continue
        fg = probs[t_row]
        bg = 1.0 - fg
        if fg.sum() > tau_area:
            bank = adapt(bank, nmap([pyr], [fg], target_class), alpha)
        else:
            skipped += 1
        if BACKGROUND in bank and target_class != BACKGROUND and bg.sum() > tau_area:
            bank = adapt(bank, nmap([pyr], [bg], BACKGROUND), alpha)
    if skipped:
        log.info("self_adapt: %d of %d frames below the area gate", skipped, len(frames))
    return SelfAdaptResult(predictions, bank, skipped)
