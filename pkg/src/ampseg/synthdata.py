"""Deterministic synthetic shapes benchmark.

Twenty object archetypes (a shape, a colour and a surface texture each) are
drawn over textured backgrounds. Every item gets its own random stream
derived from ``(seed, class_id, index)``, so items can be generated in any
order or in parallel with identical output.
"""
import os
from dataclasses import dataclass

import numpy as np

from .pnm import write_pgm, write_ppm
from .protocol import Dataset, DatasetItem, write_manifest

NUM_CLASSES = 20
MIN_FOREGROUND = 40

SHAPES = ("disk", "square", "triangle", "ring", "cross",
          "bar", "diamond", "ellipse", "frame", "semicircle")
TEXTURES = ("solid", "stripes")

# 20 mutually distinct colours, one per class
PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212),
    (0, 128, 128), (220, 190, 255), (170, 110, 40), (255, 250, 200), (128, 0, 0),
    (170, 255, 195), (128, 128, 0), (255, 215, 180), (0, 0, 128), (255, 255, 255),
], dtype=np.float64) / 255.0

# background families: (base colour, style)
BACKGROUNDS = (
    ((0.20, 0.32, 0.48), "waves"),      # sea
    ((0.62, 0.52, 0.34), "noise"),      # sand
    ((0.26, 0.40, 0.18), "blobs"),      # grass
    ((0.40, 0.30, 0.42), "gradient"),   # indoor
)
HOME_BACKGROUND_PROB = 0.75


@dataclass(frozen=True)
class Archetype:
    class_id: int
    shape: str
    texture: str
    color: tuple


def archetype(class_id):
    if not 1 <= class_id <= NUM_CLASSES:
        raise ValueError(f"class id must be in 1..{NUM_CLASSES}, got {class_id}")
    i = class_id - 1
    return Archetype(class_id, SHAPES[i % len(SHAPES)], TEXTURES[i // len(SHAPES)],
                     tuple(PALETTE[i]))


def home_background(class_id):
    """Background family a class is usually photographed against."""
    return (class_id - 1) % len(BACKGROUNDS)


@dataclass(frozen=True)
class GenSpec:
    seed: int = 0
    image_size: int = 64
    items_per_class: int = 30
    max_distractors: int = 1
    noise: float = 0.03

    def __post_init__(self):
        if self.image_size % 8 or self.image_size < 16:
            raise ValueError("image_size must be divisible by 8 and at least 16")
        if self.items_per_class < 1:
            raise ValueError("items_per_class must be positive")
        if not 0 <= self.max_distractors <= 2:
            raise ValueError("max_distractors must be in 0..2")


@dataclass(frozen=True)
class VideoSpec:
    seed: int = 0
    frames: int = 60
    drift: float = 0.008
    motion: tuple = (0, 1)
    image_size: int = 64
    max_distractors: int = 0
    noise: float = 0.03

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError("frames must be positive")
        if self.drift < 0:
            raise ValueError("drift must be >= 0")

    def gen_spec(self):
        return GenSpec(self.seed, self.image_size, 1, self.max_distractors, self.noise)


def _shape_mask(shape, u, v, r):
    rho2 = u * u + v * v
    au, av = np.abs(u), np.abs(v)
    if shape == "disk":
        return rho2 <= r * r
    if shape == "square":
        return (au <= 0.8 * r) & (av <= 0.8 * r)
    if shape == "triangle":
        return (v <= 0.6 * r) & (au <= (v + r) * 0.62)
    if shape == "ring":
        return (rho2 <= r * r) & (rho2 >= (0.55 * r) ** 2)
    if shape == "cross":
        return ((au <= 0.3 * r) & (av <= r)) | ((av <= 0.3 * r) & (au <= r))
    if shape == "bar":
        return (au <= r) & (av <= 0.35 * r)
    if shape == "diamond":
        return au + av <= r
    if shape == "ellipse":
        return (u / r) ** 2 + (v / (0.55 * r)) ** 2 <= 1.0
    if shape == "frame":
        m = np.maximum(au, av)
        return (m <= 0.85 * r) & (m >= 0.5 * r)
    if shape == "semicircle":
        return (rho2 <= r * r) & (v <= 0.15 * r)
    raise ValueError(f"unknown shape {shape!r}")


def _object_layer(arch, size, rng, radius_range):
    """Rasterise one object; returns ``(mask, rgb)`` at ``size`` x ``size``."""
    r = rng.uniform(*radius_range)
    margin = 0.8 * r
    cy, cx = rng.uniform(margin, size - margin, size=2)
    theta = rng.uniform(0.0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    dy, dx = yy - cy, xx - cx
    u = np.cos(theta) * dx + np.sin(theta) * dy
    v = -np.sin(theta) * dx + np.cos(theta) * dy
    mask = _shape_mask(arch.shape, u, v, r)
    color = np.clip(np.asarray(arch.color) * rng.uniform(0.85, 1.15)
                    + rng.normal(0.0, 0.03, 3), 0.0, 1.0)
    shade = np.ones((size, size))
    if arch.texture == "stripes":
        shade = np.where(np.floor(u / 3.0) % 2 == 0, 1.0, 0.55)
    rgb = color[None, None, :] * shade[..., None]
    return mask, rgb


def _background(family, size, rng, noise):
    base, style = BACKGROUNDS[family]
    base = np.asarray(base) * rng.uniform(0.85, 1.15)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    if style == "waves":
        phase = rng.uniform(0, 2 * np.pi)
        pattern = 0.08 * np.sin(2 * np.pi * 5 * yy + 2.0 * np.sin(2 * np.pi * xx) + phase)
    elif style == "noise":
        pattern = rng.normal(0.0, 0.06, (size, size))
    elif style == "blobs":
        pattern = np.zeros((size, size))
        for _ in range(6):
            by, bx, s = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.05, 0.15)
            pattern += 0.07 * np.exp(-((yy - by) ** 2 + (xx - bx) ** 2) / (2 * s * s))
    else:
        angle = rng.uniform(0, 2 * np.pi)
        pattern = 0.15 * (np.cos(angle) * xx + np.sin(angle) * yy - 0.5)
    img = base[None, None, :] + pattern[..., None]
    return img + rng.normal(0.0, noise, (size, size, 3))


def _to_uint8(img):
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def _render_layers(class_id, spec, rng):
    """Background (with distractors) plus the main object, before compositing."""
    size = spec.image_size
    scale = size / 64.0
    family = home_background(class_id)
    if rng.uniform() > HOME_BACKGROUND_PROB:
        family = int(rng.integers(len(BACKGROUNDS)))
    bg = _background(family, size, rng, spec.noise)
    labels = np.zeros((size, size), dtype=np.uint8)
    others = [c for c in range(1, NUM_CLASSES + 1) if c != class_id]
    for _ in range(int(rng.integers(spec.max_distractors + 1))):
        dc = int(rng.choice(others))
        mask, rgb = _object_layer(archetype(dc), size, rng, (5 * scale, 8 * scale))
        bg = np.where(mask[..., None], rgb, bg)
        labels[mask] = dc
    mask, rgb = _object_layer(archetype(class_id), size, rng, (10 * scale, 18 * scale))
    return bg, labels, mask, rgb


def _compose(bg, labels, mask, rgb, class_id):
    image = _to_uint8(np.where(mask[..., None], rgb, bg))
    labels = labels.copy()
    labels[mask] = class_id
    return image, labels


def render_item(class_id, index, spec):
    """Render one ``(image, labels)`` pair; deterministic in its arguments.

    The object is redrawn until at least ``MIN_FOREGROUND`` pixels of
    ``class_id`` are visible.
    """
    rng = np.random.default_rng([spec.seed, class_id, index])
    while True:
        bg, labels, mask, rgb = _render_layers(class_id, spec, rng)
        if mask.sum() >= MIN_FOREGROUND:
            return _compose(bg, labels, mask, rgb, class_id)


def gen_dataset(spec, out_dir):
    """Write images, label maps and ``manifest.tsv`` under ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    items = []
    for class_id in range(1, NUM_CLASSES + 1):
        for index in range(spec.items_per_class):
            image, labels = render_item(class_id, index, spec)
            img_name = f"img_{class_id}_{index}.ppm"
            lbl_name = f"lbl_{class_id}_{index}.pgm"
            write_ppm(os.path.join(out_dir, img_name), image)
            write_pgm(os.path.join(out_dir, lbl_name), labels)
            present = tuple(sorted(int(c) for c in np.unique(labels) if c != 0))
            items.append(DatasetItem(img_name, lbl_name, present))
    manifest = os.path.join(out_dir, "manifest.tsv")
    write_manifest(manifest, items)
    return Dataset(out_dir, tuple(items))


def gen_video(spec, class_id):
    """Render a clip of one translating object whose colour drifts linearly.

    Frame ``t`` shifts the object by ``t * motion`` pixels (wrapping at the
    border) and blends its colour toward the complementary colour by
    ``min(1, t * drift)``. Returns ``(frames, labels)`` as lists of uint8
    arrays.
    """
    rng = np.random.default_rng([spec.seed, class_id, 0])
    gspec = spec.gen_spec()
    while True:
        bg, labels, mask, rgb = _render_layers(class_id, gspec, rng)
        if mask.sum() >= MIN_FOREGROUND:
            break
    target = 1.0 - np.asarray(archetype(class_id).color)
    dy, dx = (int(m) for m in spec.motion)
    frames, maps = [], []
    for t in range(spec.frames):
        w = min(1.0, t * spec.drift)
        obj = rgb if w == 0.0 else (1.0 - w) * rgb + w * target[None, None, :]
        shift = (t * dy, t * dx)
        m = np.roll(mask, shift, axis=(0, 1))
        o = np.roll(obj, shift, axis=(0, 1))
        image, lbl = _compose(bg, labels, m, o, class_id)
        frames.append(image)
        maps.append(lbl)
    return frames, maps
