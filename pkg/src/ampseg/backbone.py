"""Fixed random convolutional feature extractor with three output levels."""
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FormatError, ShapeError
from .numerics import as_tensor3, conv2d, relu

BACKBONE_MAGIC = b"AMPBK1"
NUM_LEVELS = 3


@dataclass(frozen=True)
class BackboneSpec:
    seed: int = 0
    stage_channels: tuple = (16, 32, 64)
    kernel_size: int = 3
    input_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        if len(self.stage_channels) != NUM_LEVELS:
            raise ValueError(f"need exactly {NUM_LEVELS} stages, got {self.stage_channels}")
        if any(c <= 0 for c in self.stage_channels):
            raise ValueError("stage channels must be positive")
        if any(b <= a for a, b in zip(self.stage_channels, self.stage_channels[1:])):
            raise ValueError("stage channels must be strictly increasing")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd integer")
        if self.input_channels < 1:
            raise ValueError("input_channels must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class Backbone:
    spec: BackboneSpec
    stage_kernels: tuple = field(repr=False)

    @property
    def pad(self):
        return self.spec.kernel_size // 2

    def kernel_shapes(self):
        shapes, cin = [], self.spec.input_channels
        for cout in self.spec.stage_channels:
            shapes.append((cout, cin, self.spec.kernel_size, self.spec.kernel_size))
            cin = cout
        return shapes


@dataclass(frozen=True)
class FeaturePyramid:
    """Feature maps at three resolutions, finest first."""

    levels: tuple
    source_height: int
    source_width: int

    @property
    def channels(self):
        return tuple(level.shape[0] for level in self.levels)


def init_backbone(spec=None):
    """Draw Glorot-uniform stage kernels from a generator seeded by ``spec.seed``."""
    spec = spec or BackboneSpec()
    rng = np.random.default_rng(spec.seed)
    kernels, cin = [], spec.input_channels
    k = spec.kernel_size
    for cout in spec.stage_channels:
        fan_in, fan_out = cin * k * k, cout * k * k
        a = np.sqrt(6.0 / (fan_in + fan_out))
        kernels.append(rng.uniform(-a, a, size=(cout, cin, k, k)))
        cin = cout
    return Backbone(spec, tuple(kernels))


def extract(backbone, image):
    image = as_tensor3(image)
    c, h, w = image.shape
    if c != backbone.spec.input_channels:
        raise ShapeError(f"image has {c} channels, backbone expects {backbone.spec.input_channels}")
    if h % 8 or w % 8 or h < 16 or w < 16:
        raise ShapeError(f"image size {h}x{w} must be divisible by 8 and at least 16")
    levels, x = [], image
    for kernel in backbone.stage_kernels:
        x = relu(conv2d(x, kernel, stride=2, pad=backbone.pad))
        levels.append(x)
    return FeaturePyramid(tuple(levels), h, w)


def save_backbone(backbone, path):
    spec = backbone.spec
    with open(path, "wb") as fh:
        fh.write(BACKBONE_MAGIC)
        fh.write(struct.pack("<Q", spec.seed))
        fh.write(struct.pack("<3I", *spec.stage_channels))
        fh.write(struct.pack("<2I", spec.kernel_size, spec.input_channels))
        for kernel in backbone.stage_kernels:
            fh.write(np.ascontiguousarray(kernel, dtype="<f8").tobytes())


def load_backbone(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:6] != BACKBONE_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:6]!r}", 0)
    header = struct.calcsize("<Q3I2I")
    if len(data) < 6 + header:
        raise FormatError(f"{path}: truncated header", len(data))
    seed, c0, c1, c2, ksize, cin = struct.unpack_from("<Q3I2I", data, 6)
    spec = BackboneSpec(seed, (c0, c1, c2), ksize, cin)
    offset = 6 + header
    kernels = []
    for shape in Backbone(spec, ()).kernel_shapes():
        n = int(np.prod(shape))
        if offset + 8 * n > len(data):
            raise FormatError(f"{path}: truncated kernel payload", len(data))
        kernels.append(np.frombuffer(data, "<f8", n, offset).astype(np.float64).reshape(shape))
        offset += 8 * n
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes", offset)
    return Backbone(spec, tuple(kernels))
