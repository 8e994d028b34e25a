"""Binary portable pixmap (P6) and graymap (P5) files, 8-bit only."""
import numpy as np

from .exceptions import FormatError

_WHITESPACE = b" \t\n\r\v\f"


def _parse_header(data, magic, path):
    if data[:2] != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, got {data[:2]!r}", 0)
    pos, fields = 2, []
    while len(fields) < 3:
        if pos >= len(data):
            raise FormatError(f"{path}: truncated header", pos)
        ch = data[pos:pos + 1]
        if ch in _WHITESPACE:
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise FormatError(f"{path}: unterminated comment", pos)
            pos = end + 1
        else:
            start = pos
            while pos < len(data) and data[pos:pos + 1] not in _WHITESPACE:
                pos += 1
            token = data[start:pos]
            if not token.isdigit():
                raise FormatError(f"{path}: bad header field {token!r}", start)
            fields.append(int(token))
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise FormatError(f"{path}: missing whitespace after header", pos)
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval} (only 255)", pos)
    if width < 1 or height < 1:
        raise FormatError(f"{path}: non-positive size {width}x{height}", pos)
    return width, height, pos + 1


def _decode(data, magic, channels, path="<bytes>"):
    width, height, offset = _parse_header(data, magic, path)
    n = width * height * channels
    if len(data) - offset < n:
        raise FormatError(f"{path}: truncated payload, need {n} bytes", len(data))
    if len(data) - offset > n:
        raise FormatError(f"{path}: {len(data) - offset - n} trailing bytes", offset + n)
    arr = np.frombuffer(data, np.uint8, n, offset)
    shape = (height, width, channels) if channels > 1 else (height, width)
    return arr.reshape(shape).copy()


def _encode(arr, magic):
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {arr.dtype}")
    h, w = arr.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(arr).tobytes()


def decode_ppm(data):
    return _decode(data, b"P6", 3)


def decode_pgm(data):
    return _decode(data, b"P5", 1)


def encode_ppm(image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {image.shape}")
    return _encode(image, b"P6")


def encode_pgm(image):
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected an (H, W) image, got {image.shape}")
    return _encode(image, b"P5")


def read_ppm(path):
    with open(path, "rb") as fh:
        return _decode(fh.read(), b"P6", 3, path)


def read_pgm(path):
    with open(path, "rb") as fh:
        return _decode(fh.read(), b"P5", 1, path)


def write_ppm(path, image):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(image))


def write_pgm(path, image):
    with open(path, "wb") as fh:
        fh.write(encode_pgm(image))
