"""
Grayscale and RGB image files.

Binary PGM (P5) is the canonical format: 8-bit and 16-bit (big-endian) on
load, 8-bit on save. PNG is read and written through Pillow, selected by the
``.png`` suffix. RGB overlays go to binary PPM (P6) or PNG.
"""

from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..core.errors import IoError, UnsupportedFormat
from ..core.models import GrayImage

PathLike = Union[str, Path]


def _parse_header(data: bytes, magic: bytes) -> Tuple[int, int, int, int]:
    """Width, height, maxval and payload offset of a binary PNM file."""
    if data[:2] != magic:
        raise UnsupportedFormat(f"expected magic {magic.decode()}, got {data[:2]!r}")

    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise UnsupportedFormat("truncated header")
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise UnsupportedFormat(f"unexpected byte {data[pos:pos + 1]!r} in header")
        fields.append(int(data[start:pos]))

    # A single whitespace byte separates maxval from the raster.
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise UnsupportedFormat("missing whitespace after maxval")
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise UnsupportedFormat(f"invalid header values {width}x{height}, maxval {maxval}")
    return width, height, maxval, pos + 1


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}", path=str(path))


def _write_bytes(path: Path, data: bytes):
    try:
        path.write_bytes(data)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}", path=str(path))


def decode_pgm(data: bytes) -> GrayImage:
    """Decode a binary PGM payload; intensities are scaled by 1/maxval."""
    width, height, maxval, offset = _parse_header(data, b"P5")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    expected = width * height * dtype.itemsize
    raster = data[offset : offset + expected]
    if len(raster) < expected:
        raise UnsupportedFormat(f"raster has {len(raster)} bytes, expected {expected}")
    values = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return GrayImage(pixels=np.minimum(values.astype(np.float64) / maxval, 1.0))


def encode_pgm(img: GrayImage) -> bytes:
    """8-bit binary PGM with intensities rounded to the nearest level."""
    levels = np.rint(img.pixels * 255).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + levels.tobytes()


def encode_ppm(rgb: np.ndarray) -> bytes:
    """Binary PPM (P6) from an (height, width, 3) uint8 array."""
    height, width = rgb.shape[:2]
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def _is_png(path: Path) -> bool:
    return path.suffix.lower() == ".png"


def load_image(path: PathLike) -> GrayImage:
    """
    Load a grayscale image.

    Args:
        path: P5 PGM file, or PNG when the suffix is .png

    Returns:
        GrayImage with intensities in [0, 1]

    Raises:
        IoError: the file cannot be read
        UnsupportedFormat: the content is not a supported grayscale image
    """
    path = Path(path)
    if not _is_png(path):
        return decode_pgm(_read_bytes(path))

    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I"):
                values = np.asarray(im, dtype=np.float64) / 65535.0
            else:
                values = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except FileNotFoundError as e:
        raise IoError(f"cannot read {path}: {e}", path=str(path))
    except UnidentifiedImageError as e:
        raise UnsupportedFormat(f"{path} is not a readable PNG: {e}")
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}", path=str(path))
    return GrayImage(pixels=np.clip(values, 0.0, 1.0))


def save_image(img: GrayImage, path: PathLike):
    """
    Save a grayscale image as 8-bit P5, or PNG when the suffix is .png.

    Raises:
        IoError: the file cannot be written
    """
    path = Path(path)
    if not _is_png(path):
        _write_bytes(path, encode_pgm(img))
        return
    levels = np.rint(img.pixels * 255).astype(np.uint8)
    try:
        Image.fromarray(levels).save(path, format="PNG")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}", path=str(path))


def save_rgb(rgb: np.ndarray, path: PathLike):
    """
    Save an (height, width, 3) uint8 image as P6, or PNG when the suffix is .png.

    Raises:
        IoError: the file cannot be written
    """
    path = Path(path)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise UnsupportedFormat(f"expected an RGB array, got shape {rgb.shape}")
    if not _is_png(path):
        _write_bytes(path, encode_ppm(rgb))
        return
    try:
        Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)).save(
            path, format="PNG"
        )
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}", path=str(path))
