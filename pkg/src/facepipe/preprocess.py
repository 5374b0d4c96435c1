"""Grayscale image I/O, eye-based registration and histogram equalization."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .errors import CorruptHeader, DegenerateEyes, InvalidAnnotation, UnsupportedFormat

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True, eq=False)
class Image:
    """Single-channel 8-bit raster.

    ``pixels`` has shape ``(height, width)`` and dtype ``uint8``.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"expected a non-empty 2-D raster, got shape {px.shape}")
        if px.dtype != np.uint8:
            if not np.all(np.isfinite(px)) or px.min() < 0 or px.max() > 255:
                raise ValueError("intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the intensities."""
        return self.pixels.ravel()

    @classmethod
    def from_data(cls, width: int, height: int, data) -> "Image":
        data = np.asarray(data)
        if data.size != width * height:
            raise ValueError(f"data length {data.size} != {width}x{height}")
        return cls(data.reshape(height, width))

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __repr__(self):
        return f"Image(width={self.width}, height={self.height})"


@dataclass(frozen=True)
class EyeAnnotation:
    subject_id: str
    image_id: str
    left_eye: tuple[float, float]
    right_eye: tuple[float, float]

    def check(self, width: int, height: int) -> None:
        (lx, ly), (rx, ry) = self.left_eye, self.right_eye
        if math.hypot(rx - lx, ry - ly) < 2.0:
            raise DegenerateEyes(
                f"{self.subject_id}/{self.image_id}: eyes closer than 2 px"
            )
        if not lx < rx:
            raise InvalidAnnotation(
                f"{self.subject_id}/{self.image_id}: left eye must be left of right eye"
            )
        for x, y in (self.left_eye, self.right_eye):
            if not (0 <= x <= width - 1 and 0 <= y <= height - 1):
                raise InvalidAnnotation(
                    f"{self.subject_id}/{self.image_id}: eye ({x}, {y}) outside "
                    f"{width}x{height} image"
                )


@dataclass(frozen=True)
class CropParams:
    target_width: int = 200
    target_height: int = 220
    inter_eye_distance: float = 80.0
    eye_row: float = 70.0

    def __post_init__(self):
        if self.target_width < 1 or self.target_height < 1:
            raise ValueError("crop size must be positive")
        if not 0 < self.inter_eye_distance < self.target_width:
            raise ValueError("inter_eye_distance must lie in (0, target_width)")
        if not 0 <= self.eye_row < self.target_height:
            raise ValueError("eye_row must lie inside the crop")

    @property
    def left_eye_target(self) -> tuple[float, float]:
        return ((self.target_width - self.inter_eye_distance) / 2.0, float(self.eye_row))

    @property
    def right_eye_target(self) -> tuple[float, float]:
        return ((self.target_width + self.inter_eye_distance) / 2.0, float(self.eye_row))


# ---------------------------------------------------------------------------
# I/O


def _read_pgm(raw: bytes) -> Image:
    magic = raw[:2]
    if magic != b"P5":
        raise UnsupportedFormat(f"unsupported netpbm variant {magic!r}; only P5 is read")
    fields = []
    pos = 2
    n = len(raw)
    while len(fields) < 3:
        while pos < n and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos : pos + 1] == b"#":
            while pos < n and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not raw[pos : pos + 1].isspace() and raw[pos : pos + 1] != b"#":
            pos += 1
        token = raw[start:pos]
        if not token:
            raise CorruptHeader("PGM header ended early")
        if not token.isdigit():
            raise CorruptHeader(f"bad PGM header token {token!r}")
        fields.append(int(token))
    if pos >= n or not raw[pos : pos + 1].isspace():
        raise CorruptHeader("missing whitespace after PGM maxval")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise CorruptHeader(f"invalid PGM size {width}x{height}")
    if maxval > 255:
        raise UnsupportedFormat(f"PGM maxval {maxval} (>8 bit) not supported")
    if maxval < 1:
        raise CorruptHeader("PGM maxval must be positive")
    body = raw[pos : pos + width * height]
    if len(body) < width * height:
        raise CorruptHeader(
            f"PGM body holds {len(body)} bytes, header declares {width * height}"
        )
    px = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    return Image(px.copy())


def _read_png(raw: bytes) -> Image:
    try:
        with PILImage.open(io.BytesIO(raw)) as im:
            mode = im.mode
            if mode != "L":
                raise UnsupportedFormat(f"PNG mode {mode!r}; only 8-bit grayscale is read")
            px = np.asarray(im, dtype=np.uint8)
    except UnsupportedFormat:
        raise
    except Exception as exc:  # Pillow raises a zoo of exceptions on bad data
        raise CorruptHeader(f"unreadable PNG: {exc}") from exc
    return Image(px.copy())


def load_image(path) -> Image:
    """Load a binary PGM (P5) or 8-bit grayscale PNG file."""
    raw = Path(path).read_bytes()
    if raw.startswith(PNG_MAGIC):
        return _read_png(raw)
    if raw[:1] == b"P" and raw[1:2].isdigit():
        return _read_pgm(raw)
    raise UnsupportedFormat(f"{path}: neither PGM nor PNG")


def save_image(img: Image, path) -> None:
    """Write ``img`` as a binary P5 PGM."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.pixels.tobytes())


def read_eye_annotations(path) -> dict[tuple[str, str], EyeAnnotation]:
    """Parse a ``subject_id,image_id,lx,ly,rx,ry`` CSV (header optional)."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            row = [c.strip() for c in row]
            if row[0] == "subject_id":
                continue
            if len(row) != 6:
                raise InvalidAnnotation(f"{path}: expected 6 columns, got {row}")
            sid, iid = row[0], row[1]
            try:
                lx, ly, rx, ry = map(float, row[2:])
            except ValueError as exc:
                raise InvalidAnnotation(f"{path}: bad coordinate in {row}") from exc
            out[(sid, iid)] = EyeAnnotation(sid, iid, (lx, ly), (rx, ry))
    return out


# ---------------------------------------------------------------------------
# geometric normalization


def similarity_transform(eyes: EyeAnnotation, params: CropParams):
    """Return ``(scale_rot, offset)`` as complex numbers.

    A crop pixel at ``z = x + iy`` samples the source at ``scale_rot * z + offset``.
    The map sends the target eye positions onto the annotated ones.
    """
    src_l = complex(*eyes.left_eye)
    src_r = complex(*eyes.right_eye)
    dst_l = complex(*params.left_eye_target)
    dst_r = complex(*params.right_eye_target)
    a = (src_r - src_l) / (dst_r - dst_l)
    return a, src_l - a * dst_l


def crop_to_source(eyes: EyeAnnotation, params: CropParams, x, y):
    """Map crop coordinates to source coordinates."""
    a, b = similarity_transform(eyes, params)
    z = a * (np.asarray(x) + 1j * np.asarray(y)) + b
    return z.real, z.imag


def source_to_crop(eyes: EyeAnnotation, params: CropParams, x, y):
    """Inverse of :func:`crop_to_source`."""
    a, b = similarity_transform(eyes, params)
    z = (np.asarray(x) + 1j * np.asarray(y) - b) / a
    return z.real, z.imag


def geometric_normalize(img: Image, eyes: EyeAnnotation, params: CropParams = CropParams()) -> Image:
    """Rotate, scale and translate ``img`` so the eyes land on fixed crop positions.

    Sampling is bilinear; coordinates falling outside the source are clamped
    to the nearest border pixel.
    """
    eyes.check(img.width, img.height)
    ys, xs = np.mgrid[0 : params.target_height, 0 : params.target_width]
    sx, sy = crop_to_source(eyes, params, xs.astype(float), ys.astype(float))
    out = ndimage.map_coordinates(
        img.pixels.astype(np.float64), [sy, sx], order=1, mode="nearest"
    )
    return Image(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# photometric normalization


def equalization_map(img: Image) -> np.ndarray:
    """256-entry lookup table of the CDF equalization.

    A constant image maps to all zeros: its only occupied bin is also
    ``cdf_min``, so the numerator vanishes.
    """
    hist = np.bincount(img.pixels.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    n = cdf[-1]
    cdf_min = cdf[np.flatnonzero(hist)[0]]
    if n == cdf_min:
        return np.zeros(256, dtype=np.uint8)
    lut = np.floor(255.0 * (cdf - cdf_min) / (n - cdf_min) + 0.5)
    return np.clip(lut, 0, 255).astype(np.uint8)


def histogram_equalize(img: Image) -> Image:
    return Image(equalization_map(img)[img.pixels])


def preprocess_image(
    img: Image, eyes: EyeAnnotation | None = None, params: CropParams | None = None
) -> Image:
    """Registration (when eyes are given) followed by equalization."""
    if eyes is not None:
        img = geometric_normalize(img, eyes, params or CropParams())
    return histogram_equalize(img)
