"""Real Gabor filter bank and convolution-based feature extraction."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import DimensionMismatch, KernelLargerThanImage


@dataclass(frozen=True)
class GaborKernelSpec:
    f: float
    theta: float
    sigma_x: float
    sigma_y: float
    half_window: int

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError("frequency must be positive")
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise ValueError("sigma_x and sigma_y must be positive")
        if int(self.half_window) != self.half_window or self.half_window < 1:
            raise ValueError("half_window must be an integer >= 1")

    @property
    def size(self) -> int:
        return 2 * self.half_window + 1


def gabor_tap(spec: GaborKernelSpec, x, y):
    """Evaluate the filter at (column offset ``x``, row offset ``y``)."""
    s, c = math.sin(spec.theta), math.cos(spec.theta)
    u = x * s + y * c
    v = x * c - y * s
    envelope = np.exp(-0.5 * (u**2 / spec.sigma_x**2 + v**2 / spec.sigma_y**2))
    return envelope * np.cos(2.0 * math.pi * spec.f * u)


def make_kernel(spec: GaborKernelSpec) -> np.ndarray:
    """Sample the kernel on the integer grid ``[-hw, hw]^2``.

    Row index is ``y + hw``, column index is ``x + hw``.
    """
    hw = spec.half_window
    y, x = np.mgrid[-hw : hw + 1, -hw : hw + 1].astype(np.float64)
    return gabor_tap(spec, x, y)


@dataclass(frozen=True)
class BankConfig:
    n_frequencies: int = 5
    n_orientations: int = 8
    sigma_factor: float = 0.5  # sigma in wavelengths
    window_sigmas: float = 3.0
    literal_frequencies: bool = False

    def frequency(self, i: int) -> float:
        """Frequency in cycles/pixel for scale index ``i`` (1-based)."""
        if self.literal_frequencies:
            return math.pi / 2**i
        # pi/2^i read as angular frequency: 2*pi*f = pi/2^i
        return 1.0 / 2 ** (i + 1)

    def sigma(self, f: float) -> float:
        return self.sigma_factor / f


@dataclass(frozen=True)
class GaborBank:
    specs: tuple[GaborKernelSpec, ...]
    kernels: tuple[np.ndarray, ...] = field(repr=False, compare=False)
    config: BankConfig = BankConfig()

    def __len__(self):
        return len(self.specs)

    def __iter__(self):
        return iter(zip(self.specs, self.kernels))

    @property
    def max_size(self) -> int:
        return max(s.size for s in self.specs)

    def describe(self) -> dict:
        return {
            "config": asdict(self.config),
            "kernels": [asdict(s) for s in self.specs],
        }


def default_bank(config: BankConfig = BankConfig()) -> GaborBank:
    """Frequency-major bank: scales ``i = 1..n`` outer, orientations ``k*pi/8`` inner."""
    specs = []
    for i in range(1, config.n_frequencies + 1):
        f = config.frequency(i)
        sigma = config.sigma(f)
        hw = max(1, math.ceil(config.window_sigmas * sigma))
        for k in range(1, config.n_orientations + 1):
            theta = k * math.pi / config.n_orientations
            specs.append(GaborKernelSpec(f, theta, sigma, sigma, hw))
    kernels = []
    for s in specs:
        kern = make_kernel(s)
        kern.setflags(write=False)
        kernels.append(kern)
    return GaborBank(tuple(specs), tuple(kernels), config)


def convolve(img, kernel: np.ndarray, method: str = "direct") -> np.ndarray:
    """Same-size 2-D convolution with zero padding.

    ``out[y, x] = sum_{u, v} k[v, u] * img[y - v, x - u]`` with kernel offsets
    measured from the kernel centre. ``method="fft"`` gives the same result
    up to floating point round-off and is much faster for wide kernels.
    """
    a = _as_array(img)
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise ValueError("kernel must be 2-D with odd side lengths")
    if k.shape[0] > a.shape[0] or k.shape[1] > a.shape[1]:
        raise KernelLargerThanImage(
            f"kernel {k.shape[1]}x{k.shape[0]} exceeds image {a.shape[1]}x{a.shape[0]}"
        )
    if method == "auto":
        method = "fft" if k.size > 49 else "direct"
    if method == "direct":
        return signal.convolve2d(a, k, mode="same", boundary="fill", fillvalue=0.0)
    if method == "fft":
        return signal.fftconvolve(a, k, mode="same")
    raise ValueError(f"unknown convolution method {method!r}")


def feature_dim(width: int, height: int, n_kernels: int, rho: int) -> int:
    return n_kernels * math.ceil(width / rho) * math.ceil(height / rho)


def extract_features(img, bank: GaborBank, rho: int = 4, method: str = "auto") -> np.ndarray:
    """Concatenate the subsampled responses of every kernel in bank order.

    Each response is subsampled every ``rho``-th row and column starting at
    the top-left pixel and flattened row-major.
    """
    if int(rho) != rho or rho < 1:
        raise ValueError("rho must be a positive integer")
    a = _as_array(img)
    parts = [convolve(a, kern, method)[::rho, ::rho].ravel() for _, kern in bank]
    return np.concatenate(parts)


def _as_array(img) -> np.ndarray:
    px = getattr(img, "pixels", img)
    a = np.asarray(px, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("expected a 2-D image")
    return a


# ---------------------------------------------------------------------------
# feature dump: little-endian float32 records + JSON sidecar


def write_feature_dump(path, features, ids, meta: dict) -> None:
    feats = np.asarray(features, dtype="<f4")
    if feats.ndim != 2 or feats.shape[0] != len(ids):
        raise DimensionMismatch("features must be (n_records, dim) with one id per record")
    path = Path(path)
    path.write_bytes(feats.tobytes())
    sidecar = {
        "dim": int(feats.shape[1]),
        "count": int(feats.shape[0]),
        "dtype": "float32-le",
        "layout": "filter-major, row-major subsampled pixels",
        "ids": list(ids),
        **meta,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def read_feature_dump(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    flat = np.frombuffer(path.read_bytes(), dtype="<f4")
    if flat.size != meta["dim"] * meta["count"]:
        raise DimensionMismatch(
            f"{path}: {flat.size} floats on disk, sidecar declares {meta['count']}x{meta['dim']}"
        )
    return flat.reshape(meta["count"], meta["dim"]).astype(np.float64), meta
