"""Synthetic degradation chain for building (LQ, HQ) training pairs.

Pipeline order: Gaussian blur -> bicubic downsample by r -> additive
Gaussian noise -> JPEG compression -> bicubic upsample back to the
original size.
"""

import math
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import InvalidArgumentError
from .imio import jpeg_roundtrip, resize


@dataclass(frozen=True)
class DegradationParams:
    """One sampled realization of the degradation chain."""
    sigma: float   # blur kernel width, pixels
    r: int         # down/up-sampling scale, >= 1
    delta: float   # noise std in 8-bit intensity units
    q: int         # JPEG quality factor in [1, 100]

    def validate(self):
        if self.sigma <= 0:
            raise InvalidArgumentError(f"sigma must be positive: {self.sigma}")
        if int(self.r) != self.r or self.r < 1:
            raise InvalidArgumentError(f"r must be a positive integer: {self.r}")
        if self.delta < 0:
            raise InvalidArgumentError(f"delta must be >= 0: {self.delta}")
        if int(self.q) != self.q or not 1 <= self.q <= 100:
            raise InvalidArgumentError(f"q must be an integer in [1,100]: {self.q}")


@dataclass(frozen=True)
class DegradationRanges:
    """Closed sampling intervals for each degradation parameter."""
    sigma_range: tuple = (0.2, 10.0)
    r_range: tuple = (1, 16)
    delta_range: tuple = (0.0, 15.0)
    q_range: tuple = (30, 100)

    def validate(self):
        for name, (lo, hi) in [
            ("sigma_range", self.sigma_range),
            ("r_range", self.r_range),
            ("delta_range", self.delta_range),
            ("q_range", self.q_range),
        ]:
            if lo > hi:
                raise InvalidArgumentError(f"{name} is empty: [{lo}, {hi}]")
        if self.sigma_range[0] <= 0:
            raise InvalidArgumentError("sigma_range must be positive")
        if self.r_range[0] < 1:
            raise InvalidArgumentError("r_range lower bound must be >= 1")
        if self.delta_range[0] < 0:
            raise InvalidArgumentError("delta_range must be nonnegative")
        if not 1 <= self.q_range[0] <= self.q_range[1] <= 100:
            raise InvalidArgumentError("q_range must lie in [1, 100]")


def gaussian_kernel(sigma, size):
    """Normalized 2-D Gaussian kernel evaluated on a size x size grid."""
    if sigma <= 0:
        raise InvalidArgumentError(f"sigma must be positive: {sigma}")
    if size < 1 or size % 2 == 0:
        raise InvalidArgumentError(f"size must be odd and >= 1: {size}")
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(coords, coords)
    kernel = np.exp(-(xx ** 2 + yy ** 2) / (2.0 * sigma ** 2))
    return kernel / kernel.sum()


def kernel_size_for(sigma, side):
    """Default support: 2*ceil(3*sigma)+1, clamped to the image side (odd)."""
    size = 2 * int(math.ceil(3.0 * sigma)) + 1
    max_odd = side if side % 2 == 1 else side - 1
    return max(1, min(size, max_odd))


def sample_degradation_params(ranges, rng):
    """Draw (sigma, r, delta, q) uniformly; r and q are uniform integers."""
    ranges.validate()
    sigma = rng.uniform(ranges.sigma_range[0], ranges.sigma_range[1])
    r = int(rng.integers(int(ranges.r_range[0]), int(ranges.r_range[1]) + 1))
    delta = rng.uniform(ranges.delta_range[0], ranges.delta_range[1])
    q = int(rng.integers(int(ranges.q_range[0]), int(ranges.q_range[1]) + 1))
    params = DegradationParams(sigma=sigma, r=r, delta=delta, q=q)
    params.validate()
    return params


def apply_degradation(hq, params, rng=None):
    """Run the blur -> down -> noise -> JPEG -> up chain on one HQ image."""
    params.validate()
    h, w = hq.shape[:2]
    if params.r > min(h, w):
        raise InvalidArgumentError(
            f"scale r={params.r} exceeds image side {min(h, w)}")
    rng = rng if rng is not None else np.random.default_rng(0)

    kernel = gaussian_kernel(params.sigma, kernel_size_for(params.sigma, min(h, w)))
    out = cv2.filter2D(hq, -1, kernel, borderType=cv2.BORDER_REFLECT)

    low_h, low_w = h // params.r, w // params.r
    if params.r > 1:
        out = resize(out, low_w, low_h)

    if params.delta > 0:
        out = out + (params.delta / 255.0) * rng.standard_normal(out.shape)
    out = np.clip(out, 0.0, 1.0)

    out = jpeg_roundtrip(out, params.q)

    if params.r > 1:
        out = resize(out, w, h)
    return np.clip(out, 0.0, 1.0)


def make_training_pair(hq, ranges, rng):
    """Sample parameters and degrade; returns (lq, hq) with hq untouched."""
    params = sample_degradation_params(ranges, rng)
    lq = apply_degradation(hq, params, rng)
    return lq, hq
