"""Reference-based image quality and identity metrics: PSNR, SSIM, LMD, IDS.

Learned metrics (LPIPS, MUSIQ, FID) are not computed here; the evaluate CLI
forwards them to external commands.
"""

import json
import subprocess

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InvalidArgumentError

PSNR_CAP_DB = 100.0

# SSIM stabilizers for the [0, 1] dynamic range
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2

_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def psnr(a, b):
    """Peak signal-to-noise ratio in dB; identical images return the cap."""
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def _to_luma(img):
    if img.ndim == 3:
        return img.astype(np.float64) @ _LUMA_WEIGHTS
    return img.astype(np.float64)


def ssim(a, b, window=11, sigma=1.5):
    """Mean structural similarity on luma, Gaussian-weighted local stats."""
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    x, y = _to_luma(a), _to_luma(b)
    if min(x.shape) < window:
        raise InvalidArgumentError(
            f"image side {min(x.shape)} smaller than window {window}")

    blur = lambda z: gaussian_filter(z, sigma, truncate=(window // 2) / sigma,
                                     mode="reflect")
    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x ** 2
    var_y = blur(y * y) - mu_y ** 2
    cov = blur(x * y) - mu_x * mu_y

    num = (2 * mu_x * mu_y + _SSIM_C1) * (2 * cov + _SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    return float(np.mean(num / den))


def lmd(la, lb):
    """Mean Euclidean distance between corresponding landmarks, in pixels."""
    la, lb = np.asarray(la, dtype=np.float64), np.asarray(lb, dtype=np.float64)
    if la.shape != lb.shape:
        raise InvalidArgumentError(f"landmark count mismatch: {la.shape} vs {lb.shape}")
    return float(np.mean(np.linalg.norm(la - lb, axis=-1)))


def ids(ea, eb):
    """Cosine similarity between two identity embeddings."""
    ea, eb = np.asarray(ea, dtype=np.float64), np.asarray(eb, dtype=np.float64)
    if ea.shape != eb.shape:
        raise InvalidArgumentError(f"embedding length mismatch: {ea.shape} vs {eb.shape}")
    na, nb = np.linalg.norm(ea), np.linalg.norm(eb)
    if na == 0.0 or nb == 0.0:
        raise InvalidArgumentError("zero-norm embedding")
    return float(np.dot(ea, eb) / (na * nb))


def run_external_metric(name, command, pairs_manifest_path):
    """Invoke an external metric command on a pairs manifest.

    The command receives the manifest path as its last argument and must
    print a JSON object to stdout, e.g. {"mean": 0.31, "per_pair": {...}}.
    """
    result = subprocess.run(
        list(command) + [str(pairs_manifest_path)],
        capture_output=True, text=True)
    if result.returncode != 0:
        raise RuntimeError(
            f"external metric {name!r} failed ({result.returncode}): {result.stderr}")
    return json.loads(result.stdout)
