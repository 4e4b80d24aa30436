"""Image I/O and conversion helpers.

Images are float arrays in [0, 1], shape (H, W, 3), RGB channel order.
Files are 8-bit; PNG is the lossless interchange format, JPEG the lossy one.
"""

import os

import cv2
import numpy as np

from .errors import InvalidArgumentError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


def to_float(img_u8):
    return img_u8.astype(np.float64) / 255.0


def to_uint8(img):
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def read_image(path):
    data = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if data is None:
        raise InvalidArgumentError(f"cannot read image: {path}")
    return to_float(cv2.cvtColor(data, cv2.COLOR_BGR2RGB))


def write_image(path, img, quality=100):
    path = str(path)
    bgr = cv2.cvtColor(to_uint8(img), cv2.COLOR_RGB2BGR)
    if path.lower().endswith((".jpg", ".jpeg")):
        ok = cv2.imwrite(path, bgr, [cv2.IMWRITE_JPEG_QUALITY, int(quality)])
    else:
        ok = cv2.imwrite(path, bgr)
    if not ok:
        raise IOError(f"failed to write image: {path}")


def list_images(directory):
    if not os.path.isdir(directory):
        raise InvalidArgumentError(f"not a directory: {directory}")
    names = sorted(
        n for n in os.listdir(directory)
        if n.lower().endswith(IMAGE_EXTENSIONS)
    )
    return [os.path.join(directory, n) for n in names]


def jpeg_roundtrip(img, quality):
    """Encode/decode through baseline JPEG at the given quality factor.

    Uses 4:4:4 chroma sampling so q=100 stays near-lossless.
    """
    if not 1 <= quality <= 100:
        raise InvalidArgumentError(f"JPEG quality out of [1,100]: {quality}")
    params = [
        cv2.IMWRITE_JPEG_QUALITY, int(quality),
        cv2.IMWRITE_JPEG_SAMPLING_FACTOR, cv2.IMWRITE_JPEG_SAMPLING_FACTOR_444,
    ]
    bgr = cv2.cvtColor(to_uint8(img), cv2.COLOR_RGB2BGR)
    ok, encoded = cv2.imencode(".jpg", bgr, params)
    if not ok:
        raise IOError("JPEG encode failed")
    decoded = cv2.imdecode(encoded, cv2.IMREAD_COLOR)
    return to_float(cv2.cvtColor(decoded, cv2.COLOR_BGR2RGB))


def resize(img, width, height, interpolation=cv2.INTER_CUBIC):
    out = cv2.resize(img, (int(width), int(height)), interpolation=interpolation)
    return np.clip(out, 0.0, 1.0)
