"""Identity encoding and prompt conditioning.

Each reference face is encoded by two backbones (a CLIP-like image embedder
and a face recognizer), fused by a small trainable head into a prompt-space
vector. Per-reference vectors are stacked and spliced over the "face" token
of the fixed text prompt (combine-and-replace).
"""

import json
from dataclasses import dataclass

import cv2
import numpy as np
import torch
from torch import nn

from .errors import InvalidArgumentError, NoFaceError
from .imio import resize

FIXED_PROMPT = "a photo of face."
RECOGNIZER_DIM = 512
DEFAULT_EMBED_DIM = 64
DEFAULT_CROP_SIDE = 112


@dataclass(frozen=True)
class FaceCrop:
    """Aligned square face region plus where it came from."""
    image: np.ndarray
    box: tuple            # (x, y, w, h) in the source image
    fallback: bool = False


def detect_and_crop(image, detector, crop_side=DEFAULT_CROP_SIDE):
    """Crop the largest detected face, resized to crop_side.

    Ties break to the leftmost box. Raises NoFaceError when the detector
    returns nothing; callers may fall back to center_crop and record it.
    """
    boxes = detector(image)
    if not boxes:
        raise NoFaceError("detector found no face")
    boxes = sorted(boxes, key=lambda b: (-(b[2] * b[3]), b[0]))
    x, y, w, h = boxes[0]
    region = image[int(y):int(y + h), int(x):int(x + w)]
    if region.size == 0:
        raise InvalidArgumentError(f"degenerate face box: {(x, y, w, h)}")
    return FaceCrop(image=resize(region, crop_side, crop_side),
                    box=(int(x), int(y), int(w), int(h)))


def center_crop(image, crop_side=DEFAULT_CROP_SIDE):
    """Square center crop, the recorded fallback when detection fails."""
    h, w = image.shape[:2]
    side = min(h, w)
    y, x = (h - side) // 2, (w - side) // 2
    region = image[y:y + side, x:x + side]
    return FaceCrop(image=resize(region, crop_side, crop_side),
                    box=(x, y, side, side), fallback=True)


class FullImageDetector:
    """Trivial detector: the whole image is the face (procedural corpus)."""

    def __call__(self, image):
        h, w = image.shape[:2]
        return [(0, 0, w, h)]


class PixelImageEmbedder:
    """Stand-in CLIP-like embedder: downscaled grayscale pixels, length d."""

    def __init__(self, dim=DEFAULT_EMBED_DIM):
        side = int(round(dim ** 0.5))
        if side * side != dim:
            raise InvalidArgumentError(f"pixel embedder needs a square dim: {dim}")
        self.dim = dim
        self._side = side

    def __call__(self, crop):
        gray = crop.astype(np.float64) @ np.array([0.299, 0.587, 0.114])
        small = cv2.resize(gray, (self._side, self._side),
                           interpolation=cv2.INTER_AREA)
        return small.reshape(-1).astype(np.float32)


class PixelFaceRecognizer:
    """Stand-in recognizer: mean-centered downscaled pixels, length 512."""

    dim = RECOGNIZER_DIM

    def __call__(self, crop):
        gray = crop.astype(np.float64) @ np.array([0.299, 0.587, 0.114])
        small = cv2.resize(gray, (32, 16), interpolation=cv2.INTER_AREA)
        vec = small.reshape(-1)
        return (vec - vec.mean() + 1e-3).astype(np.float32)


EMBEDDER_REGISTRY = {"pixel": PixelImageEmbedder}
RECOGNIZER_REGISTRY = {"pixel": PixelFaceRecognizer}


class FusionHead(nn.Module):
    """Trainable mappings: align the recognizer feature, then fuse.

    align: 512 -> d -> d (GELU); fuse: concat(g_hat, f) -> d -> d (GELU).
    These are the "ID encoder" weights saved after stage-I training.
    """

    def __init__(self, dim=DEFAULT_EMBED_DIM, recognizer_dim=RECOGNIZER_DIM):
        super().__init__()
        self.dim = dim
        self.align = nn.Sequential(
            nn.Linear(recognizer_dim, dim), nn.GELU(), nn.Linear(dim, dim))
        self.fuse = nn.Sequential(
            nn.Linear(2 * dim, dim), nn.GELU(), nn.Linear(dim, dim))

    def forward(self, g, f):
        g_hat = self.align(g)
        return self.fuse(torch.cat([g_hat, f], dim=-1))


def encode_identity(crop, embedder, recognizer, fusion):
    """Fuse the two backbone features of one crop into s_i (length d)."""
    f = np.asarray(embedder(crop.image), dtype=np.float32)
    g = np.asarray(recognizer(crop.image), dtype=np.float32)
    fusion.eval()
    with torch.no_grad():
        s = fusion(torch.from_numpy(g), torch.from_numpy(f))
    return s.numpy()


def combine(embeddings):
    """Stack per-reference embeddings into an (N, d) matrix, input order."""
    if len(embeddings) == 0:
        raise InvalidArgumentError("need at least one identity embedding")
    lengths = {len(np.asarray(e).reshape(-1)) for e in embeddings}
    if len(lengths) != 1:
        raise InvalidArgumentError(f"inconsistent embedding lengths: {lengths}")
    return np.stack([np.asarray(e, dtype=np.float32).reshape(-1)
                     for e in embeddings])


@dataclass(frozen=True)
class PromptEmbedding:
    """Ordered token vectors plus the index of the replaceable token."""
    tokens: np.ndarray   # (L, d)
    token_index: int

    def validate(self):
        tokens = np.asarray(self.tokens)
        if tokens.ndim != 2:
            raise InvalidArgumentError("tokens must be a 2-D (L, d) array")
        if not 0 <= self.token_index < tokens.shape[0]:
            raise InvalidArgumentError(
                f"token_index {self.token_index} out of range for L={tokens.shape[0]}")


def toy_prompt_embedding(dim=DEFAULT_EMBED_DIM, prompt=FIXED_PROMPT):
    """Deterministic embedding of the fixed prompt.

    The toy tokenizer splits on whitespace with the trailing period as its
    own token, giving exactly 5 tokens; "face" sits at index 3 (0-based).
    """
    words = prompt.rstrip(".").split() + ["."]
    tokens = []
    for word in words:
        seed = int.from_bytes(word.encode(), "little") % (2 ** 32)
        rng = np.random.default_rng(seed)
        tokens.append(rng.standard_normal(dim).astype(np.float32))
    try:
        index = words.index("face")
    except ValueError:
        raise InvalidArgumentError(f"prompt has no replaceable token: {prompt!r}")
    return PromptEmbedding(tokens=np.stack(tokens), token_index=index)


def replace_token(c_text, s):
    """Splice the stacked identity matrix over the replaceable token.

    Output length is len(c_text) - 1 + N; flanking tokens are unchanged.
    """
    c_text.validate()
    s = np.asarray(s, dtype=np.float32)
    if s.ndim != 2 or s.shape[1] != c_text.tokens.shape[1]:
        raise InvalidArgumentError(
            f"stacked identity shape {s.shape} incompatible with d={c_text.tokens.shape[1]}")
    idx = c_text.token_index
    tokens = np.concatenate([c_text.tokens[:idx], s, c_text.tokens[idx + 1:]])
    return PromptEmbedding(tokens=tokens, token_index=idx)


def extract_identity_span(c_id, c_text, n):
    """Recover the spliced (N, d) block from a combined prompt embedding."""
    idx = c_text.token_index
    return c_id.tokens[idx:idx + n]


def export_embeddings(path, embeddings_by_id):
    """Write embeddings as an .npz archive with a JSON sidecar index."""
    ids = sorted(embeddings_by_id)
    matrix = np.stack([np.asarray(embeddings_by_id[i], dtype=np.float32)
                       for i in ids])
    np.savez(path, embeddings=matrix)
    sidecar = {
        "index": {image_id: row for row, image_id in enumerate(ids)},
        "d": int(matrix.shape[1]),
        "N": int(matrix.shape[0]),
    }
    with open(str(path) + ".json", "w") as f:
        json.dump(sidecar, f, indent=2)
