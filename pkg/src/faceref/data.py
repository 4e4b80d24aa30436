"""Dataset manifests and the procedural desk-scale face corpus.

A manifest binds each ground-truth image to its same-identity reference
images. The procedural generator draws "face-like" ellipse composites with
controllable pose/expression so clustering, encoding, and training can be
exercised without real faces or pretrained models.
"""

import json
import os
import subprocess
from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import InvalidArgumentError, ManifestError
from .imio import read_image, to_float, to_uint8, list_images
from .refpool import (EXPRESSION_DIM, AttributeVector,
                      synthesize_reference_set)

SCHEMA_VERSION = 1


@dataclass
class ManifestEntry:
    image_id: str
    path: str
    identity_id: str
    references: list = field(default_factory=list)


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def to_json(self):
        return {
            "schema_version": self.schema_version,
            "entries": [{
                "image_id": e.image_id,
                "path": e.path,
                "identity_id": e.identity_id,
                "references": e.references,
            } for e in self.entries],
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)


def _parse_reference(ref, entry_identity, entry_id, problems):
    if isinstance(ref, str):
        return ref
    if isinstance(ref, dict) and "path" in ref:
        ref_identity = ref.get("identity_id", entry_identity)
        if ref_identity != entry_identity:
            problems.append(
                f"entry {entry_id!r}: reference {ref['path']!r} has "
                f"identity {ref_identity!r}, expected {entry_identity!r}")
        return ref["path"]
    problems.append(f"entry {entry_id!r}: malformed reference {ref!r}")
    return None


def load_manifest(path, check_paths=True):
    """Load and validate a dataset manifest JSON file."""
    try:
        with open(path) as f:
            obj = json.load(f)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON at line {exc.lineno}: "
                            f"{exc.msg}") from exc
    if not isinstance(obj, dict) or "entries" not in obj:
        raise ManifestError(f"{path}: missing top-level 'entries'")
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise ManifestError(
            f"{path}: unsupported schema_version {obj.get('schema_version')!r}")

    base = os.path.dirname(os.path.abspath(path))
    resolve = lambda p: p if os.path.isabs(p) else os.path.join(base, p)
    problems, entries = [], []
    for i, raw in enumerate(obj["entries"]):
        missing = [k for k in ("image_id", "path", "identity_id") if k not in raw]
        if missing:
            problems.append(f"entry #{i}: missing fields {missing}")
            continue
        refs = []
        for ref in raw.get("references", []):
            parsed = _parse_reference(ref, raw["identity_id"],
                                      raw["image_id"], problems)
            if parsed is not None:
                refs.append(resolve(parsed))
        entry = ManifestEntry(image_id=raw["image_id"],
                              path=resolve(raw["path"]),
                              identity_id=raw["identity_id"],
                              references=refs)
        if check_paths:
            for p in [entry.path] + entry.references:
                if not os.path.exists(p):
                    problems.append(
                        f"entry {entry.image_id!r}: missing file {p}")
        entries.append(entry)
    if problems:
        raise ManifestError(f"{path}: " + "; ".join(problems))
    return DatasetManifest(entries=entries,
                           schema_version=obj["schema_version"])


def sample_references(entry, n, rng):
    """Uniform sample of n reference paths without replacement."""
    refs = entry.references
    if not 1 <= n <= len(refs):
        raise InvalidArgumentError(
            f"n={n} outside [1, {len(refs)}] for entry {entry.image_id!r}")
    picked = rng.choice(len(refs), size=n, replace=False)
    return [refs[i] for i in picked]


def load_training_items(manifest):
    """Materialize manifest entries into in-memory training items."""
    items = []
    for entry in manifest.entries:
        items.append({
            "hq": read_image(entry.path),
            "refs": [read_image(p) for p in entry.references],
            "image_id": entry.image_id,
        })
    return items


# ---------------------------------------------------------------------------
# Procedural face-like corpus


def identity_spec(identity_seed):
    """Identity-determining appearance parameters for the toy renderer."""
    rng = np.random.default_rng(identity_seed)
    return {
        "skin": rng.uniform(0.35, 0.95, size=3),
        "hair": rng.uniform(0.05, 0.6, size=3),
        "eye": rng.uniform(0.0, 0.4, size=3),
        "face_w": rng.uniform(0.28, 0.40),
        "face_h": rng.uniform(0.36, 0.48),
        "eye_gap": rng.uniform(0.10, 0.16),
        "eye_r": rng.uniform(0.035, 0.06),
        "background": rng.uniform(0.6, 1.0, size=3),
    }


def render_face(spec, pose=(0.0, 0.0, 0.0), expression=0.0, size=64):
    """Render one face-like composite.

    pose = (dx, dy, tilt_degrees) moves/rotates the head; expression in
    [-1, 1] bends the mouth and scales eye openness.
    """
    canvas = np.ones((size, size, 3), dtype=np.float64) * spec["background"]
    img = to_uint8(canvas)
    dx, dy, tilt = pose
    cx = int(size * (0.5 + dx))
    cy = int(size * (0.5 + dy))
    axes = (int(size * spec["face_w"]), int(size * spec["face_h"]))

    def color(c):
        return tuple(int(round(v * 255)) for v in c)

    # hair: larger ellipse behind the face
    cv2.ellipse(img, (cx, cy - size // 20),
                (axes[0] + size // 12, axes[1] + size // 10),
                tilt, 0, 360, color(spec["hair"]), -1)
    # face
    cv2.ellipse(img, (cx, cy), axes, tilt, 0, 360, color(spec["skin"]), -1)

    rad = np.deg2rad(tilt)
    rot = np.array([[np.cos(rad), -np.sin(rad)], [np.sin(rad), np.cos(rad)]])

    def place(offset):
        p = rot @ (np.asarray(offset) * size)
        return int(cx + p[0]), int(cy + p[1])

    eye_h = max(1, int(size * spec["eye_r"] * (1.0 + 0.5 * expression)))
    eye_w = max(1, int(size * spec["eye_r"]))
    for side in (-1, 1):
        ex, ey = place((side * spec["eye_gap"], -0.08))
        cv2.ellipse(img, (ex, ey), (eye_w, eye_h), tilt, 0, 360,
                    color(spec["eye"]), -1)
    # mouth: arc bending with expression
    mx, my = place((0.0, 0.18))
    mouth_w = max(2, int(size * 0.10))
    mouth_h = max(1, int(size * 0.04 * (1.0 + abs(expression))))
    start, end = (0, 180) if expression >= 0 else (180, 360)
    cv2.ellipse(img, (mx, my), (mouth_w, mouth_h), tilt, start, end,
                color(spec["eye"]), max(1, size // 48))
    return to_float(img)


class ImageStatisticsExtractor:
    """Deterministic attribute extractor from image statistics.

    Pose (6-d): grayscale centroid, normalized second moments, and mean
    intensity. Expression (50-d): grayscale histogram.
    """

    def __call__(self, image):
        gray = image.astype(np.float64) @ np.array([0.299, 0.587, 0.114])
        h, w = gray.shape
        ys, xs = np.mgrid[0:h, 0:w]
        total = gray.sum() + 1e-12
        cx = float((xs * gray).sum() / total) / w
        cy = float((ys * gray).sum() / total) / h
        mxx = float(((xs / w - cx) ** 2 * gray).sum() / total)
        myy = float(((ys / h - cy) ** 2 * gray).sum() / total)
        mxy = float(((xs / w - cx) * (ys / h - cy) * gray).sum() / total)
        theta = np.array([cx, cy, mxx, myy, mxy, float(gray.mean())])
        psi, _ = np.histogram(gray, bins=EXPRESSION_DIM, range=(0.0, 1.0))
        psi = psi.astype(np.float64) / gray.size
        return AttributeVector(theta=theta, psi=psi)


def make_corpus(n_identities, per_identity, size=64, seed=0, out_dir=None):
    """Generate the procedural corpus; optionally write images + manifest.

    Returns (records, manifest) where records are
    {image_id, identity_id, image, pose, expression}.
    """
    rng = np.random.default_rng(seed)
    records = []
    for ident in range(n_identities):
        spec = identity_spec(seed * 100003 + ident)
        for k in range(per_identity):
            pose = (rng.uniform(-0.12, 0.12), rng.uniform(-0.12, 0.12),
                    rng.uniform(-25, 25))
            expression = float(rng.uniform(-1, 1))
            image = render_face(spec, pose=pose, expression=expression,
                                size=size)
            records.append({
                "image_id": f"id{ident:03d}_img{k:03d}",
                "identity_id": f"id{ident:03d}",
                "image": image,
                "pose": pose,
                "expression": expression,
            })

    manifest = None
    if out_dir is not None:
        from .imio import write_image
        os.makedirs(out_dir, exist_ok=True)
        by_identity = {}
        for rec in records:
            rec["path"] = os.path.join(out_dir, rec["image_id"] + ".png")
            write_image(rec["path"], rec["image"])
            by_identity.setdefault(rec["identity_id"], []).append(rec)
        entries = []
        for identity, recs in by_identity.items():
            for rec in recs:
                refs = [r["path"] for r in recs if r is not rec]
                entries.append(ManifestEntry(
                    image_id=rec["image_id"], path=rec["path"],
                    identity_id=identity, references=refs))
        manifest = DatasetManifest(entries=entries)
        manifest.save(os.path.join(out_dir, "manifest.json"))
    return records, manifest


def toy_identity_generator(identity_image, pose_image, seed):
    """Geometric stand-in for an identity-conditioned generator.

    Blends the identity image's appearance onto the pose image's layout;
    deterministic given (inputs, seed).
    """
    h, w = pose_image.shape[:2]
    from .imio import resize
    ident = resize(identity_image, w, h)
    rng = np.random.default_rng(seed)
    noise = 0.01 * rng.standard_normal(pose_image.shape)
    return np.clip(0.6 * ident + 0.4 * pose_image + noise, 0.0, 1.0)


def pixel_similarity(a, b):
    """Cosine similarity of the stub recognizer's embeddings."""
    from .identity import PixelFaceRecognizer
    from .metrics import ids
    rec = PixelFaceRecognizer()
    return ids(rec(a), rec(b))


# ---------------------------------------------------------------------------
# Real-world ingestion (external restorer + reference synthesis)


def _run_restorer(command, in_path, out_path):
    cmd = [arg.format(**{"in": in_path, "out": out_path}) for arg in command]
    result = subprocess.run(cmd, capture_output=True, text=True)
    if result.returncode != 0:
        raise RuntimeError(
            f"restorer failed ({result.returncode}): {result.stderr}")


def build_real_world_ref_manifest(lq_dir, restorer_cmd, generator, pool,
                                  gate, similarity, rng, out_dir,
                                  n_refs=4, pose_images=None):
    """Build references for real LQ images lacking same-identity data.

    Each LQ image is first restored by an external command (None means
    pass-through), then fed to the reference synthesis pipeline. Failed
    items are skipped and logged in the returned report.
    """
    from .imio import write_image
    os.makedirs(out_dir, exist_ok=True)
    refs_dir = os.path.join(out_dir, "refs")
    os.makedirs(refs_dir, exist_ok=True)

    entries, log = [], []
    for lq_path in list_images(lq_dir):
        stem = os.path.splitext(os.path.basename(lq_path))[0]
        try:
            if restorer_cmd is None:
                restored = read_image(lq_path)
            else:
                restored_path = os.path.join(out_dir, stem + "_restored.png")
                _run_restorer(restorer_cmd, lq_path, restored_path)
                restored = read_image(restored_path)
            refs, report = synthesize_reference_set(
                restored, pool, generator, similarity, gate, n_refs, rng,
                pose_images=pose_images)
        except Exception as exc:  # noqa: BLE001 - external command boundary
            log.append({"image": lq_path, "error": str(exc)})
            continue
        ref_paths = []
        for k, ref in enumerate(refs):
            ref_path = os.path.join(refs_dir, f"{stem}_ref{k}.png")
            write_image(ref_path, ref)
            ref_paths.append(ref_path)
        entries.append(ManifestEntry(image_id=stem, path=lq_path,
                                     identity_id=stem, references=ref_paths))
        log.append({"image": lq_path, "n_refs": len(ref_paths),
                    "abandoned": len(report.abandoned_slots())})
    manifest = DatasetManifest(entries=entries)
    return manifest, log
