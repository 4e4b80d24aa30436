"""Pose-reference pool construction and same-identity reference synthesis.

A two-level K-Means (pose attributes, then expression attributes within
each pose cluster) partitions an image set into disjoint pose/expression
subsets. Reference images are synthesized against poses drawn from those
subsets and kept only if an identity-similarity gate accepts them.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySubsetError, InvalidArgumentError

POSE_DIM = 6
EXPRESSION_DIM = 50


@dataclass(frozen=True)
class AttributeVector:
    """Pose (6-d) and expression (50-d) attributes of one face image."""
    theta: np.ndarray
    psi: np.ndarray

    def validate(self):
        theta, psi = np.asarray(self.theta), np.asarray(self.psi)
        if theta.shape != (POSE_DIM,):
            raise InvalidArgumentError(f"theta must have length {POSE_DIM}")
        if psi.shape != (EXPRESSION_DIM,):
            raise InvalidArgumentError(f"psi must have length {EXPRESSION_DIM}")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(psi))):
            raise InvalidArgumentError("attributes must be finite")


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    wcss_history: list


def _wcss(vectors, assignments, centroids):
    return float(np.sum((vectors - centroids[assignments]) ** 2))


def _kmeans_pp_init(vectors, k, rng):
    n = vectors.shape[0]
    centroids = np.empty((k, vectors.shape[1]))
    centroids[0] = vectors[rng.integers(n)]
    dist2 = np.sum((vectors - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = dist2.sum()
        if total <= 0:
            centroids[i] = vectors[rng.integers(n)]
            continue
        centroids[i] = vectors[rng.choice(n, p=dist2 / total)]
        dist2 = np.minimum(dist2, np.sum((vectors - centroids[i]) ** 2, axis=1))
    return centroids


def kmeans(vectors, k, rng, max_iters=100):
    """Lloyd's algorithm with k-means++ seeding.

    Returns assignments, centroids, and the per-iteration WCSS history
    (non-increasing by construction; asserted with 1e-9 slack).
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise InvalidArgumentError("vectors must be a 2-D array")
    n = vectors.shape[0]
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1: {k}")
    if k > n:
        raise InvalidArgumentError(f"k={k} exceeds number of vectors n={n}")

    centroids = _kmeans_pp_init(vectors, k, rng)
    history = []
    assignments = None
    for _ in range(max_iters):
        dists = np.sum((vectors[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(dists, axis=1)
        for c in range(k):
            members = vectors[new_assign == c]
            if len(members) > 0:
                centroids[c] = members.mean(axis=0)
            else:
                # re-seed an empty cluster from the farthest point
                far = np.argmax(np.min(dists, axis=1))
                centroids[c] = vectors[far]
                new_assign[far] = c
        wcss = _wcss(vectors, new_assign, centroids)
        if history and wcss > history[-1] + 1e-9:
            raise AssertionError("k-means objective increased")
        converged = assignments is not None and np.array_equal(new_assign, assignments)
        assignments = new_assign
        history.append(wcss)
        if converged:
            break
    return KMeansResult(assignments=assignments, centroids=centroids,
                        wcss_history=history)


@dataclass
class PosePool:
    """Disjoint pose/expression subsets covering the processed image set."""
    c1: int
    c2: int
    subsets: list                  # list of lists of image ids
    level1_centroids: np.ndarray   # (c1, 6)
    level2_centroids: list         # per level-1 part, (<=c2, 50) arrays
    skipped: list = field(default_factory=list)

    def nonempty_indices(self):
        return [j for j, s in enumerate(self.subsets) if s]

    def to_json(self):
        return {
            "c1": self.c1,
            "c2": self.c2,
            "subsets": self.subsets,
            "centroids": {
                "level1": np.asarray(self.level1_centroids).tolist(),
                "level2": [np.asarray(c).tolist() for c in self.level2_centroids],
            },
            "skipped": self.skipped,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            c1=obj["c1"], c2=obj["c2"], subsets=obj["subsets"],
            level1_centroids=np.asarray(obj["centroids"]["level1"]),
            level2_centroids=[np.asarray(c) for c in obj["centroids"]["level2"]],
            skipped=obj.get("skipped", []),
        )

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(json.load(f))


def build_pose_pool(images, extractor, c1, c2, rng):
    """Cluster on pose into c1 parts, then on expression into c2 parts each.

    `images` is a sequence of (image_id, image). Extractor failures skip the
    image and are recorded in pool.skipped.
    """
    ids, thetas, psis, skipped = [], [], [], []
    for image_id, image in images:
        try:
            attrs = extractor(image)
            attrs.validate()
        except Exception as exc:  # noqa: BLE001 - extractor is third-party
            skipped.append({"image_id": image_id, "error": str(exc)})
            continue
        ids.append(image_id)
        thetas.append(np.asarray(attrs.theta, dtype=np.float64))
        psis.append(np.asarray(attrs.psi, dtype=np.float64))

    n = len(ids)
    if c1 * c2 > n:
        raise InvalidArgumentError(
            f"c1*c2={c1 * c2} exceeds number of usable images {n}")

    thetas, psis = np.array(thetas), np.array(psis)
    level1 = kmeans(thetas, c1, rng)

    subsets = [[] for _ in range(c1 * c2)]
    level2_centroids = []
    for part in range(c1):
        member_idx = np.where(level1.assignments == part)[0]
        if len(member_idx) == 0:
            level2_centroids.append(np.zeros((0, EXPRESSION_DIM)))
            continue
        k2 = min(c2, len(member_idx))
        level2 = kmeans(psis[member_idx], k2, rng)
        level2_centroids.append(level2.centroids)
        for local, global_idx in enumerate(member_idx):
            j = part * c2 + int(level2.assignments[local])
            subsets[j].append(ids[global_idx])

    return PosePool(c1=c1, c2=c2, subsets=subsets,
                    level1_centroids=level1.centroids,
                    level2_centroids=level2_centroids,
                    skipped=skipped)


def sample_pose_reference(pool, j, rng):
    """Uniformly draw one image id from subset j."""
    if not 0 <= j < len(pool.subsets):
        raise InvalidArgumentError(f"subset index out of range: {j}")
    subset = pool.subsets[j]
    if not subset:
        raise EmptySubsetError(f"pose subset {j} is empty")
    return subset[int(rng.integers(len(subset)))]


def nearest_nonempty_subset(pool, j):
    """Fallback for an empty subset: nearest nonempty by level-1 centroid."""
    nonempty = pool.nonempty_indices()
    if not nonempty:
        raise EmptySubsetError("pose pool has no nonempty subsets")
    if j in nonempty:
        return j
    own = np.asarray(pool.level1_centroids)[j // pool.c2]
    dists = [np.sum((np.asarray(pool.level1_centroids)[m // pool.c2] - own) ** 2)
             for m in nonempty]
    return nonempty[int(np.argmin(dists))]


@dataclass(frozen=True)
class IdentityGateConfig:
    """Accept/retry gate for synthesized references."""
    delta: float = 0.5
    max_attempts: int = 3

    def validate(self):
        if not -1.0 <= self.delta <= 1.0:
            raise InvalidArgumentError(f"delta must be in [-1,1]: {self.delta}")
        if self.max_attempts < 1:
            raise InvalidArgumentError("max_attempts must be >= 1")


@dataclass
class SynthesisReport:
    slots: list = field(default_factory=list)

    def abandoned_slots(self):
        return [s for s in self.slots if not s["accepted"]]

    def to_json(self):
        return {"slots": self.slots}


def synthesize_reference_set(identity_image, pool, generator, similarity,
                             gate, n_refs, rng, pose_images=None):
    """Synthesize up to n_refs same-identity references through the gate.

    Each slot draws a pose subset uniformly over nonempty subsets, then makes
    up to gate.max_attempts (re-sample pose, generate, score) rounds; the
    slot is abandoned after max_attempts failures. `pose_images` maps image
    id -> image; when omitted, generators receive the pose image id.
    """
    gate.validate()
    if n_refs < 1:
        raise InvalidArgumentError("n_refs must be >= 1")
    nonempty = pool.nonempty_indices()
    if not nonempty:
        raise EmptySubsetError("pose pool has no nonempty subsets")

    references = []
    report = SynthesisReport()
    for slot in range(n_refs):
        j = nonempty[int(rng.integers(len(nonempty)))]
        attempts = []
        accepted = None
        for attempt in range(gate.max_attempts):
            pose_id = sample_pose_reference(pool, j, rng)
            pose = pose_images[pose_id] if pose_images is not None else pose_id
            seed = int(rng.integers(2 ** 31))
            record = {"attempt": attempt + 1, "subset": j, "pose_id": pose_id}
            try:
                candidate = generator(identity_image, pose, seed)
                score = float(similarity(identity_image, candidate))
            except Exception as exc:  # noqa: BLE001 - generator is third-party
                record["error"] = str(exc)
                attempts.append(record)
                continue
            record["similarity"] = score
            attempts.append(record)
            if score >= gate.delta:
                accepted = candidate
                break
        report.slots.append({
            "slot": slot,
            "subset": j,
            "attempts": attempts,
            "accepted": accepted is not None,
        })
        if accepted is not None:
            references.append(accepted)
    return references, report
