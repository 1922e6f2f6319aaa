"""K-means unit inventories: codebook training, assignment, quantization.

Training is k-means++ init followed by full-batch Lloyd's or minibatch
updates. All reductions run over fixed-size frame shards accumulated in
shard order, so results are bit-identical regardless of worker count.
Distances are squared Euclidean with no feature normalization.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import BadMagicError, FormatError, TruncatedFileError, ValidationError
from .featio import FeatureMatrix, _read_exact
from .unitops import UnitSequence

CODEBOOK_MAGIC = b"FUC1"
SHARD_FRAMES = 8192


@dataclass
class KMeansConfig:
    k: int
    seed: int = 0
    max_iters: int = 100
    batch_size: int = 0  # 0 = full-batch Lloyd's; >0 = minibatch (max_iters = epochs)
    tol: float = 1e-4

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("K must be >= 1")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if self.tol < 0:
            raise ValidationError("tol must be >= 0")
        if self.batch_size < 0:
            raise ValidationError("batch_size must be >= 0")


@dataclass(eq=False)
class Codebook:
    """K centroids plus training provenance (seed, iterations, inertia, ...)."""

    centroids: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.centroids, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError("centroids must be a K x dims matrix with K, dims >= 1")
        if not np.isfinite(arr).all():
            raise ValidationError("non-finite centroid values")
        self.centroids = arr

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    @property
    def dims(self) -> int:
        return self.centroids.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return (
            self.meta == other.meta
            and self.centroids.shape == other.centroids.shape
            and self.centroids.tobytes() == other.centroids.tobytes()
        )


def stack_frames(features) -> np.ndarray:
    """Concatenate the frames of a FeatureMatrix stream into one array."""
    mats = []
    dims = None
    for m in features:
        arr = m.data if isinstance(m, FeatureMatrix) else np.asarray(m, dtype=np.float32)
        if arr.ndim != 2:
            raise ValidationError("feature input must be 2-D")
        if not np.isfinite(arr).all():
            raise ValidationError("non-finite feature values")
        if dims is None:
            dims = arr.shape[1]
        elif arr.shape[1] != dims:
            raise ValidationError(f"feature dims mismatch: {arr.shape[1]} != {dims}")
        if arr.shape[0]:
            mats.append(arr.astype(np.float32, copy=False))
    if not mats:
        if dims is None:
            raise ValidationError("empty feature stream")
        return np.zeros((0, dims), dtype=np.float32)
    return np.concatenate(mats, axis=0)


def _shards(n: int):
    return [(lo, min(lo + SHARD_FRAMES, n)) for lo in range(0, n, SHARD_FRAMES)]


def _map_shards(fn, spans, workers: int | None):
    if workers and workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, spans))
    return [fn(sp) for sp in spans]


def _assign_block(x: np.ndarray, centroids: np.ndarray):
    """Labels and squared distance to nearest centroid for a frame block."""
    x64 = x.astype(np.float64)
    c64 = centroids.astype(np.float64)
    d2 = (
        np.sum(x64 * x64, axis=1, keepdims=True)
        - 2.0 * (x64 @ c64.T)
        + np.sum(c64 * c64, axis=1)
    )
    np.maximum(d2, 0.0, out=d2)
    labels = np.argmin(d2, axis=1)  # argmin ties break to the lowest index
    return labels, d2[np.arange(x.shape[0]), labels]


def _assign_all(frames: np.ndarray, centroids: np.ndarray, workers=None):
    n = frames.shape[0]
    labels = np.empty(n, dtype=np.int64)
    d2 = np.empty(n, dtype=np.float64)

    def run(span):
        lo, hi = span
        return span, _assign_block(frames[lo:hi], centroids)

    for (lo, hi), (lab, dd) in _map_shards(run, _shards(n), workers):
        labels[lo:hi] = lab
        d2[lo:hi] = dd
    return labels, d2


def kmeans_pp_init(frames: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++ initialization (D^2 sampling)."""
    n = frames.shape[0]
    x64 = frames.astype(np.float64)
    centroids = np.empty((k, frames.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = x64[first]
    d2 = np.sum((x64 - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[i] = x64[idx]
        d2 = np.minimum(d2, np.sum((x64 - centroids[i]) ** 2, axis=1))
    return centroids


def _reduce_stats(frames, labels, k: int, workers=None):
    """Per-cluster frame sums and counts, reduced in fixed shard order."""

    def run(span):
        lo, hi = span
        sums = np.zeros((k, frames.shape[1]), dtype=np.float64)
        np.add.at(sums, labels[lo:hi], frames[lo:hi].astype(np.float64))
        counts = np.bincount(labels[lo:hi], minlength=k).astype(np.int64)
        return sums, counts

    sums = np.zeros((k, frames.shape[1]), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    for s, c in _map_shards(run, _shards(frames.shape[0]), workers):
        sums += s
        counts += c
    return sums, counts


def _repair_empty(centroids, counts, frames, labels, d2):
    """Reseed empty clusters to the frames farthest from their centroids."""
    d2 = d2.copy()
    for c in np.flatnonzero(counts == 0):
        far = int(np.argmax(d2))
        centroids[c] = frames[far].astype(np.float64)
        counts[c] = 1
        d2[far] = -1.0
    return centroids


def _lloyd(frames, centroids, cfg: KMeansConfig, workers=None):
    labels, d2 = _assign_all(frames, centroids, workers)
    inertia = float(d2.mean())
    iters = 0
    while iters < cfg.max_iters:
        sums, counts = _reduce_stats(frames, labels, cfg.k, workers)
        nonzero = counts > 0
        new_centroids = centroids.copy()
        new_centroids[nonzero] = sums[nonzero] / counts[nonzero, None]
        new_centroids = _repair_empty(new_centroids, counts.copy(), frames, labels, d2)
        new_labels, new_d2 = _assign_all(frames, new_centroids, workers)
        new_inertia = float(new_d2.mean())
        iters += 1
        # Lloyd's is monotone; repair only adds a zero-distance option.
        assert new_inertia <= inertia + 1e-9 * max(1.0, inertia), (
            f"inertia increased: {inertia} -> {new_inertia}"
        )
        converged = inertia == 0.0 or (inertia - new_inertia) <= cfg.tol * inertia
        centroids, labels, d2, inertia = new_centroids, new_labels, new_d2, new_inertia
        if converged:
            break
    return centroids, inertia, iters


def _minibatch(frames, centroids, cfg: KMeansConfig, rng, workers=None):
    n = frames.shape[0]
    batch = min(cfg.batch_size, n)
    steps_per_epoch = max(1, -(-n // batch))
    counts = np.zeros(cfg.k, dtype=np.int64)
    labels, d2 = _assign_all(frames, centroids, workers)
    inertia = float(d2.mean())
    epochs = 0
    while epochs < cfg.max_iters:
        for _ in range(steps_per_epoch):
            idx = rng.choice(n, size=batch, replace=False)
            x = frames[idx]
            blabels, _ = _assign_block(x, centroids.astype(np.float32))
            bsums = np.zeros((cfg.k, frames.shape[1]), dtype=np.float64)
            np.add.at(bsums, blabels, x.astype(np.float64))
            bcounts = np.bincount(blabels, minlength=cfg.k)
            hit = bcounts > 0
            counts[hit] += bcounts[hit]
            # online per-cluster mean update with aggregated batch counts
            centroids[hit] += (bsums[hit] - bcounts[hit, None] * centroids[hit]) / counts[
                hit, None
            ]
        epochs += 1
        labels, d2 = _assign_all(frames, centroids, workers)
        gcounts = np.bincount(labels, minlength=cfg.k)
        if (gcounts == 0).any():
            centroids = _repair_empty(centroids, gcounts.astype(np.int64), frames, labels, d2)
            labels, d2 = _assign_all(frames, centroids, workers)
        new_inertia = float(d2.mean())
        improved = inertia > 0.0 and (inertia - new_inertia) > cfg.tol * inertia
        inertia = new_inertia
        if not improved:
            break
    return centroids, inertia, epochs


def train_codebook(features, cfg: KMeansConfig, language: str = "", workers=None) -> Codebook:
    """Learn a K-unit codebook from a stream of feature matrices.

    Deterministic given the inputs and cfg.seed, for any worker count.
    """
    frames = stack_frames(features)
    n = frames.shape[0]
    if n < cfg.k:
        raise ValidationError(f"{n} training frames for K={cfg.k}; need at least K")
    rng = np.random.default_rng(cfg.seed)
    centroids = kmeans_pp_init(frames, cfg.k, rng)
    if cfg.batch_size > 0:
        centroids, inertia, iters = _minibatch(frames, centroids, cfg, rng, workers)
    else:
        centroids, inertia, iters = _lloyd(frames, centroids, cfg, workers)
    centroids32 = centroids.astype(np.float32)
    if len(np.unique(centroids32, axis=0)) != cfg.k:
        raise ValidationError("training produced duplicate centroids (degenerate data)")
    meta = {
        "seed": cfg.seed,
        "iterations_run": iters,
        "final_inertia": inertia,
        "training_frame_count": n,
        "language": language,
    }
    return Codebook(centroids32, meta)


def assign(frame, cb: Codebook) -> int:
    """Index of the nearest centroid (squared Euclidean, ties to lowest index)."""
    arr = np.asarray(frame, dtype=np.float64).reshape(-1)
    if arr.shape[0] != cb.dims:
        raise ValidationError(f"frame has {arr.shape[0]} dims, codebook has {cb.dims}")
    if not np.isfinite(arr).all():
        raise ValidationError("non-finite frame")
    labels, _ = _assign_block(arr[None, :].astype(np.float32), cb.centroids)
    return int(labels[0])


def quantize(m: FeatureMatrix, cb: Codebook, workers=None) -> UnitSequence:
    if m.dims != cb.dims:
        raise ValidationError(f"feature dims {m.dims} != codebook dims {cb.dims}")
    labels, _ = _assign_all(m.data, cb.centroids, workers)
    return UnitSequence(m.utt_id, tuple(int(u) for u in labels), cb.K)


def inertia(features, cb: Codebook, workers=None) -> float:
    """Mean squared distance of all frames to their nearest centroid."""
    frames = stack_frames(features)
    if frames.shape[0] == 0:
        raise ValidationError("cannot compute inertia of an empty feature stream")
    if frames.shape[1] != cb.dims:
        raise ValidationError(f"feature dims {frames.shape[1]} != codebook dims {cb.dims}")
    _, d2 = _assign_all(frames, cb.centroids, workers)
    return float(d2.mean())


# ---------------------------------------------------------------------------
# FUC1 persistence

def write_codebook(cb: Codebook, path) -> None:
    payload = np.ascontiguousarray(cb.centroids, dtype="<f4")
    blob = json.dumps(cb.meta, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CODEBOOK_MAGIC)
        f.write(struct.pack("<II", cb.K, cb.dims))
        f.write(payload.tobytes())
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)


def read_codebook(path) -> Codebook:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CODEBOOK_MAGIC:
            raise BadMagicError(f"{path}: bad magic {magic!r}")
        k, dims = struct.unpack("<II", _read_exact(f, 8, "header"))
        raw = _read_exact(f, k * dims * 4, "centroid payload")
        centroids = np.frombuffer(raw, dtype="<f4").reshape(k, dims)
        (meta_len,) = struct.unpack("<I", _read_exact(f, 4, "metadata length"))
        try:
            meta = json.loads(_read_exact(f, meta_len, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: bad metadata blob: {exc}") from exc
    return Codebook(centroids.copy(), meta)
