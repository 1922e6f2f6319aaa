"""File formats, manifests, and persistence for pipeline data objects.

Binary payloads are little-endian with 32-bit floats; counts are unsigned
32-bit. Feature files use the FUF1 layout:

    magic "FUF1" | rows u32 | dims u32 | rows*dims f32 | meta-len u32 | JSON meta

Posterior files reuse the FUF1 payload plus a mandatory ``<path>.meta.json``
sidecar carrying ``phoneme_labels`` and ``intended``. Token sequences are
JSON Lines; manifests are single JSON documents.

Every reader validates before returning: a loaded object always satisfies
its invariants, and no partially constructed object escapes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagicError, FormatError, TruncatedFileError, ValidationError

FEATURE_MAGIC = b"FUF1"
ROW_SUM_TOL = 1e-4
SILENCE_LABEL = "SIL"
TOKEN_LEVELS = ("word", "phone", "unit")


@dataclass(eq=False)
class FeatureMatrix:
    """Per-utterance frames x dims real-valued matrix (float32)."""

    utt_id: str
    data: np.ndarray
    frame_hop_ms: float | None = None

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValidationError(f"{self.utt_id}: feature data must be 2-D, got {arr.ndim}-D")
        if arr.shape[1] < 1:
            raise ValidationError(f"{self.utt_id}: dims must be >= 1")
        if not np.isfinite(arr).all():
            raise ValidationError(f"{self.utt_id}: non-finite feature values")
        self.data = arr

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return (
            self.utt_id == other.utt_id
            and self.frame_hop_ms == other.frame_hop_ms
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass(eq=False)
class PosteriorSet:
    """Phoneme posterior rows with the intended phoneme label per row."""

    utt_id: str
    phoneme_labels: list[str]
    data: np.ndarray
    intended: list[str]

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValidationError(f"{self.utt_id}: posterior data must be 2-D")
        if arr.shape[1] != len(self.phoneme_labels):
            raise ValidationError(
                f"{self.utt_id}: {arr.shape[1]} posterior columns for "
                f"{len(self.phoneme_labels)} phoneme labels"
            )
        if len(self.phoneme_labels) != len(set(self.phoneme_labels)):
            raise ValidationError(f"{self.utt_id}: duplicate phoneme labels")
        if not np.isfinite(arr).all():
            raise ValidationError(f"{self.utt_id}: non-finite posterior values")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValidationError(f"{self.utt_id}: posterior entries outside [0, 1]")
        if arr.shape[0]:
            sums = arr.sum(axis=1, dtype=np.float64)
            bad = np.abs(sums - 1.0) > ROW_SUM_TOL
            if bad.any():
                i = int(np.argmax(bad))
                raise ValidationError(
                    f"{self.utt_id}: posterior row {i} sums to {sums[i]:.6f}, not 1"
                )
        if len(self.intended) != arr.shape[0]:
            raise ValidationError(
                f"{self.utt_id}: {len(self.intended)} intended labels for {arr.shape[0]} rows"
            )
        known = set(self.phoneme_labels) | {SILENCE_LABEL}
        for lab in self.intended:
            if lab not in known:
                raise ValidationError(f"{self.utt_id}: intended label {lab!r} not in phoneme_labels")
        self.data = arr

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PosteriorSet):
            return NotImplemented
        return (
            self.utt_id == other.utt_id
            and self.phoneme_labels == other.phoneme_labels
            and self.intended == other.intended
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass(frozen=True)
class TokenSequence:
    """Token list at a single level (word, phone, or unit) for one utterance."""

    utt_id: str
    level: str
    tokens: tuple[str, ...]

    def __post_init__(self):
        if self.level not in TOKEN_LEVELS:
            raise ValidationError(f"{self.utt_id}: unknown token level {self.level!r}")
        toks = tuple(self.tokens)
        for t in toks:
            if not isinstance(t, str) or not t:
                raise ValidationError(f"{self.utt_id}: empty or non-string token")
        object.__setattr__(self, "tokens", toks)


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    speaker_id: str
    language: str
    group: str
    path: str


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for e in self.entries:
            if e.utt_id in seen:
                raise ValidationError(f"duplicate utt_id in manifest: {e.utt_id}")
            seen.add(e.utt_id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


# ---------------------------------------------------------------------------
# FUF1 binary payload

def _write_fuf1(path, data: np.ndarray, meta: dict) -> None:
    payload = np.ascontiguousarray(data, dtype="<f4")
    blob = json.dumps(meta, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", payload.shape[0], payload.shape[1]))
        f.write(payload.tobytes())
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"truncated {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def _read_fuf1(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FEATURE_MAGIC:
            raise BadMagicError(f"{path}: bad magic {magic!r}")
        rows, dims = struct.unpack("<II", _read_exact(f, 8, "header"))
        if dims < 1:
            raise FormatError(f"{path}: dims must be >= 1")
        raw = _read_exact(f, rows * dims * 4, "feature payload")
        data = np.frombuffer(raw, dtype="<f4").reshape(rows, dims)
        (meta_len,) = struct.unpack("<I", _read_exact(f, 4, "metadata length"))
        try:
            meta = json.loads(_read_exact(f, meta_len, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: bad metadata blob: {exc}") from exc
        trailing = f.read(1)
    if trailing:
        raise FormatError(f"{path}: trailing bytes after payload")
    if not isinstance(meta, dict):
        raise FormatError(f"{path}: metadata must be a JSON object")
    return data, meta


def write_features(m: FeatureMatrix, path) -> None:
    meta = {"utt_id": m.utt_id, "frame_hop_ms": m.frame_hop_ms}
    _write_fuf1(path, m.data, meta)


def read_features(path) -> FeatureMatrix:
    data, meta = _read_fuf1(path)
    if "utt_id" not in meta:
        raise FormatError(f"{path}: metadata missing utt_id")
    return FeatureMatrix(
        utt_id=meta["utt_id"], data=data, frame_hop_ms=meta.get("frame_hop_ms")
    )


# ---------------------------------------------------------------------------
# Posterior files: FUF1 payload + JSON sidecar

def _sidecar_path(path) -> Path:
    return Path(str(path) + ".meta.json")


def write_posteriors(ps: PosteriorSet, path) -> None:
    _write_fuf1(path, ps.data, {"utt_id": ps.utt_id, "frame_hop_ms": None})
    sidecar = {"phoneme_labels": ps.phoneme_labels, "intended": ps.intended}
    _sidecar_path(path).write_text(
        json.dumps(sidecar, ensure_ascii=False, sort_keys=True), encoding="utf-8"
    )


def read_posteriors(path) -> PosteriorSet:
    data, meta = _read_fuf1(path)
    sidecar_path = _sidecar_path(path)
    if not sidecar_path.exists():
        raise FormatError(f"{path}: missing sidecar {sidecar_path}")
    try:
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{sidecar_path}: bad JSON: {exc}") from exc
    for key in ("phoneme_labels", "intended"):
        if key not in sidecar:
            raise FormatError(f"{sidecar_path}: missing {key!r}")
    return PosteriorSet(
        utt_id=meta.get("utt_id", ""),
        phoneme_labels=list(sidecar["phoneme_labels"]),
        data=data,
        intended=list(sidecar["intended"]),
    )


# ---------------------------------------------------------------------------
# Token sequences: JSON Lines

def write_token_sequences(seqs, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in seqs:
            rec = {"utt_id": s.utt_id, "level": s.level, "tokens": list(s.tokens)}
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def read_token_sequences(path) -> list[TokenSequence]:
    out = []
    levels = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            try:
                seq = TokenSequence(rec["utt_id"], rec["level"], tuple(rec["tokens"]))
            except KeyError as exc:
                raise FormatError(f"{path}:{lineno}: missing field {exc}") from exc
            levels.add(seq.level)
            out.append(seq)
    if len(levels) > 1:
        raise ValidationError(f"{path}: mixed token levels {sorted(levels)}")
    return out


# ---------------------------------------------------------------------------
# Manifests

def save_manifest(m: Manifest, path) -> None:
    doc = {
        "entries": [
            {
                "utt_id": e.utt_id,
                "speaker_id": e.speaker_id,
                "language": e.language,
                "group": e.group,
                "path": e.path,
            }
            for e in m.entries
        ]
    }
    Path(path).write_text(
        json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True), encoding="utf-8"
    )


def load_manifest(path) -> Manifest:
    p = Path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: bad JSON: {exc}") from exc
    if not isinstance(doc, dict) or "entries" not in doc:
        raise FormatError(f"{path}: manifest must be an object with an 'entries' list")
    entries = []
    for rec in doc["entries"]:
        try:
            e = ManifestEntry(
                utt_id=rec["utt_id"],
                speaker_id=rec["speaker_id"],
                language=rec["language"],
                group=rec["group"],
                path=rec["path"],
            )
        except KeyError as exc:
            raise FormatError(f"{path}: manifest entry missing field {exc}") from exc
        if not resolve_entry_path(p, e.path).exists():
            raise ValidationError(f"{path}: unresolvable path for {e.utt_id}: {e.path}")
        entries.append(e)
    return Manifest(tuple(entries))


def resolve_entry_path(manifest_path, entry_path) -> Path:
    q = Path(entry_path)
    return q if q.is_absolute() else Path(manifest_path).parent / q


def filter_group(m: Manifest, group: str) -> Manifest:
    return Manifest(tuple(e for e in m.entries if e.group == group))
