"""Writers for the unitaccent on-disk contracts.

FUF1 layout: magic "FUF1" | rows u32 | dims u32 | rows*dims float32 LE |
meta-len u32 | UTF-8 JSON metadata. Posterior files add a mandatory
`<path>.meta.json` sidecar carrying phoneme_labels and the per-row intended
labels. Token sequences are JSON Lines; manifests a single JSON document.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FUF1"
SILENCE_LABEL = "SIL"


def write_fuf1(path, utt_id: str, data: np.ndarray, frame_hop_ms: float | None = None) -> None:
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise ValueError("feature data must be rows x dims with dims >= 1")
    if not np.isfinite(arr).all():
        raise ValueError("non-finite feature values")
    meta = {"utt_id": utt_id}
    if frame_hop_ms is not None:
        meta["frame_hop_ms"] = float(frame_hop_ms)
    blob = json.dumps(meta, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        f.write(arr.tobytes())
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)


def write_posterior_file(path, utt_id: str, labels: list[str], rows: np.ndarray,
                         intended: list[str]) -> None:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape != (len(intended), len(labels)):
        raise ValueError("posterior shape inconsistent with labels/intended")
    rows = np.clip(rows, 0.0, None)
    sums = rows.sum(axis=1, keepdims=True)
    if (sums <= 0).any():
        raise ValueError("posterior row with zero mass")
    rows = rows / sums  # renormalize before float32 serialization
    write_fuf1(path, utt_id, rows.astype(np.float32))
    sidecar = {"phoneme_labels": list(labels), "intended": list(intended)}
    Path(str(path) + ".meta.json").write_text(
        json.dumps(sidecar, ensure_ascii=False, sort_keys=True), encoding="utf-8"
    )


def write_token_sequences(records, path) -> None:
    """records: iterable of (utt_id, level, tokens)."""
    with open(path, "w", encoding="utf-8") as f:
        for utt_id, level, tokens in records:
            rec = {"utt_id": utt_id, "level": level, "tokens": list(tokens)}
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def write_manifest(entries, path) -> None:
    """entries: iterable of dicts with utt_id, speaker_id, language, group, path."""
    doc = {"entries": sorted(entries, key=lambda e: e["utt_id"])}
    Path(path).write_text(
        json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=2), encoding="utf-8"
    )
