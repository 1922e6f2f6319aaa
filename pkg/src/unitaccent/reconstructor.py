"""Unit-to-feature reconstruction.

Decoding is centroid lookup, frame by frame, so the temporal structure of
the input is preserved exactly. The decoder-job exchange format lets an
external neural decoder replace the centroid lookup: jobs carry the unit
string as text, outputs come back as FUF1 files.
"""

from __future__ import annotations

import json

from .errors import FormatError, ValidationError
from .featio import FeatureMatrix, read_features
from .quantizer import Codebook
from .unitops import UnitSequence, to_chars


def decode_centroid(s: UnitSequence, cb: Codebook) -> FeatureMatrix:
    """Replace each unit with its centroid; one output row per input frame."""
    if s.K != cb.K:
        raise ValidationError(f"{s.utt_id}: sequence K={s.K} != codebook K={cb.K}")
    data = cb.centroids[list(s.units)] if s.units else cb.centroids[:0]
    return FeatureMatrix(s.utt_id, data.copy())


def export_decoder_job(s: UnitSequence) -> str:
    """One JSON Lines job record for an external unit-to-speech decoder."""
    rec = {"utt_id": s.utt_id, "K": s.K, "text": to_chars(s)}
    return json.dumps(rec, ensure_ascii=False, sort_keys=True)


def write_decoder_jobs(seqs, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in seqs:
            f.write(export_decoder_job(s) + "\n")


def import_decoder_output(path, expected_utt_id: str) -> FeatureMatrix:
    """Load an external decoder's FUF1 output, checking it answers our job."""
    try:
        m = read_features(path)
    except FormatError:
        raise
    if m.utt_id != expected_utt_id:
        raise ValidationError(
            f"decoder output utt_id {m.utt_id!r} does not match job {expected_utt_id!r}"
        )
    return m
