"""Console entry points: uac-extract-features, uac-transcribe,
uac-extract-posteriors.

Each tool reads WAV audio and emits files that satisfy the unitaccent
on-disk contracts; nothing here imports the toolkit itself.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import audio, formats
from .errors import AlignmentError, AudioError, BridgeError


def _utt_id(path) -> str:
    return Path(path).stem


# ---------------------------------------------------------------------------
# uac-extract-features

def extract_features_main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="uac-extract-features",
        description="Encode WAV files into FUF1 feature matrices plus a manifest.",
    )
    p.add_argument("audio", nargs="+", help="input WAV files")
    p.add_argument("--layer", type=int, required=True,
                   help="encoder layer to export (no default; deeper = smoother)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--language", default="unk")
    p.add_argument("--group", default="raw")
    p.add_argument("--speaker", default=None,
                   help="speaker id for all files (default: each file's stem)")
    args = p.parse_args(argv)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    errors = []
    for path in args.audio:
        utt = _utt_id(path)
        try:
            sig, sr = audio.read_wav(path)
            frames = audio.analyze(sig, sr)
            feats = audio.layer_features(frames, args.layer)
            rel = f"{utt}.fuf1"
            formats.write_fuf1(out_dir / rel, utt, feats, frame_hop_ms=frames.hop_ms)
            entries.append({
                "utt_id": utt,
                "speaker_id": args.speaker or utt,
                "language": args.language,
                "group": args.group,
                "path": rel,
            })
        except BridgeError as exc:
            errors.append({"path": str(path), "error": str(exc)})
    formats.write_manifest(entries, out_dir / "manifest.json")
    if errors:
        (out_dir / "manifest.errors.json").write_text(
            json.dumps(errors, ensure_ascii=False, indent=2), encoding="utf-8"
        )
        for e in errors:
            print(f"error: {e['path']}: {e['error']}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# uac-transcribe

def _phone_tokens(frames: audio.Frames) -> list[str]:
    mask = audio.voiced_mask(frames)
    return [audio.centroid_class(frames, lo, hi) for lo, hi in audio.segment_runs(mask)]


def _word_tokens(frames: audio.Frames, max_gap_frames: int = 10) -> list[str]:
    """Voiced spans separated by short gaps merge into one word; the word
    token is its phone labels joined."""
    mask = audio.voiced_mask(frames)
    spans = audio.segment_runs(mask)
    words: list[list[tuple[int, int]]] = []
    for span in spans:
        if words and span[0] - words[-1][-1][1] <= max_gap_frames:
            words[-1].append(span)
        else:
            words.append([span])
    return [
        "".join(audio.centroid_class(frames, lo, hi) for lo, hi in group)
        for group in words
    ]


def transcribe_main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="uac-transcribe",
        description="Transcribe WAV files to JSON Lines token sequences.",
    )
    p.add_argument("audio", nargs="+")
    p.add_argument("--level", choices=("word", "phone"), required=True)
    p.add_argument("--out", required=True)
    args = p.parse_args(argv)

    records = []
    failures = 0
    for path in args.audio:
        try:
            sig, sr = audio.read_wav(path)
            frames = audio.analyze(sig, sr)
            tokens = _phone_tokens(frames) if args.level == "phone" else _word_tokens(frames)
            records.append((_utt_id(path), args.level, tokens))
        except BridgeError as exc:
            failures += 1
            print(f"error: {path}: {exc} (skipped)", file=sys.stderr)
    formats.write_token_sequences(records, args.out)
    return 0 if records and failures == 0 else 1


# ---------------------------------------------------------------------------
# uac-extract-posteriors

def _load_alignment(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise AlignmentError(f"{path}: {exc}") from exc
    segments = doc.get("segments", [])
    labels = sorted(set(doc.get("labels", [])) | {s["label"] for s in segments})
    if not labels:
        raise AlignmentError(f"{path}: no phoneme labels (need segments or a labels list)")
    if formats.SILENCE_LABEL in labels:
        raise AlignmentError(f"{path}: {formats.SILENCE_LABEL!r} is reserved for unaligned frames")
    return doc.get("utt_id"), labels, segments


def compute_posteriors(frames: audio.Frames, labels: list[str], segments,
                       duration_ms: float, temperature: float = 2.0):
    """Per-frame posteriors over labels via distances to per-label prototype
    features estimated from the alignment itself."""
    for seg in segments:
        lo, hi = float(seg["start_ms"]), float(seg["end_ms"])
        if lo < 0 or hi <= lo or hi > duration_ms + frames.hop_ms:
            raise AlignmentError(
                f"segment {seg['label']!r} [{lo}, {hi}] ms outside audio of {duration_ms:.0f} ms"
            )
    n = frames.features.shape[0]
    mids = (np.arange(n) + 1.0) * frames.hop_ms  # midpoint of each analysis window
    intended = [formats.SILENCE_LABEL] * n
    for seg in segments:
        sel = (mids >= float(seg["start_ms"])) & (mids < float(seg["end_ms"]))
        for i in np.flatnonzero(sel):
            intended[i] = seg["label"]
    feats = frames.features
    global_mean = feats.mean(axis=0)
    protos = np.stack([
        feats[[i for i, lab in enumerate(intended) if lab == label]].mean(axis=0)
        if any(lab == label for lab in intended) else global_mean
        for label in labels
    ])
    d2 = ((feats[:, None, :] - protos[None, :, :]) ** 2).sum(axis=2)
    logits = -d2 / (2.0 * temperature)
    logits -= logits.max(axis=1, keepdims=True)
    rows = np.exp(logits)
    rows /= rows.sum(axis=1, keepdims=True)
    uniform = np.full(len(labels), 1.0 / len(labels))
    for i, lab in enumerate(intended):
        if lab == formats.SILENCE_LABEL:
            rows[i] = uniform
    return rows, intended


def extract_posteriors_main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="uac-extract-posteriors",
        description="Phoneme posteriors from audio plus a phone alignment.",
    )
    p.add_argument("--audio", required=True)
    p.add_argument("--alignment", required=True, help="JSON with segments [{label, start_ms, end_ms}]")
    p.add_argument("--temperature", type=float, default=2.0)
    p.add_argument("--out", required=True)
    args = p.parse_args(argv)

    try:
        sig, sr = audio.read_wav(args.audio)
        frames = audio.analyze(sig, sr)
        utt_id, labels, segments = _load_alignment(args.alignment)
        duration_ms = 1000.0 * len(sig) / sr
        rows, intended = compute_posteriors(
            frames, labels, segments, duration_ms, args.temperature
        )
        formats.write_posterior_file(
            args.out, utt_id or _utt_id(args.audio), labels, rows, intended
        )
    except (AudioError, AlignmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0
