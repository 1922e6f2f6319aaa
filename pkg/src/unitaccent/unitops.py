"""Unit-sequence representations and transforms.

Frame-wise sequences are the canonical reconstruction input; the run-length
(dedup) form and the unit-to-character text encoding exist for exchange with
external sequence models and text-based decoders.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import FormatError, ValidationError

CHAR_BASE = 0x4E00  # contiguous block of >20k assigned codepoints
MAX_CHAR_UNITS = 20000


@dataclass(frozen=True)
class UnitSequence:
    """Per-frame unit indices drawn from a K-unit codebook."""

    utt_id: str
    units: tuple[int, ...]
    K: int

    def __post_init__(self):
        units = tuple(int(u) for u in self.units)
        if self.K < 1:
            raise ValidationError(f"{self.utt_id}: K must be >= 1")
        for u in units:
            if not 0 <= u < self.K:
                raise ValidationError(f"{self.utt_id}: unit {u} out of range [0, {self.K})")
        object.__setattr__(self, "units", units)

    def __len__(self) -> int:
        return len(self.units)


@dataclass(frozen=True)
class DedupUnitSequence:
    """Run-length form: adjacent runs have distinct units, lengths >= 1."""

    utt_id: str
    runs: tuple[tuple[int, int], ...]
    K: int

    def __post_init__(self):
        runs = tuple((int(u), int(n)) for u, n in self.runs)
        if self.K < 1:
            raise ValidationError(f"{self.utt_id}: K must be >= 1")
        prev = None
        for u, n in runs:
            if n < 1:
                raise ValidationError(f"{self.utt_id}: zero-length run for unit {u}")
            if not 0 <= u < self.K:
                raise ValidationError(f"{self.utt_id}: unit {u} out of range [0, {self.K})")
            if prev is not None and u == prev:
                raise ValidationError(f"{self.utt_id}: adjacent runs share unit {u}")
            prev = u
        object.__setattr__(self, "runs", runs)


def dedup(s: UnitSequence) -> DedupUnitSequence:
    runs = []
    for u in s.units:
        if runs and runs[-1][0] == u:
            runs[-1][1] += 1
        else:
            runs.append([u, 1])
    return DedupUnitSequence(s.utt_id, tuple((u, n) for u, n in runs), s.K)


def expand(d: DedupUnitSequence) -> UnitSequence:
    units = []
    for u, n in d.runs:
        units.extend([u] * n)
    return UnitSequence(d.utt_id, tuple(units), d.K)


def to_chars(s: UnitSequence) -> str:
    if s.K > MAX_CHAR_UNITS:
        raise ValidationError(f"{s.utt_id}: K={s.K} exceeds character block size {MAX_CHAR_UNITS}")
    return "".join(chr(CHAR_BASE + u) for u in s.units)


def from_chars(text: str, K: int, utt_id: str = "") -> UnitSequence:
    if K > MAX_CHAR_UNITS:
        raise ValidationError(f"K={K} exceeds character block size {MAX_CHAR_UNITS}")
    units = []
    for ch in text:
        u = ord(ch) - CHAR_BASE
        if not 0 <= u < K:
            raise ValidationError(f"codepoint U+{ord(ch):04X} outside unit block [U+4E00, U+4E00+{K})")
        units.append(u)
    return UnitSequence(utt_id, tuple(units), K)


# ---------------------------------------------------------------------------
# JSON Lines persistence (frame-wise or run-length records)

def write_unit_sequences(seqs, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in seqs:
            if isinstance(s, DedupUnitSequence):
                rec = {"utt_id": s.utt_id, "K": s.K, "runs": [[u, n] for u, n in s.runs]}
            else:
                rec = {"utt_id": s.utt_id, "K": s.K, "units": list(s.units)}
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def read_unit_sequences(path) -> list[UnitSequence | DedupUnitSequence]:
    out = []
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
                if "runs" in rec:
                    out.append(
                        DedupUnitSequence(
                            rec["utt_id"], tuple((u, n) for u, n in rec["runs"]), rec["K"]
                        )
                    )
                else:
                    out.append(UnitSequence(rec["utt_id"], tuple(rec["units"]), rec["K"]))
            except KeyError as exc:
                raise FormatError(f"{path}:{lineno}: missing field {exc}") from exc
    return out
