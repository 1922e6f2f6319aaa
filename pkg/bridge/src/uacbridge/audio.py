"""Audio loading and the lightweight signal-processing backends.

The encoders stand in for heavyweight pretrained models with deterministic
spectral features: a log filter-bank front end whose --layer flag selects
temporal smoothing depth (deeper layers summarize longer context). That
keeps the bridge runnable anywhere while producing files with the exact
shape and metadata the toolkit expects.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import AudioError

HOP_MS = 20.0  # 50 frames per second
N_BANDS = 16
MAX_LAYER = 24


def read_wav(path) -> tuple[np.ndarray, int]:
    """Mono float64 signal in [-1, 1] plus sample rate. PCM16 WAV only."""
    try:
        with wave.open(str(path), "rb") as w:
            sr = w.getframerate()
            n = w.getnframes()
            width = w.getsampwidth()
            channels = w.getnchannels()
            raw = w.readframes(n)
    except (wave.Error, EOFError, OSError) as exc:
        raise AudioError(f"{path}: cannot read WAV: {exc}") from exc
    if width != 2:
        raise AudioError(f"{path}: only 16-bit PCM is supported, got {8 * width}-bit")
    if n == 0:
        raise AudioError(f"{path}: empty audio")
    sig = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        sig = sig.reshape(-1, channels).mean(axis=1)
    return sig, sr


@dataclass
class Frames:
    features: np.ndarray  # (n, N_BANDS) float64 log filter-bank
    energy: np.ndarray  # (n,) float64 per-frame RMS
    centroid: np.ndarray  # (n,) float64 spectral centroid, Hz
    hop_ms: float


def analyze(sig: np.ndarray, sr: int) -> Frames:
    hop = max(1, int(round(sr * HOP_MS / 1000.0)))
    win = 2 * hop
    if len(sig) < win:
        sig = np.pad(sig, (0, win - len(sig)))
    n = 1 + (len(sig) - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    blocks = sig[idx] * np.hanning(win)[None, :]
    spec = np.abs(np.fft.rfft(blocks, axis=1)) ** 2
    freqs = np.fft.rfftfreq(win, d=1.0 / sr)
    # contiguous band pooling into a fixed-width filter bank
    edges = np.linspace(0, spec.shape[1], N_BANDS + 1).astype(int)
    bands = np.stack(
        [spec[:, lo:hi].sum(axis=1) for lo, hi in zip(edges, edges[1:])], axis=1
    )
    feats = np.log(bands + 1e-10)
    energy = np.sqrt((blocks**2).mean(axis=1))
    total = spec.sum(axis=1)
    centroid = np.where(total > 0, (spec * freqs[None, :]).sum(axis=1) / np.maximum(total, 1e-30), 0.0)
    return Frames(feats, energy, centroid, HOP_MS)


def layer_features(frames: Frames, layer: int) -> np.ndarray:
    """Features at a given encoder depth: each layer adds one 3-frame
    moving-average pass along time."""
    if not 0 <= layer <= MAX_LAYER:
        raise AudioError(f"layer must be in [0, {MAX_LAYER}], got {layer}")
    x = frames.features.copy()
    kernel = np.array([0.25, 0.5, 0.25])
    for _ in range(layer):
        if x.shape[0] < 3:
            break
        x = np.apply_along_axis(lambda col: np.convolve(col, kernel, mode="same"), 0, x)
    return x


def voiced_mask(frames: Frames, floor: float = 0.01) -> np.ndarray:
    """Energy-gated speech/silence decision per frame."""
    thresh = max(floor, 0.1 * float(frames.energy.max(initial=0.0)))
    return frames.energy >= thresh


def segment_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """[start, end) spans of consecutive voiced frames."""
    spans = []
    start = None
    for i, v in enumerate(mask):
        if v and start is None:
            start = i
        elif not v and start is not None:
            spans.append((start, i))
            start = None
    if start is not None:
        spans.append((start, len(mask)))
    return spans


def centroid_class(frames: Frames, lo: int, hi: int, n_classes: int = 8) -> str:
    """Pseudo-phone label for a voiced span from its mean spectral centroid,
    binned on a log-frequency axis (100 Hz - 8 kHz)."""
    c = float(frames.centroid[lo:hi].mean())
    fmin, fmax = 100.0, 8000.0
    c = min(max(c, fmin), fmax - 1e-6)
    k = int(n_classes * np.log(c / fmin) / np.log(fmax / fmin))
    return f"b{min(k, n_classes - 1)}"
