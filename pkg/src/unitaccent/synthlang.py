"""Synthetic-language simulator and the end-to-end accentuation experiment.

A synthetic language is a Markov chain over "phones", each emitting frames
from a diagonal Gaussian for a uniform-integer number of frames. Two such
languages with partially overlapping phone inventories let the whole
quantize-reconstruct-transcribe pipeline run at desk scale with exact
ground truth.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ValidationError
from .featio import FeatureMatrix, TokenSequence
from .metrics import SubstitutionTable, corpus_error_rate, substitution_rates_multi
from .quantizer import Codebook, KMeansConfig, inertia, quantize, train_codebook
from .reconstructor import decode_centroid

DEFAULT_MIN_RUN_FRAMES = 2


@dataclass(eq=False)
class SyntheticLanguage:
    name: str
    labels: list[str]
    means: np.ndarray  # (P, d)
    stdevs: np.ndarray  # (P, d), >= 0
    transition: np.ndarray  # (P, P) row-stochastic
    start: np.ndarray  # (P,)
    duration_range: tuple[int, int]

    @property
    def dims(self) -> int:
        return self.means.shape[1]

    @property
    def n_phones(self) -> int:
        return len(self.labels)


def _uniform_no_self(p: int) -> np.ndarray:
    t = np.full((p, p), 1.0 / (p - 1))
    np.fill_diagonal(t, 0.0)
    return t


def make_language(doc) -> SyntheticLanguage:
    """Validate a language spec (JSON text or dict) into a language object."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    name = doc.get("name", "")
    phones = doc.get("phones", [])
    if len(phones) < 2:
        raise ValidationError(f"{name}: need at least 2 phones, got {len(phones)}")
    labels = [ph["label"] for ph in phones]
    if len(set(labels)) != len(labels):
        raise ValidationError(f"{name}: duplicate phone labels")
    means = np.array([ph["mean"] for ph in phones], dtype=np.float64)
    stdevs = np.array([ph["stdev"] for ph in phones], dtype=np.float64)
    if means.ndim != 2 or means.shape != stdevs.shape:
        raise ValidationError(f"{name}: mean/stdev shapes inconsistent")
    if not np.isfinite(means).all() or not np.isfinite(stdevs).all():
        raise ValidationError(f"{name}: non-finite phone parameters")
    if (stdevs < 0).any():
        raise ValidationError(f"{name}: stdevs must be non-negative")
    p = len(labels)
    transition = np.array(doc["transition"], dtype=np.float64) if "transition" in doc else _uniform_no_self(p)
    if transition.shape != (p, p):
        raise ValidationError(f"{name}: transition must be {p}x{p}")
    if (transition < 0).any():
        raise ValidationError(f"{name}: negative transition probability")
    rowsums = transition.sum(axis=1)
    if np.abs(rowsums - 1.0).max() > 1e-9:
        bad = int(np.argmax(np.abs(rowsums - 1.0)))
        raise ValidationError(f"{name}: transition row {bad} sums to {rowsums[bad]:.6f}")
    start = np.array(doc["start"], dtype=np.float64) if "start" in doc else np.full(p, 1.0 / p)
    if start.shape != (p,) or (start < 0).any() or abs(start.sum() - 1.0) > 1e-9:
        raise ValidationError(f"{name}: start distribution invalid")
    dmin, dmax = doc.get("duration_range", [3, 8])
    if dmin < 1 or dmax < dmin:
        raise ValidationError(f"{name}: duration_range [{dmin}, {dmax}] invalid (min >= 1, max >= min)")
    return SyntheticLanguage(
        name=name,
        labels=labels,
        means=means,
        stdevs=stdevs,
        transition=transition,
        start=start,
        duration_range=(int(dmin), int(dmax)),
    )


def load_language(path) -> SyntheticLanguage:
    with open(path, "r", encoding="utf-8") as f:
        return make_language(f.read())


def default_language_pair() -> tuple[SyntheticLanguage, SyntheticLanguage]:
    """The bundled 10-phone language pair (two phones of A absent from B)."""
    pkg = resources.files("unitaccent") / "data"
    lang_a = make_language((pkg / "langA.json").read_text(encoding="utf-8"))
    lang_b = make_language((pkg / "langB.json").read_text(encoding="utf-8"))
    return lang_a, lang_b


def sample_utterance(
    lang: SyntheticLanguage, n_phones: int, seed, utt_id: str | None = None
) -> tuple[FeatureMatrix, TokenSequence]:
    """Markov-sample a phone string and emit its frames; fully determined by
    (lang, n_phones, seed)."""
    if n_phones < 1:
        raise ValidationError("n_phones must be >= 1")
    rng = np.random.default_rng(seed)
    if utt_id is None:
        utt_id = f"{lang.name}-{seed}"
    dmin, dmax = lang.duration_range
    phone_ids = []
    frames = []
    current = int(rng.choice(lang.n_phones, p=lang.start))
    for i in range(n_phones):
        if i > 0:
            current = int(rng.choice(lang.n_phones, p=lang.transition[current]))
        phone_ids.append(current)
        dur = int(rng.integers(dmin, dmax + 1))
        noise = rng.standard_normal((dur, lang.dims))
        frames.append(lang.means[current] + lang.stdevs[current] * noise)
    data = np.concatenate(frames, axis=0).astype(np.float32)
    tokens = tuple(lang.labels[i] for i in phone_ids)
    return FeatureMatrix(utt_id, data), TokenSequence(utt_id, "phone", tokens)


def oracle_phone_decode(
    m: FeatureMatrix, lang: SyntheticLanguage, min_run_frames: int = DEFAULT_MIN_RUN_FRAMES
) -> TokenSequence:
    """Frame-wise nearest phone mean, collapsed to a transcript.

    Runs shorter than min_run_frames are dropped to suppress single-frame
    flicker, then adjacent duplicates are collapsed again.
    """
    if m.dims != lang.dims:
        raise ValidationError(f"{m.utt_id}: feature dims {m.dims} != language dims {lang.dims}")
    if m.rows == 0:
        return TokenSequence(m.utt_id, "phone", ())
    x = m.data.astype(np.float64)
    d2 = (
        np.sum(x * x, axis=1, keepdims=True)
        - 2.0 * (x @ lang.means.T)
        + np.sum(lang.means * lang.means, axis=1)
    )
    ids = np.argmin(d2, axis=1)  # ties break to the lower phone index
    runs = []
    for pid in ids:
        if runs and runs[-1][0] == pid:
            runs[-1][1] += 1
        else:
            runs.append([int(pid), 1])
    tokens = []
    for pid, length in runs:
        if length < min_run_frames:
            continue
        lab = lang.labels[pid]
        if tokens and tokens[-1] == lab:
            continue
        tokens.append(lab)
    return TokenSequence(m.utt_id, "phone", tuple(tokens))


# ---------------------------------------------------------------------------
# Accentuation experiment harness

@dataclass
class ExperimentCell:
    k: int
    seed: int
    per: float
    mse: float
    inertia: float
    sr: dict  # {p_o: {p_s: rate}}


@dataclass
class ExperimentReport:
    ks: list[int]
    seeds: list[int]
    cells: list[ExperimentCell]
    aggregates: dict  # {str(k): {per_mean, per_std, mse_mean, mse_std}}

    def to_dict(self) -> dict:
        return {
            "ks": self.ks,
            "seeds": self.seeds,
            "cells": [
                {
                    "k": c.k,
                    "seed": c.seed,
                    "per": c.per,
                    "mse": c.mse,
                    "inertia": c.inertia,
                    "sr": c.sr,
                }
                for c in self.cells
            ],
            "aggregates": self.aggregates,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2)


def _derived_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, dtype=np.uint64)[0])


def _sr_nested(table: SubstitutionTable) -> dict:
    nested: dict[str, dict[str, float]] = {}
    for (p_o, p_s), r in sorted(table.rates.items()):
        nested.setdefault(p_o, {})[p_s] = r
    return nested


def run_experiment_cell(
    lang_a: SyntheticLanguage,
    lang_b: SyntheticLanguage,
    k: int,
    seed: int,
    n_train_utts: int = 200,
    n_eval_utts: int = 50,
    train_phones: int = 18,
    eval_phones: int = 18,
    min_run_frames: int = DEFAULT_MIN_RUN_FRAMES,
    workers=None,
) -> ExperimentCell:
    train_feats = [
        sample_utterance(lang_b, train_phones, _derived_seed(seed, 1, i), f"train-{i}")[0]
        for i in range(n_train_utts)
    ]
    cfg = KMeansConfig(k=k, seed=seed, max_iters=50, batch_size=0, tol=1e-6)
    cb = train_codebook(train_feats, cfg, language=lang_b.name, workers=workers)
    # eval seeds depend only on the cell seed, so every K sees the same set
    evals = [
        sample_utterance(lang_a, eval_phones, _derived_seed(seed, 2, i), f"eval-{i}")
        for i in range(n_eval_utts)
    ]
    truths, hyps = [], []
    sq_err = 0.0
    n_frames = 0
    for m, truth in evals:
        units = quantize(m, cb, workers=workers)
        rec = decode_centroid(units, cb)
        hyps.append(oracle_phone_decode(rec, lang_a, min_run_frames))
        truths.append(truth)
        diff = m.data.astype(np.float64) - rec.data.astype(np.float64)
        sq_err += float(np.sum(diff * diff))
        n_frames += m.rows
    per = corpus_error_rate(zip(truths, hyps))
    mse = sq_err / n_frames
    eval_inertia = inertia([m for m, _ in evals], cb, workers=workers)
    table = substitution_rates_multi(truths, [hyps], group_label=f"s{lang_b.name}", mode="mean")
    return ExperimentCell(k=k, seed=seed, per=per, mse=mse, inertia=eval_inertia, sr=_sr_nested(table))


def run_accent_experiment(
    lang_a: SyntheticLanguage,
    lang_b: SyntheticLanguage,
    ks: list[int],
    n_train_utts: int = 200,
    n_eval_utts: int = 50,
    seeds: list[int] = (0, 1, 2, 3, 4),
    train_phones: int = 18,
    eval_phones: int = 18,
    min_run_frames: int = DEFAULT_MIN_RUN_FRAMES,
    workers=None,
) -> ExperimentReport:
    """Train on B, accentuate A, transcribe, and score over a (K, seed) grid.

    Grid cells are independent; with workers they run concurrently but the
    report is assembled in fixed grid order, so output is worker-invariant.
    """
    ks = list(ks)
    seeds = list(seeds)
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValidationError("Ks must be strictly increasing")
    if len(seeds) < 2:
        raise ValidationError("need at least 2 seeds")
    grid = [(k, s) for k in ks for s in seeds]

    def run(cell):
        k, s = cell
        return run_experiment_cell(
            lang_a,
            lang_b,
            k,
            s,
            n_train_utts=n_train_utts,
            n_eval_utts=n_eval_utts,
            train_phones=train_phones,
            eval_phones=eval_phones,
            min_run_frames=min_run_frames,
        )

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(run, grid))
    else:
        cells = [run(c) for c in grid]
    aggregates = {}
    for k in ks:
        pers = np.array([c.per for c in cells if c.k == k])
        mses = np.array([c.mse for c in cells if c.k == k])
        aggregates[str(k)] = {
            "per_mean": float(pers.mean()),
            "per_std": float(pers.std(ddof=1)),
            "mse_mean": float(mses.mean()),
            "mse_std": float(mses.std(ddof=1)),
        }
    return ExperimentReport(ks=ks, seeds=seeds, cells=cells, aggregates=aggregates)
