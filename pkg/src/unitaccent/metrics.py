"""Evaluation machinery: alignment and error rates, averaged phoneme
posteriors, KL-based pronunciation deviation, naturalness-of-accent,
phone substitution tables with range binning, and 2-D embedding export.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .featio import SILENCE_LABEL, PosteriorSet, TokenSequence

KL_EPS = 1e-10
DELETION_SYMBOL = "∅"  # reserved p_s for deletions, reported separately
DEFAULT_BIN_EDGES = (0.1, 0.05, 0.02, 0.01)


# ---------------------------------------------------------------------------
# Alignment and error rates

@dataclass(frozen=True)
class AlignOp:
    kind: str  # match | sub | ins | del
    ref_token: str | None
    hyp_token: str | None


@dataclass(frozen=True)
class AlignmentResult:
    ops: tuple[AlignOp, ...]
    matches: int
    subs: int
    ins: int
    dels: int
    ref_len: int

    @property
    def distance(self) -> int:
        return self.subs + self.ins + self.dels


def align(ref: TokenSequence, hyp: TokenSequence) -> AlignmentResult:
    """Minimal edit-distance alignment with unit costs.

    Backtrace tie-break prefers match > sub > del > ins, so results are
    deterministic.
    """
    if ref.level != hyp.level:
        raise ValidationError(f"token level mismatch: {ref.level} vs {hyp.level}")
    r, h = ref.tokens, hyp.tokens
    nr, nh = len(r), len(h)
    dp = np.zeros((nr + 1, nh + 1), dtype=np.int64)
    dp[:, 0] = np.arange(nr + 1)
    dp[0, :] = np.arange(nh + 1)
    for i in range(1, nr + 1):
        for j in range(1, nh + 1):
            same = r[i - 1] == h[j - 1]
            dp[i, j] = min(
                dp[i - 1, j - 1] + (0 if same else 1),
                dp[i - 1, j] + 1,
                dp[i, j - 1] + 1,
            )
    ops = []
    i, j = nr, nh
    while i > 0 or j > 0:
        if i > 0 and j > 0 and r[i - 1] == h[j - 1] and dp[i, j] == dp[i - 1, j - 1]:
            ops.append(AlignOp("match", r[i - 1], h[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dp[i, j] == dp[i - 1, j - 1] + 1:
            ops.append(AlignOp("sub", r[i - 1], h[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and dp[i, j] == dp[i - 1, j] + 1:
            ops.append(AlignOp("del", r[i - 1], None))
            i -= 1
        else:
            ops.append(AlignOp("ins", None, h[j - 1]))
            j -= 1
    ops.reverse()
    counts = {"match": 0, "sub": 0, "ins": 0, "del": 0}
    for op in ops:
        counts[op.kind] += 1
    return AlignmentResult(
        ops=tuple(ops),
        matches=counts["match"],
        subs=counts["sub"],
        ins=counts["ins"],
        dels=counts["del"],
        ref_len=nr,
    )


def error_rate(a: AlignmentResult) -> float:
    """(subs + ins + dels) / ref_len; may exceed 1."""
    if a.ref_len == 0:
        raise ValidationError("error rate undefined for an empty reference")
    return (a.subs + a.ins + a.dels) / a.ref_len


def corpus_error_rate(pairs) -> float:
    """Micro-averaged error rate over (ref, hyp) sequence pairs."""
    edits = 0
    ref_len = 0
    for ref, hyp in pairs:
        a = align(ref, hyp)
        edits += a.distance
        ref_len += a.ref_len
    if ref_len == 0:
        raise ValidationError("error rate undefined for an empty reference")
    return edits / ref_len


# ---------------------------------------------------------------------------
# Averaged phoneme posteriors and pronunciation deviation

@dataclass(eq=False)
class APP:
    """Per-speaker averaged posterior per intended phoneme.

    Row p is defined only when at least one segment intended phoneme p was
    observed (support[p] > 0); silence rows are excluded from averaging.
    """

    speaker_id: str
    phoneme_labels: list[str]
    rows: np.ndarray  # (P, P') float64
    support: np.ndarray  # (P,) int64

    @property
    def defined(self) -> np.ndarray:
        return self.support > 0


def average_posteriors(sets: list[PosteriorSet], speaker_id: str) -> APP:
    if not sets:
        raise ValidationError(f"{speaker_id}: no posterior sets")
    labels = sets[0].phoneme_labels
    for ps in sets[1:]:
        if ps.phoneme_labels != labels:
            raise ValidationError(
                f"{speaker_id}: phoneme label order differs between {sets[0].utt_id} "
                f"and {ps.utt_id}"
            )
    p = len(labels)
    index = {lab: i for i, lab in enumerate(labels)}
    sums = np.zeros((p, p), dtype=np.float64)
    support = np.zeros(p, dtype=np.int64)
    for ps in sets:
        for row, lab in zip(ps.data, ps.intended):
            if lab == SILENCE_LABEL:
                continue
            i = index[lab]
            sums[i] += row.astype(np.float64)
            support[i] += 1
    rows = np.zeros_like(sums)
    mask = support > 0
    rows[mask] = sums[mask] / support[mask, None]
    return APP(speaker_id, list(labels), rows, support)


def kl_divergence(p, q, eps: float = KL_EPS) -> float:
    """KL(p || q) in nats, with both distributions floored at eps and
    renormalized so zero support stays finite."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValidationError(f"distribution length mismatch: {p.shape} vs {q.shape}")
    for name, d in (("p", p), ("q", q)):
        if not np.isfinite(d).all() or (d < 0).any():
            raise ValidationError(f"{name} is not a distribution")
        if abs(d.sum() - 1.0) > 1e-4:
            raise ValidationError(f"{name} sums to {d.sum():.6f}, not 1")
    p = np.maximum(p, eps)
    p /= p.sum()
    q = np.maximum(q, eps)
    q /= q.sum()
    return float(np.sum(p * np.log(p / q)))


@dataclass(eq=False)
class PDVector:
    """Per-phoneme pronunciation deviation of one speaker from the natives."""

    speaker_id: str
    phoneme_labels: list[str]
    values: np.ndarray  # (P,) float64, meaningful only where defined
    defined: np.ndarray  # (P,) bool


def pronunciation_deviation(s: APP, natives: list[APP]) -> PDVector:
    """Mean KL from the speaker's APP row to each native's, per phoneme.

    A phoneme is undefined when the speaker never produced it or no native
    has a defined row for it; natives lacking a row are skipped from that
    phoneme's mean.
    """
    if not natives:
        raise ValidationError("need at least one native APP")
    for n in natives:
        if n.phoneme_labels != s.phoneme_labels:
            raise ValidationError(
                f"phoneme label mismatch between {s.speaker_id} and {n.speaker_id}"
            )
    p = len(s.phoneme_labels)
    values = np.zeros(p, dtype=np.float64)
    defined = np.zeros(p, dtype=bool)
    for i in range(p):
        if not s.defined[i]:
            continue
        kls = [
            kl_divergence(s.rows[i], n.rows[i]) for n in natives if n.defined[i]
        ]
        if kls:
            values[i] = float(np.mean(kls))
            defined[i] = True
    if not defined.any():
        raise ValidationError(
            f"{s.speaker_id}: no phoneme defined for both speaker and natives"
        )
    return PDVector(s.speaker_id, list(s.phoneme_labels), values, defined)


def _rank(x: np.ndarray) -> np.ndarray:
    """Average ranks (for the Spearman variant)."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    sx = x - x.mean()
    sy = y - y.mean()
    vx = float(np.dot(sx, sx))
    vy = float(np.dot(sy, sy))
    if vx == 0.0 or vy == 0.0:
        raise ValidationError("zero-variance PD vector in correlation")
    return float(np.dot(sx, sy) / math.sqrt(vx * vy))


def pairwise_correlations(
    group_a: list[PDVector], group_b: list[PDVector], method: str = "pearson"
) -> list[float]:
    """Correlations over all cross pairs, skipping i == j (same speaker),
    restricted per pair to phonemes defined in both vectors."""
    if not group_a or not group_b:
        raise ValidationError("both groups must be non-empty")
    if method not in ("pearson", "spearman"):
        raise ValidationError(f"unknown correlation method {method!r}")
    corrs = []
    for a in group_a:
        for b in group_b:
            if a.speaker_id == b.speaker_id:
                continue
            if a.phoneme_labels != b.phoneme_labels:
                raise ValidationError(
                    f"phoneme label mismatch between {a.speaker_id} and {b.speaker_id}"
                )
            shared = a.defined & b.defined
            if shared.sum() < 2:
                raise ValidationError(
                    f"pair ({a.speaker_id}, {b.speaker_id}) shares fewer than 2 "
                    "defined phonemes"
                )
            x, y = a.values[shared], b.values[shared]
            if method == "spearman":
                x, y = _rank(x), _rank(y)
            corrs.append(_pearson(x, y))
    if not corrs:
        raise ValidationError("no cross-speaker pairs between the groups")
    return corrs


def naturalness(
    synth: list[PDVector], real: list[PDVector], method: str = "pearson"
) -> float:
    """Mean pairwise correlation between the groups' PD vectors, in [-1, 1]."""
    return float(np.mean(pairwise_correlations(synth, real, method)))


# ---------------------------------------------------------------------------
# Phone substitution rates

@dataclass(eq=False)
class SubstitutionTable:
    """SR(p_s | p_o) per phone pair, with model-speech phone counts."""

    group_label: str
    model_counts: dict[str, int]
    rates: dict[tuple[str, str], float]
    n_speakers: int = 0

    def rate(self, p_o: str, p_s: str) -> float:
        return self.rates.get((p_o, p_s), 0.0)

    def substitution_pairs(self):
        """Pairs excluding deletions (p_s = the reserved deletion symbol)."""
        return [pair for pair in self.rates if pair[1] != DELETION_SYMBOL]


def _pair_counts(model: TokenSequence, hyp: TokenSequence) -> dict[tuple[str, str], int]:
    counts: dict[tuple[str, str], int] = {}
    for op in align(model, hyp).ops:
        if op.kind == "sub":
            key = (op.ref_token, op.hyp_token)
        elif op.kind == "del":
            key = (op.ref_token, DELETION_SYMBOL)
        else:
            continue  # insertions are not covered by the SR definition
        counts[key] = counts.get(key, 0) + 1
    return counts


def substitution_rates(
    model: TokenSequence,
    speakers: list[TokenSequence],
    group_label: str,
    mode: str = "mean",
) -> SubstitutionTable:
    """Phone substitution table for a speaker group against model speech.

    mode="mean" averages per-speaker rates over the group; mode="pooled"
    divides pooled pair counts by the model phone count.
    """
    return substitution_rates_multi(
        [model], [[s] for s in speakers], group_label, mode=mode
    )


def substitution_rates_multi(
    models: list[TokenSequence],
    speakers: list[list[TokenSequence]],
    group_label: str,
    mode: str = "mean",
) -> SubstitutionTable:
    """Like substitution_rates, but each speaker reads every model utterance;
    pair counts pool across utterances within a speaker."""
    if not models or not any(m.tokens for m in models):
        raise ValidationError("model speech is empty")
    if not speakers:
        raise ValidationError("speaker group is empty")
    if mode not in ("mean", "pooled"):
        raise ValidationError(f"unknown SR mode {mode!r}")
    by_utt = {m.utt_id: m for m in models}
    model_counts: dict[str, int] = {}
    for m in models:
        for t in m.tokens:
            model_counts[t] = model_counts.get(t, 0) + 1
    acc: dict[tuple[str, str], float] = {}
    for utts in speakers:
        counts: dict[tuple[str, str], int] = {}
        for hyp in utts:
            if hyp.utt_id not in by_utt:
                raise ValidationError(f"hypothesis utt_id {hyp.utt_id!r} not in model speech")
            for key, c in _pair_counts(by_utt[hyp.utt_id], hyp).items():
                counts[key] = counts.get(key, 0) + c
        for (p_o, p_s), c in counts.items():
            acc[(p_o, p_s)] = acc.get((p_o, p_s), 0.0) + c / model_counts[p_o]
    if mode == "mean":
        rates = {k: v / len(speakers) for k, v in acc.items()}
    else:
        rates = dict(acc)
    return SubstitutionTable(group_label, model_counts, rates, n_speakers=len(speakers))


def bin_substitutions(
    real_t: SubstitutionTable,
    synth_t: SubstitutionTable,
    edges=DEFAULT_BIN_EDGES,
) -> list[dict]:
    """Group phone pairs by the real table's SR into descending ranges and
    report, per range, the pair count and the mean synth SR.

    Deletion pairs are excluded; a pair observed in either table counts.
    """
    if real_t.model_counts != synth_t.model_counts:
        raise ValidationError("tables were built against different model speech")
    edges = sorted(edges, reverse=True)
    # descending ranges: [e0, inf), [e1, e0), ..., [0, e_last)
    bounds = [(edges[0], math.inf)]
    bounds.extend((lo, hi) for hi, lo in zip(edges, edges[1:]))
    bounds.append((0.0, edges[-1]))
    pairs = sorted(set(real_t.substitution_pairs()) | set(synth_t.substitution_pairs()))
    bins = []
    for lo, hi in bounds:
        members = [p for p in pairs if lo <= real_t.rate(*p) < hi]
        synth_vals = [synth_t.rate(*p) for p in members]
        bins.append(
            {
                "range_lo": lo,
                "range_hi": hi,
                "pair_count": len(members),
                "mean_synth_sr": float(np.mean(synth_vals)) if synth_vals else None,
            }
        )
    return bins


def phone_substitution_report(
    tables: dict[str, SubstitutionTable], target_phone: str, candidates: list[str]
) -> list[dict]:
    """Per table, SR(candidate | target) for each candidate phone, flagging
    the maximum (no flag when every candidate rate is zero)."""
    rows = []
    for label, table in tables.items():
        if table.model_counts.get(target_phone, 0) <= 0:
            raise ValidationError(
                f"{label}: target phone {target_phone!r} absent from model speech"
            )
        rates = {c: table.rate(target_phone, c) for c in candidates}
        best = max(rates.values()) if rates else 0.0
        for c in candidates:
            rows.append(
                {
                    "group": label,
                    "target": target_phone,
                    "candidate": c,
                    "sr": rates[c],
                    "max": best > 0.0 and rates[c] == best,
                }
            )
    return rows


# ---------------------------------------------------------------------------
# 2-D embedding of PD vectors

def pca_embed(vectors: list[PDVector]) -> np.ndarray:
    """Mean-centered projection onto the top-2 principal components.

    Restricted to phonemes defined in every vector; component signs are
    fixed so each component's largest-magnitude loading is positive.
    """
    if len(vectors) < 3:
        raise ValidationError("need at least 3 PD vectors to embed")
    labels = vectors[0].phoneme_labels
    shared = vectors[0].defined.copy()
    for v in vectors[1:]:
        if v.phoneme_labels != labels:
            raise ValidationError("phoneme label mismatch across PD vectors")
        shared &= v.defined
    if shared.sum() < 2:
        raise ValidationError("fewer than 2 phonemes defined in every vector")
    x = np.stack([v.values[shared] for v in vectors]).astype(np.float64)
    x -= x.mean(axis=0)
    cov = x.T @ x / max(1, x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if evals[0] <= 1e-12:
        raise ValidationError("PD vectors have rank < 1; nothing to embed")
    comps = evecs[:, :2]
    for c in range(comps.shape[1]):
        lead = np.argmax(np.abs(comps[:, c]))
        if comps[lead, c] < 0:
            comps[:, c] = -comps[:, c]
    return x @ comps


# ---------------------------------------------------------------------------
# CSV exports (UTF-8, mandatory header row)

def write_pd_csv(vectors: list[PDVector], supports: dict[str, np.ndarray], path) -> None:
    """PD file: speaker_id, phoneme, pd, support. Undefined phonemes get an
    empty pd field."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["speaker_id", "phoneme", "pd", "support"])
        for v in vectors:
            support = supports.get(v.speaker_id)
            for i, lab in enumerate(v.phoneme_labels):
                pd = repr(float(v.values[i])) if v.defined[i] else ""
                sup = int(support[i]) if support is not None else ""
                w.writerow([v.speaker_id, lab, pd, sup])


def read_pd_csv(path) -> list[PDVector]:
    per_speaker: dict[str, list[tuple[str, str]]] = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            per_speaker.setdefault(row["speaker_id"], []).append(
                (row["phoneme"], row["pd"])
            )
    out = []
    for speaker, rows in per_speaker.items():
        labels = [lab for lab, _ in rows]
        values = np.array([float(v) if v else 0.0 for _, v in rows])
        defined = np.array([bool(v) for _, v in rows])
        out.append(PDVector(speaker, labels, values, defined))
    return out


def write_na_csv(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["group_a", "group_b", "na", "n_pairs"])
        for r in rows:
            w.writerow([r["group_a"], r["group_b"], repr(float(r["na"])), r["n_pairs"]])


def write_sr_csv(table: SubstitutionTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["group", "p_o", "p_s", "sr", "model_count"])
        for (p_o, p_s) in sorted(table.rates):
            w.writerow(
                [
                    table.group_label,
                    p_o,
                    p_s,
                    repr(float(table.rates[(p_o, p_s)])),
                    table.model_counts[p_o],
                ]
            )


def read_sr_csv(path) -> SubstitutionTable:
    rates: dict[tuple[str, str], float] = {}
    model_counts: dict[str, int] = {}
    label = ""
    with open(path, "r", encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            label = row["group"]
            rates[(row["p_o"], row["p_s"])] = float(row["sr"])
            model_counts[row["p_o"]] = int(row["model_count"])
    return SubstitutionTable(label, model_counts, rates)


def write_bins_csv(bins: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["range_lo", "range_hi", "pair_count", "mean_synth_sr"])
        for b in bins:
            hi = "" if math.isinf(b["range_hi"]) else repr(b["range_hi"])
            mean = "" if b["mean_synth_sr"] is None else repr(b["mean_synth_sr"])
            w.writerow([repr(b["range_lo"]), hi, b["pair_count"], mean])


def write_embedding_csv(vectors, coords, groups: dict[str, str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["speaker_id", "group", "x", "y"])
        for v, (x, y) in zip(vectors, coords):
            w.writerow([v.speaker_id, groups.get(v.speaker_id, ""), repr(float(x)), repr(float(y))])
