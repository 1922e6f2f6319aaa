"""Top-level acceptance checks for the whole toolkit.

Each test exercises one end-to-end guarantee at its stated tolerance and
prints a single PASS/FAIL line, so the suite output doubles as a release
checklist. Heavier fixtures (the full experiment grid) are shared across
tests at module scope.
"""

import json
import time

import numpy as np
import pytest

from naive import edit_distance_oracle, naive_lloyd
from unitaccent import cli
from unitaccent.featio import (
    FeatureMatrix,
    PosteriorSet,
    TokenSequence,
    read_features,
    read_token_sequences,
    write_features,
    write_token_sequences,
)
from unitaccent.metrics import (
    PDVector,
    align,
    kl_divergence,
    naturalness,
    substitution_rates,
)
from unitaccent.quantizer import (
    Codebook,
    KMeansConfig,
    inertia,
    kmeans_pp_init,
    quantize,
    read_codebook,
    train_codebook,
    write_codebook,
)
from unitaccent.reconstructor import decode_centroid
from unitaccent.synthlang import default_language_pair, run_accent_experiment
from unitaccent.unitops import (
    UnitSequence,
    dedup,
    expand,
    from_chars,
    read_unit_sequences,
    to_chars,
    write_unit_sequences,
)

DELETION = "∅"


def _report(name, ok):
    print(f"{'PASS' if ok else 'FAIL'}: {name}")
    assert ok, name


@pytest.fixture(scope="module")
def default_report():
    """The default experiment grid (K in {8, 32, 128}, 5 seeds), timed."""
    lang_a, lang_b = default_language_pair()
    start = time.perf_counter()
    report = run_accent_experiment(lang_a, lang_b, ks=[8, 32, 128], workers=4)
    return report, time.perf_counter() - start


def test_kmeans_matches_naive_oracle():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    ok = True
    instances = 0
    trial = 0
    while instances < 50 and trial < 80:
        trial += 1
        n = int(rng.integers(10, 201))
        dims = int(rng.integers(1, 4))
        k = int(rng.integers(1, min(9, n + 1)))
        scale = rng.uniform(0.3, 5.0)
        frames = (rng.standard_normal((n, dims)) * scale).astype(np.float32)
        cfg = KMeansConfig(k=k, seed=trial, max_iters=60, tol=1e-9)
        try:
            cb = train_codebook([FeatureMatrix("u", frames)], cfg)
        except Exception:
            # degenerate draws (duplicate centroids) don't count as instances
            continue
        instances += 1
        init = kmeans_pp_init(frames, k, np.random.default_rng(trial))
        expected = naive_lloyd(frames, init, cfg.max_iters, cfg.tol)
        got = cb.meta["final_inertia"]
        rel = abs(got - expected) / max(1e-30, abs(expected)) if expected else abs(got)
        if rel > 1e-6:
            ok = False
            break
    elapsed = time.perf_counter() - start
    _report(f"kmeans-vs-naive-lloyd ({instances} instances, {elapsed:.2f}s)",
            ok and instances >= 50 and elapsed < 10.0)


def test_alignment_matches_oracle():
    rng = np.random.default_rng(7)
    alphabet = ["a", "b", "c", "d"]
    ok = True
    for _ in range(1000):
        ref = [alphabet[i] for i in rng.integers(0, 4, int(rng.integers(0, 13)))]
        hyp = [alphabet[i] for i in rng.integers(0, 4, int(rng.integers(0, 13)))]
        a = align(TokenSequence("r", "phone", tuple(ref)),
                  TokenSequence("h", "phone", tuple(hyp)))
        if a.distance != edit_distance_oracle(ref, hyp):
            ok = False
            break
    _report("alignment-vs-dp-oracle (1000 pairs)", ok)


def test_analytic_values():
    kl = kl_divergence([0.5, 0.5], [0.25, 0.75])
    ok_kl = abs(kl - 0.1438) <= 1e-3

    ramp = np.linspace(0.0, 1.0, 10)
    labels = [f"p{i}" for i in range(10)]
    defined = np.ones(10, dtype=bool)
    na = naturalness(
        [PDVector("a", labels, ramp, defined)],
        [PDVector("b", labels, ramp[::-1].copy(), defined)],
    )
    ok_na = abs(na - (-1.0)) <= 1e-9

    model = TokenSequence("u", "phone", ("th", "s", "t"))
    hyp = TokenSequence("u", "phone", ("s", "s", "t"))
    table = substitution_rates(model, [hyp], "g")
    ok_sr = table.rate("th", "s") == 1.0

    _report(f"analytic kl={kl:.4f} na={na:+.2f} sr={table.rate('th', 's')}",
            ok_kl and ok_na and ok_sr)


def test_per_decreases_with_codebook_size(default_report):
    report, elapsed = default_report
    means = [report.aggregates[str(k)]["per_mean"] for k in (8, 32, 128)]
    strictly_decreasing = all(b < a for a, b in zip(means, means[1:]))
    _report(
        f"per-trend K=8,32,128 means={[round(m, 4) for m in means]} ({elapsed:.1f}s)",
        strictly_decreasing and elapsed < 300.0,
    )


def test_persistent_substitution(default_report):
    report, _ = default_report
    cells = {(c.k, c.seed): c for c in report.cells}
    votes = 0
    for seed in report.seeds:
        th8 = cells[(8, seed)].sr.get("th", {})
        th128 = cells[(128, seed)].sr.get("th", {})
        subs8 = {p: r for p, r in th8.items() if p != DELETION}
        if not subs8:
            continue
        dominant = max(subs8, key=subs8.get)
        persists = th128.get(dominant, 0.0) >= 0.5 * subs8[dominant]

        other8 = {
            (po, ps): r
            for po, inner in cells[(8, seed)].sr.items()
            for ps, r in inner.items()
            if po != "th" and ps != DELETION
        }
        if not other8:
            continue
        sr128 = cells[(128, seed)].sr
        rates128 = [sr128.get(po, {}).get(ps, 0.0) for po, ps in other8]
        recovered = float(np.mean(rates128)) <= 0.5 * float(np.mean(list(other8.values())))
        votes += int(persists and recovered)
    ok = votes > len(report.seeds) / 2
    _report(f"persistent-substitution ({votes}/{len(report.seeds)} seeds)", ok)


def test_mse_identity_and_idempotence():
    rng = np.random.default_rng(55)
    ok = True
    for trial in range(10):
        feats = [
            FeatureMatrix(f"u{i}", rng.standard_normal(
                (int(rng.integers(50, 200)), 4)).astype(np.float32))
            for i in range(3)
        ]
        cb = train_codebook(feats, KMeansConfig(k=int(rng.integers(2, 10)), seed=trial))
        sq, n = 0.0, 0
        for m in feats:
            rec = decode_centroid(quantize(m, cb), cb)
            diff = m.data.astype(np.float64) - rec.data.astype(np.float64)
            sq += float((diff * diff).sum())
            n += m.rows
            again = decode_centroid(quantize(rec, cb), cb)
            if again != rec:  # bit-exact fixed point
                ok = False
        mse = sq / n
        ref = inertia(feats, cb)
        if abs(mse - ref) > 1e-6 * max(1.0, abs(ref)):
            ok = False
    _report("mse-equals-inertia and quantize∘decode idempotence", ok)


def test_roundtrip_laws(tmp_path):
    rng = np.random.default_rng(99)
    ok = True

    path = tmp_path / "m.fuf1"
    for i in range(1000):
        m = FeatureMatrix(
            f"u{i}",
            rng.standard_normal((int(rng.integers(0, 20)), int(rng.integers(1, 8))))
            .astype(np.float32),
            frame_hop_ms=float(rng.uniform(5, 40)) if rng.random() < 0.5 else None,
        )
        write_features(m, path)
        ok &= read_features(path) == m

    path = tmp_path / "cb.fuc1"
    for i in range(1000):
        k, d = int(rng.integers(1, 12)), int(rng.integers(1, 6))
        cb = Codebook(rng.standard_normal((k, d)).astype(np.float32),
                      {"seed": i, "final_inertia": float(rng.random())})
        write_codebook(cb, path)
        ok &= read_codebook(path) == cb

    path = tmp_path / "t.jsonl"
    for i in range(0, 1000, 50):
        seqs = [
            TokenSequence(
                f"u{i + j}", "phone",
                tuple(f"p{t}" for t in rng.integers(0, 9, int(rng.integers(0, 15)))),
            )
            for j in range(50)
        ]
        write_token_sequences(seqs, path)
        ok &= read_token_sequences(path) == seqs

    upath = tmp_path / "u.jsonl"
    for i in range(1000):
        k = int(rng.integers(1, 2000))
        units = tuple(int(x) for x in rng.integers(0, k, int(rng.integers(0, 40))))
        s = UnitSequence(f"u{i}", units, k)
        ok &= expand(dedup(s)) == s
        ok &= from_chars(to_chars(s), k, s.utt_id) == s
        if i % 100 == 0:
            write_unit_sequences([s, dedup(s)], upath)
            ok &= read_unit_sequences(upath) == [s, dedup(s)]

    _report("roundtrip laws (features/codebooks/tokens/units, 1000 cases each)", ok)


def test_na_scale_invariance():
    rng = np.random.default_rng(3)
    labels = [f"p{i}" for i in range(8)]
    defined = np.ones(8, dtype=bool)

    def group(tag, n):
        return [
            PDVector(f"{tag}{i}", labels, rng.random(8) + 0.01, defined.copy())
            for i in range(n)
        ]

    a, b = group("a", 3), group("b", 4)
    base = naturalness(a, b)
    worst = 0.0
    for scale in (1e-6, 0.5, 3.0, 1e6):
        a2 = [PDVector(v.speaker_id, v.phoneme_labels, v.values * scale, v.defined) for v in a]
        b2 = [PDVector(v.speaker_id, v.phoneme_labels, v.values * scale, v.defined) for v in b]
        worst = max(worst, abs(naturalness(a2, b2) - base))
    _report(f"na-scale-invariance (max drift {worst:.2e})", worst < 1e-9)


def test_experiment_worker_invariance(tmp_path):
    blobs = []
    for tag, workers in (("w1", "1"), ("w3", "3")):
        out = tmp_path / f"r-{tag}.json"
        code = cli.main([
            "experiment", "--k", "4,8", "--seed-list", "0,1",
            "--train-utts", "10", "--eval-utts", "5",
            "--workers", workers, "--out", str(out),
        ])
        assert code == 0
        blobs.append(out.read_bytes())
    _report("experiment byte-identical across --workers", blobs[0] == blobs[1])
