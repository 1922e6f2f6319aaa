"""Command-line entry point.

Every subcommand writes a JSON run-record beside its primary output
(arguments, seeds, input digests, tool version) so any result can be
reproduced byte-for-byte from the record. All randomness flows from
explicit --seed flags. Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import UnitAccentError, ValidationError
from . import featio, metrics, quantizer, reconstructor, synthlang, unitops


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; our contract reserves 2 for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_run_record(out_path, args: argparse.Namespace, inputs) -> None:
    rec = {
        "tool": "unitaccent",
        "version": __version__,
        "argv": sys.argv[1:],
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "inputs": {str(p): _digest(p) for p in inputs},
    }
    Path(str(out_path) + ".run.json").write_text(
        json.dumps(rec, ensure_ascii=False, sort_keys=True, indent=2), encoding="utf-8"
    )


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("UNITACCENT_WORKERS", "1")))
    except ValueError:
        return 1


def _load_feature_manifest(path):
    manifest = featio.load_manifest(path)
    return [
        featio.read_features(featio.resolve_entry_path(path, e.path)) for e in manifest
    ], manifest


# ---------------------------------------------------------------------------
# subcommands

def cmd_train_kmeans(args) -> int:
    feats, _ = _load_feature_manifest(args.features)
    frames = quantizer.stack_frames(feats)
    if args.max_frames and frames.shape[0] > args.max_frames:
        frames = _reservoir(frames, args.max_frames, args.seed)
    cfg = quantizer.KMeansConfig(
        k=args.k, seed=args.seed, max_iters=args.max_iters,
        batch_size=args.batch, tol=args.tol,
    )
    cb = quantizer.train_codebook([frames], cfg, workers=args.workers)
    quantizer.write_codebook(cb, args.out)
    _write_run_record(args.out, args, [args.features])
    print(f"K={cb.K} dims={cb.dims} inertia={cb.meta['final_inertia']:.6f} "
          f"iters={cb.meta['iterations_run']}")
    return 0


def _reservoir(frames: np.ndarray, size: int, seed: int) -> np.ndarray:
    """Seeded reservoir subsample of the frame stream (algorithm R)."""
    rng = np.random.default_rng(seed)
    reservoir = frames[:size].copy()
    for g in range(size, frames.shape[0]):
        j = int(rng.integers(0, g + 1))
        if j < size:
            reservoir[j] = frames[g]
    return reservoir


def cmd_quantize(args) -> int:
    cb = quantizer.read_codebook(args.codebook)
    feats, _ = _load_feature_manifest(args.features)
    seqs = []
    for m in feats:
        s = quantizer.quantize(m, cb, workers=args.workers)
        seqs.append(unitops.dedup(s) if args.dedup else s)
    unitops.write_unit_sequences(seqs, args.out)
    _write_run_record(args.out, args, [args.codebook, args.features])
    return 0


def cmd_reconstruct(args) -> int:
    cb = quantizer.read_codebook(args.codebook)
    seqs = unitops.read_unit_sequences(args.units)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for s in seqs:
        if isinstance(s, unitops.DedupUnitSequence):
            s = unitops.expand(s)
        m = reconstructor.decode_centroid(s, cb)
        featio.write_features(m, out_dir / f"{s.utt_id}.fuf1")
    _write_run_record(out_dir / "reconstruct", args, [args.codebook, args.units])
    return 0


def _paired_sequences(ref_path, hyp_path, level):
    refs = {s.utt_id: s for s in featio.read_token_sequences(ref_path)}
    hyps = {s.utt_id: s for s in featio.read_token_sequences(hyp_path)}
    missing = sorted(set(refs) ^ set(hyps))
    if missing:
        raise ValidationError(f"utt_ids not present in both files: {missing}")
    pairs = []
    for utt_id in refs:
        r, h = refs[utt_id], hyps[utt_id]
        if r.level != level or h.level != level:
            raise ValidationError(f"{utt_id}: expected level {level!r}")
        pairs.append((r, h))
    return pairs


def cmd_eval_er(args) -> int:
    pairs = _paired_sequences(args.ref, args.hyp, args.level)
    rate = metrics.corpus_error_rate(pairs)
    print(rate)
    if args.out:
        Path(args.out).write_text(f"level,error_rate\n{args.level},{rate!r}\n", encoding="utf-8")
        _write_run_record(args.out, args, [args.ref, args.hyp])
    return 0


def _apps_by_speaker(manifest_path):
    manifest = featio.load_manifest(manifest_path)
    per_speaker: dict[str, list] = {}
    groups: dict[str, str] = {}
    for e in manifest:
        ps = featio.read_posteriors(featio.resolve_entry_path(manifest_path, e.path))
        per_speaker.setdefault(e.speaker_id, []).append(ps)
        groups[e.speaker_id] = e.group
    apps = {
        spk: metrics.average_posteriors(sets, spk) for spk, sets in per_speaker.items()
    }
    return apps, groups


def cmd_eval_pd(args) -> int:
    apps, groups = _apps_by_speaker(args.manifest)
    natives = [a for a in apps.values() if groups[a.speaker_id] == args.native_group]
    if not natives:
        raise ValidationError(f"no speakers in native group {args.native_group!r}")
    vectors = []
    supports = {}
    for spk in sorted(apps):
        refs = [n for n in natives if n.speaker_id != spk]
        if not refs:
            raise ValidationError(f"{spk}: no native reference speakers besides itself")
        vectors.append(metrics.pronunciation_deviation(apps[spk], refs))
        supports[spk] = apps[spk].support
    metrics.write_pd_csv(vectors, supports, args.out)
    _write_run_record(args.out, args, [args.manifest])
    return 0


def _grouped_pd(pd_path, manifest_path):
    vectors = metrics.read_pd_csv(pd_path)
    manifest = featio.load_manifest(manifest_path)
    groups = {e.speaker_id: e.group for e in manifest}
    return vectors, groups


def cmd_eval_na(args) -> int:
    vectors, groups = _grouped_pd(args.pd, args.manifest)
    method = "spearman" if args.spearman else "pearson"
    va = [v for v in vectors if groups.get(v.speaker_id) == args.group_a]
    vb = [v for v in vectors if groups.get(v.speaker_id) == args.group_b]
    corrs = metrics.pairwise_correlations(va, vb, method)
    na = float(np.mean(corrs))
    print(na)
    metrics.write_na_csv(
        [{"group_a": args.group_a, "group_b": args.group_b, "na": na, "n_pairs": len(corrs)}],
        args.out,
    )
    _write_run_record(args.out, args, [args.pd, args.manifest])
    return 0


def cmd_eval_sr(args) -> int:
    models = featio.read_token_sequences(args.model)
    speakers = [featio.read_token_sequences(p) for p in args.hyp]
    mode = "pooled" if args.pooled else "mean"
    table = metrics.substitution_rates_multi(models, speakers, args.group_label, mode=mode)
    metrics.write_sr_csv(table, args.out)
    _write_run_record(args.out, args, [args.model, *args.hyp])
    return 0


def cmd_bin_sr(args) -> int:
    real_t = metrics.read_sr_csv(args.real)
    synth_t = metrics.read_sr_csv(args.synth)
    edges = tuple(float(x) for x in args.edges.split(","))
    bins = metrics.bin_substitutions(real_t, synth_t, edges)
    metrics.write_bins_csv(bins, args.out)
    _write_run_record(args.out, args, [args.real, args.synth])
    return 0


def cmd_phone_report(args) -> int:
    tables = {}
    for spec in args.table:
        label, _, path = spec.partition("=")
        if not path:
            raise ValidationError(f"--table wants LABEL=PATH, got {spec!r}")
        tables[label] = metrics.read_sr_csv(path)
    rows = metrics.phone_substitution_report(
        tables, args.target, args.candidates.split(",")
    )
    with open(args.out, "w", encoding="utf-8", newline="") as f:
        f.write("group,target,candidate,sr,max\n")
        for r in rows:
            f.write(f"{r['group']},{r['target']},{r['candidate']},{r['sr']!r},{int(r['max'])}\n")
    _write_run_record(args.out, args, [s.partition("=")[2] for s in args.table])
    return 0


def cmd_embed(args) -> int:
    vectors, groups = _grouped_pd(args.pd, args.manifest)
    coords = metrics.pca_embed(vectors)
    metrics.write_embedding_csv(vectors, coords, groups, args.out)
    _write_run_record(args.out, args, [args.pd, args.manifest])
    return 0


def cmd_simulate(args) -> int:
    lang = synthlang.load_language(args.spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    token_seqs = []
    for i in range(args.utts):
        seed_i = synthlang._derived_seed(args.seed, 0, i)
        m, tokens = synthlang.sample_utterance(lang, args.n_phones, seed_i, f"{lang.name}-{i:04d}")
        rel = f"{m.utt_id}.fuf1"
        featio.write_features(m, out_dir / rel)
        token_seqs.append(tokens)
        entries.append(
            featio.ManifestEntry(
                utt_id=m.utt_id, speaker_id=lang.name, language=lang.name,
                group=lang.name, path=rel,
            )
        )
    featio.write_token_sequences(token_seqs, out_dir / "phones.jsonl")
    featio.save_manifest(featio.Manifest(tuple(entries)), out_dir / "manifest.json")
    _write_run_record(out_dir / "manifest.json", args, [args.spec])
    return 0


def cmd_experiment(args) -> int:
    if bool(args.lang_a) != bool(args.lang_b):
        raise ValidationError("--lang-a and --lang-b must be given together")
    if args.lang_a:
        lang_a = synthlang.load_language(args.lang_a)
        lang_b = synthlang.load_language(args.lang_b)
    else:
        lang_a, lang_b = synthlang.default_language_pair()
    ks = [int(x) for x in args.k.split(",")]
    seeds = list(range(args.seeds)) if args.seed_list is None else [
        int(x) for x in args.seed_list.split(",")
    ]
    report = synthlang.run_accent_experiment(
        lang_a, lang_b, ks,
        n_train_utts=args.train_utts, n_eval_utts=args.eval_utts,
        seeds=seeds, workers=args.workers,
    )
    Path(args.out).write_text(report.to_json(), encoding="utf-8")
    inputs = [p for p in (args.lang_a, args.lang_b) if p]
    _write_run_record(args.out, args, inputs)
    for k in ks:
        agg = report.aggregates[str(k)]
        print(f"K={k} PER={agg['per_mean']:.4f}±{agg['per_std']:.4f} MSE={agg['mse_mean']:.4f}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="unitaccent", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        sp = sub.add_parser(name, **kw)
        sp.set_defaults(func=fn)
        return sp

    sp = add("train-kmeans", cmd_train_kmeans, help="learn a unit codebook")
    sp.add_argument("--features", required=True, help="manifest of FUF1 files")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--max-iters", type=int, default=100)
    sp.add_argument("--batch", type=int, default=0, help="0 = full-batch Lloyd's")
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--max-frames", type=int, default=0, help="0 = all frames")
    sp.add_argument("--workers", type=int, default=_default_workers())
    sp.add_argument("--out", required=True)

    sp = add("quantize", cmd_quantize, help="assign units to feature frames")
    sp.add_argument("--codebook", required=True)
    sp.add_argument("--features", required=True, help="manifest of FUF1 files")
    sp.add_argument("--dedup", action="store_true")
    sp.add_argument("--workers", type=int, default=_default_workers())
    sp.add_argument("--out", required=True)

    sp = add("reconstruct", cmd_reconstruct, help="centroid-decode unit sequences")
    sp.add_argument("--codebook", required=True)
    sp.add_argument("--units", required=True)
    sp.add_argument("--out", required=True, help="output directory for FUF1 files")

    sp = add("eval-er", cmd_eval_er, help="word/phone error rate")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--hyp", required=True)
    sp.add_argument("--level", choices=featio.TOKEN_LEVELS, required=True)
    sp.add_argument("--out")

    sp = add("eval-pd", cmd_eval_pd, help="pronunciation deviation per speaker")
    sp.add_argument("--manifest", required=True, help="manifest of posterior files")
    sp.add_argument("--native-group", required=True)
    sp.add_argument("--out", required=True)

    sp = add("eval-na", cmd_eval_na, help="naturalness of accent between groups")
    sp.add_argument("--pd", required=True, help="PD CSV from eval-pd")
    sp.add_argument("--manifest", required=True, help="manifest giving speaker groups")
    sp.add_argument("--group-a", required=True)
    sp.add_argument("--group-b", required=True)
    sp.add_argument("--spearman", action="store_true")
    sp.add_argument("--out", required=True)

    sp = add("eval-sr", cmd_eval_sr, help="phone substitution rates against model speech")
    sp.add_argument("--model", required=True, help="model-speech phone JSONL")
    sp.add_argument("--hyp", action="append", required=True,
                    help="per-speaker phone JSONL (repeatable)")
    sp.add_argument("--group-label", required=True)
    sp.add_argument("--pooled", action="store_true",
                    help="pooled counts instead of per-speaker averaging")
    sp.add_argument("--out", required=True)

    sp = add("bin-sr", cmd_bin_sr, help="bin synth SRs by real SR ranges")
    sp.add_argument("--real", required=True)
    sp.add_argument("--synth", required=True)
    sp.add_argument("--edges", default="0.1,0.05,0.02,0.01")
    sp.add_argument("--out", required=True)

    sp = add("phone-report", cmd_phone_report, help="SR of candidate phones for one target")
    sp.add_argument("--table", action="append", required=True, help="LABEL=SR_CSV (repeatable)")
    sp.add_argument("--target", required=True)
    sp.add_argument("--candidates", required=True, help="comma-separated phones")
    sp.add_argument("--out", required=True)

    sp = add("embed", cmd_embed, help="2-D PCA embedding of PD vectors")
    sp.add_argument("--pd", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)

    sp = add("simulate", cmd_simulate, help="sample utterances from a synthetic language")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--utts", type=int, required=True)
    sp.add_argument("--n-phones", type=int, default=18)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out-dir", required=True)

    sp = add("experiment", cmd_experiment, help="full accentuation experiment grid")
    sp.add_argument("--lang-a", help="language spec JSON (default: bundled pair)")
    sp.add_argument("--lang-b")
    sp.add_argument("--k", default="8,32,128")
    sp.add_argument("--seeds", type=int, default=5, help="number of seeds (0..n-1)")
    sp.add_argument("--seed-list", help="explicit comma-separated seeds")
    sp.add_argument("--train-utts", type=int, default=200)
    sp.add_argument("--eval-utts", type=int, default=50)
    sp.add_argument("--workers", type=int, default=_default_workers())
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return args.func(args)
    except UnitAccentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
