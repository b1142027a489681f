"""Command-line workbench: synth, enroll, search, eval and bench.

Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 internal error. Independent query files fan out across threads; set
PATCHSEARCH_WORKERS to override the worker count (default 1). Outputs
are byte-reproducible for a fixed seed at any worker count.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .core import DegenerateInputError
from .enrollment import enroll
from .evaluation import (
    EvalRecord,
    MetricsReport,
    benchmark,
    collect_class_scores,
    compute_acc,
    compute_cprec,
    compute_miou,
)
from .fileio import (
    DataError,
    load_feature_file,
    load_manifest,
    load_results,
    load_store,
    save_report,
    save_results,
    save_store,
)
from .search import (
    SearchConfig,
    match_patches,
    query_prepass,
    refine_mask,
    score_candidates,
    search_query,
    select_best,
)
from .synth import SynthSpec, generate_dataset

WORKERS_ENV = "PATCHSEARCH_WORKERS"

log = logging.getLogger("patchsearch")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 instead of argparse's 2
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="patchsearch", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--spec", required=True, help="JSON spec file")
    sp.add_argument("--out", required=True, help="output dataset directory")

    ep = sub.add_parser("enroll", help="enroll every class in a manifest")
    ep.add_argument("--manifest", required=True)
    ep.add_argument("--out", required=True, help="output model store")
    ep.add_argument("--k-s", type=int, default=5, help="support clusters (default 5)")
    ep.add_argument("--seed", type=int, default=0)

    qp = sub.add_parser("search", help="search feature files for enrolled classes")
    qp.add_argument("--store", required=True)
    qp.add_argument("--features", required=True, nargs="+", help="query feature files")
    qp.add_argument("--out", required=True, help="output results file")
    qp.add_argument("--k-q", type=int, default=30, help="query clusters (default 30)")
    qp.add_argument("--alpha-co", type=float, default=200.0, help="coordinate scaling")
    qp.add_argument("--refine", action="store_true", help="run the cluster refinement pass")
    qp.add_argument("--class-threshold", type=float, default=None)
    qp.add_argument("--seed", type=int, default=0)

    vp = sub.add_parser("eval", help="score search results against a manifest")
    vp.add_argument("--manifest", required=True)
    vp.add_argument("--results", required=True)
    vp.add_argument("--mode", choices=["mask", "bbox"], required=True)
    vp.add_argument("--out", required=True, help="output report file")

    bp = sub.add_parser("bench", help="time the per-query pipeline stages")
    bp.add_argument("--manifest", required=True)
    bp.add_argument("--store", required=True)
    bp.add_argument("--iters", type=int, default=5)
    bp.add_argument("--warmup", type=int, default=1)
    bp.add_argument("--k-q", type=int, default=30)
    bp.add_argument("--alpha-co", type=float, default=200.0)
    bp.add_argument("--seed", type=int, default=0)
    return p


def _workers() -> int:
    value = os.environ.get(WORKERS_ENV, "1")
    try:
        workers = int(value)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {value!r}")
    if workers < 1:
        raise UsageError(f"{WORKERS_ENV} must be >= 1, got {workers}")
    return workers


def _cmd_synth(args) -> int:
    spec = SynthSpec.from_json(args.spec)
    manifest = generate_dataset(spec, args.out)
    print(f"wrote {manifest}")
    return 0


def _cmd_enroll(args) -> int:
    manifest = load_manifest(args.manifest)
    models = []
    for support in sorted(manifest.supports, key=lambda s: s.class_index):
        fmap = load_feature_file(support.feature_file)
        if fmap.n_patches != manifest.n_patches or fmap.dim != manifest.dim:
            raise DataError(
                f"{support.feature_file}: grid {fmap.n_patches}/dim {fmap.dim} does not "
                f"match manifest {manifest.n_patches}/{manifest.dim}"
            )
        models.append(enroll(fmap, support.prompt, k_s=args.k_s, seed=args.seed))
    save_store(
        args.out,
        models,
        {
            "k_s": args.k_s,
            "seed": args.seed,
            "n_patches": manifest.n_patches,
            "dim": manifest.dim,
        },
    )
    print(f"enrolled {len(models)} classes -> {args.out}")
    return 0


def _cmd_search(args) -> int:
    models, header = load_store(args.store)
    n_patches = int(header["n_patches"])
    dim = int(header["dim"])
    config = SearchConfig(
        k_q=args.k_q,
        alpha_co=args.alpha_co,
        refine=args.refine,
        seed=args.seed,
        class_threshold=args.class_threshold,
    )

    stems = [Path(p).stem for p in args.features]
    if len(set(stems)) != len(stems):
        raise UsageError("query feature files have colliding stems (stems become query ids)")

    def run_one(path: str):
        fmap = load_feature_file(path)
        if fmap.n_patches != n_patches or fmap.dim != dim:
            raise DataError(
                f"{path}: grid {fmap.n_patches}/dim {fmap.dim} does not match "
                f"store {n_patches}/{dim}"
            )
        return Path(path).stem, search_query(fmap, models, config)

    workers = _workers()
    if workers == 1:
        rows = [run_one(path) for path in args.features]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_one, args.features))

    save_results(
        args.out,
        rows,
        n_patches=n_patches,
        dim=dim,
        classes={m.class_index: m.label for m in models},
        config={
            "k_q": args.k_q,
            "alpha_co": args.alpha_co,
            "refine": args.refine,
            "class_threshold": args.class_threshold,
            "seed": args.seed,
        },
    )
    print(f"searched {len(rows)} queries -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    header, rows = load_results(args.results)
    if int(header["n_patches"]) != manifest.n_patches or int(header["dim"]) != manifest.dim:
        raise DataError(
            f"results grid {header['n_patches']}/dim {header['dim']} does not match "
            f"manifest {manifest.n_patches}/{manifest.dim}"
        )
    result_classes = {c["class_index"] for c in header.get("classes", [])}
    if result_classes != set(manifest.classes):
        raise DataError("results were produced for a different class set than the manifest")

    all_results = dict(rows)
    records = []
    for query in manifest.queries:
        if query.query_id not in all_results:
            raise DataError(f"results file has no entry for query {query.query_id!r}")
        by_class = {r.class_index: r for r in all_results[query.query_id]}
        for truth in query.truths:
            records.append(
                EvalRecord(
                    query_id=query.query_id,
                    class_index=truth.class_index,
                    gt_mask=truth.gt_mask,
                    predicted=by_class.get(truth.class_index),
                )
            )
    if not records:
        raise DataError("manifest has no query truths to evaluate")

    miou = compute_miou(records, mode=args.mode)
    acc = compute_acc(records, all_results)
    class_scores = collect_class_scores(records, all_results)
    cprec, per_class_ap = compute_cprec(class_scores)
    evaluated = [c for c in sorted(class_scores) if any(p for _, p in class_scores[c])]
    report = MetricsReport(
        miou=miou,
        acc=acc,
        cprec=cprec,
        per_class_ap=per_class_ap,
        n_records=len(records),
    )
    save_report(args.out, report, mode=args.mode, classes_evaluated=evaluated)
    print(
        f"mIoU {miou:.4f}  ACC {acc:.4f}  cPREC {cprec:.4f}  "
        f"({len(records)} records) -> {args.out}"
    )
    return 0


def bench_stages(manifest_path, store_path, *, iters, warmup, k_q, alpha_co, seed):
    """Time prepass/match/score/refine per query; returns the timing map."""
    manifest = load_manifest(manifest_path)
    models, header = load_store(store_path)
    if int(header["n_patches"]) != manifest.n_patches or int(header["dim"]) != manifest.dim:
        raise DataError("store and manifest disagree on grid size or feature dim")
    if not manifest.queries:
        raise DataError("manifest has no queries to benchmark")
    fmaps = [load_feature_file(q.feature_file) for q in manifest.queries]
    config = SearchConfig(k_q=k_q, alpha_co=alpha_co, refine=True, seed=seed)

    # untimed inputs for the dependent stages
    prepasses = [query_prepass(f, config) for f in fmaps]
    raws = [[match_patches(f, m) for m in models] for f in fmaps]
    bests = [
        [select_best(score_candidates(f, m, raw)) for m, raw in zip(models, per_query)]
        for f, per_query in zip(fmaps, raws)
    ]

    counters = {"prepass": 0, "match": 0, "score": 0, "refine": 0}

    def cycle(name: str) -> int:
        i = counters[name] % len(fmaps)
        counters[name] += 1
        return i

    def stage_prepass():
        query_prepass(fmaps[cycle("prepass")], config)

    def stage_match():
        f = fmaps[cycle("match")]
        for m in models:
            match_patches(f, m)

    def stage_score():
        i = cycle("score")
        for m, raw in zip(models, raws[i]):
            select_best(score_candidates(fmaps[i], m, raw))

    def stage_refine():
        i = cycle("refine")
        for best, _ in bests[i]:
            refine_mask(best, prepasses[i])

    stages = {
        "prepass": stage_prepass,
        "match": stage_match,
        "score": stage_score,
        "refine": stage_refine,
    }
    return benchmark(stages, warmup=warmup, iters=iters)


def _cmd_bench(args) -> int:
    timing = bench_stages(
        args.manifest,
        args.store,
        iters=args.iters,
        warmup=args.warmup,
        k_q=args.k_q,
        alpha_co=args.alpha_co,
        seed=args.seed,
    )
    total_mean = sum(t["mean_ms"] for t in timing.values())
    print(f"{'stage':<10}{'mean_ms':>10}{'p50_ms':>10}{'p95_ms':>10}{'share':>8}")
    for name, t in timing.items():
        share = t["mean_ms"] / total_mean if total_mean > 0 else 0.0
        print(
            f"{name:<10}{t['mean_ms']:>10.3f}{t['p50_ms']:>10.3f}"
            f"{t['p95_ms']:>10.3f}{share:>7.1%}"
        )
    print(f"{'total':<10}{total_mean:>10.3f}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "enroll": _cmd_enroll,
    "search": _cmd_search,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, DegenerateInputError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
