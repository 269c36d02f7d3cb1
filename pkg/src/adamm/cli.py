"""Command-line entry point.

Subcommands cover the whole pipeline: generate synthetic databases, inject
anomalies, run the hyperparameter grid, inspect the selected model, score a
database, evaluate scores against labels, and run the two-stage baselines.

Exit codes: 0 success, 2 validation error, 3 divergence, 4 metric undefined.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import baselines, metrics, selection, synth
from .data import DataError, load_database, write_database
from .estimator import AdammDetector, DivergenceError
from .inject import InjectionError, InjectionSpec, build_benchmark
from .metrics import MetricUndefinedError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3
EXIT_METRIC_UNDEFINED = 4


def _write_ranking_csv(path, ranking: baselines.Ranking) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "score", "rank"])
        for pos, (sid, score) in enumerate(ranking.entries, start=1):
            w.writerow([sid, repr(float(score)), pos])


def _read_scores_csv(path) -> list[tuple[str, float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["sample_id", "score"]:
            raise DataError(f"{path}: expected header sample_id,score[,rank]")
        out = []
        for row in reader:
            if not row:
                continue
            out.append((row[0], float(row[1])))
    return out


def cmd_gen(args) -> int:
    db = synth.generate(args.kind, args.n, args.regimes, args.seed)
    write_database(db, args.out)
    print(f"wrote {len(db)} {args.kind} samples to {args.out}")
    return EXIT_OK


def cmd_inject(args) -> int:
    db = load_database(args.infile)
    spec = InjectionSpec(types=args.types.split(","), rate=args.rate, seed=args.seed)
    train, test, audit = build_benchmark(db, spec)
    write_database(train, args.out_train)
    write_database(test, args.out_test)
    audit.write(args.log)
    n_inj = len(audit.entries)
    print(f"train={len(train)} test={len(test)} injected={n_inj} ({spec.label()} @ {args.rate})")
    return EXIT_OK


def cmd_train(args) -> int:
    db = load_database(args.train)
    if args.grid == "default":
        grid = selection.default_grid()
    else:
        grid = selection.load_grid_file(args.grid)
    manifest = selection.run_grid(db, grid, args.seed, args.out_dir, n_jobs=args.jobs)
    sel = manifest["selected"]
    cfg = manifest["configs"][sel]
    print(f"trained {len(grid)} configs; selected id={sel} "
          f"params={cfg['params']} criterion={cfg['selection_score']:.6g}")
    return EXIT_OK


def cmd_select(args) -> int:
    manifest = selection.load_manifest(args.run_dir)
    for entry in manifest["configs"]:
        mark = "*" if entry["id"] == manifest["selected"] else " "
        crit = "diverged" if entry["diverged"] else f"{entry['selection_score']:.6g}"
        print(f"{mark} id={entry['id']:2d} criterion={crit} params={entry['params']}")
    if manifest["selected"] is None:
        print("no selectable config: every run diverged", file=sys.stderr)
        return EXIT_DIVERGENCE
    print(f"selected: {manifest['selected']}")
    return EXIT_OK


def cmd_score(args) -> int:
    det = AdammDetector.load(args.model)
    db = load_database(args.data)
    scores = det.score_samples(db)
    ranking = baselines.Ranking.from_scores([s.sample_id for s in db.samples], scores)
    _write_ranking_csv(args.out, ranking)
    print(f"scored {len(db)} samples -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    rows = _read_scores_csv(args.scores)
    db = load_database(args.data)
    by_id = {s.sample_id: s for s in db.samples}
    missing = [sid for sid, _ in rows if sid not in by_id]
    if missing:
        raise DataError(f"{len(missing)} scored ids not present in {args.data} "
                        f"(first: {missing[0]})")
    unlabeled = [sid for sid, _ in rows if by_id[sid].eval_label is None]
    if unlabeled:
        raise DataError(f"{len(unlabeled)} samples have no eval label "
                        f"(first: {unlabeled[0]})")
    scores = np.array([sc for _, sc in rows])
    types = [by_id[sid].eval_label for sid, _ in rows]
    labels = np.array([0 if t == "normal" else 1 for t in types])
    report = metrics.evaluate(scores, labels)
    neg = labels == 0
    for t in sorted(set(types) - {"normal"}):
        mask = neg | np.array([ty == t for ty in types])
        sub = metrics.evaluate(scores[mask], labels[mask])
        report.per_type[t] = {"auroc": sub.auroc, "auprc": sub.auprc, "n_pos": sub.n_pos}
    doc = {
        "auroc": report.auroc,
        "auprc": report.auprc,
        "n_pos": report.n_pos,
        "n_neg": report.n_neg,
        "per_type": report.per_type,
    }
    with open(args.report, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.scatter:
        # plot-data file: score against the sample's position in the database
        pos = {s.sample_id: i for i, s in enumerate(db.samples)}
        with open(args.scatter, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "score", "label"])
            for (sid, sc), lab in zip(rows, labels):
                w.writerow([pos[sid], repr(float(sc)), int(lab)])
    print(f"auroc={report.auroc:.4f} auprc={report.auprc:.4f} "
          f"(n_pos={report.n_pos}, n_neg={report.n_neg}) -> {args.report}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    if (args.method is None) == (args.agg is None):
        raise DataError("pass exactly one of --method or --agg")
    db = load_database(args.data)
    ids = [s.sample_id for s in db.samples]
    if args.method == "wl":
        scores, _ = baselines.wl_grid_scores(list(db.samples))
        ranking = baselines.Ranking.from_scores(ids, scores)
    elif args.method == "iforest":
        ranking = baselines.Ranking.from_scores(ids, baselines.metadata_scores(db, seed=args.seed))
    else:
        wl, _ = baselines.wl_grid_scores(list(db.samples))
        graph_rank = baselines.Ranking.from_scores(ids, wl)
        meta_rank = baselines.Ranking.from_scores(ids, baselines.metadata_scores(db, seed=args.seed))
        agg = baselines.aggregate_bfs if args.agg == "bfs" else baselines.aggregate_inverse_rank
        ranking = agg(graph_rank, meta_rank)
    _write_ranking_csv(args.out, ranking)
    what = args.method or f"wl+iforest/{args.agg}"
    print(f"baseline {what} scored {len(db)} samples -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adamm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic database")
    g.add_argument("--kind", required=True, choices=["bookkeeping", "mobility"])
    g.add_argument("--n", required=True, type=int)
    g.add_argument("--regimes", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    i = sub.add_parser("inject", help="split a database and inject anomalies into the test half")
    i.add_argument("--in", dest="infile", required=True)
    i.add_argument("--types", required=True, help="comma-separated, e.g. GA1 or GA1,MA1")
    i.add_argument("--rate", type=float, default=0.05)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out-train", required=True)
    i.add_argument("--out-test", required=True)
    i.add_argument("--log", required=True, help="audit log (JSONL) enabling exact reversal")
    i.set_defaults(func=cmd_inject)

    t = sub.add_parser("train", help="train the hyperparameter grid and select a model")
    t.add_argument("--train", required=True)
    t.add_argument("--grid", default="default", help="'default' or a JSON grid file")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--jobs", type=int, default=None, help="grid workers (default: cpu count)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("select", help="show per-config criterion values and the selected model")
    s.add_argument("--run-dir", required=True)
    s.set_defaults(func=cmd_select)

    sc = sub.add_parser("score", help="score a database with a trained checkpoint")
    sc.add_argument("--model", required=True)
    sc.add_argument("--data", required=True)
    sc.add_argument("--out", required=True, help="CSV: sample_id,score,rank (descending)")
    sc.set_defaults(func=cmd_score)

    e = sub.add_parser("eval", help="compute AUROC/AUPRC of a score file against labels")
    e.add_argument("--scores", required=True)
    e.add_argument("--data", required=True, help="labelled database the scores refer to")
    e.add_argument("--report", required=True, help="output JSON report")
    e.add_argument("--scatter", default=None, help="optional score-vs-index CSV for plotting")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline", help="two-stage baseline scores")
    b.add_argument("--data", required=True)
    b.add_argument("--method", choices=["wl", "iforest"], default=None)
    b.add_argument("--agg", choices=["bfs", "ir"], default=None,
                   help="aggregate both modalities instead of a single --method")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_baseline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MetricUndefinedError as exc:
        # must precede ValueError: it is one
        print(f"metric undefined: {exc}", file=sys.stderr)
        return EXIT_METRIC_UNDEFINED
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataError, InjectionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
