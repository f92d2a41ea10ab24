"""Command line entry point: ``loh <command> [options]``.

Every command is a thin adapter over one library call. Options can also be
given in a JSON file via ``--config``; flags on the command line win.
Exit status is 0 on success, 1 on data errors and 2 on usage errors.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import batch, cluster, index, io_eval, model
from .errors import InputError, LohError

ENV_THREADS = "LOH_THREADS"


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise InputError(f"{ENV_THREADS}={env!r} is not an integer") from None
        if n < 1:
            raise InputError(f"{ENV_THREADS} must be >= 1")
        return n
    return 1


def _parallel_map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _chunks(n, size):
    return [(s, min(n, s + size)) for s in range(0, n, size)]


def _points_from_tsv(path):
    by_member = {}
    for rec in batch.read_flat_tsv(path):
        by_member.setdefault(rec.member_id, []).append(rec.code)
    return [model.unflatten(codes, member) for member, codes in by_member.items()]


def _read_ids(path):
    with open(path, encoding="utf-8") as f:
        try:
            return [int(line) for line in f if line.strip()]
        except ValueError as e:
            raise InputError(f"{path}: {e}") from None


def cmd_train(args):
    data = io_eval.read_vectors(args.vectors).astype(np.float64)
    if args.limit:
        data = data[:args.limit]
    if data.size == 0:
        raise InputError(f"{args.vectors}: no vectors")
    params = model.LohParams(d=data.shape[1], K=args.K, m=args.m, k=args.k,
                             kmeans_iters=args.iters, seed=args.seed)
    model.save_model(model.train(data, params), args.out)


def cmd_encode(args):
    mdl = model.load_model(args.model)
    data = io_eval.read_vectors(args.vectors)
    n = data.shape[0]
    ids = list(range(args.id_offset, args.id_offset + n))
    owners = _read_ids(args.set_ids) if args.set_ids else ids
    if len(owners) != n:
        raise InputError(f"{args.set_ids}: {len(owners)} set ids for {n} vectors")
    parts = _parallel_map(lambda se: model.encode_many(mdl, data[se[0]:se[1]]),
                          _chunks(n, 4096), _threads(args))
    records = []
    if parts:
        coarse = np.vstack([c for c, _ in parts])
        fine = np.vstack([f for _, f in parts])
        for i in range(n):
            p = model.EncodedPoint(ids[i], coarse[i], fine[i])
            records.extend(batch.FlatRecord(owners[i], p.id, c) for c in model.flatten(p))
    batch.write_flat_tsv(records, args.out)


def cmd_index(args):
    mdl = model.load_model(args.model)
    index.save_index(index.build_index(mdl, _points_from_tsv(args.codes)), args.out)


def cmd_search(args):
    mdl = model.load_model(args.model)
    idx = index.load_index(args.index, mdl)
    queries = io_eval.read_vectors(args.queries).astype(np.float64)
    params = index.SearchParams(T=args.T, beta=args.beta, tau=args.tau)
    results = _parallel_map(lambda q: index.search(idx, q, params), list(queries),
                            _threads(args))
    with open(args.out, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["query", "rank", "doc_id", "score", "sigma_h"])
        for qi, hits in enumerate(results):
            for rank, h in enumerate(hits[:args.top] if args.top else hits):
                w.writerow([qi, rank, h.id, repr(h.score), h.sigma_h])


def _stoplist(args, points_or_records):
    if args.stoplist_min is None and args.stoplist_max is None:
        return None
    lo = args.stoplist_min or 0
    hi = float("inf") if args.stoplist_max is None else args.stoplist_max
    return cluster.build_stoplist(points_or_records, lo, hi)


def cmd_batch(args):
    queries = batch.read_flat_tsv(args.queries)
    docs = batch.read_flat_tsv(args.docs)
    stop = None
    if args.stoplist_min is not None or args.stoplist_max is not None:
        by_doc = {}
        for r in docs:
            by_doc.setdefault(r.member_id, []).append(r.code)
        stop = _stoplist(args, [model.unflatten(c, d) for d, c in by_doc.items()])
    pooled = batch.batch_search(queries, docs, parallelism=_threads(args), stoplist=stop,
                                top=args.top)
    batch.write_scores_csv(pooled, args.out)


def cmd_cluster(args):
    points = _points_from_tsv(args.codes)
    stop = _stoplist(args, points)
    clustering = cluster.loh_cluster(points, args.threshold, stop, args.max_group)
    cluster.write_clusters_tsv(clustering, args.out)


def cmd_dedup(args):
    res = cluster.dedup(_points_from_tsv(args.codes), args.threshold)
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        for doc, rep in res.representative_of.items():
            f.write(f"{doc}\t{rep}\n")


def _read_ranked(path):
    ranked = {}
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        try:
            for row in reader:
                ranked.setdefault(int(row["query"]), []).append((int(row["rank"]), int(row["doc_id"])))
        except (KeyError, ValueError) as e:
            raise InputError(f"{path}: line {reader.line_num}: malformed row ({e})") from None
    return ranked


def cmd_eval(args):
    if args.truth:
        nearest = io_eval.read_vectors(args.truth, "int32")[:, 0]
    elif args.base and args.queries:
        truth = io_eval.brute_force_knn(io_eval.read_vectors(args.queries),
                                        io_eval.read_vectors(args.base), 1)
        nearest = truth.nearest
    else:
        raise InputError("eval needs --truth or both --base and --queries")
    ranked = _read_ranked(args.ranked)
    lists = [[doc for _, doc in sorted(ranked.get(q, []))] for q in range(len(nearest))]
    recall = io_eval.recall_at_r(lists, nearest, args.R)
    io_eval.write_table_csv(args.out, ["R", "recall"], [[r, repr(v)] for r, v in recall.items()])


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _positive(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option defaults (flags override)")
    common.add_argument("--seed", type=int, default=0, help="seed for stochastic stages (default 0)")
    common.add_argument("--threads", type=_positive, default=None,
                        help=f"worker threads (default ${ENV_THREADS} or 1)")

    parser = argparse.ArgumentParser(prog="loh", description="Locally optimized hashing tools")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("train", parents=[common], formatter_class=fmt, help="train a model")
    p.add_argument("--vectors", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--K", type=_positive, default=16, help="coarse centroids per half")
    p.add_argument("--m", type=_positive, default=8, help="fine subspaces")
    p.add_argument("--k", type=_positive, default=16, help="centroids per sub-quantizer")
    p.add_argument("--iters", type=int, default=30, help="k-means iterations")
    p.add_argument("--limit", type=int, default=0, help="train on the first N vectors (0 = all)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", parents=[common], formatter_class=fmt,
                       help="encode vectors to flattened LOH codes")
    p.add_argument("--model", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--id-offset", type=int, default=0, help="id of the first vector")
    p.add_argument("--set-ids", help="file with one owner (set) id per vector")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("index", parents=[common], formatter_class=fmt, help="build a multi-index")
    p.add_argument("--model", required=True)
    p.add_argument("--codes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", parents=[common], formatter_class=fmt,
                       help="rank indexed points for each query vector")
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--T", type=_positive, default=1000, help="points to evaluate per query")
    p.add_argument("--beta", type=float, default=1.0, help="cell weight gain")
    p.add_argument("--tau", type=float, default=None,
                   help="cell weight scale (default: mean distance of visited cells)")
    p.add_argument("--top", type=int, default=0, help="keep the top N hits (0 = all)")
    p.set_defaults(func=cmd_search)

    def add_stoplist(p):
        p.add_argument("--stoplist-min", type=int, default=None,
                       help="ban triplets seen fewer times than this")
        p.add_argument("--stoplist-max", type=int, default=None,
                       help="ban triplets seen more times than this")

    p = sub.add_parser("batch", parents=[common], formatter_class=fmt,
                       help="join query sets with documents on LOH codes")
    p.add_argument("--queries", required=True)
    p.add_argument("--docs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--top", type=int, default=None, help="keep the top N documents per set")
    add_stoplist(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("cluster", parents=[common], formatter_class=fmt,
                       help="connected components of the LOH match graph")
    p.add_argument("--codes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=int, default=cluster.DEFAULT_THRESHOLD,
                   help="edge when shared codes > threshold")
    p.add_argument("--max-group", type=int, default=cluster.DEFAULT_MAX_GROUP,
                   help="skip triplets shared by more documents")
    add_stoplist(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("dedup", parents=[common], formatter_class=fmt,
                       help="map each document to its cluster representative")
    p.add_argument("--codes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=int, default=cluster.DEFAULT_THRESHOLD)
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("eval", parents=[common], formatter_class=fmt,
                       help="recall@R of ranked search output")
    p.add_argument("--ranked", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help=".ivecs ground truth (first column is the nearest id)")
    p.add_argument("--base", help="database vectors, to compute ground truth exactly")
    p.add_argument("--queries", help="query vectors, with --base")
    p.add_argument("--R", type=_int_list, default=[1, 10, 100, 1000])
    p.set_defaults(func=cmd_eval)
    return parser


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices.get(name)
    return None


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if not a.startswith("-")), None)
    subparser = _subparser(parser, command) if command else None
    if not known.config or subparser is None:
        return
    try:
        with open(known.config, encoding="utf-8") as f:
            cfg = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"{known.config}: cannot load config ({e})") from None
    if not isinstance(cfg, dict):
        raise InputError(f"{known.config}: config must be a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    known_dests = {a.dest for a in subparser._actions}
    unknown = sorted(set(cfg) - known_dests - {"config", "func"})
    if unknown:
        subparser.error(f"unknown config keys: {', '.join(unknown)}")
    # the file may supply options that are otherwise required flags
    for action in subparser._actions:
        if action.dest in cfg:
            action.required = False
    subparser.set_defaults(**cfg)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        args.func(args)
    except (LohError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
