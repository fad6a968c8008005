"""Command-line surface: train, encode, match, eval, gt.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Failures print a single `error: <category>: <message>` line on stderr.
Set PLACEDESC_NUM_THREADS to pin the BLAS thread count (read before numpy
spins up its pools).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

_threads = os.environ.get("PLACEDESC_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import numpy as np

from . import autoencoder as ae
from . import dataio, retrieval
from .errors import DataError, FormatError, NumericError, PlaceDescError
from .nn import LayerNormConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.exit(EXIT_USAGE, f"error: usage: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="placedesc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an autoencoder on an FMAP file")
    p.add_argument("--features", required=True, help="training FMAP file")
    p.add_argument("--val", required=True, help="validation FMAP file")
    p.add_argument("--backbone", required=True, choices=["vgg16", "alexnet"])
    p.add_argument("--d3", required=True, type=int, help="last encoder block channels")
    p.add_argument("--d1", type=int, default=128)
    p.add_argument("--d2", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("encode", help="emit descriptors for an FMAP file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="output DVEC path")

    p = sub.add_parser("match", help="rank references for each query")
    p.add_argument("--queries", required=True, help="query DVEC file")
    p.add_argument("--references", required=True, help="reference DVEC file")
    p.add_argument("--k", required=True, type=int)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("eval", help="compute Recall@K, PR curve, AP, L2 report")
    p.add_argument("--matches", help="matches CSV from the match command")
    p.add_argument("--queries", help="query DVEC file")
    p.add_argument("--references", help="reference DVEC file")
    p.add_argument("--gt", required=True, help="ground-truth pair CSV")
    p.add_argument("--ks", default="1,5,10", help="comma-separated K values")
    p.add_argument("--thresholds", type=int, default=retrieval.DEFAULT_THRESHOLD_COUNT)
    p.add_argument("--bins", type=int, default=retrieval.DEFAULT_HISTOGRAM_BINS)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gt", help="build a ground-truth pair CSV")
    p.add_argument("--protocol", required=True, choices=["radius", "frames", "pairs"])
    p.add_argument("--query-poses", help="query pose CSV (radius)")
    p.add_argument("--ref-poses", help="reference pose CSV (radius)")
    p.add_argument("--radius", type=float, default=25.0)
    p.add_argument("--count", type=int, help="traverse length (frames)")
    p.add_argument("--query-manifest", help="manifest defining query order/ids")
    p.add_argument("--ref-manifest", help="manifest defining reference order/ids")
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--pairs", help="existing pair CSV to validate (pairs)")
    p.add_argument("--out", required=True)
    return parser


def _require(parser, args, names):
    missing = [n for n in names if getattr(args, n.replace("-", "_")) is None]
    if missing:
        parser.error(f"missing required flags: {', '.join('--' + n for n in missing)}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_train(args) -> int:
    train_set = dataio.read_fmap(args.features)
    val_set = dataio.read_fmap(args.val)
    for name, fset in (("train", train_set), ("val", val_set)):
        if fset.backbone != args.backbone:
            raise DataError(
                f"{name} FMAP backbone {fset.backbone!r} does not match "
                f"--backbone {args.backbone}"
            )
    spec = (
        ae.ArchSpec.vgg16(d3=args.d3, d1=args.d1, d2=args.d2)
        if args.backbone == "vgg16"
        else ae.ArchSpec.alexnet(d3=args.d3, d1=args.d1, d2=args.d2)
    )
    cfg = ae.TrainConfig(
        lr=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=args.seed,
        layernorm=LayerNormConfig(),
        checkpoint_every=args.checkpoint_every,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    model = ae.build_model(spec, seed=args.seed)
    log = ae.train(model, train_set, val_set, cfg, checkpoint_dir=out_dir)

    ckpt_path = out_dir / "model.cae"
    ckpt_path.write_bytes(ae.save_checkpoint(model))
    log_path = out_dir / "loss_log.csv"
    with open(log_path, "w") as fh:
        fh.write(
            f"# lr={args.lr} batch={args.batch} epochs={args.epochs} "
            f"seed={args.seed} backbone={args.backbone} "
            f"d1={args.d1} d2={args.d2} d3={args.d3}\n"
        )
        fh.write("epoch,train_loss,val_loss\n")
        for row in log:
            fh.write(f"{row['epoch']},{row['train_loss']!r},{row['val_loss']!r}\n")
    print(f"wrote {ckpt_path} and {log_path}")
    return EXIT_OK


def _cmd_encode(args) -> int:
    model = ae.load_checkpoint(Path(args.checkpoint).read_bytes())
    fset = dataio.read_fmap(args.features)
    if fset.backbone != model.spec.backbone:
        raise DataError(
            f"FMAP backbone {fset.backbone!r} does not match checkpoint "
            f"backbone {model.spec.backbone!r}"
        )
    if fset.dims != model.spec.input_dims:
        raise DataError(
            f"FMAP dims {fset.dims} do not match checkpoint input "
            f"{model.spec.input_dims}"
        )
    chunks = []
    batch = 32
    for start in range(0, len(fset.ids), batch):
        chunks.append(model.encode(fset.maps[start : start + batch]))
    vectors = (
        np.concatenate(chunks)
        if chunks
        else np.zeros((0, model.spec.flat_dim), np.float32)
    )
    dset = dataio.DescriptorSet(
        fset.ids, vectors, dataio.FLATTEN_CHW, model.checksum()
    )
    dataio.write_dvec(args.out, dset)
    print(f"wrote {args.out} ({len(fset.ids)} descriptors of dim {model.spec.flat_dim})")
    return EXIT_OK


def _cmd_match(args) -> int:
    queries = dataio.read_dvec(args.queries)
    references = dataio.read_dvec(args.references)
    results = retrieval.topk(queries, references, args.k)
    with open(args.out, "w") as fh:
        fh.write("query_id,rank,reference_id,similarity\n")
        for res in results:
            for rank, (ref, sim) in enumerate(res.matches, start=1):
                fh.write(f"{res.query_id},{rank},{ref},{sim!r}\n")
    print(f"wrote {args.out} ({len(results)} queries, k={args.k})")
    return EXIT_OK


def _read_matches_csv(path) -> list[retrieval.MatchResult]:
    import csv

    per_query: dict[str, list[tuple[int, str, float]]] = {}
    order: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["query_id", "rank", "reference_id", "similarity"]:
            raise FormatError(f"unexpected matches CSV header: {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f"matches line {lineno}: expected 4 fields")
            q, rank, ref, sim = row
            if q not in per_query:
                per_query[q] = []
                order.append(q)
            per_query[q].append((int(rank), ref, float(sim)))
    results = []
    for q in order:
        ranked = sorted(per_query[q])
        results.append(retrieval.MatchResult(q, [(ref, sim) for _, ref, sim in ranked]))
    return results


def _cmd_eval(args, parser) -> int:
    ks = tuple(int(k) for k in args.ks.split(","))
    gt = dataio.load_pair_list(args.gt)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.matches:
        matches = _read_matches_csv(args.matches)
        recall = retrieval.recall_at_k(matches, gt, ks)
        curve = retrieval.pr_curve(
            matches, gt, retrieval.default_thresholds(matches, args.thresholds)
        )
        report = retrieval.EvalReport(recall, retrieval.average_precision(curve), curve)
    elif args.queries and args.references:
        queries = dataio.read_dvec(args.queries)
        references = dataio.read_dvec(args.references)
        report = retrieval.evaluate(
            queries, references, gt, ks, args.thresholds, args.bins
        )
    else:
        parser.error("eval needs --matches or both --queries and --references")

    (out_dir / "report.json").write_text(report.to_json() + "\n")
    report.write_csvs(out_dir)
    for k in sorted(report.recall_at):
        print(f"recall@{k} = {report.recall_at[k]:.4f}")
    print(f"average precision = {report.ap:.4f}")
    if report.mean_gap is not None:
        print(f"l2 mean gap = {report.mean_gap:.4f}")
    print(f"wrote report to {out_dir}")
    return EXIT_OK


def _cmd_gt(args, parser) -> int:
    if args.protocol == "radius":
        _require(parser, args, ["query-poses", "ref-poses"])
        queries = dataio.read_pose_csv(args.query_poses)
        references = dataio.read_pose_csv(args.ref_poses)
        gt = dataio.build_ground_truth_radius(queries, references, args.radius)
    elif args.protocol == "frames":
        if args.query_manifest:
            query_ids, _ = dataio.read_manifest(args.query_manifest)
            ref_ids = None
            if args.ref_manifest:
                ref_ids, _ = dataio.read_manifest(args.ref_manifest)
            gt = dataio.build_ground_truth_frames(
                len(query_ids), args.window, query_ids, ref_ids
            )
        elif args.count:
            gt = dataio.build_ground_truth_frames(args.count, args.window)
        else:
            parser.error("frames protocol needs --count or --query-manifest")
    else:
        _require(parser, args, ["pairs"])
        query_ids = None
        if args.query_manifest:
            query_ids, _ = dataio.read_manifest(args.query_manifest)
        gt = dataio.load_pair_list(args.pairs, query_ids)
    dataio.write_ground_truth_csv(args.out, gt)
    pairs = sum(len(v) for v in gt.mapping.values())
    print(f"wrote {args.out} ({len(gt.mapping)} queries, {pairs} pairs)")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "encode":
            return _cmd_encode(args)
        if args.command == "match":
            return _cmd_match(args)
        if args.command == "eval":
            return _cmd_eval(args, parser)
        return _cmd_gt(args, parser)
    except NumericError as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PlaceDescError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
