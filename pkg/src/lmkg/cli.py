"""Command-line entry points: ingest, sample, train, estimate, eval, info."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .encoders import EncodingSpec, SgShape
from .framework import (
    ModelRegistry,
    OutlierBuffer,
    estimate as registry_estimate,
    evaluate_workload,
    load_models_dir,
    model_info,
    save_model,
)
from .kg import KnowledgeGraph, ingest_ntriples
from .lmkg_s import TrainConfigS, train_s
from .lmkg_u import TrainConfigU, train_u
from .patterns import UnknownTermError, parse_query_text
from .sampler import LabeledQuery, MaskPolicy, SamplerConfig, generate_training_set, read_jsonl, write_jsonl


def _cmd_ingest(args) -> int:
    kg = ingest_ntriples(Path(args.input).read_bytes(), on_error=args.on_error)
    size = kg.save(args.out)
    r = kg.report
    stats = kg.stats()
    print(
        f"lines={r.lines_read} kept={r.triples_kept} duplicates={r.duplicates} "
        f"malformed={r.malformed} d={stats.d} b={stats.b} snapshot_bytes={size}"
    )
    return 0


def _cmd_sample(args) -> int:
    kg = KnowledgeGraph.load(args.kg)
    config = SamplerConfig(
        topology=args.topology,
        k=args.size,
        count=args.count,
        mode=args.mode.replace("-", "_"),
        supervised=args.supervised,
        mask=MaskPolicy(
            prob=args.mask_prob,
            allow_unbound_predicates=args.allow_unbound_preds,
            min_unbound=args.min_unbound,
        ),
        seed=args.seed,
        workers=args.workers,
    )
    records = generate_training_set(kg, config)
    write_jsonl(records, kg, args.out, config)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def _parse_layers(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x)


def _cmd_train(args) -> int:
    kg = KnowledgeGraph.load(args.kg)
    records = read_jsonl(args.data, kg)
    if args.model_kind == "s":
        labeled = [r for r in records if isinstance(r, LabeledQuery)]
        if len(labeled) != len(records):
            raise ValueError("supervised training needs labeled records (card != null)")
        encoding = args.encoding.replace("-", "_")
        config = TrainConfigS(
            epochs=args.epochs if args.epochs else 200,
            batch_size=args.batch_size,
            hidden=_parse_layers(args.layers) if args.layers else (512, 512),
            learning_rate=args.lr,
            seed=args.seed,
        )
        model = train_s(labeled, EncodingSpec.from_kg(kg), encoding, config)
    else:
        if args.encoding.replace("-", "_") == "sg":
            raise ValueError("the autoregressive model takes pattern-bound input only")
        instances = [r for r in records if not isinstance(r, LabeledQuery)]
        if len(instances) != len(records):
            raise ValueError("unsupervised training needs bound records (card == null)")
        widths = _parse_layers(args.layers) if args.layers else (64, 64)
        if len(set(widths)) != 1:
            raise ValueError("autoregressive hidden layers must share one width")
        config = TrainConfigU(
            epochs=args.epochs if args.epochs else 5,
            batch_size=args.batch_size,
            hidden_width=widths[0],
            blocks=max(len(widths) - 1, 0),
            learning_rate=args.lr,
            embed_dim=args.embed_dim,
            seed=args.seed,
        )
        model = train_u(instances, kg, config)
    size = save_model(model, args.out)
    final = model.metadata.get("final_loss")
    print(f"trained {args.model_kind}-model, final_loss={final}, saved {size} bytes to {args.out}")
    return 0


def _cmd_estimate(args) -> int:
    kg = KnowledgeGraph.load(args.kg)
    registry = ModelRegistry.from_models(load_models_dir(args.models, kind=args.kind))
    text = sys.stdin.read() if args.query == "-" else Path(args.query).read_text()
    try:
        qp = parse_query_text(text, kg)
    except UnknownTermError:
        # a term absent from the graph cannot match anything; report the floor
        value, provenance = 1.0, "novel_term"
    else:
        result = registry_estimate(registry, qp, num_samples=args.samples, seed=args.seed)
        value, provenance = result.value, result.provenance
    if args.format == "json":
        print(json.dumps({"estimate": value, "provenance": provenance}))
    else:
        print(f"{value:.6g} {provenance}")
    return 0


def _cmd_eval(args) -> int:
    kg = KnowledgeGraph.load(args.kg)
    registry = ModelRegistry.from_models(load_models_dir(args.models, kind=args.kind))
    records = read_jsonl(args.test, kg)
    test = [r for r in records if isinstance(r, LabeledQuery)]
    if len(test) != len(records):
        raise ValueError("test records need true cardinalities")
    buffer = None
    if args.buffer_from:
        train_records = [r for r in read_jsonl(args.buffer_from, kg) if isinstance(r, LabeledQuery)]
        buffer = OutlierBuffer.from_training(train_records, capacity=args.buffer_size)
    report = evaluate_workload(
        registry,
        test,
        buffer=buffer,
        num_samples=args.samples,
        seed=args.seed,
        config={
            "models": str(args.models),
            "kind": args.kind,
            "test": str(args.test),
            "samples": args.samples,
            "seed": args.seed,
            "buffer": bool(buffer) and {"from": str(args.buffer_from), "size": args.buffer_size},
        },
    )
    report.write_csv(args.report + ".csv")
    report.write_json(args.report + ".json")
    agg = report.aggregates
    print(
        f"evaluated={agg.get('count', 0)} failures={report.failures} "
        f"median_q={agg.get('median', float('nan')):.3f} max_q={agg.get('max', float('nan')):.3f}"
    )
    return 0


def _cmd_info(args) -> int:
    info = model_info(args.model)
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lmkg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse an N-Triples file into a graph snapshot")
    p.add_argument("--input", required=True)
    p.add_argument("--on-error", choices=["skip", "fail"], default="fail", dest="on_error_raw")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_ingest)

    p = sub.add_parser("sample", help="generate training/test data from a graph")
    p.add_argument("--kg", required=True)
    p.add_argument("--topology", choices=["star", "chain"], required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--mode", choices=["enumerate", "uniform", "random-walk"], default="uniform")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--supervised", action="store_true")
    group.add_argument("--unsupervised", dest="supervised", action="store_false")
    p.add_argument("--mask-prob", type=float, default=0.5)
    p.add_argument("--min-unbound", type=int, default=1)
    p.add_argument("--allow-unbound-preds", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_sample)

    p = sub.add_parser("train", help="train an estimator from a JSONL dataset")
    p.add_argument("--kg", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--model-kind", choices=["s", "u"], required=True)
    p.add_argument("--encoding", choices=["pattern-bound", "sg"], default="sg")
    p.add_argument("--epochs", type=int, default=0, help="0 means the per-kind default")
    p.add_argument("--layers", default="", help="comma-separated hidden widths")
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("estimate", help="estimate one query's cardinality")
    p.add_argument("--models", required=True)
    p.add_argument("--kg", required=True)
    p.add_argument("--query", required=True, help="pattern file or - for stdin")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=["s", "u"], default=None)
    p.set_defaults(fn=_cmd_estimate)

    p = sub.add_parser("eval", help="run the q-error evaluation harness")
    p.add_argument("--models", required=True)
    p.add_argument("--kg", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--report", required=True, help="output prefix for .csv/.json")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=["s", "u"], default=None)
    p.add_argument("--buffer-from", default=None, help="training JSONL backing the outlier buffer")
    p.add_argument("--buffer-size", type=int, default=100)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("info", help="describe a saved model file")
    p.add_argument("--model", required=True)
    p.set_defaults(fn=_cmd_info)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "on_error_raw", None) is not None:
        args.on_error = "skip_and_count" if args.on_error_raw == "skip" else "fail"
    try:
        return args.fn(args)
    except Exception as e:  # surface a clean message, nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
