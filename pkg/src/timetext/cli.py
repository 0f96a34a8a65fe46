"""`ttc` command line: synth, prepare, run, report, plot."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import corpus as corpus_mod
from .corpus import SCHEMAS, SynthSpec, generate_synthetic, save_corpus


def _cmd_synth(args) -> int:
    spec = SynthSpec(length=args.length, channels=args.channels, noise=args.noise,
                     leak=args.leak, schema=args.schema)
    c = generate_synthetic(spec, seed=args.seed)
    save_corpus(c, args.out, args.schema)
    print(f"wrote {len(c)} records to {args.out}")
    return 0


def _cmd_prepare(args) -> int:
    from .lmclient import HTTPLMClient, StubLMClient
    from .textprep import load_raw_documents, prepare_documents

    schema = SCHEMAS[args.schema]
    if args.client == "http":
        client = HTTPLMClient(model=args.model)
    else:
        client = StubLMClient(seed=args.seed)
        print("note: using the deterministic stub client; pass --client http for a real model",
              file=sys.stderr)
    docs = load_raw_documents(args.input_dir)
    if not docs:
        print(f"no YYYY-MM-DD.txt files under {args.input_dir}", file=sys.stderr)
        return 1
    numeric_rows = None
    if args.numeric:
        numeric_rows = {}
        for line in Path(args.numeric).read_text(encoding="utf-8").splitlines():
            if line.strip():
                row = json.loads(line)
                numeric_rows[row.pop("date")] = row
    variables = args.variables.split(",") if args.variables else [schema.target_key]
    summaries = prepare_documents(docs, variables, client, schema.text_key, args.out,
                                  chunk_size=args.chunk_size, max_workers=args.workers,
                                  numeric_rows=numeric_rows)
    flagged = sum(1 for s in summaries if s.text_missing)
    print(f"wrote {len(summaries)} summaries to {args.out} ({flagged} flagged empty)")
    return 0


def _cmd_run(args) -> int:
    from .harness import ExperimentConfig, run_experiment

    config = ExperimentConfig.from_json(args.config)
    if args.out_dir:
        config.out_dir = args.out_dir
    result = run_experiment(config)
    failed = [c for c in result.cells if c.error]
    for c in failed:
        print(f"cell {c.model_id} k={c.k} failed: {c.error}", file=sys.stderr)
    if config.out_dir:
        print(f"artifacts in {config.out_dir}")
    return 0


def _cmd_report(args) -> int:
    from .reporting import emit_tables, load_run_json, result_from_dict

    run = load_run_json(args.dir)
    emit_tables(result_from_dict(run), args.dir)
    print(f"tables refreshed in {args.dir}")
    return 0


def _cmd_plot(args) -> int:
    from .reporting import MatplotlibRenderer, StubRenderer, load_run_json, plot_forecasts

    run = load_run_json(args.dir)
    models = args.models.split(",") if args.models else run["model_order"]
    renderer = StubRenderer() if args.renderer == "stub" else MatplotlibRenderer()
    out = args.out or str(Path(args.dir) / f"forecast_{args.k}{renderer.suffix}")
    plot_forecasts(run, args.k, models, out, renderer=renderer)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttc", description="aligned time+text forecasting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus JSONL")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length", type=int, default=400)
    p.add_argument("--leak", choices=corpus_mod.LEAK_MODES, default="none")
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--schema", choices=sorted(SCHEMAS), default="weather")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("prepare", help="summarize raw daily documents into a corpus")
    p.add_argument("--schema", choices=sorted(SCHEMAS), required=True)
    p.add_argument("--input-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--numeric", help="JSONL of numeric channel rows to merge by date")
    p.add_argument("--variables", help="comma-separated variable names for extraction")
    p.add_argument("--chunk-size", type=int, default=1000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--client", choices=("stub", "http"), default="stub")
    p.add_argument("--model", default="gpt-4o-mini", help="model name for --client http")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_prepare)

    p = sub.add_parser("run", help="run a forecasting experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", help="override the config's output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="re-emit tables from a finished run directory")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("plot", help="plot per-model forecasts from a run directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--models", help="comma-separated model ids (default: all)")
    p.add_argument("--out")
    p.add_argument("--renderer", choices=("matplotlib", "stub"), default="matplotlib")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
