"""Command-line interface.

Subcommands: index (build a store from a corpus), ask (answer one
question), eval (score a dataset and write reports), trace-show (pretty
print a saved trace). Configuration comes from an optional config file plus
flag overrides; flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import AppConfig, load_config
from .embedding import HashedEmbedder, RemoteEmbedder
from .errors import BuildError, ConfigError, FixtureError, GraphQAError
from .evaluate import load_dataset, run_eval
from .indexer import LLMExtractor, RuleBasedExtractor, build_index, load_corpus
from .kb import GraphKB
from .llm import RemoteChatClient, ScriptedClient, load_transcript
from .pipeline import MODES, Engine
from .report import write_report
from .retrieval import Retriever
from .trace import Trace, format_trace

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_GENERIC = 1
EXIT_CONFIG = 2
EXIT_BUILD = 3
EXIT_EVAL = 4

TOGGLES = ("qd", "cr", "qg", "ld", "ev", "qe")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphqa",
        description="Graph-grounded question answering with agentic retrieval.",
    )
    parser.add_argument("--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="build a store from a JSONL corpus")
    p_index.add_argument("--corpus", required=True, help="corpus JSONL path")
    p_index.add_argument("--out", required=True, help="output store directory")
    _common_config_flags(p_index)
    p_index.add_argument("--chunk-size", type=int, dest="chunk_size_units")
    p_index.add_argument("--overlap", type=int, dest="overlap_units")
    p_index.add_argument("--workers", type=int, dest="extract_workers")
    p_index.add_argument("--extractor", choices=("rules", "llm"))
    p_index.set_defaults(func=cmd_index)

    p_ask = sub.add_parser("ask", help="answer a question against a store")
    p_ask.add_argument("question")
    p_ask.add_argument("--index", required=True, help="store directory")
    p_ask.add_argument("--mode", choices=MODES, default="deepsearch")
    p_ask.add_argument("--trace-out", help="write the run trace to this path")
    _common_config_flags(p_ask)
    p_ask.set_defaults(func=cmd_ask)

    p_eval = sub.add_parser("eval", help="run a dataset and write reports")
    p_eval.add_argument("--dataset", required=True, help="dataset JSONL path")
    p_eval.add_argument("--index", required=True, help="store directory")
    p_eval.add_argument("--out", required=True, help="report output directory")
    p_eval.add_argument("--mode", choices=MODES, default="deepsearch")
    p_eval.add_argument(
        "--ablation",
        help="run with ONLY these stages enabled, comma-separated "
             "(qd,cr,qg,ld,ev,qe); every stage not listed is disabled",
    )
    p_eval.add_argument("--workers", type=int, dest="eval_workers",
                        help="run this many items concurrently")
    p_eval.add_argument(
        "--compare-baseline", action="store_true",
        help="also run every item in baseline mode",
    )
    _common_config_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_trace = sub.add_parser("trace-show", help="pretty-print a saved trace")
    p_trace.add_argument("trace", help="trace JSONL path")
    p_trace.set_defaults(func=cmd_trace_show)

    return parser


def _common_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML or JSON config file")
    parser.add_argument("--transcript", help="scripted chat transcript (JSON)")
    parser.add_argument("--top-k", type=int, dest="top_k")


def _build_config(args: argparse.Namespace, extra: dict | None = None) -> AppConfig:
    overrides = dict(extra or {})
    for key in ("transcript", "top_k", "chunk_size_units", "overlap_units",
                "extract_workers", "extractor", "eval_workers"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return load_config(getattr(args, "config", None), overrides)


def _apply_ablation(config: AppConfig, spec: str | None) -> None:
    """Interpret the flag as the full set of enabled stages: everything not
    named is switched off."""
    if not spec:
        return
    enabled = set()
    for name in spec.split(","):
        name = name.strip().lower()
        if not name:
            continue
        if name not in TOGGLES:
            raise ConfigError(f"unknown ablation stage {name!r}")
        enabled.add(name)
    for name in TOGGLES:
        setattr(config, name, name in enabled)
    config.validate()


def make_embedder(config: AppConfig):
    if config.embed_backend == "hashed":
        return HashedEmbedder(dim=config.embed_dim)
    return RemoteEmbedder(
        base_url=config.embed_base_url,
        model=config.embed_model,
        api_key_env=config.embed_api_key_env,
        dim=config.embed_dim,
    )


def _load_script(path: str):
    data = load_transcript(path)
    return data


def make_client(config: AppConfig):
    """Single chat client for index/ask. Scripted transcripts must be flat
    lists here; per-item transcripts only make sense under eval."""
    if config.llm_backend == "scripted":
        if not config.transcript:
            raise ConfigError("llm_backend=scripted needs a transcript path")
        data = _load_script(config.transcript)
        return ScriptedClient(data, strict=config.strict_transcript)
    return RemoteChatClient(
        base_url=config.llm_base_url,
        model=config.llm_model,
        api_key_env=config.llm_api_key_env,
        temperature=config.temperature,
    )


def _scripted_factory(path: str, strict: bool):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, dict) and "per_item" in data:
        per_item = data["per_item"]
        if not isinstance(per_item, list):
            raise FixtureError(f"transcript {path}: per_item must be a list")

        def factory(index: int):
            if index >= len(per_item):
                raise FixtureError(
                    f"transcript {path} has {len(per_item)} per-item entries, "
                    f"item {index} requested"
                )
            return ScriptedClient(per_item[index], strict=strict)

        return factory
    if not isinstance(data, list):
        raise FixtureError(f"transcript {path} must be a JSON list or per_item map")
    shared = ScriptedClient(data, strict=strict)
    return lambda index: shared


def make_client_factory(config: AppConfig):
    if config.llm_backend == "scripted":
        if not config.transcript:
            raise ConfigError("llm_backend=scripted needs a transcript path")
        return _scripted_factory(config.transcript, config.strict_transcript)
    client = RemoteChatClient(
        base_url=config.llm_base_url,
        model=config.llm_model,
        api_key_env=config.llm_api_key_env,
        temperature=config.temperature,
    )
    return lambda index: client


def make_judge_factory(config: AppConfig):
    if not config.judge_enabled:
        return None
    if config.judge_backend == "scripted":
        if not config.judge_transcript:
            raise ConfigError("judge_backend=scripted needs judge_transcript")
        return _scripted_factory(config.judge_transcript, strict=False)
    client = RemoteChatClient(
        base_url=config.judge_base_url,
        model=config.judge_model,
        api_key_env=config.judge_api_key_env,
        temperature=0.0,
    )
    return lambda index: client


def _open_store(config: AppConfig, directory: str) -> Retriever:
    kb = GraphKB.load(directory)
    retriever = Retriever(
        kb,
        make_embedder(config),
        top_k=config.top_k,
        hop_expansion=config.hop_expansion,
        hop_decay=config.hop_decay,
    )
    sidecar = Path(directory) / "embeddings.json"
    if sidecar.exists():
        retriever.load_embeddings(directory)
    else:
        logger.info("no embedding sidecars in %s, embedding store rows now", directory)
        retriever.build()
    return retriever


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------

def cmd_index(args: argparse.Namespace) -> int:
    config = _build_config(args)
    corpus = load_corpus(args.corpus)
    if config.extractor == "llm":
        extractor = LLMExtractor(make_client(config))
    else:
        extractor = RuleBasedExtractor()
    kb, report = build_index(corpus, config.index_config(), extractor)
    kb.save(args.out)
    retriever = Retriever(kb, make_embedder(config), top_k=config.top_k)
    retriever.build()
    retriever.save_embeddings(args.out)
    print(
        f"indexed {report.documents} documents: {report.chunks} chunks, "
        f"{report.entities} entities, {report.relations} relations "
        f"({report.merged_entities} merges)"
    )
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"store written to {args.out}")
    return EXIT_OK


def cmd_ask(args: argparse.Namespace) -> int:
    config = _build_config(args)
    retriever = _open_store(config, args.index)
    engine = Engine(retriever, make_client(config), config.engine_options())
    try:
        result = engine.run(args.question, mode=args.mode)
    except Exception as exc:
        # keep whatever trace the run produced before dying
        partial = getattr(exc, "partial_trace", None)
        if args.trace_out and partial is not None:
            partial.save(args.trace_out)
            print(f"partial trace written to {args.trace_out}", file=sys.stderr)
        raise
    if args.trace_out:
        result.trace.save(args.trace_out)
    print(result.answer)
    if result.verified is False:
        print("note: answer is unverified (evidence checks kept failing)",
              file=sys.stderr)
    if args.trace_out:
        print(f"trace written to {args.trace_out}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = _build_config(args)
    _apply_ablation(config, args.ablation)
    retriever = _open_store(config, args.index)
    dataset, dataset_hash = load_dataset(args.dataset)
    result = run_eval(
        retriever,
        config.engine_options(),
        make_client_factory(config),
        dataset,
        dataset_hash,
        out_dir=args.out,
        mode=args.mode,
        judge_factory=make_judge_factory(config),
        compare_baseline=args.compare_baseline,
        failure_threshold=config.failure_threshold,
        workers=config.eval_workers,
    )
    paths = write_report(result, args.out)
    print(Path(paths["table"]).read_text(encoding="utf-8"), end="")
    print(f"reports written to {args.out}")
    if result.threshold_exceeded:
        agg = result.aggregate()
        print(
            f"error: {agg['failures']} of {agg['items']} items failed "
            f"(threshold {config.failure_threshold:.0%})",
            file=sys.stderr,
        )
        return EXIT_EVAL
    return EXIT_OK


def cmd_trace_show(args: argparse.Namespace) -> int:
    trace = Trace.load(args.trace)
    print(format_trace(trace))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BuildError as exc:
        print(f"build error: {exc}", file=sys.stderr)
        return EXIT_BUILD
    except GraphQAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GENERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GENERIC


if __name__ == "__main__":
    sys.exit(main())
