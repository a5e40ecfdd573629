"""
DARD dialogue engine and MultiWOZ 2.2 evaluation harness - command line

Subcommands:
    eval              score a predictions file against a split
    run               replay a split through the agent registry (or the gold oracle)
    export-dst        write DST training examples
    export-responses  write response-generation training examples
    analyze           DST error taxonomy, venue-suggestion buckets, domain detection
    chat              interactive session against the registry
    db query          query the venue database
    select            pick the best agent per domain from validation reports

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 partial run.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
from dotenv import load_dotenv

from config import RunConfig, load_config, save_registry
from corpus import Corpus, filter_active, load_corpus, write_dst_examples, export_dst
from dst import DEFAULT_FUZZY_THRESHOLD
from errors import AgentConfigError, ConfigError, DardError
from kb import VenueDatabase
from metrics import (error_histogram, evaluate, gold_prediction_set, load_report, save_report,
                     venue_suggestion_analysis)
from orchestrator import (Candidate, Session, build_pipeline, domain_detection_agreement, export_responses,
                          run_corpus, run_turn, select_best, write_response_examples)
from predictions import failed_dialogues, load_predictions, save_predictions

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3

USAGE_ERRORS = (ConfigError, AgentConfigError)


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; usage errors map to 1 here"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def banner(title: str, width: int = 70) -> None:
    print(f"\n{'=' * width}")
    print(title)
    print(f"{'=' * width}")


# ============================================================================
# SHARED LOADING
# ============================================================================

def _load_corpus(root) -> Corpus:
    print(f"Loading corpus from {root}...")
    corpus = filter_active(load_corpus(root))
    sizes = ", ".join(f"{name}={len(d)}" for name, d in corpus.splits.items())
    print(f"Loaded splits: {sizes}")
    return corpus


def _load_db(db_dir, fuzzy_threshold: float) -> VenueDatabase:
    db = VenueDatabase.load(db_dir, fuzzy_threshold=fuzzy_threshold)
    print(f"Loaded database tables: {', '.join(db.domains())}")
    return db


def _db_dir(args) -> Path:
    return Path(args.db_dir) if args.db_dir else Path(args.corpus_root) / "db"


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "fuzzy_threshold", None) is not None:
        updates["fuzzy_threshold"] = args.fuzzy_threshold
    if getattr(args, "workers", None) is not None:
        updates["concurrency"] = args.workers
    if getattr(args, "split", None):
        updates["split"] = args.split
    return config.model_copy(update=updates)


# ============================================================================
# COMMANDS
# ============================================================================

def cmd_eval(args) -> int:
    banner("EVALUATION")
    threshold = args.fuzzy_threshold if args.fuzzy_threshold is not None else DEFAULT_FUZZY_THRESHOLD
    prediction_set = load_predictions(args.predictions)
    corpus = _load_corpus(args.corpus_root)
    db = _load_db(_db_dir(args), threshold)

    dialogues = corpus.split(args.split)
    split_ids = {d.dialogue_id for d in dialogues}
    unknown = sorted(set(prediction_set) - split_ids)
    if unknown:
        print(f"Warning: {len(unknown)} predicted dialogues are not in split '{args.split}' (e.g. {unknown[0]})")
    absent = sorted(split_ids - set(prediction_set))
    if absent:
        print(f"Warning: {len(absent)} of {len(dialogues)} dialogues in '{args.split}' have no predictions "
              f"(e.g. {absent[0]}); they are scored as failures")
    print(f"Scoring {len(dialogues)} dialogues...")

    report = evaluate(prediction_set, dialogues, db, threshold)
    json_path, csv_path = save_report(report, args.output_dir)

    print(report.table().round(2).to_string())
    print(f"\nJSA: {report.jsa:.4f}  (turns without a prediction: {report.missing_predictions})")
    if report.combined is not None:
        print(f"Inform: {report.inform:.2f}  Success: {report.success:.2f}  BLEU: {report.bleu:.2f}  "
              f"Combined: {report.combined:.2f}")
        print(f"CBE: {report.cbe:.3f}  Unique words: {report.unique_words}  "
              f"Unique trigrams: {report.unique_trigrams}")
    print(f"\n✓ Report saved to {json_path} and {csv_path}")
    return EXIT_OK


def cmd_run(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    banner(f"RUN: split={config.split}, mode={'oracle' if args.oracle else args.mode}, seed={config.seed}")

    corpus = _load_corpus(config.corpus_root)
    db = _load_db(config.db_dir, config.fuzzy_threshold)
    dialogues = sorted(corpus.split(config.split), key=lambda d: d.dialogue_id)
    if args.limit:
        dialogues = dialogues[:args.limit]

    if args.oracle:
        prediction_set = gold_prediction_set(dialogues, db)
    else:
        pipeline = build_pipeline(config.registry, db, corpus, seed=config.seed, audit_log=config.audit_log)
        prediction_set = run_corpus(dialogues, pipeline, mode=args.mode, workers=config.concurrency)

    output = Path(args.output) if args.output else config.predictions_path
    save_predictions(prediction_set, output)

    failed = failed_dialogues(prediction_set)
    print(f"\nDialogues: {len(prediction_set)}  Failed: {len(failed)}")
    print(f"✓ Predictions saved to {output}")
    if failed:
        print(f"✗ Dialogues with failed turns: {', '.join(failed[:10])}{' ...' if len(failed) > 10 else ''}")
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_export_dst(args) -> int:
    banner(f"EXPORT DST: {args.split}, {args.mode}")
    corpus = _load_corpus(args.corpus_root)
    examples = export_dst(corpus, mode=args.mode, split=args.split)
    for path in write_dst_examples(examples, args.output_dir, args.mode):
        print(f"✓ {path}")
    print(f"Examples: {len(examples)}")
    return EXIT_OK


def cmd_export_responses(args) -> int:
    seed = args.seed if args.seed is not None else 0
    banner(f"EXPORT RESPONSES: {args.split}, {args.mode}, seed={seed}")
    corpus = _load_corpus(args.corpus_root)
    db = _load_db(_db_dir(args), DEFAULT_FUZZY_THRESHOLD)
    examples = export_responses(corpus, args.split, args.mode, db, seed)
    for path in write_response_examples(examples, args.output_dir, args.mode):
        print(f"✓ {path}")
    print(f"Examples: {len(examples)}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    banner("ANALYSIS")
    threshold = args.fuzzy_threshold if args.fuzzy_threshold is not None else DEFAULT_FUZZY_THRESHOLD
    corpus = _load_corpus(args.corpus_root)
    db = _load_db(_db_dir(args), threshold)
    output_dir = Path(args.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    results = {}

    buckets = venue_suggestion_analysis(corpus.split(args.split), db, first_turn_only=args.first_turn_only)
    results["venue_suggestion"] = buckets
    table = pd.DataFrame(buckets).T
    table.to_csv(output_dir / "venue_suggestion.csv")
    print(f"\nVenue named by the system, by number of matching venues ({args.split}):")
    print(table.round(1).to_string())

    if args.predictions:
        prediction_set = load_predictions(args.predictions)
        dialogues = corpus.split(args.eval_split)
        absent = sum(1 for d in dialogues if d.dialogue_id not in prediction_set)
        if absent:
            print(f"Warning: {absent} dialogues in '{args.eval_split}' have no predictions; "
                  "their turns count as errors")
        histogram, breakdown = error_histogram(prediction_set, dialogues, threshold)
        results["error_histogram"] = histogram
        results["error_breakdown"] = breakdown
        errors = pd.DataFrame({"all_turns": histogram, "among_errors": breakdown})
        errors.to_csv(output_dir / "dst_errors.csv")
        print(f"\nDST error categories ({len(dialogues)} dialogues):")
        print((errors * 100).round(1).to_string())

    agreement = domain_detection_agreement(corpus.split(args.eval_split), db)
    results["domain_detection"] = agreement
    print(f"\nDomain detection agreement ({args.eval_split}): {agreement['agreement']:.3f} "
          f"over {agreement['turns']} user turns")

    with open(output_dir / "analysis.json", "w", encoding="utf-8") as f:
        json.dump(results, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"\n✓ Analysis saved to {output_dir}")
    return EXIT_OK


def cmd_chat(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    corpus = load_corpus(config.corpus_root) if config.registry.has_llm_agents() else None
    db = _load_db(config.db_dir, config.fuzzy_threshold)
    pipeline = build_pipeline(config.registry, db, filter_active(corpus) if corpus else None,
                              seed=config.seed, audit_log=config.audit_log)
    session = Session(dialogue_id=args.session_id)

    banner("CHAT  (/state shows the dialogue state, /quit ends the session)")
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        if line == "/quit":
            break
        if line == "/state":
            print(json.dumps(session.state, indent=2, sort_keys=True))
            continue
        result = run_turn(session, line, pipeline)
        if result.failed:
            print(f"✗ {result.error}")
        print(f"SYSTEM: {result.surface}")

    transcript = Path(args.transcript) if args.transcript else config.output_dir / "chat_transcript.json"
    transcript.parent.mkdir(parents=True, exist_ok=True)
    with open(transcript, "w", encoding="utf-8") as f:
        json.dump({
            "dialogue_id": session.dialogue_id,
            "turns": [{"speaker": t.speaker, "utterance": t.utterance} for t in session.transcript],
            "state": session.state,
            "bookings": [b.fields() for b in session.bookings],
        }, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"\n✓ Transcript saved to {transcript}")
    return EXIT_OK


def _parse_constraints(pairs: List[str]) -> dict:
    constraints = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"constraint '{pair}' must look like key=value")
        key, value = pair.split("=", 1)
        constraints.setdefault(key.strip().lower(), []).append(value.strip())
    return constraints


def cmd_db_query(args) -> int:
    threshold = args.fuzzy_threshold if args.fuzzy_threshold is not None else DEFAULT_FUZZY_THRESHOLD
    db = VenueDatabase.load(args.db_dir, fuzzy_threshold=threshold)
    venues = db.query(args.domain, _parse_constraints(args.constraints))
    if args.json:
        print(json.dumps([{"id": v.id, **v.attributes} for v in venues], indent=2, sort_keys=True))
        return EXIT_OK

    print(f"{len(venues)} {args.domain} rows")
    if venues:
        frame = pd.DataFrame([{"id": v.id, **v.attributes} for v in venues]).set_index("id")
        columns = [c for c in ("name", "trainid", "area", "pricerange", "food", "type", "departure",
                               "destination", "day", "leaveat", "arriveby") if c in frame.columns]
        print(frame[columns or list(frame.columns)].to_string())
    return EXIT_OK


def cmd_select(args) -> int:
    banner("SELECT BEST AGENTS")
    candidates = []
    for entry in args.candidate:
        name, _, paths = entry.partition("=")
        config_path, _, report_path = paths.partition(":")
        if not (name and config_path and report_path):
            raise UsageError(f"candidate '{entry}' must look like NAME=CONFIG.yaml:REPORT.json")
        candidates.append(Candidate(name, load_config(config_path).registry, load_report(report_path)))

    registry = select_best(candidates)
    path = save_registry(registry, args.output)
    for domain, spec in registry.responders.items():
        print(f"{domain}: {spec.name}")
    print(f"\n✓ Registry saved to {path}")
    return EXIT_OK


# ============================================================================
# ARGUMENTS
# ============================================================================

def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="dard", description="DARD dialogue engine and MultiWOZ 2.2 evaluation harness")
    parser.add_argument("--log-level", default="WARNING", help="Logging level (default: WARNING)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    common = ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="Seed for example sampling and taxi synthesis "
                                                 "(default: config seed, else 0)")

    def corpus_args(p, split_default: str):
        p.add_argument("--corpus-root", required=True, help="MultiWOZ 2.2 root directory")
        p.add_argument("--db-dir", help="Database directory (default: <corpus-root>/db)")
        p.add_argument("--split", default=split_default)
        p.add_argument("--output-dir", default="output")

    p = sub.add_parser("eval", parents=[common], help="Score a predictions file")
    corpus_args(p, "test")
    p.add_argument("--predictions", required=True)
    p.add_argument("--fuzzy-threshold", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", parents=[common], help="Replay a split through the registry")
    p.add_argument("--config", required=True)
    p.add_argument("--split")
    p.add_argument("--mode", choices=("end_to_end", "dst_only"), default="end_to_end")
    p.add_argument("--oracle", action="store_true", help="Write gold states and gold replies instead")
    p.add_argument("--output", help="Predictions file (default: from config)")
    p.add_argument("--limit", type=int, help="Only the first N dialogues (by id)")
    p.add_argument("--fuzzy-threshold", type=float)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("export-dst", parents=[common], help="Write DST training examples")
    corpus_args(p, "train")
    p.add_argument("--mode", choices=("single", "per_domain"), default="single")
    p.set_defaults(func=cmd_export_dst)

    p = sub.add_parser("export-responses", parents=[common],
                       help="Write response-generation training examples")
    corpus_args(p, "train")
    p.add_argument("--mode", choices=("single", "per_domain"), default="single")
    p.set_defaults(func=cmd_export_responses)

    p = sub.add_parser("analyze", parents=[common],
                       help="Error taxonomy, venue suggestion buckets, domain detection")
    corpus_args(p, "train")
    p.add_argument("--predictions", help="Predictions file for the DST error categories")
    p.add_argument("--eval-split", default="dev", help="Split the predictions / detector are checked on")
    p.add_argument("--first-turn-only", action="store_true")
    p.add_argument("--fuzzy-threshold", type=float)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("chat", parents=[common], help="Interactive session (reads stdin)")
    p.add_argument("--config", required=True)
    p.add_argument("--transcript", help="Transcript file (default: <output_dir>/chat_transcript.json)")
    p.add_argument("--session-id", default="chat")
    p.add_argument("--fuzzy-threshold", type=float)
    p.set_defaults(func=cmd_chat)

    p = sub.add_parser("db", help="Venue database tools")
    db_sub = p.add_subparsers(dest="db_command", required=True, parser_class=ArgumentParser)
    q = db_sub.add_parser("query", parents=[common], help="Query one domain table")
    q.add_argument("--db-dir", required=True)
    q.add_argument("domain")
    q.add_argument("constraints", nargs="*", help="key=value (repeat a key for alternatives)")
    q.add_argument("--json", action="store_true")
    q.add_argument("--fuzzy-threshold", type=float)
    q.set_defaults(func=cmd_db_query)

    p = sub.add_parser("select", parents=[common], help="Pick the best agent per domain")
    p.add_argument("--candidate", action="append", required=True, help="NAME=CONFIG.yaml:REPORT.json")
    p.add_argument("--output", default="output/registry.yaml")
    p.set_defaults(func=cmd_select)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except USAGE_ERRORS as e:
        print(f"✗ Configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DardError as e:
        print(f"✗ Data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
