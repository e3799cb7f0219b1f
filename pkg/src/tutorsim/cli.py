"""Command-line entry points: the session service and the transcript
evaluation harness."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .catalog import load_catalog, load_default_catalog
from .evalharness import RaterConfig, batch_compare, score_transcript
from .gateway import BackendConfig, configure_backend


def _load_backend_config(path: str | None) -> BackendConfig | None:
    if not path:
        return None
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return BackendConfig.from_dict(raw)


def serve_main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(
        prog="tutorsim-serve", description="Run the tutoring-session HTTP service."
    )
    parser.add_argument("--catalog", help="catalog JSON path (default: shipped catalog)")
    parser.add_argument("--data-dir", default="sessions", help="event-log directory")
    parser.add_argument("--backend-config", help="backend config JSON path")
    parser.add_argument("--frontend-dir", help="static web client directory to serve at /")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    args = parser.parse_args(argv)

    import uvicorn

    from .service import build_store, create_app

    store = build_store(
        catalog_path=args.catalog,
        data_dir=args.data_dir,
        backend_config=_load_backend_config(args.backend_config),
    )
    app = create_app(store, frontend_dir=args.frontend_dir)
    uvicorn.run(app, host=args.host, port=args.port)


def _rater_config(args) -> RaterConfig:
    backend_config = _load_backend_config(args.backend_config)
    backend = configure_backend(backend_config) if backend_config else None
    catalog = load_catalog(args.catalog) if args.catalog else load_default_catalog()
    return RaterConfig(kind=args.rater, backend=backend, catalog=catalog)


def eval_main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(
        prog="tutorsim-eval", description="Score and compare exported transcripts."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    score_p = sub.add_parser("score", help="score one transcript on the four criteria")
    score_p.add_argument("transcript", help="transcript .jsonl file")
    score_p.add_argument("--rater", default="heuristic", choices=["heuristic", "model", "human"])
    score_p.add_argument("--backend-config", help="backend config JSON (model rater)")
    score_p.add_argument("--catalog", help="catalog JSON path (default: shipped catalog)")

    compare_p = sub.add_parser("compare", help="blinded comparison of two transcript directories")
    compare_p.add_argument("dir_a")
    compare_p.add_argument("dir_b")
    compare_p.add_argument("--rater", default="heuristic", choices=["heuristic", "model", "human"])
    compare_p.add_argument("--backend-config", help="backend config JSON (model rater)")
    compare_p.add_argument("--catalog", help="catalog JSON path (default: shipped catalog)")
    compare_p.add_argument("--out", help="write the CSV report here")

    args = parser.parse_args(argv)
    config = _rater_config(args)

    if args.command == "score":
        result = score_transcript(args.transcript, config)
        print(json.dumps(
            {
                "transcript_id": result.transcript_id,
                "rater": result.rater,
                "scores": result.scores,
                "rationale": result.rationale,
            },
            indent=2,
            ensure_ascii=False,
        ))
        return

    report = batch_compare(args.dir_a, args.dir_b, config)
    sys.stdout.write(report.format_table())
    if args.out:
        Path(args.out).write_text(report.to_csv(), encoding="utf-8")
        print(f"CSV report written to {args.out}")


if __name__ == "__main__":  # pragma: no cover
    eval_main()
