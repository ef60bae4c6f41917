"""Thin HTTP client CLI plus the `serve` entrypoint.

Every subcommand except `serve` talks to a running service over its REST
endpoints and prints structured JSON.  `gate` maps the overall verdict onto
exit codes for CI pipelines: 0 pass, 1 fail, 2 timeout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import httpx

DEFAULT_URL = os.environ.get("EXALAB_URL", "http://127.0.0.1:8000")

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_TIMEOUT = 2
EXIT_ERROR = 3


def _print(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _client(url: str, timeout: float = 30.0) -> httpx.Client:
    return httpx.Client(base_url=url, timeout=timeout)


def cmd_serve(args) -> int:
    import uvicorn

    from .api import create_app
    from .config import load_config
    from .orchestrator import Orchestrator

    config = load_config(args.config)
    if args.host:
        config.host = args.host
    if args.port is not None:
        config.port = args.port
    orch = Orchestrator(config)
    uvicorn.run(create_app(orch), host=config.host, port=config.port, log_level="info")
    return 0


def cmd_submit(args) -> int:
    with _client(args.url) as client:
        response = client.post("/experiments", json={"user_request": args.request})
    _print(response.json())
    return EXIT_PASS if response.status_code in (200, 202) else EXIT_ERROR


def cmd_clarify(args) -> int:
    with _client(args.url) as client:
        response = client.post(
            f"/experiments/clarify/{args.token}", json={"answer_text": args.answer}
        )
    _print(response.json())
    return EXIT_PASS if response.status_code in (200, 202) else EXIT_ERROR


def cmd_status(args) -> int:
    with _client(args.url) as client:
        response = client.get(f"/experiments/{args.experiment_id}")
        if response.status_code != 200:
            _print(response.json())
            return EXIT_ERROR
        _print(response.json())
        if args.descriptor_out:
            desc = client.get(f"/experiments/{args.experiment_id}/descriptor")
            if desc.status_code != 200:
                _print(desc.json())
                return EXIT_ERROR
            Path(args.descriptor_out).write_bytes(desc.content)
    return EXIT_PASS


def cmd_results(args) -> int:
    with _client(args.url) as client:
        response = client.get(f"/experiments/{args.experiment_id}/metrics")
    if response.status_code != 200:
        _print(response.json())
        return EXIT_ERROR
    archive = response.json()
    if args.csv:
        from .telemetry import archive_to_csv

        text = archive_to_csv(archive)
        if args.output:
            Path(args.output).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
    elif args.output:
        Path(args.output).write_text(json.dumps(archive, indent=2, sort_keys=True))
    else:
        _print(archive)
    return EXIT_PASS


def cmd_gate(args) -> int:
    deadline = time.monotonic() + args.timeout_s
    results: dict[str, str] = {}
    with _client(args.url, timeout=args.timeout_s + 30.0) as client:
        for experiment_id in args.experiment_ids:
            remaining = max(0.0, deadline - time.monotonic())
            response = client.get(
                f"/experiments/{experiment_id}/gate", params={"timeout_s": remaining}
            )
            if response.status_code != 200:
                _print(response.json())
                return EXIT_ERROR
            results[experiment_id] = response.json()["result"]
    overall = "pass"
    if any(r == "fail" for r in results.values()):
        overall = "fail"
    elif any(r == "timeout" for r in results.values()):
        overall = "timeout"
    _print({"results": results, "overall": overall})
    return {"pass": EXIT_PASS, "fail": EXIT_FAIL, "timeout": EXIT_TIMEOUT}[overall]


def cmd_cancel(args) -> int:
    with _client(args.url) as client:
        response = client.delete(f"/experiments/{args.experiment_id}")
    _print(response.json())
    return EXIT_PASS if response.status_code == 200 else EXIT_ERROR


def cmd_query(args) -> int:
    params = {}
    for key in ("core_name", "modality", "state", "descriptor_ref", "since", "until"):
        value = getattr(args, key)
        if value:
            params[key] = value
    if args.archived:
        params["archived"] = "true"
    with _client(args.url) as client:
        response = client.get("/experiments", params=params)
    _print(response.json())
    return EXIT_PASS if response.status_code == 200 else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exalab",
                                     description="experimentation-as-a-service client")
    parser.add_argument("--url", default=DEFAULT_URL,
                        help="service base URL (env EXALAB_URL)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the orchestrator service")
    p.add_argument("--config", default=None, help="path to the service config file")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("submit", help="submit a natural-language experiment request")
    p.add_argument("request")
    p.set_defaults(func=cmd_submit)

    p = sub.add_parser("clarify", help="answer a clarification question")
    p.add_argument("token")
    p.add_argument("answer")
    p.set_defaults(func=cmd_clarify)

    p = sub.add_parser("status", help="lifecycle state and log of one experiment")
    p.add_argument("experiment_id")
    p.add_argument("--descriptor-out", default=None,
                   help="write the .exac.json descriptor to this path")
    p.set_defaults(func=cmd_status)

    p = sub.add_parser("results", help="archived metrics of a completed experiment")
    p.add_argument("experiment_id")
    p.add_argument("--csv", action="store_true", help="raw samples as CSV")
    p.add_argument("--output", "-o", default=None)
    p.set_defaults(func=cmd_results)

    p = sub.add_parser("gate", help="CI gate: wait for verdicts, map to exit code")
    p.add_argument("experiment_ids", nargs="+")
    p.add_argument("--timeout-s", type=float, default=300.0, dest="timeout_s")
    p.set_defaults(func=cmd_gate)

    p = sub.add_parser("cancel", help="cancel an experiment")
    p.add_argument("experiment_id")
    p.set_defaults(func=cmd_cancel)

    p = sub.add_parser("query", help="search the experiment repository")
    p.add_argument("--core-name", dest="core_name", default=None)
    p.add_argument("--modality", default=None)
    p.add_argument("--state", default=None)
    p.add_argument("--descriptor-ref", dest="descriptor_ref", default=None)
    p.add_argument("--since", default=None)
    p.add_argument("--until", default=None)
    p.add_argument("--archived", action="store_true",
                   help="list archived bundles only")
    p.set_defaults(func=cmd_query)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except httpx.HTTPError as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return EXIT_ERROR


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
