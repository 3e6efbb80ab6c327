"""Operator command line for a running hub service.

Exit codes: 0 success, 1 operation error (the service's ``{error_code,
message}`` echoed to stderr), 2 usage error. Output is line-oriented and
machine-parseable via ``--format csv|plain`` (plain is tab-separated).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from typing import Optional

import requests

DEFAULT_URL = "http://127.0.0.1:8080"


class _OperationError(Exception):
    def __init__(self, error_code: str, message: str):
        super().__init__(message)
        self.error_code = error_code
        self.message = message


class Client:
    def __init__(self, base_url: str, timeout_s: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s

    def request(self, method: str, path: str, *, json_body: Optional[dict] = None,
                data: Optional[bytes] = None, files=None, params=None):
        try:
            resp = requests.request(method, self.base_url + path, json=json_body,
                                    data=data, files=files, params=params,
                                    timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise _OperationError("ServiceUnreachable", str(exc)) from exc
        if resp.status_code >= 400:
            try:
                doc = resp.json()
                raise _OperationError(doc.get("error_code", "Error"),
                                      doc.get("message", resp.text))
            except ValueError:
                raise _OperationError("Error", resp.text) from None
        return resp


def _emit_rows(header: list[str], rows: list[list], fmt: str) -> None:
    if fmt == "csv":
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    else:
        print("\t".join(header))
        for row in rows:
            print("\t".join(str(v) for v in row))


def _source_args(args) -> dict:
    if args.source_hub:
        return {"kind": "hub", "repo_id": args.source_hub}
    return {"kind": "path", "path": args.source_path}


# --- subcommand handlers ----------------------------------------------------

def _cmd_model_register(client: Client, args) -> None:
    doc = client.request("POST", "/api/models", json_body={
        "source": _source_args(args),
        "display_name": args.name,
        "version": args.version,
    }).json()
    _emit_rows(["model_id", "version", "status"],
               [[doc["model_id"], doc["version"], doc["status"]]], args.format)


def _cmd_model_list(client: Client, args) -> None:
    params = {"status": args.status} if args.status else None
    docs = client.request("GET", "/api/models", params=params).json()
    rows = [[d["model_id"], d["version"], d["status"], d["display_name"]]
            for d in docs]
    _emit_rows(["model_id", "version", "status", "display_name"], rows, args.format)


def _cmd_model_action(action: str):
    def handler(client: Client, args) -> None:
        body = {"mode": args.mode} if action == "stop" else None
        doc = client.request(
            "POST", f"/api/models/{args.model}/{args.version}/{action}",
            json_body=body).json()
        print(json.dumps(doc))
    return handler


def _cmd_analyze(client: Client, args) -> None:
    with open(args.image, "rb") as fh:
        image_bytes = fh.read()
    files = {"image": (os.path.basename(args.image), image_bytes)}
    data = {"prompt": args.prompt, "model_id": args.model, "version": args.version}
    doc = client.request("POST", "/api/analyze", files=files, data=data).json()
    _emit_rows(
        ["job_id", "model_id", "version", "latency_ms", "output_text"],
        [[doc["job_id"], doc["model_id"], doc["version"], doc["latency_ms"],
          doc["output_text"]]], args.format)


def _cmd_cases_ingest(client: Client, args) -> None:
    with open(args.manifest, "rb") as fh:
        manifest = fh.read()
    doc = client.request("POST", "/api/cases/ingest", data=manifest).json()
    print(f"ingested {doc['ingested']} cases")


def _cmd_score_submit(client: Client, args) -> None:
    body = {"case_id": args.case, "model_id": args.model, "version": args.version,
            "score": args.score, "comment": args.comment}
    if args.clinician:
        body["clinician_id"] = args.clinician
    doc = client.request("POST", "/api/scores", json_body=body).json()
    print(f"{doc['score_id']}\t{doc['score']}\t{doc['rubric_label']}")


def _cmd_scores_export(client: Client, args) -> None:
    text = client.request("GET", "/api/export/scores.csv").text
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)


def _cmd_telemetry_show(client: Client, args) -> None:
    params = {}
    if args.from_ms is not None:
        params["from_ms"] = args.from_ms
    if args.to_ms is not None:
        params["to_ms"] = args.to_ms
    text = client.request("GET", f"/api/telemetry/{args.model}",
                          params=params or None).text
    if args.format == "csv":
        sys.stdout.write(text)
    else:
        for row in csv.reader(io.StringIO(text)):
            print("\t".join(row))


def _cmd_audit_verify(client: Client, args) -> None:
    doc = client.request("GET", "/api/audit/verify").json()
    if doc["ok"]:
        print(f"Ok ({doc['entries']} entries)")
    else:
        print(f"BrokenAt({doc['broken_at']})")
        raise _OperationError("AuditBroken", f"chain broken at {doc['broken_at']}")


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modelhub",
                                     description="Operator CLI for a running hub service")
    parser.add_argument("--service-url",
                        default=os.environ.get("MODELHUB_URL", DEFAULT_URL))
    parser.add_argument("--format", choices=("csv", "plain"), default="plain")
    sub = parser.add_subparsers(dest="command", required=True)

    model = sub.add_parser("model").add_subparsers(dest="action", required=True)
    reg = model.add_parser("register")
    src = reg.add_mutually_exclusive_group(required=True)
    src.add_argument("--source-hub")
    src.add_argument("--source-path")
    reg.add_argument("--name", required=True)
    reg.add_argument("--version", required=True)
    reg.set_defaults(func=_cmd_model_register)
    lst = model.add_parser("list")
    lst.add_argument("--status")
    lst.set_defaults(func=_cmd_model_list)
    for action in ("acquire", "start", "stop", "swap"):
        p = model.add_parser(action)
        p.add_argument("--model", required=True)
        p.add_argument("--version", required=True)
        if action == "stop":
            p.add_argument("--mode", choices=("drain", "kill"), default="drain")
        p.set_defaults(func=_cmd_model_action(action))

    analyze = sub.add_parser("analyze")
    analyze.add_argument("--image", required=True)
    analyze.add_argument("--prompt", required=True)
    analyze.add_argument("--model", required=True)
    analyze.add_argument("--version", default="")
    analyze.set_defaults(func=_cmd_analyze)

    cases = sub.add_parser("cases").add_subparsers(dest="action", required=True)
    ingest = cases.add_parser("ingest")
    ingest.add_argument("--manifest", required=True)
    ingest.set_defaults(func=_cmd_cases_ingest)

    score = sub.add_parser("score").add_subparsers(dest="action", required=True)
    submit = score.add_parser("submit")
    submit.add_argument("--case", required=True)
    submit.add_argument("--model", required=True)
    submit.add_argument("--version", default="")
    submit.add_argument("--score", type=int, required=True)
    submit.add_argument("--comment", default="")
    submit.add_argument("--clinician", default="")
    submit.set_defaults(func=_cmd_score_submit)

    scores = sub.add_parser("scores").add_subparsers(dest="action", required=True)
    export = scores.add_parser("export")
    export.add_argument("--out", default="")
    export.set_defaults(func=_cmd_scores_export)

    telemetry = sub.add_parser("telemetry").add_subparsers(dest="action", required=True)
    show = telemetry.add_parser("show")
    show.add_argument("--model", required=True)
    show.add_argument("--from-ms", type=int, default=None)
    show.add_argument("--to-ms", type=int, default=None)
    show.set_defaults(func=_cmd_telemetry_show)

    audit = sub.add_parser("audit").add_subparsers(dest="action", required=True)
    verify = audit.add_parser("verify")
    verify.set_defaults(func=_cmd_audit_verify)

    return parser


def cli_dispatch(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    client = Client(args.service_url)
    try:
        args.func(client, args)
    except _OperationError as exc:
        print(json.dumps({"error_code": exc.error_code, "message": exc.message}),
              file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error_code": "IOError", "message": str(exc)}),
              file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
