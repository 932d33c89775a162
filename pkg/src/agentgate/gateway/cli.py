"""Command-line entry points: serve, register, invoke, approve/reject,
simulate, audit tail.

``serve``, ``register``, ``simulate`` and ``audit tail`` work against the
local config/data directory; ``invoke``, ``approve`` and ``reject`` talk to a
running gateway over HTTP.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import requests

from ..errors import GatewayError
from ..journal import AppendOnlyJournal
from .config import DEFAULT_TASKS_PATH, load_config
from .runtime import GatewayRuntime


@click.group()
def main() -> None:
    """Agent-first tool gateway."""


def _build_runtime(config_path: str | None) -> GatewayRuntime:
    return GatewayRuntime(load_config(config_path))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def serve(config_path: str | None) -> None:
    """Run the HTTP gateway."""
    from .http import serve as run_server

    runtime = _build_runtime(config_path)
    click.echo(f"listening on {runtime.config.listen}", err=True)
    run_server(runtime)


@main.command()
@click.argument("descriptor_file", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--tenant", default=None, help="Tenant override (defaults to descriptor.tenant).")
@click.option("--handler-kind", default="entity_search")
@click.option("--handler-config", default="{}", help="JSON config for the handler factory.")
@click.option("--replace", is_flag=True, default=False)
def register(
    descriptor_file: str,
    config_path: str | None,
    tenant: str | None,
    handler_kind: str,
    handler_config: str,
    replace: bool,
) -> None:
    """Validate a descriptor file and persist the registration.

    The record is appended to <data_dir>/registered_tools.jsonl, which the
    server loads at startup after the bundled fixtures.
    """
    runtime = _build_runtime(config_path)
    doc = json.loads(Path(descriptor_file).read_text(encoding="utf-8"))
    spec = {"kind": handler_kind, "config": json.loads(handler_config)}
    try:
        receipt = runtime.register_descriptor(
            tenant or doc.get("tenant", ""), doc, spec, replace=replace
        )
    except GatewayError as exc:
        click.echo(json.dumps({"ok": False, "error": {"cause": exc.code, "message": exc.message}}))
        sys.exit(1)

    if runtime.config.data_dir is not None:
        line = {
            "kind": "tool",
            "tenant": receipt.tenant,
            "descriptor": doc,
            "handler": spec,
            "replace": replace,
        }
        path = Path(runtime.config.data_dir) / "registered_tools.jsonl"
        with path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(line, separators=(",", ":")) + "\n")
    click.echo(
        json.dumps(
            {
                "ok": True,
                "receipt": {
                    "tenant": receipt.tenant,
                    "name": receipt.name,
                    "version": receipt.version,
                    "replaced": receipt.replaced,
                },
            }
        )
    )


def _client_call(url: str, token: str, method: str, path: str, body: dict | None = None) -> dict:
    headers = {"Authorization": f"Bearer {token}"}
    response = requests.request(method, url.rstrip("/") + path, json=body, headers=headers, timeout=30)
    if response.status_code == 401:
        click.echo(json.dumps({"ok": False, "error": {"cause": "unauthenticated"}}))
        sys.exit(1)
    return response.json()


@main.command()
@click.argument("tool")
@click.argument("input_file", type=click.Path(exists=True))
@click.option("--verb", default="auto", help="One verb, or 'auto' for the full loop.")
@click.option("--url", default="http://127.0.0.1:8787")
@click.option("--token", required=True)
def invoke(tool: str, input_file: str, verb: str, url: str, token: str) -> None:
    """Invoke a tool through a running gateway."""
    body = {
        "tool": tool,
        "verb": verb,
        "input": json.loads(Path(input_file).read_text(encoding="utf-8")),
    }
    click.echo(json.dumps(_client_call(url, token, "POST", "/invoke", body), indent=2))


@main.command()
@click.argument("pending_id")
@click.option("--rationale", default="")
@click.option("--url", default="http://127.0.0.1:8787")
@click.option("--token", required=True)
def approve(pending_id: str, rationale: str, url: str, token: str) -> None:
    """Approve a pending snapshot (resumes the suspended execution)."""
    body = {"verdict": "approve", "rationale": rationale}
    click.echo(
        json.dumps(_client_call(url, token, "POST", f"/approvals/{pending_id}/decision", body), indent=2)
    )


@main.command()
@click.argument("pending_id")
@click.option("--rationale", required=True)
@click.option("--url", default="http://127.0.0.1:8787")
@click.option("--token", required=True)
def reject(pending_id: str, rationale: str, url: str, token: str) -> None:
    """Reject a pending snapshot with a mandatory rationale."""
    body = {"verdict": "reject", "rationale": rationale}
    click.echo(
        json.dumps(_client_call(url, token, "POST", f"/approvals/{pending_id}/decision", body), indent=2)
    )


@main.command()
@click.argument("tasks_file", type=click.Path(exists=True), required=False)
@click.option("--mode", type=click.Choice(["six_verb", "exact_id_baseline"]), default="six_verb")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None, help="Override the task file's seed.")
def simulate(tasks_file: str | None, mode: str, config_path: str | None, seed: int | None) -> None:
    """Run the scripted-planner suite and print the report."""
    from .simulate import load_tasks, run_simulation

    file_seed, tasks = load_tasks(tasks_file or DEFAULT_TASKS_PATH)
    report = run_simulation(
        tasks, mode, seed=seed if seed is not None else file_seed, config=load_config(config_path)
    )
    click.echo(json.dumps(report, indent=2))


@main.group()
def audit() -> None:
    """Audit journal commands."""


@audit.command()
@click.option("-n", "count", type=int, default=20)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--url", default=None, help="Read from a running gateway instead of the local journal.")
@click.option("--token", default=None)
def tail(count: int, config_path: str | None, url: str | None, token: str | None) -> None:
    """Print the last N audit records."""
    if url:
        if not token:
            raise click.UsageError("--token is required with --url")
        doc = _client_call(url, token, "GET", f"/audit?n={count}")
        records = doc.get("records", [])
    else:
        config = load_config(config_path)
        path = config.journal_path("audit.jsonl")
        if path is None or not Path(path).exists():
            raise click.UsageError("no local audit journal (config has no data_dir); use --url")
        records = AppendOnlyJournal(path).tail(count)
    for record in records:
        click.echo(json.dumps(record, separators=(",", ":")))


if __name__ == "__main__":  # pragma: no cover
    main()
