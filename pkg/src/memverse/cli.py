"""Command-line client. Every subcommand maps to exactly one HTTP endpoint;
with --url it talks to a running service, otherwise it drives an in-process
app over the store directory, so CLI and HTTP sessions leave identical state.
"""

from __future__ import annotations

import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import click

from .config import EngineConfig, load_config
from .errors import MemverseError
from .orchestrator import Orchestrator
from .service import ParametricClient, create_app
from .types import Modality

STORE_ENV = "MEMVERSE_STORE_DIR"
CONFIG_ENV = "MEMVERSE_CONFIG"


def _load_engine_config(config_path: str | None) -> EngineConfig:
    path = config_path or os.environ.get(CONFIG_ENV)
    if path:
        return load_config(path)
    return EngineConfig()


@contextmanager
def _client(ctx_obj: dict):
    """Yield an httpx-compatible client bound to either a remote service or
    an in-process app over the local store."""
    if ctx_obj.get("url"):
        import httpx

        with httpx.Client(base_url=ctx_obj["url"], timeout=60.0) as client:
            yield client
        return
    from fastapi.testclient import TestClient

    store_dir = ctx_obj.get("store") or os.environ.get(STORE_ENV) or "./memverse-store"
    config = _load_engine_config(ctx_obj.get("config"))
    parametric = None
    if ctx_obj.get("parametric_endpoint"):
        parametric = ParametricClient(ctx_obj["parametric_endpoint"])
    engine = Orchestrator(store_dir, config=config, parametric_fn=parametric)
    app = create_app(engine)
    with TestClient(app, base_url="http://memverse.local") as client:
        yield client


def _emit(ctx_obj: dict, response) -> None:
    if response.status_code >= 400:
        try:
            envelope = response.json()
        except ValueError:
            envelope = {"code": "http_error", "message": response.text}
        click.echo(f"error [{envelope.get('code')}]: {envelope.get('message')}", err=True)
        sys.exit(1)
    payload = response.json()
    if ctx_obj.get("format") == "records":
        click.echo(json.dumps(payload, sort_keys=True, separators=(",", ":")))
    else:
        click.echo(json.dumps(payload, indent=2, sort_keys=True))


@click.group()
@click.option("--url", default=None, help="Base URL of a running memverse service.")
@click.option("--store", default=None, help="Store directory (in-process mode).")
@click.option("--config", "config_path", default=None, help="Engine config file.")
@click.option("--parametric-endpoint", default=None,
              help="URL of a parametric /generate endpoint.")
@click.option("--format", "output_format", type=click.Choice(["text", "records"]),
              default="text", help="Output format.")
@click.pass_context
def main(ctx, url, store, config_path, parametric_endpoint, output_format):
    """memverse: agent memory engine client."""
    ctx.obj = {"url": url, "store": store, "config": config_path,
               "parametric_endpoint": parametric_endpoint, "format": output_format}


@main.command()
@click.argument("source")
@click.option("--modality", type=click.Choice([m.value for m in Modality]),
              default="image")
@click.option("--session", default="default")
@click.option("--turn", type=int, default=None)
@click.pass_context
def ingest(ctx, source, modality, session, turn):
    """Ingest a media file or URI as a captioned memory chunk."""
    uri = source
    if "://" not in source:
        uri = Path(source).absolute().as_uri()
    with _client(ctx.obj) as client:
        if turn is None:
            stats = client.get("/v1/stats").json()
            turn = stats["chunk_count"]
        resp = client.post("/v1/memory", json={
            "content": "", "session_id": session, "turn_index": turn,
            "media": [{"uri": uri, "modality": modality}]})
        _emit(ctx.obj, resp)


@main.command()
@click.argument("question")
@click.option("--path", "path_hint", default=None,
              type=click.Choice(["stm_hit", "ltm_retrieval", "parametric"]))
@click.option("--choices", default=None, help="Comma-separated answer choices.")
@click.option("--hops", type=int, default=None)
@click.option("--budget", type=int, default=None)
@click.option("--top-m", type=int, default=None)
@click.option("--session", default=None)
@click.pass_context
def ask(ctx, question, path_hint, choices, hops, budget, top_m, session):
    """Query the memory."""
    params = {"q": question}
    if path_hint:
        params["path"] = path_hint
    if choices:
        params["choices"] = choices
    if hops is not None:
        params["hops"] = hops
    if budget is not None:
        params["budget"] = budget
    if top_m is not None:
        params["top_m"] = top_m
    if session:
        params["session"] = session
    with _client(ctx.obj) as client:
        _emit(ctx.obj, client.get("/v1/query", params=params))


@main.command()
@click.argument("transcript", type=click.Path(exists=True))
@click.pass_context
def replay(ctx, transcript):
    """Replay a transcript file; each line is `session \\t turn \\t text`."""
    added = 0
    with _client(ctx.obj) as client:
        with open(transcript, encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    click.echo(f"error: line {line_no}: expected 3 tab-separated fields",
                               err=True)
                    sys.exit(1)
                session_id, turn, text = parts
                resp = client.post("/v1/memory", json={
                    "content": text, "session_id": session_id,
                    "turn_index": int(turn)})
                if resp.status_code >= 400:
                    _emit(ctx.obj, resp)
                added += 1
    click.echo(json.dumps({"replayed": added}))


@main.command()
@click.pass_context
def consolidate(ctx):
    """Force a consolidation pass over pending chunks."""
    with _client(ctx.obj) as client:
        _emit(ctx.obj, client.post("/v1/consolidate"))


@main.command()
@click.pass_context
def prune(ctx):
    """Apply the configured prune budget to the graph."""
    with _client(ctx.obj) as client:
        _emit(ctx.obj, client.post("/v1/prune"))


@main.command()
@click.option("--out", default=None, help="Output path for the training file.")
@click.option("--domain-tag", default=None)
@click.pass_context
def export(ctx, out, domain_tag):
    """Export the unexported retrieval traces as a training round."""
    with _client(ctx.obj) as client:
        _emit(ctx.obj, client.post("/v1/export",
                                   json={"out": out, "domain_tag": domain_tag}))


@main.command()
@click.pass_context
def stats(ctx):
    """Show store and graph statistics."""
    with _client(ctx.obj) as client:
        _emit(ctx.obj, client.get("/v1/stats"))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8377)
@click.pass_context
def serve(ctx, host, port):
    """Run the HTTP service over the store directory."""
    import uvicorn

    store_dir = ctx.obj.get("store") or os.environ.get(STORE_ENV) or "./memverse-store"
    config = _load_engine_config(ctx.obj.get("config"))
    parametric = None
    if ctx.obj.get("parametric_endpoint"):
        parametric = ParametricClient(ctx.obj["parametric_endpoint"])
    engine = Orchestrator(store_dir, config=config, parametric_fn=parametric)
    app = create_app(engine)
    uvicorn.run(app, host=host, port=port, log_level="info")


def entrypoint():
    try:
        main(standalone_mode=True)
    except MemverseError as exc:
        click.echo(f"error [{exc.code}]: {exc.message}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    entrypoint()
