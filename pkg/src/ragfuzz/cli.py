"""Operator entry point: ingest a document, build the index, run campaigns,
benchmark crews-on vs crews-off, and render report comparisons.

Exit codes: 0 success, 1 campaign-level failure, 2 usage/config error.
Every artifact embeds the resolved configuration and tool version.
"""

from __future__ import annotations

import datetime
import json
import sys
from pathlib import Path

import click

from ragfuzz import __version__
from ragfuzz import engine as eng
from ragfuzz import knowledge_store as ks
from ragfuzz import rfc_pipeline as rp
from ragfuzz.crews import CrewAuditLog
from ragfuzz.cve import CveClient
from ragfuzz.llm_gateway import (
    GatewayUnavailable,
    HttpChatProvider,
    LlmGateway,
    ReplayProvider,
)
from ragfuzz.offline import DemoProvider

ASSETS = Path(__file__).parent / "assets"
DEFAULT_SCRIPT = ASSETS / "demo" / "gateway_script.json"
DEFAULT_SEEDS = ASSETS / "demo" / "seeds"
DEFAULT_CVE_FIXTURES = ASSETS / "cve_fixtures"


def _build_gateway(mode: str, script, provider_config, transcript, record_to):
    if mode == "scripted":
        provider = DemoProvider(script or DEFAULT_SCRIPT)
    elif mode == "replay":
        if not transcript:
            raise click.UsageError("--gateway replay needs --transcript")
        provider = ReplayProvider(transcript)
    else:
        if not provider_config:
            raise click.UsageError("--gateway live needs --provider-config")
        provider = HttpChatProvider.from_config(provider_config)
    return LlmGateway(provider, record_to=record_to)


@click.group()
@click.version_option(version=__version__)
def main():
    """Coverage-guided RTSP fuzzing with a retrieval-augmented crew pipeline."""


@main.command()
@click.argument("rfc_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default="chunk_store.json", show_default=True,
              help="Chunk store output path.")
@click.option("--props", "props_out", default="propositions.json", show_default=True,
              help="Extracted statement list output path.")
@click.option("--theta", default=0.5, show_default=True,
              help="Chunk compatibility threshold in [0,1].")
@click.option("--max-chunks", default=64, show_default=True)
@click.option("--refine-every", default=5, show_default=True)
@click.option("--section-budget", default=rp.DEFAULT_SECTION_BUDGET, show_default=True)
@click.option("--filter-mode", type=click.Choice(["rules", "model"]),
              default="rules", show_default=True)
@click.option("--gateway", "gateway_mode",
              type=click.Choice(["scripted", "live", "replay"]),
              default="scripted", show_default=True)
@click.option("--script", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Scripted-gateway asset (defaults to the packaged demo script).")
@click.option("--provider-config", type=click.Path(exists=True), default=None)
@click.option("--transcript", type=click.Path(), default=None)
@click.option("--record-to", type=click.Path(), default=None)
def ingest(rfc_path, out, props_out, theta, max_chunks, refine_every,
           section_budget, filter_mode, gateway_mode, script, provider_config,
           transcript, record_to):
    """Document -> filtered sections -> statements -> chunk store."""
    try:
        cfg = rp.ChunkerConfig(theta=theta, max_chunks=max_chunks,
                               refine_every=refine_every)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    gateway = _build_gateway(gateway_mode, script, provider_config,
                             transcript, record_to)
    text = Path(rfc_path).read_text(encoding="utf-8")
    try:
        result = rp.run_pipeline(text, gateway, budget=section_budget, cfg=cfg,
                                 filter_mode=filter_mode)
    except (rp.EmptyDocument, rp.PropositionParseFailure, GatewayUnavailable) as exc:
        click.echo(f"ingest failed: {exc}", err=True)
        sys.exit(1)
    rp.write_chunk_store(out, result.chunks, result.propositions)
    rp.write_propositions(props_out, result.propositions)
    # The store itself keeps the plain chunk-map shape consumers expect, so
    # the run configuration and tool version go in a sidecar.
    meta = {
        "tool_version": __version__,
        "config": {
            "rfc_path": str(rfc_path), "theta": theta, "max_chunks": max_chunks,
            "refine_every": refine_every, "section_budget": section_budget,
            "filter_mode": filter_mode, "gateway_mode": gateway_mode,
        },
    }
    Path(str(out) + ".meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for section_id, reason in result.skipped_sections:
        click.echo(f"warning: section {section_id} skipped: {reason}", err=True)
    click.echo(
        f"{len(result.paragraphs)} paragraphs -> {len(result.sections)} sections "
        f"-> {len(result.propositions)} statements -> {len(result.chunks)} chunks"
    )
    click.echo(f"chunk store: {out}")


@main.command()
@click.argument("chunk_store", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default="index.json", show_default=True)
@click.option("--dims", default=256, show_default=True)
@click.option("--embed-seed", default=2326, show_default=True)
def index(chunk_store, out, dims, embed_seed):
    """Embed a chunk store into a searchable index file."""
    chunks = ks.load_chunk_store(chunk_store)
    if not chunks:
        raise click.UsageError("chunk store is empty")
    provider = ks.HashingEmbedder(dims=dims, seed=embed_seed)
    built = ks.build_index(chunks, provider)
    meta = {"tool_version": __version__,
            "config": {"chunk_store": str(chunk_store), "dims": dims,
                       "embed_seed": embed_seed}}
    ks.persist_index(built, out, meta=meta)
    click.echo(f"indexed {len(built.entries)} chunks -> {out}")


def _load_seed_dir(path: Path) -> list:
    files = sorted(p for p in path.iterdir() if p.is_file())
    return [p.read_bytes() for p in files]


def _run_dir(base: Path, label: str, rng_seed: int) -> Path:
    stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
    return base / f"{stamp}-{label}-seed{rng_seed}"


def _campaign(cfg, seeds_dir, index_path, gateway_mode, script, provider_config,
              transcript, record_to, cve_fixtures, out_dir, label):
    seeds_path = Path(seeds_dir)
    if not seeds_path.is_dir():
        raise click.UsageError(f"seed directory {seeds_dir} does not exist")
    seeds = _load_seed_dir(seeds_path)
    if not seeds:
        raise click.UsageError(f"seed directory {seeds_dir} is empty")

    vector_index = None
    gateway = None
    cve_client = None
    if cfg.crews_enabled:
        loaded = ks.load_index(index_path, provider=None)
        provider = ks.provider_for_id(loaded.embedder_id)
        vector_index = ks.load_index(index_path, provider=provider)
        gateway = _build_gateway(gateway_mode, script, provider_config,
                                 transcript, record_to)
        cve_client = CveClient(fixture_dir=cve_fixtures or DEFAULT_CVE_FIXTURES)

    audit = CrewAuditLog(Path(out_dir) / "crew_audit.jsonl"
                         if cfg.crews_enabled else None)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    try:
        stats = eng.run_campaign(cfg, seeds=seeds, index=vector_index,
                                 gateway=gateway, cve_client=cve_client,
                                 audit=audit)
    except eng.CampaignAborted as exc:
        click.echo(f"campaign aborted: {exc}", err=True)
        sys.exit(1)
    extra = {
        "subcommand": label,
        "seeds_dir": str(seeds_dir),
        "index": str(index_path) if index_path else None,
        "gateway_mode": gateway_mode if cfg.crews_enabled else None,
    }
    report = eng.write_report(out_dir, stats, cfg, extra=extra)
    return stats, report


_fuzz_options = [
    click.option("--seeds", "seeds_dir", type=click.Path(), default=None,
                 help="Seed directory (defaults to the packaged demo seeds)."),
    click.option("--index", "index_path", type=click.Path(), default=None,
                 help="Index file (required when crews are enabled)."),
    click.option("--budget", default=10000, show_default=True),
    click.option("--plateau-window", default=eng.DEFAULT_PLATEAU_WINDOW,
                 show_default=True),
    click.option("--plateau-cap", default=eng.DEFAULT_PLATEAU_CAP, show_default=True),
    click.option("--sample-interval", default=eng.DEFAULT_SAMPLE_INTERVAL,
                 show_default=True),
    click.option("--top-k", default=4, show_default=True),
    click.option("--gateway", "gateway_mode",
                 type=click.Choice(["scripted", "live", "replay"]),
                 default="scripted", show_default=True),
    click.option("--script", type=click.Path(exists=True, dir_okay=False),
                 default=None),
    click.option("--provider-config", type=click.Path(exists=True), default=None),
    click.option("--transcript", type=click.Path(), default=None),
    click.option("--record-to", type=click.Path(), default=None),
    click.option("--cve-fixtures", type=click.Path(), default=None),
    click.option("--out", "out_dir", type=click.Path(), default=None,
                 help="Run directory (default: runs/<timestamp>-seed<rng>)."),
]


def _apply_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return wrap


@main.command()
@_apply_options(_fuzz_options)
@click.option("--rng-seed", default=1, show_default=True)
@click.option("--crews/--no-crews", "crews_enabled", default=False, show_default=True)
def fuzz(seeds_dir, index_path, budget, plateau_window, plateau_cap,
         sample_interval, top_k, gateway_mode, script, provider_config,
         transcript, record_to, cve_fixtures, out_dir, rng_seed, crews_enabled):
    """Run one fuzzing campaign against the in-process target."""
    if crews_enabled and not index_path:
        raise click.UsageError("--crews needs --index")
    cfg = eng.CampaignConfig(
        budget=budget, rng_seed=rng_seed, crews_enabled=crews_enabled,
        plateau_window=plateau_window, plateau_cap=plateau_cap,
        sample_interval=sample_interval, top_k=top_k,
        crew_deadline=30.0 if gateway_mode == "live" else None,
    )
    seeds_dir = seeds_dir or DEFAULT_SEEDS
    out_dir = Path(out_dir) if out_dir else _run_dir(
        Path("runs"), "crews" if crews_enabled else "baseline", rng_seed)
    stats, report = _campaign(cfg, seeds_dir, index_path, gateway_mode, script,
                              provider_config, transcript, record_to,
                              cve_fixtures, out_dir, "fuzz")
    click.echo(
        f"executions={stats.executions} branches={stats.branches} "
        f"states={stats.states} transitions={stats.transitions} "
        f"crashes={len(stats.crashes)}"
    )
    click.echo(f"report: {report}")


@main.command()
@_apply_options(_fuzz_options)
@click.option("--rng-seeds", default="101,202,303", show_default=True,
              help="Comma-separated rng seeds; each runs a baseline/crews pair.")
def bench(seeds_dir, index_path, budget, plateau_window, plateau_cap,
          sample_interval, top_k, gateway_mode, script, provider_config,
          transcript, record_to, cve_fixtures, out_dir, rng_seeds):
    """Paired baseline vs crew-enabled campaigns over the same rng seeds."""
    if not index_path:
        raise click.UsageError("bench needs --index")
    try:
        seed_list = [int(s) for s in rng_seeds.split(",") if s.strip()]
    except ValueError:
        raise click.UsageError("--rng-seeds must be comma-separated integers")
    seeds_dir = seeds_dir or DEFAULT_SEEDS
    base = Path(out_dir) if out_dir else _run_dir(Path("runs"), "bench",
                                                  seed_list[0])
    rows = []
    for rng_seed in seed_list:
        pair = {}
        for crews_enabled, label in ((False, "baseline"), (True, "crews")):
            cfg = eng.CampaignConfig(
                budget=budget, rng_seed=rng_seed, crews_enabled=crews_enabled,
                plateau_window=plateau_window, plateau_cap=plateau_cap,
                sample_interval=sample_interval, top_k=top_k,
            )
            run_out = base / f"{label}-seed{rng_seed}"
            stats, _ = _campaign(cfg, seeds_dir, index_path, gateway_mode,
                                 script, provider_config, transcript,
                                 record_to, cve_fixtures, run_out, "bench")
            pair[label] = stats
        rows.append((rng_seed, pair))
        table = eng.compare_reports(
            [pair["baseline"].to_json(eng.CampaignConfig(budget=budget, rng_seed=rng_seed)),
             pair["crews"].to_json(eng.CampaignConfig(budget=budget, rng_seed=rng_seed,
                                                      crews_enabled=True))],
            ["baseline", "crews"],
        )
        click.echo(f"\nrng seed {rng_seed}:")
        click.echo(eng.render_comparison(table))
    click.echo(f"\nruns under {base}")


@main.command()
@click.argument("reports", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--csv", "csv_out", type=click.Path(), default=None)
def report(reports, csv_out):
    """Compare campaign reports: branches / states / transitions table."""
    loaded = [eng.load_report(p) for p in reports]
    labels = [Path(p).parent.name or f"run{i}" for i, p in enumerate(reports)]
    table = eng.compare_reports(loaded, labels)
    click.echo(eng.render_comparison(table))
    if csv_out:
        Path(csv_out).write_text(eng.comparison_csv(table), encoding="utf-8")
        click.echo(f"csv: {csv_out}")


if __name__ == "__main__":
    main()
