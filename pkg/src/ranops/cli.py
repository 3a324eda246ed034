"""Command line entry points: serve the gateway, run the benchmark
suite, fire one-shot queries, and export artifacts."""

from __future__ import annotations

import json
import os
import sys
from importlib import resources

import click

from .agent import AgentGraph, AnswerLog
from .backends import DelayedBackend, build_backends
from .evalkit import (
    EvalReport,
    load_reference_rows,
    load_suite,
    load_tta_baseline,
    reference_pareto_points,
    render_table,
    run_suite,
    write_cdf_csv,
    write_pareto_csv,
)
from .runtime import ServiceHub
from .tools import ToolRegistry


def packaged_fixture(name: str) -> str:
    return str(resources.files("ranops.fixtures") / name)


def _load_json(path: str, what: str) -> dict:
    if not os.path.exists(path):
        raise click.UsageError(f"{what} file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _backends_config(path: str | None) -> dict | None:
    if path is None:
        return None
    return _load_json(path, "backend config")


def _make_env_factory(fixture: dict, backends_config: dict | None, seed: int = 0):
    def factory():
        hub = ServiceHub(fixture=fixture, seed=seed)
        registry = ToolRegistry(hub)
        backends = build_backends(backends_config)
        backends.setdefault(
            "delayed-scripted", DelayedBackend(backends["scripted"], delay_ms=100.0)
        )
        graph = AgentGraph(hub, registry, backends, answer_log=AnswerLog())
        return hub, graph, registry

    return factory


@click.group()
def main():
    """Agentic observability and control plane for a simulated Open RAN."""


@main.command()
@click.option("--fixture", default=None, help="Scenario fixture JSON (default: built-in testbed).")
@click.option("--backends", "backends_path", default=None, help="Backend roster JSON.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--tick-interval", default=1.0, show_default=True,
              help="Wall seconds per simulated tick while serving (0 disables).")
@click.option("--answer-log", default=None, help="Append answer records to this NDJSON file.")
def serve(fixture, backends_path, host, port, tick_interval, answer_log):
    """Start the gateway API over a scenario fixture."""
    import uvicorn

    from .gateway import Runtime, create_app

    fixture_doc = _load_json(fixture or packaged_fixture("testbed.json"), "fixture")
    runtime = Runtime(
        fixture=fixture_doc,
        backends_config=_backends_config(backends_path),
        answer_log_path=answer_log,
    )
    runtime.start_ticker(tick_interval)
    app = create_app(runtime)
    try:
        uvicorn.run(app, host=host, port=port, log_level="info")
    finally:
        runtime.close()


@main.command("eval")
@click.option("--suite", "suite_path", default=None, help="Suite JSON (default: built-in 50-query suite).")
@click.option("--fixture", default=None, help="Scenario fixture JSON (default: built-in testbed).")
@click.option("--backend", default="scripted", show_default=True)
@click.option("--backends", "backends_path", default=None, help="Backend roster JSON.")
@click.option("--out", "out_dir", default="eval_out", show_default=True)
@click.option("--gated", is_flag=True, help="Exit nonzero if any control query fails.")
@click.option("--parallel", is_flag=True, help="Parallel observability run (not for latency numbers).")
@click.option("--tta-baseline", default=None, help="Human TTA baseline CSV (default: bundled sample).")
def eval_cmd(suite_path, fixture, backend, backends_path, out_dir, gated, parallel, tta_baseline):
    """Run the benchmark suite against one backend and emit the report."""
    fixture_doc = _load_json(fixture or packaged_fixture("testbed.json"), "fixture")
    suite = load_suite(suite_path or packaged_fixture("suite50.json"))
    factory = _make_env_factory(fixture_doc, _backends_config(backends_path))

    report = run_suite(
        suite,
        backend,
        factory,
        parallel=parallel,
        progress=lambda row: click.echo(
            f"  {row['id']:<8} {row['category']:<13} "
            + (
                f"action_ok={row['action_ok']}"
                if row["category"] == "control"
                else f"coherence={row['coherence']:.1f}"
            )
        ),
    )

    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2)

    reference = load_reference_rows(packaged_fixture("reported_benchmarks.json"))
    table = render_table(report, reference)
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    click.echo(table)

    write_pareto_csv(
        reference_pareto_points(reference), os.path.join(out_dir, "pareto.csv")
    )
    curves = load_tta_baseline(tta_baseline or packaged_fixture("human_tta.csv"))
    if report.tta_samples:
        curves[f"agent-{backend}"] = report.tta_samples
    write_cdf_csv(curves, os.path.join(out_dir, "tta_cdf.csv"))

    rows_path = os.path.join(out_dir, "rows.json")
    with open(rows_path, "w", encoding="utf-8") as fh:
        json.dump(report.rows, fh, indent=2)

    click.echo(f"report written to {out_dir}/")
    failed_controls = [
        r["id"] for r in report.rows if r["category"] == "control" and not r["action_ok"]
    ]
    if gated and failed_controls:
        click.echo(f"gated mode: failed control queries: {', '.join(failed_controls)}")
        sys.exit(1)


@main.command()
@click.argument("text")
@click.option("--fixture", default=None)
@click.option("--backend", default="scripted", show_default=True)
@click.option("--backends", "backends_path", default=None)
@click.option("--ticks", default=3, show_default=True, help="Warmup simulation ticks.")
@click.option("--steps/--no-steps", "show_steps", default=False, help="Print the step trace.")
@click.option("--as-json", is_flag=True, help="Print the full episode as JSON.")
def query(text, fixture, backend, backends_path, ticks, show_steps, as_json):
    """Run one episode against the fixture and print the answer."""
    fixture_doc = _load_json(fixture or packaged_fixture("testbed.json"), "fixture")
    hub, graph, _registry = _make_env_factory(
        fixture_doc, _backends_config(backends_path)
    )()
    try:
        hub.step(ticks)
        episode = graph.run_episode(text, backend_name=backend)
    finally:
        hub.close()
    if as_json:
        click.echo(json.dumps(episode.to_json(), indent=2))
        return
    if show_steps:
        for step in episode.steps:
            click.echo(f"  [{step.index}] {step.node}: {json.dumps(step.action)}")
    click.echo(episode.answer)
    if episode.failed:
        sys.exit(1)


@main.group()
def export():
    """Export artifacts: retrieval index, episode traces, report renderings, tool catalog."""


@export.command("index")
@click.option("--fixture", default=None)
@click.option("--out", "out_path", default="index.json", show_default=True)
@click.option("--ticks", default=0, show_default=True)
def export_index(fixture, out_path, ticks):
    """Build the retrieval index from a fixture and dump it as JSON."""
    fixture_doc = _load_json(fixture or packaged_fixture("testbed.json"), "fixture")
    hub = ServiceHub(fixture=fixture_doc)
    try:
        if ticks:
            hub.step(ticks)
        hub.sync()
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(hub.index.dump(), fh, indent=2)
    finally:
        hub.close()
    click.echo(f"index written to {out_path}")


@export.command("traces")
@click.option("--answer-log", "log_path", required=True, help="Answer-log NDJSON produced by serve/eval.")
@click.option("--out", "out_path", default="traces.ndjson", show_default=True)
def export_traces(log_path, out_path):
    """Validate and re-emit an answer-log NDJSON file."""
    if not os.path.exists(log_path):
        raise click.UsageError(f"answer log not found: {log_path}")
    count = 0
    with open(log_path, encoding="utf-8") as src, open(
        out_path, "w", encoding="utf-8"
    ) as dst:
        last_id = 0
        for line in src:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if record["id"] <= last_id:
                raise click.ClickException(
                    f"answer log is not append-ordered at id {record['id']}"
                )
            last_id = record["id"]
            dst.write(json.dumps(record) + "\n")
            count += 1
    click.echo(f"{count} trace records written to {out_path}")


@export.command("report")
@click.option("--report", "report_path", required=True, help="report.json from an eval run.")
@click.option("--out", "out_dir", default="eval_out", show_default=True)
def export_report(report_path, out_dir):
    """Re-render table and CSVs from a saved report.json."""
    doc = _load_json(report_path, "report")
    report = EvalReport.from_json(doc)
    os.makedirs(out_dir, exist_ok=True)
    reference = load_reference_rows(packaged_fixture("reported_benchmarks.json"))
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(render_table(report, reference) + "\n")
    write_pareto_csv(
        reference_pareto_points(reference), os.path.join(out_dir, "pareto.csv")
    )
    curves = load_tta_baseline(packaged_fixture("human_tta.csv"))
    if report.tta_samples:
        curves[f"agent-{report.backend}"] = report.tta_samples
    write_cdf_csv(curves, os.path.join(out_dir, "tta_cdf.csv"))
    click.echo(f"renderings written to {out_dir}/")


@export.command("tools")
@click.option("--out", "out_path", default="tools.json", show_default=True)
def export_tools(out_path):
    """Dump the tool catalog as JSON."""
    hub = ServiceHub()
    try:
        registry = ToolRegistry(hub)
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(registry.catalog_json(), fh, indent=2)
    finally:
        hub.close()
    click.echo(f"tool catalog written to {out_path}")


if __name__ == "__main__":
    main()
