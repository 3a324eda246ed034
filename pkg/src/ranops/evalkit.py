"""Benchmark harness: suite runner, coherence judging, action accuracy,
latency and step statistics, time-to-action CDF, and the
coherence-latency Pareto frontier.

The suite pairs observability queries (judged against fact rubrics) with
control queries (judged by comparing the enacted store diff against a
ground-truth expectation).  Control queries each run against a freshly
reset environment -- the queries are independent -- while observability
queries share one evolving environment so retrieval freshness is
actually exercised.

The built-in coherence judge is deterministic: score = 5 x matched
required facts / total facts, with normalized word-boundary and numeric
matching.  An external LLM-judge adapter with the same signature exists
for parity experiments; it is non-deterministic and never part of the
acceptance gates.
"""

from __future__ import annotations

import csv
import json
import re
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import httpx

from .tools import check_action_detail, snapshot_resources

OBSERVABILITY = "observability"
CONTROL = "control"


@dataclass
class EvalQuery:
    id: str
    text: str
    category: str
    rubric: list[str] = field(default_factory=list)
    expectation: Optional[dict] = None
    setup: list[dict] = field(default_factory=list)  # deployment calls pre-applied

    @classmethod
    def from_json(cls, doc: dict) -> "EvalQuery":
        category = doc["category"]
        if category not in (OBSERVABILITY, CONTROL):
            raise ValueError(f"query {doc.get('id')}: bad category {category!r}")
        if category == OBSERVABILITY and not doc.get("rubric"):
            raise ValueError(f"query {doc.get('id')}: observability needs a rubric")
        if category == CONTROL and not doc.get("expectation"):
            raise ValueError(f"query {doc.get('id')}: control needs an expectation")
        return cls(
            id=str(doc["id"]),
            text=doc["text"],
            category=category,
            rubric=list(doc.get("rubric", [])),
            expectation=doc.get("expectation"),
            setup=list(doc.get("setup", [])),
        )


def load_suite(source) -> list[EvalQuery]:
    if isinstance(source, str):
        with open(source, encoding="utf-8") as fh:
            source = json.load(fh)
    return [EvalQuery.from_json(q) for q in source["queries"]]


# ---------------------------------------------------------------------------
# Coherence judging
# ---------------------------------------------------------------------------

_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def _fact_present(answer_norm: str, fact: str) -> bool:
    fact_norm = _normalize(fact)
    try:
        target = float(fact_norm)
    except ValueError:
        return re.search(rf"(?<!\w){re.escape(fact_norm)}(?!\w)", answer_norm) is not None
    return any(float(tok) == target for tok in _NUMBER_RE.findall(answer_norm))


def coherence_judge(answer: str, rubric: list[str]) -> float:
    """Deterministic rubric judge on the 0-5 scale."""
    if not rubric:
        raise ValueError("rubric must be non-empty")
    if not answer:
        return 0.0
    answer_norm = _normalize(answer)
    matched = sum(1 for fact in rubric if _fact_present(answer_norm, fact))
    return 5.0 * matched / len(rubric)


class ExternalJudgeAdapter:
    """LLM-backed judge with the same (answer, rubric) -> score signature.

    Non-deterministic by nature; provided for parity experiments only and
    deliberately excluded from every acceptance gate.
    """

    def __init__(self, endpoint: str, timeout_s: float = 30.0,
                 transport: Optional[httpx.BaseTransport] = None):
        self.endpoint = endpoint
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def __call__(self, answer: str, rubric: list[str]) -> float:
        response = self._client.post(
            self.endpoint, json={"answer": answer, "rubric": rubric}
        )
        response.raise_for_status()
        score = float(response.json()["score"])
        return max(0.0, min(5.0, score))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def action_accuracy(rows: list[dict]) -> Optional[float]:
    """Percentage of control rows whose enacted diff matched the intent.

    Undefined (None) when there are no control rows -- explicitly not 0.
    """
    control = [r for r in rows if r.get("category") == CONTROL]
    if not control:
        return None
    good = sum(1 for r in control if r.get("action_ok"))
    return 100.0 * good / len(control)


def tta_cdf(samples: list[float]) -> list[tuple[float, float]]:
    """Right-continuous empirical CDF as (t, F(t)) points, one per
    distinct sample value."""
    if not samples:
        return []
    ordered = sorted(samples)
    n = len(ordered)
    points: list[tuple[float, float]] = []
    for i, value in enumerate(ordered, start=1):
        if i < n and ordered[i] == value:
            continue  # keep only the last (rightmost) index per distinct value
        points.append((value, i / n))
    return points


@dataclass(frozen=True)
class ParetoPoint:
    label: str
    coherence: float
    latency_s: float
    deployment: str = "local"
    vram_gb: Optional[float] = None

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "coherence": self.coherence,
            "latency_s": self.latency_s,
            "deployment": self.deployment,
            "vram_gb": self.vram_gb,
        }


def pareto_frontier(points: list[ParetoPoint]) -> list[ParetoPoint]:
    """Non-dominated subset under (maximize coherence, minimize latency),
    input order preserved.  A dominates B iff coherence_A >= coherence_B
    and latency_A <= latency_B with at least one strict."""
    frontier = []
    for candidate in points:
        dominated = False
        for other in points:
            if (
                other.coherence >= candidate.coherence
                and other.latency_s <= candidate.latency_s
                and (
                    other.coherence > candidate.coherence
                    or other.latency_s < candidate.latency_s
                )
            ):
                dominated = True
                break
        if not dominated:
            frontier.append(candidate)
    return frontier


# ---------------------------------------------------------------------------
# Suite runner
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    backend: str
    rows: list[dict]
    coherence_mean: Optional[float]
    coherence_std: Optional[float]
    action_accuracy_pct: Optional[float]
    e2e_mean_s: Optional[float]
    e2e_median_s: Optional[float]
    e2e_p95_s: Optional[float]
    inference_ms_mean: Optional[float]
    steps_mean: Optional[float]
    tta_samples: list[float]
    backend_metadata: dict = field(default_factory=dict)
    suite_size: int = 0

    def to_json(self) -> dict:
        return {
            "backend": self.backend,
            "suite_size": self.suite_size,
            "coherence_mean": self.coherence_mean,
            "coherence_std": self.coherence_std,
            "action_accuracy_pct": self.action_accuracy_pct,
            "e2e_mean_s": self.e2e_mean_s,
            "e2e_median_s": self.e2e_median_s,
            "e2e_p95_s": self.e2e_p95_s,
            "inference_ms_mean": self.inference_ms_mean,
            "steps_mean": self.steps_mean,
            "tta_samples": self.tta_samples,
            "backend_metadata": self.backend_metadata,
            "rows": self.rows,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EvalReport":
        return cls(
            backend=doc["backend"],
            rows=doc.get("rows", []),
            coherence_mean=doc.get("coherence_mean"),
            coherence_std=doc.get("coherence_std"),
            action_accuracy_pct=doc.get("action_accuracy_pct"),
            e2e_mean_s=doc.get("e2e_mean_s"),
            e2e_median_s=doc.get("e2e_median_s"),
            e2e_p95_s=doc.get("e2e_p95_s"),
            inference_ms_mean=doc.get("inference_ms_mean"),
            steps_mean=doc.get("steps_mean"),
            tta_samples=doc.get("tta_samples", []),
            backend_metadata=doc.get("backend_metadata", {}),
            suite_size=doc.get("suite_size", len(doc.get("rows", []))),
        )


def _percentile(values: list[float], pct: float) -> float:
    ordered = sorted(values)
    if not ordered:
        raise ValueError("empty")
    idx = max(0, min(len(ordered) - 1, round(pct / 100.0 * (len(ordered) - 1))))
    return ordered[idx]


def run_suite(
    suite: list[EvalQuery],
    backend_name: str,
    env_factory: Callable[[], tuple],
    judge: Callable[[str, list[str]], float] = coherence_judge,
    warmup_ticks: int = 5,
    parallel: bool = False,
    progress: Optional[Callable[[dict], None]] = None,
) -> EvalReport:
    """Run the full suite against one backend.

    ``env_factory`` must return a fresh ``(hub, graph, registry)`` triple
    built from the scenario fixture.  Observability queries share one
    environment (stepped one tick between queries); every control query
    gets its own reset environment with its setup actions pre-applied.
    Sequential by default so latency numbers do not contend; ``parallel``
    exists for non-timing runs.
    """
    rows: list[dict] = []
    inference_all: list[float] = []

    obs_queries = [q for q in suite if q.category == OBSERVABILITY]
    control_queries = [q for q in suite if q.category == CONTROL]

    shared_env = None
    if obs_queries:
        shared_env = env_factory()
        hub = shared_env[0]
        hub.step(warmup_ticks)

    def run_observability(query: EvalQuery) -> dict:
        hub, graph, _registry = shared_env
        episode = graph.run_episode(query.text, backend_name)
        score = None if episode.failed else judge(episode.answer, query.rubric)
        return {
            "id": query.id,
            "category": OBSERVABILITY,
            "text": query.text,
            "branch": episode.branch,
            "answer": episode.answer,
            "coherence": score,
            "action_ok": None,
            "e2e_s": episode.e2e_latency_s,
            "tta_s": episode.tta_s,
            "steps": len(episode.steps),
            "inference_ms": episode.inference_ms,
            "failed": episode.failed,
        }

    if parallel and obs_queries:
        with ThreadPoolExecutor(max_workers=4) as pool:
            rows.extend(pool.map(run_observability, obs_queries))
        shared_env[0].step(1)
    else:
        for query in obs_queries:
            row = run_observability(query)
            rows.append(row)
            if progress:
                progress(row)
            shared_env[0].step(1)  # shared fixture keeps evolving

    for query in control_queries:
        hub, graph, registry = env_factory()
        try:
            for call in query.setup:
                setup_action = registry.call_deployment(call["tool"], call.get("args", {}))
                if not setup_action.ok:
                    raise RuntimeError(
                        f"setup for {query.id} failed: {setup_action.preflight_reasons or setup_action.error}"
                    )
            hub.sync()
            before = snapshot_resources(hub.store)
            episode = graph.run_episode(query.text, backend_name)
            after = snapshot_resources(hub.store)
            ok, problems = check_action_detail(query.expectation, before, after)
            row = {
                "id": query.id,
                "category": CONTROL,
                "text": query.text,
                "branch": episode.branch,
                "answer": episode.answer,
                "coherence": None,
                "action_ok": ok,
                "action_problems": problems,
                "e2e_s": episode.e2e_latency_s,
                "tta_s": episode.tta_s,
                "steps": len(episode.steps),
                "inference_ms": episode.inference_ms,
                "failed": episode.failed,
            }
        finally:
            hub.close()
        rows.append(row)
        if progress:
            progress(row)

    if shared_env is not None:
        shared_env[0].close()

    for row in rows:
        inference_all.extend(row.get("inference_ms", []))

    coherence_scores = [
        r["coherence"] for r in rows if r["category"] == OBSERVABILITY and r["coherence"] is not None
    ]
    e2e = [r["e2e_s"] for r in rows]
    steps = [r["steps"] for r in rows]
    tta_samples = [
        r["tta_s"] for r in rows if r["category"] == CONTROL and r["tta_s"] is not None
    ]

    return EvalReport(
        backend=backend_name,
        rows=rows,
        coherence_mean=statistics.mean(coherence_scores) if coherence_scores else None,
        coherence_std=(
            statistics.pstdev(coherence_scores) if coherence_scores else None
        ),
        action_accuracy_pct=action_accuracy(rows),
        e2e_mean_s=statistics.mean(e2e) if e2e else None,
        e2e_median_s=statistics.median(e2e) if e2e else None,
        e2e_p95_s=_percentile(e2e, 95) if e2e else None,
        inference_ms_mean=statistics.mean(inference_all) if inference_all else None,
        steps_mean=statistics.mean(steps) if steps else None,
        tta_samples=tta_samples,
        suite_size=len(suite),
    )


# ---------------------------------------------------------------------------
# Rendering / export
# ---------------------------------------------------------------------------


def load_reference_rows(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)["rows"]


def reference_pareto_points(rows: list[dict]) -> list[ParetoPoint]:
    return [
        ParetoPoint(
            label=row["label"],
            coherence=row["coherence_mean"],
            latency_s=row["e2e_latency_s"],
            deployment=row.get("deployment", "local"),
            vram_gb=row.get("vram_gb"),
        )
        for row in rows
        if row.get("coherence_mean") is not None
        and row.get("e2e_latency_s") is not None
    ]


def render_table(report: EvalReport, reference_rows: Optional[list[dict]] = None) -> str:
    """Benchmark table: reported reference rows plus the measured run."""
    header = (
        f"{'Model':<24} {'Coherence':>12} {'Action Acc.':>12} "
        f"{'E2E (s)':>9} {'Infer (ms)':>11} {'Steps':>6} {'VRAM (GB)':>10}"
    )
    lines = [header, "-" * len(header)]

    def fmt_row(label, coh_mean, coh_std, acc, e2e, infer, steps, vram):
        coh = "-" if coh_mean is None else f"{coh_mean:.1f} ± {coh_std:.1f}"
        acc_s = "-" if acc is None else f"{acc:.0f} %"
        e2e_s = "-" if e2e is None else f"{e2e:.2f}"
        inf_s = "-" if infer is None else f"{infer:.0f}"
        steps_s = "-" if steps is None else f"{steps:.1f}"
        vram_s = "cloud" if vram == "cloud" else ("-" if vram is None else f"{vram}")
        return (
            f"{label:<24} {coh:>12} {acc_s:>12} {e2e_s:>9} {inf_s:>11} "
            f"{steps_s:>6} {vram_s:>10}"
        )

    for row in reference_rows or []:
        vram = "cloud" if row.get("deployment") == "cloud" else row.get("vram_gb")
        lines.append(
            fmt_row(
                row["label"] + " (reported)",
                row.get("coherence_mean"),
                row.get("coherence_std", 0.0),
                row.get("action_accuracy_pct"),
                row.get("e2e_latency_s"),
                row.get("inference_ms"),
                row.get("steps"),
                vram,
            )
        )
    vram = report.backend_metadata.get("vram_gb")
    if report.backend_metadata.get("deployment") == "cloud":
        vram = "cloud"
    lines.append(
        fmt_row(
            report.backend + " (measured)",
            report.coherence_mean,
            report.coherence_std or 0.0,
            report.action_accuracy_pct,
            report.e2e_mean_s,
            report.inference_ms_mean,
            report.steps_mean,
            vram,
        )
    )
    return "\n".join(lines)


def write_pareto_csv(points: list[ParetoPoint], path: str) -> None:
    frontier = set(id(p) for p in pareto_frontier(points))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["label", "coherence", "latency_s", "deployment", "vram_gb", "on_frontier"]
        )
        for point in points:
            writer.writerow(
                [
                    point.label,
                    point.coherence,
                    point.latency_s,
                    point.deployment,
                    point.vram_gb if point.vram_gb is not None else "",
                    id(point) in frontier,
                ]
            )


def write_cdf_csv(curves: dict[str, list[float]], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cohort", "t_seconds", "cdf"])
        for label in sorted(curves):
            for t, f_of_t in tta_cdf(curves[label]):
                writer.writerow([label, t, f_of_t])


def load_tta_baseline(path: str) -> dict[str, list[float]]:
    """Human baseline samples from a CSV with 'cohort,seconds' rows.

    Baselines are imported data, never synthesized by the harness.
    """
    curves: dict[str, list[float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            curves.setdefault(row["cohort"], []).append(float(row["seconds"]))
    return curves
