"""The agent graph: routing, monitoring (+retrieve), deployment with a
validation loop, and save_answer.

Each episode is a bounded reason->tool->observe loop.  The routing node
classifies the prompt (step 1); the monitoring branch retrieves top-k
context then consults read-only collectors; the deployment branch plans
actions that run through pre-flight validation before execution, with
failed validations fed back to the backend for re-planning.  Every
episode terminates -- stop token, or step budget -- and writes exactly
one record to the append-only answer log before returning.

Step accounting: the budget (default 8) covers all recorded steps
including the terminal save_answer, so the reasoning loop runs in at
most budget-1 steps.  End-to-end latency is measured on a monotonic
clock from prompt arrival to answer persistence; time-to-action is from
prompt arrival to the start of the first state-mutating tool call.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .backends import (
    DEPLOYMENT,
    MONITORING,
    RETRIEVAL,
    BackendError,
    MalformedModelOutput,
    ModelTurn,
    Transcript,
)
from .runtime import ServiceHub
from .tools import ToolArgumentError, ToolNotFoundError, ToolRegistry

DEFAULT_STEP_BUDGET = 8
DEFAULT_RETRIEVAL_K = 5
HIT_TEXT_CAP = 512
HISTORY_WINDOW = 4

SYSTEM_PREAMBLE = (
    "You operate a RAN management platform. Answer operator questions from "
    "retrieved context and monitoring tools; enact changes only through the "
    "published deployment tools. Reply with one tool call, or a final answer "
    "to stop."
)

BUDGET_EXHAUSTED_ANSWER = (
    "Step budget exhausted before the request could be completed; "
    "no further actions were taken."
)


@dataclass
class Step:
    index: int
    node: str  # routing | retrieve | monitoring | deployment | validate | save_answer
    action: Optional[dict]
    observation: Any
    elapsed_s: float

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "node": self.node,
            "action": self.action,
            "observation": self.observation,
            "elapsed_s": round(self.elapsed_s, 6),
        }


@dataclass
class Episode:
    id: str
    prompt: str
    received_at_ms: int
    branch: str
    steps: list[Step] = field(default_factory=list)
    answer: str = ""
    actions: list[dict] = field(default_factory=list)
    e2e_latency_s: float = 0.0
    tta_s: Optional[float] = None
    inference_ms: list[float] = field(default_factory=list)
    failed: bool = False
    answer_record_id: Optional[int] = None
    persist_error: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "prompt": self.prompt,
            "received_at_ms": self.received_at_ms,
            "branch": self.branch,
            "steps": [s.to_json() for s in self.steps],
            "answer": self.answer,
            "actions": self.actions,
            "e2e_latency_s": round(self.e2e_latency_s, 6),
            "tta_s": None if self.tta_s is None else round(self.tta_s, 6),
            "inference_ms": [round(v, 3) for v in self.inference_ms],
            "failed": self.failed,
            "answer_record_id": self.answer_record_id,
        }


class AnswerLog:
    """Append-only episode outcome log with id and time-range lookup.

    Records are immutable once written.  With a path configured, each
    record is also appended to a newline-delimited JSON file.
    """

    def __init__(self, path: Optional[str] = None):
        self._records: list[dict] = []
        self._lock = threading.Lock()
        self._path = path

    def append(self, record: dict) -> int:
        with self._lock:
            record = dict(record)
            record["id"] = len(self._records) + 1
            record.setdefault("ts_ms", int(time.time() * 1000))
            self._records.append(record)
            if self._path:
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record) + "\n")
            return record["id"]

    def get(self, record_id: int) -> dict:
        with self._lock:
            if 1 <= record_id <= len(self._records):
                return dict(self._records[record_id - 1])
        raise KeyError(f"answer record {record_id} not found")

    def range(
        self, since_ms: Optional[int] = None, until_ms: Optional[int] = None
    ) -> list[dict]:
        with self._lock:
            return [
                dict(r)
                for r in self._records
                if (since_ms is None or r["ts_ms"] >= since_ms)
                and (until_ms is None or r["ts_ms"] <= until_ms)
            ]

    def all(self) -> list[dict]:
        with self._lock:
            return [dict(r) for r in self._records]

    def export(self, path: str) -> int:
        records = self.all()
        with open(path, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record) + "\n")
        return len(records)


Observer = Callable[[str, dict], None]


class AgentGraph:
    """Executable agent graph bound to one service hub and tool registry."""

    def __init__(
        self,
        hub: ServiceHub,
        registry: ToolRegistry,
        backends: dict,
        answer_log: Optional[AnswerLog] = None,
        step_budget: int = DEFAULT_STEP_BUDGET,
        retrieval_k: int = DEFAULT_RETRIEVAL_K,
    ):
        self.hub = hub
        self.registry = registry
        self.backends = backends
        self.answer_log = answer_log or AnswerLog()
        self.step_budget = step_budget
        self.retrieval_k = retrieval_k

    # -- public API ---------------------------------------------------------------

    def route(self, prompt: str, backend_name: str = "scripted") -> str:
        backend = self._backend(backend_name)
        self.hub.sync()
        return self._effective_branch(backend.classify(prompt, self._context_summary(prompt)))

    def run_episode(
        self,
        prompt: str,
        backend_name: str = "scripted",
        step_budget: Optional[int] = None,
        retrieval_k: Optional[int] = None,
        observer: Optional[Observer] = None,
        episode_id: Optional[str] = None,
    ) -> Episode:
        if not prompt or not prompt.strip():
            raise ValueError("prompt text must be non-empty")
        backend = self._backend(backend_name)
        budget = step_budget or self.step_budget
        k = retrieval_k or self.retrieval_k
        episode = Episode(
            id=episode_id or f"ep-{uuid.uuid4().hex[:12]}",
            prompt=prompt,
            received_at_ms=int(time.time() * 1000),
            branch=MONITORING,
        )
        started = time.perf_counter()
        notify = observer or (lambda event, payload: None)

        self.hub.sync()
        try:
            raw_branch = self._timed_backend_call(
                episode, backend.classify, prompt, self._context_summary(prompt)
            )
        except (BackendError, MalformedModelOutput) as exc:
            episode.failed = True
            episode.answer = f"Backend error during routing: {exc}"
            self._record_step(
                episode, "routing", {"prompt": prompt}, {"error": str(exc)}, 0.0, notify
            )
            self._save(episode, started, notify)
            return episode

        branch = self._effective_branch(raw_branch)
        episode.branch = branch
        self._record_step(
            episode,
            "routing",
            {"prompt": prompt},
            {"classified": raw_branch, "branch": branch},
            0.0,
            notify,
        )

        retrieval_hits: list[dict] = []
        if branch == MONITORING:
            t = time.perf_counter()
            hits = self.hub.index.query(prompt, k)
            retrieval_hits = [self._prune_hit(h.to_json()) for h in hits]
            self._record_step(
                episode,
                "retrieve",
                {"query": prompt, "k": k},
                {"hits": retrieval_hits},
                time.perf_counter() - t,
                notify,
            )

        repair_notice: Optional[str] = None
        answered = False
        while len(episode.steps) < budget - 1:
            transcript = self._transcript(
                prompt, branch, retrieval_hits, episode.steps, repair_notice
            )
            repair_notice = None
            try:
                turn = self._timed_backend_call(episode, backend.generate, transcript)
            except MalformedModelOutput as exc:
                # One repair re-prompt; a second failure burns a step.
                repair_transcript = self._transcript(
                    prompt,
                    branch,
                    retrieval_hits,
                    episode.steps,
                    f"Your previous output was unusable ({exc}). "
                    "Reply with one valid tool call or a final answer.",
                )
                try:
                    turn = self._timed_backend_call(
                        episode, backend.generate, repair_transcript
                    )
                except MalformedModelOutput as exc2:
                    self._record_step(
                        episode,
                        branch,
                        None,
                        {"error": f"malformed model output: {exc2}"},
                        0.0,
                        notify,
                    )
                    continue
            except BackendError as exc:
                episode.failed = True
                episode.answer = f"Backend error: {exc}"
                answered = True
                break

            if not turn.is_tool_call:
                episode.answer = turn.answer or ""
                answered = True
                break
            self._execute_tool(episode, branch, turn, started, notify)

        if not answered:
            episode.answer = BUDGET_EXHAUSTED_ANSWER
        self._save(episode, started, notify)
        return episode

    # -- internals ------------------------------------------------------------------

    def _backend(self, name: str):
        if name not in self.backends:
            raise KeyError(f"backend {name!r} is not registered")
        return self.backends[name]

    @staticmethod
    def _effective_branch(raw: str) -> str:
        # The retrieval class runs on the monitoring branch (it is the
        # retrieve node), so only two executable branches exist.
        if raw == DEPLOYMENT:
            return DEPLOYMENT
        if raw in (MONITORING, RETRIEVAL):
            return MONITORING
        return MONITORING

    def _context_summary(self, prompt: str) -> str:
        hits = self.hub.index.query(prompt, 3)
        return "; ".join(f"{h.kind}/{h.name}" for h in hits)

    def _timed_backend_call(self, episode: Episode, fn, *args):
        t = time.perf_counter()
        try:
            return fn(*args)
        finally:
            episode.inference_ms.append((time.perf_counter() - t) * 1000.0)

    def _prune_hit(self, hit: dict) -> dict:
        hit = dict(hit)
        if len(hit.get("text", "")) > HIT_TEXT_CAP:
            hit["text"] = hit["text"][:HIT_TEXT_CAP]
        return hit

    def _transcript(
        self,
        prompt: str,
        branch: str,
        retrieval: list[dict],
        steps: list[Step],
        repair_notice: Optional[str],
    ) -> Transcript:
        serialized = [s.to_json() for s in steps]
        if len(serialized) > HISTORY_WINDOW:
            summarized = [
                {"index": s["index"], "node": s["node"], "summary": "elided"}
                for s in serialized[:-HISTORY_WINDOW]
            ]
            serialized = summarized + serialized[-HISTORY_WINDOW:]
        return Transcript(
            prompt=prompt,
            branch=branch,
            system=SYSTEM_PREAMBLE,
            retrieval=retrieval[: self.retrieval_k],
            tool_schemas=self.registry.catalog_json(),
            steps=serialized,
            repair_notice=repair_notice,
        )

    def _execute_tool(
        self,
        episode: Episode,
        branch: str,
        turn: ModelTurn,
        started: float,
        notify: Observer,
    ) -> None:
        action = {"tool": turn.tool, "args": turn.args or {}}
        try:
            kind = self.registry.kind_of(turn.tool)
        except ToolNotFoundError as exc:
            self._record_step(
                episode, "validate", action, {"passed": False, "reasons": [str(exc)]},
                0.0, notify,
            )
            return

        if kind == "monitoring":
            t = time.perf_counter()
            try:
                observation = self.registry.call_monitoring(turn.tool, turn.args or {})
            except (ToolArgumentError, ToolNotFoundError) as exc:
                self._record_step(
                    episode, "validate", action,
                    {"passed": False, "reasons": [str(exc)]},
                    time.perf_counter() - t, notify,
                )
                return
            self._record_step(
                episode, "monitoring", action, observation,
                time.perf_counter() - t, notify,
            )
            return

        if branch != DEPLOYMENT:
            # Branch purity: monitoring episodes never mutate state.
            self._record_step(
                episode, "validate", action,
                {
                    "passed": False,
                    "reasons": [
                        f"state-mutating tool {turn.tool!r} is not allowed on the "
                        f"{branch} branch"
                    ],
                },
                0.0, notify,
            )
            return

        t = time.perf_counter()
        result = self.registry.call_deployment(turn.tool, turn.args or {})
        elapsed = time.perf_counter() - t
        if not result.preflight_passed:
            self._record_step(
                episode, "validate", action,
                {"passed": False, "reasons": result.preflight_reasons},
                elapsed, notify,
            )
            return
        if episode.tta_s is None:
            episode.tta_s = t - started
        doc = result.to_json()
        episode.actions.append(doc)
        self._record_step(episode, "deployment", action, doc, elapsed, notify)

    def _record_step(
        self,
        episode: Episode,
        node: str,
        action: Optional[dict],
        observation: Any,
        elapsed: float,
        notify: Observer,
    ) -> None:
        step = Step(
            index=len(episode.steps) + 1,
            node=node,
            action=action,
            observation=observation,
            elapsed_s=elapsed,
        )
        episode.steps.append(step)
        notify("step", step.to_json())

    def _save(self, episode: Episode, started: float, notify: Observer) -> None:
        record = {
            "episode_id": episode.id,
            "prompt": episode.prompt,
            "branch": episode.branch,
            "answer": episode.answer,
            "actions": [
                {"tool": a["tool"], "ok": a["ok"]} for a in episode.actions
            ],
            "steps": len(episode.steps) + 1,
            "failed": episode.failed,
        }
        try:
            record_id = self.answer_log.append(record)
            episode.answer_record_id = record_id
            observation = {"record_id": record_id}
        except OSError as exc:
            episode.persist_error = str(exc)
            observation = {"error": f"persistence failed: {exc}"}
        self._record_step(episode, "save_answer", None, observation, 0.0, notify)
        episode.e2e_latency_s = time.perf_counter() - started
        notify("answer", {"answer": episode.answer, "failed": episode.failed})
        notify("done", episode.to_json())
