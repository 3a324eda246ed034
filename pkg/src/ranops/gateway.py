"""HTTP service shell: the operator-facing API over the whole platform.

Intents are submitted asynchronously; each episode runs on a worker
thread and publishes ordered events (sequence-numbered, gap-free) that
can be streamed as server-sent events, with full replay for late or
reconnecting consumers.  Read endpoints expose consistent snapshots of
resources, topology, KPI series, the tool catalog, and the append-only
answer log.  All API timestamps are UTC milliseconds; episode timing
uses a monotonic clock internally.
"""

from __future__ import annotations

import json
import threading
from typing import Optional

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from .agent import AgentGraph, AnswerLog
from .backends import build_backends
from .runtime import ServiceHub
from .store import NotFoundError, StoreError
from .tools import ToolRegistry


class EpisodeEventBus:
    """Per-episode ordered event fan-out with replay.

    Sequence numbers are gap-free per episode; every subscriber sees the
    identical sequence, past events first, then live ones, ending with
    the terminal 'done' event.
    """

    def __init__(self):
        self._events: dict[str, list[dict]] = {}
        self._done: set[str] = set()
        self._cond = threading.Condition()

    def register(self, episode_id: str) -> None:
        with self._cond:
            self._events.setdefault(episode_id, [])

    def emit(self, episode_id: str, event_type: str, payload: dict) -> None:
        with self._cond:
            events = self._events.setdefault(episode_id, [])
            events.append(
                {"episode_id": episode_id, "seq": len(events) + 1,
                 "type": event_type, "payload": payload}
            )
            if event_type == "done":
                self._done.add(episode_id)
            self._cond.notify_all()

    def known(self, episode_id: str) -> bool:
        with self._cond:
            return episode_id in self._events

    def snapshot(self, episode_id: str) -> list[dict]:
        with self._cond:
            return list(self._events.get(episode_id, []))

    def stream(self, episode_id: str, poll_s: float = 0.1):
        """Yield events in order; returns after the terminal event."""
        cursor = 0
        while True:
            with self._cond:
                events = self._events.get(episode_id, [])
                batch = events[cursor:]
                cursor = len(events)
                finished = episode_id in self._done and cursor == len(events)
                if not batch and not finished:
                    self._cond.wait(timeout=poll_s)
                    continue
            for event in batch:
                yield event
            if finished and not batch:
                return
            if finished and batch:
                return


class Runtime:
    """Everything the API serves: hub, tools, graph, backends, events."""

    def __init__(
        self,
        fixture: Optional[dict] = None,
        backends_config: Optional[dict] = None,
        answer_log_path: Optional[str] = None,
        seed: int = 0,
    ):
        self.hub = ServiceHub(fixture=fixture, seed=seed)
        self.registry = ToolRegistry(self.hub)
        self.backends = build_backends(backends_config)
        self.answer_log = AnswerLog(answer_log_path)
        self.graph = AgentGraph(
            self.hub, self.registry, self.backends, answer_log=self.answer_log
        )
        self.events = EpisodeEventBus()
        self.episodes: dict[str, dict] = {}
        self._lock = threading.Lock()
        self._counter = 0
        self._ticker: Optional[threading.Thread] = None
        self._ticker_stop = threading.Event()

    def submit_intent(
        self,
        text: str,
        backend: str = "scripted",
        step_budget: Optional[int] = None,
        retrieval_k: Optional[int] = None,
    ) -> str:
        if backend not in self.backends:
            raise KeyError(backend)
        with self._lock:
            self._counter += 1
            episode_id = f"ep-{self._counter:06d}"
            self.episodes[episode_id] = {"id": episode_id, "status": "running"}
        self.events.register(episode_id)

        def run():
            try:
                episode = self.graph.run_episode(
                    text,
                    backend_name=backend,
                    step_budget=step_budget,
                    retrieval_k=retrieval_k,
                    observer=lambda etype, payload: self.events.emit(
                        episode_id, etype, payload
                    ),
                    episode_id=episode_id,
                )
                doc = {"status": "failed" if episode.failed else "done",
                       **episode.to_json()}
            except Exception as exc:  # surface, never wedge the stream
                doc = {"id": episode_id, "status": "failed", "error": str(exc)}
                self.events.emit(episode_id, "error", {"error": str(exc)})
                self.events.emit(episode_id, "done", doc)
            with self._lock:
                self.episodes[episode_id] = doc

        threading.Thread(target=run, name=episode_id, daemon=True).start()
        return episode_id

    def start_ticker(self, interval_s: float = 1.0) -> None:
        """Advance simulated time continuously while serving (1 tick per
        interval); the simulator itself stays strictly tick-based."""
        if interval_s <= 0:
            return

        def loop():
            while not self._ticker_stop.wait(interval_s):
                self.hub.step(1)

        self._ticker = threading.Thread(target=loop, name="sim-ticker", daemon=True)
        self._ticker.start()

    def close(self) -> None:
        self._ticker_stop.set()
        if self._ticker is not None:
            self._ticker.join(timeout=2.0)
        self.hub.close()


class IntentRequest(BaseModel):
    text: str = Field(min_length=1)
    backend: str = "scripted"
    step_budget: Optional[int] = Field(default=None, ge=2, le=32)
    retrieval_k: Optional[int] = Field(default=None, ge=1, le=50)


def create_app(runtime: Runtime) -> FastAPI:
    app = FastAPI(title="ranops gateway", version="0.1.0")
    app.state.runtime = runtime

    @app.get("/api/health")
    def health():
        return {
            "status": "ok",
            "store_version": runtime.hub.store.version,
            "tick": runtime.hub.sim.tick,
        }

    @app.post("/api/intents", status_code=202)
    def submit_intent(request: IntentRequest):
        try:
            episode_id = runtime.submit_intent(
                request.text,
                backend=request.backend,
                step_budget=request.step_budget,
                retrieval_k=request.retrieval_k,
            )
        except KeyError:
            raise HTTPException(
                status_code=422, detail=f"unknown backend {request.backend!r}"
            )
        return {"episode_id": episode_id}

    @app.get("/api/episodes/{episode_id}")
    def get_episode(episode_id: str):
        with runtime._lock:
            episode = runtime.episodes.get(episode_id)
        if episode is None:
            raise HTTPException(status_code=404, detail="unknown episode")
        return episode

    @app.get("/api/episodes/{episode_id}/events")
    def stream_events(episode_id: str):
        if not runtime.events.known(episode_id):
            raise HTTPException(status_code=404, detail="unknown episode")

        def sse():
            for event in runtime.events.stream(episode_id):
                data = json.dumps(event)
                yield f"id: {event['seq']}\nevent: {event['type']}\ndata: {data}\n\n"

        return StreamingResponse(sse(), media_type="text/event-stream")

    @app.get("/api/resources")
    def resources(kind: Optional[str] = None, name: Optional[str] = None):
        try:
            if name is not None:
                if kind is None:
                    raise HTTPException(
                        status_code=422, detail="name requires kind"
                    )
                return runtime.hub.store.get(kind, name).to_json()
            return [r.to_json() for r in runtime.hub.store.list(kind)]
        except NotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except StoreError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.get("/api/topology")
    def topology():
        return runtime.hub.sim.snapshot_topology().to_json()

    @app.get("/api/kpis")
    def kpis(
        network: Optional[str] = None,
        access_network: Optional[str] = None,
        slice_name: Optional[str] = Query(default=None, alias="slice"),
        terminal: Optional[str] = None,
        since_tick: Optional[int] = None,
        until_tick: Optional[int] = None,
        last: Optional[int] = Query(default=200, le=10000),
    ):
        samples = runtime.hub.sim.kpi_history(
            network=network,
            access_network=access_network,
            slice_name=slice_name,
            terminal=terminal,
            since_tick=since_tick,
            until_tick=until_tick,
            last=last,
        )
        return {"tick": runtime.hub.sim.tick, "samples": [s.to_json() for s in samples]}

    @app.get("/api/answers")
    def answers(
        record_id: Optional[int] = Query(default=None, alias="id"),
        since_ms: Optional[int] = None,
        until_ms: Optional[int] = None,
    ):
        if record_id is not None:
            try:
                return runtime.answer_log.get(record_id)
            except KeyError as exc:
                raise HTTPException(status_code=404, detail=str(exc))
        return runtime.answer_log.range(since_ms=since_ms, until_ms=until_ms)

    @app.get("/api/tools")
    def tools():
        return runtime.registry.catalog_json()

    @app.get("/api/audit")
    def audit(limit: int = Query(default=50, le=1000)):
        return runtime.registry.audit[-limit:]

    @app.get("/api/backends")
    def backends():
        return [b.profile.to_json() for b in runtime.backends.values()]

    @app.get("/api/logs")
    def logs(limit: int = Query(default=50, le=2000), contains: Optional[str] = None):
        return runtime.hub.logs.tail(limit=limit, contains=contains)

    @app.post("/api/sim/step")
    def sim_step(ticks: int = Query(default=1, ge=1, le=1000)):
        samples = runtime.hub.step(ticks)
        return {"tick": runtime.hub.sim.tick, "emitted": len(samples)}

    return app
