"""Service wiring: store -> watchers -> simulator and retrieval index.

The resource store is the source of truth.  Two watch pumps fan its
delta stream out to the simulator adapter (so enacted blueprints become
running network state) and to the context index (so retrieval always
reflects committed changes).  ``ServiceHub.sync()`` is the barrier that
waits for both consumers to catch up with the store's current version;
callers use it before reads that must observe a just-committed write.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from collections import deque
from typing import Callable, Optional

from .index import ContextIndex
from .netsim import (
    SimAccessNetwork,
    SimCell,
    SimError,
    SimNetwork,
    SimState,
    SimTerminal,
    Simulator,
    SlicePolicy,
)
from .store import ABSENT, Delta, NotFoundError, ResourceStore

logger = logging.getLogger(__name__)

DEFAULT_CAPACITY_MBPS = 100.0


class LogBuffer:
    """Bounded in-memory platform log consumed by the get_logs tool."""

    def __init__(self, limit: int = 2000):
        self._entries: deque[dict] = deque(maxlen=limit)
        self._seq = 0
        self._lock = threading.Lock()

    def append(self, message: str) -> None:
        with self._lock:
            self._seq += 1
            self._entries.append(
                {"seq": self._seq, "ts_ms": int(time.time() * 1000), "message": message}
            )

    def tail(self, limit: int = 10, contains: Optional[str] = None) -> list[dict]:
        with self._lock:
            entries = list(self._entries)
        if contains:
            needle = contains.lower()
            entries = [e for e in entries if needle in e["message"].lower()]
        return entries[-limit:]

    def count(self) -> int:
        with self._lock:
            return self._seq


class WatchPump:
    """Drives one consumer from a store watch subscription on a daemon
    thread; ``drain()`` blocks until the consumer has processed every
    delta committed before the call."""

    def __init__(self, store: ResourceStore, consumer: Callable[[Delta], None], name: str):
        self._store = store
        self._consumer = consumer
        self.name = name
        self._sub = store.watch(0)
        self._processed = 0
        self._cond = threading.Condition()
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, name=f"pump-{self.name}", daemon=True)
        self._thread.start()

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                delta = self._sub.poll(timeout=0.05)
            except Exception:
                logger.exception("watch pump %s lost its subscription", self.name)
                return
            if delta is None:
                continue
            try:
                self._consumer(delta)
            except Exception:
                logger.exception("consumer %s failed on delta v%d", self.name, delta.version)
            with self._cond:
                self._processed = delta.version
                self._cond.notify_all()

    def drain(self, timeout: float = 10.0) -> None:
        target = self._store.version
        with self._cond:
            ok = self._cond.wait_for(lambda: self._processed >= target, timeout=timeout)
        if not ok:
            raise TimeoutError(
                f"pump {self.name} stuck at v{self._processed}, store at v{target}"
            )

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
        self._sub.close()


class SimAdapter:
    """Applies store deltas to the simulator, entity by entity.

    Each delta triggers a rebuild of the touched entity from the store's
    current spec, so the adapter converges even if it joins mid-stream.
    """

    def __init__(self, sim: Simulator, store: ResourceStore):
        self._sim = sim
        self._store = store

    def on_delta(self, delta: Delta) -> None:
        handler = getattr(self, f"_on_{delta.kind.lower()}", None)
        if handler is None:
            return
        handler(delta)

    # -- helpers ------------------------------------------------------------------

    def _old_field(self, delta: Delta, path: str):
        change = delta.changed_fields.get(path)
        if change is None or change.old is ABSENT:
            return None
        return change.old

    def _spec_or_none(self, delta: Delta) -> Optional[dict]:
        try:
            return self._store.get(delta.kind, delta.name).spec
        except NotFoundError:
            return None

    # -- handlers -------------------------------------------------------------------

    def _on_network(self, delta: Delta) -> None:
        state = self._sim.state
        if delta.op == "delete":
            state.networks.pop(delta.name, None)
            return
        spec = self._spec_or_none(delta)
        if spec is None:
            return
        net = state.networks.get(delta.name)
        if net is None:
            state.networks[delta.name] = SimNetwork(
                name=delta.name, core_present=bool(spec.get("core_present", True))
            )
        else:
            net.core_present = bool(spec.get("core_present", True))

    def _on_accessnetwork(self, delta: Delta) -> None:
        state = self._sim.state
        if delta.op == "delete":
            for net in state.networks.values():
                net.access_networks = [
                    an for an in net.access_networks if an.name != delta.name
                ]
            return
        spec = self._spec_or_none(delta)
        if spec is None:
            return
        parent = state.networks.get(spec["network"])
        if parent is None:
            logger.warning("access network %s arrived before its network", delta.name)
            return
        an = SimAccessNetwork(
            name=delta.name,
            parent_network=spec["network"],
            cell_capacity_mbps=float(spec["capacity_mbps"]),
            status=spec.get("status", "up"),
            cells=[
                SimCell(
                    cell_id=c["cell_id"],
                    prb_total=int(c["prb_total"]),
                    center_frequency_mhz=float(c.get("center_frequency_mhz", 3500.0)),
                )
                for c in spec.get("cells", [])
            ],
        )
        parent.access_networks = [
            x for x in parent.access_networks if x.name != delta.name
        ] + [an]
        parent.access_networks.sort(key=lambda x: x.name)

    def _on_ric(self, delta: Delta) -> None:
        spec = self._spec_or_none(delta)
        network = spec["network"] if spec else self._old_field(delta, "spec.network")
        if network is None:
            return
        net = self._sim.state.networks.get(network)
        if net is None:
            return
        net.rics = sum(
            1
            for r in self._store.list("Ric")
            if r.spec.get("network") == network
        )

    def _on_terminal(self, delta: Delta) -> None:
        state = self._sim.state
        if delta.op == "delete":
            state.terminals.pop(delta.name, None)
            return
        spec = self._spec_or_none(delta)
        if spec is None:
            return
        state.terminals[delta.name] = SimTerminal(
            name=delta.name,
            attached_to=spec.get("attached_to"),
            profile=spec.get("profile", "embb"),
            offered_load_mbps=float(spec.get("offered_load_mbps", 0.0)),
        )

    def _on_slice(self, delta: Delta) -> None:
        if delta.op == "delete":
            network = self._old_field(delta, "spec.network")
            if network:
                self._sim.remove_slice_policy(f"{network}-{delta.name}")
            return
        spec = self._spec_or_none(delta)
        if spec is None:
            return
        self._apply_policy(spec["network"], delta.name)

    def _on_policyjob(self, delta: Delta) -> None:
        if delta.op == "delete":
            network = self._old_field(delta, "spec.network")
            slice_name = self._old_field(delta, "spec.slice")
            if network and slice_name and self._store.exists("Slice", slice_name):
                self._apply_policy(network, slice_name)
            return
        spec = self._spec_or_none(delta)
        if spec is None:
            return
        self._apply_policy(spec["network"], spec["slice"])

    def _apply_policy(self, network: str, slice_name: str) -> None:
        """Compose the slice resource and its policy job into one sim policy."""
        try:
            slice_spec = self._store.get("Slice", slice_name).spec
        except NotFoundError:
            return
        guaranteed, max_rate = 0.0, None
        try:
            pj = self._store.get("PolicyJob", f"{network}-{slice_name}").spec
            guaranteed = float(pj["guaranteed_mbps"])
            max_rate = float(pj["max_mbps"])
        except NotFoundError:
            pass
        policy = SlicePolicy(
            slice_name=slice_name,
            network=network,
            guaranteed_mbps=guaranteed,
            max_mbps=max_rate,
            member_terminals=list(slice_spec.get("members", [])),
        )
        try:
            self._sim.apply_slice_policy(policy)
        except SimError:
            logger.exception("policy %s rejected by simulator", policy.key)


def load_fixture(store: ResourceStore, doc: dict) -> None:
    """Seed a store from a scenario fixture document (see README schema)."""
    for net in doc.get("networks", []):
        store.upsert(
            "Network", net["name"], {"core_present": net.get("core_present", True)}
        )
        for an in net.get("access_networks", []):
            label = an["label"]
            store.upsert(
                "AccessNetwork",
                f"{label}.{net['name']}",
                {
                    "network": net["name"],
                    "capacity_mbps": an.get("capacity_mbps", DEFAULT_CAPACITY_MBPS),
                    "status": an.get("status", "up"),
                    "cells": an.get("cells", default_cells(label)),
                },
            )
        for i, ric in enumerate(net.get("rics", []), start=1):
            store.upsert(
                "Ric",
                f"ric{i}.{net['name']}",
                {"network": net["name"], "flavor": ric.get("flavor", "near-rt")},
            )
    for term in doc.get("terminals", []):
        store.upsert(
            "Terminal",
            term["name"],
            {
                "attached_to": term.get("attached_to"),
                "profile": term.get("profile", "embb"),
                "offered_load_mbps": term.get("offered_load_mbps", 0.0),
            },
        )
    for sl in doc.get("slices", []):
        store.upsert(
            "Slice",
            sl["name"],
            {"network": sl["network"], "members": sl.get("members", [])},
        )
    for pol in doc.get("policies", []):
        store.upsert(
            "PolicyJob",
            f"{pol['network']}-{pol['slice']}",
            {
                "network": pol["network"],
                "slice": pol["slice"],
                "guaranteed_mbps": pol["guaranteed_mbps"],
                "max_mbps": pol["max_mbps"],
            },
        )


def default_cells(label: str) -> list[dict]:
    return [{"cell_id": f"{label}-c1", "prb_total": 100, "center_frequency_mhz": 3500.0}]


class ServiceHub:
    """Owns the store, simulator, index, and the pumps between them."""

    def __init__(
        self,
        fixture: Optional[dict] = None,
        dim: int = 256,
        retention: Optional[int] = None,
        seed: int = 0,
        jitter_pct: float = 0.0,
    ):
        self.logs = LogBuffer()
        self.store = ResourceStore(retention=retention, journal=self.logs.append)
        self.sim = Simulator(SimState(), seed=seed, jitter_pct=jitter_pct)
        self.index = ContextIndex(self.store, dim=dim)
        self.adapter = SimAdapter(self.sim, self.store)
        self._pumps = [
            WatchPump(self.store, self.adapter.on_delta, "simsync"),
            WatchPump(self.store, self.index.on_delta, "indexer"),
        ]
        for pump in self._pumps:
            pump.start()
        if fixture is not None:
            load_fixture(self.store, fixture)
            self.sync()

    @classmethod
    def from_fixture_path(cls, path: str, **kwargs) -> "ServiceHub":
        with open(path, encoding="utf-8") as fh:
            return cls(fixture=json.load(fh), **kwargs)

    def sync(self) -> None:
        """Wait until simulator and index reflect every committed write."""
        for pump in self._pumps:
            pump.drain()

    def step(self, ticks: int = 1):
        self.sync()
        samples = self.sim.step(ticks)
        self.logs.append(f"tick {self.sim.tick}: emitted {len(samples)} kpi samples")
        return samples

    def close(self) -> None:
        for pump in self._pumps:
            pump.stop()
