"""Versioned declarative resource store with watch semantics.

Holds the typed objects that describe the network (networks, access
networks, RICs, terminals, slices, throughput policy jobs) under a single
monotonically increasing version counter.  Every committed write emits a
compact field-level delta; watch subscriptions replay history from a
cursor and then follow live commits, each delta delivered exactly once
and in version order.  Writes are serialized through one commit lock,
which is the consistency anchor for the indexer and the simulator that
hang off the watch stream.
"""

from __future__ import annotations

import copy
import hashlib
import json
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

KINDS = ("Network", "AccessNetwork", "Ric", "Terminal", "Slice", "PolicyJob")

TERMINAL_PROFILES = ("embb", "urllc")
ACCESS_NETWORK_STATUSES = ("up", "degraded", "down")


class StoreError(Exception):
    """Base class for store failures."""


class UnknownKindError(StoreError):
    pass


class SchemaValidationError(StoreError):
    """Spec rejected by the kind schema; carries the offending field path."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class NotFoundError(StoreError):
    pass


class DependencyError(StoreError):
    """Delete rejected because live resources still reference the target."""

    def __init__(self, target: str, dependents: list[str]):
        self.dependents = dependents
        super().__init__(f"{target} has live dependents: {', '.join(dependents)}")


class CompactionError(StoreError):
    """Watch cursor precedes the retained history; a full resync is needed."""


class SubscriberOverflowError(StoreError):
    """Subscriber buffer overflowed; the subscription has been cancelled."""


class _Absent:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "<absent>"


ABSENT = _Absent()


@dataclass(frozen=True)
class FieldChange:
    """One side-aware field transition. Creates have no old side, deletes
    no new side."""

    old: Any = ABSENT
    new: Any = ABSENT

    def to_json(self) -> dict:
        doc = {}
        if self.old is not ABSENT:
            doc["old"] = self.old
        if self.new is not ABSENT:
            doc["new"] = self.new
        return doc


@dataclass(frozen=True)
class Delta:
    version: int
    kind: str
    name: str
    op: str  # create | update | delete
    changed_fields: dict[str, FieldChange] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "kind": self.kind,
            "name": self.name,
            "op": self.op,
            "changed_fields": {p: c.to_json() for p, c in self.changed_fields.items()},
        }


@dataclass(frozen=True)
class Resource:
    kind: str
    name: str
    spec: dict
    version: int
    deleted: bool = False

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "name": self.name,
            "spec": self.spec,
            "version": self.version,
            "deleted": self.deleted,
        }


def flatten_spec(spec: dict, prefix: str = "spec") -> dict[str, Any]:
    """Flatten a spec into dotted leaf paths. Lists are atomic leaves."""
    out: dict[str, Any] = {}
    for key in sorted(spec):
        path = f"{prefix}.{key}"
        value = spec[key]
        if isinstance(value, dict):
            out.update(flatten_spec(value, path))
        else:
            out[path] = value
    return out


def unflatten_spec(leaves: dict[str, Any]) -> dict:
    spec: dict = {}
    for path, value in leaves.items():
        parts = path.split(".")
        if parts[0] == "spec":
            parts = parts[1:]
        node = spec
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return spec


def diff_specs(old: dict, new: dict) -> dict[str, FieldChange]:
    """Field-level diff between two specs; only differing leaves appear."""
    old_leaves = flatten_spec(old)
    new_leaves = flatten_spec(new)
    changes: dict[str, FieldChange] = {}
    for path in sorted(set(old_leaves) | set(new_leaves)):
        if path not in old_leaves:
            changes[path] = FieldChange(new=new_leaves[path])
        elif path not in new_leaves:
            changes[path] = FieldChange(old=old_leaves[path])
        elif old_leaves[path] != new_leaves[path]:
            changes[path] = FieldChange(old=old_leaves[path], new=new_leaves[path])
    return changes


def apply_delta(state: dict[tuple[str, str], dict], delta: Delta) -> None:
    """Fold one delta into a {(kind, name): spec} dictionary in place.

    Folding the whole delta log over an empty state reconstructs the
    store's live contents; the fold-equivalence tests rely on this.
    """
    key = (delta.kind, delta.name)
    if delta.op == "delete":
        state.pop(key, None)
        return
    if delta.op == "create":
        state[key] = unflatten_spec(
            {p: c.new for p, c in delta.changed_fields.items() if c.new is not ABSENT}
        )
        return
    leaves = flatten_spec(state.get(key, {}))
    for path, change in delta.changed_fields.items():
        if change.new is ABSENT:
            leaves.pop(path, None)
        else:
            leaves[path] = change.new
    state[key] = unflatten_spec(leaves)


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Kind schemas
# ---------------------------------------------------------------------------


def _require(spec: dict, key: str, types, path_prefix: str):
    if key not in spec:
        raise SchemaValidationError(f"spec.{key}", "required field missing")
    if not isinstance(spec[key], types):
        type_names = getattr(types, "__name__", None) or "/".join(t.__name__ for t in types)
        raise SchemaValidationError(f"spec.{key}", f"expected {type_names}")
    return spec[key]


def _require_number(spec: dict, key: str, minimum: float | None = None):
    value = _require(spec, key, (int, float), "spec")
    if isinstance(value, bool):
        raise SchemaValidationError(f"spec.{key}", "expected a number")
    if minimum is not None and value < minimum:
        raise SchemaValidationError(f"spec.{key}", f"must be >= {minimum}")
    return float(value)


class _StoreView:
    """Read-only view handed to validators (live resources only)."""

    def __init__(self, live: dict[tuple[str, str], Resource]):
        self._live = live

    def exists(self, kind: str, name: str) -> bool:
        return (kind, name) in self._live

    def spec(self, kind: str, name: str) -> dict:
        return self._live[(kind, name)].spec

    def names(self, kind: str) -> list[str]:
        return [n for (k, n) in self._live if k == kind]


def _validate_network(name: str, spec: dict, view: _StoreView):
    if "core_present" in spec and not isinstance(spec["core_present"], bool):
        raise SchemaValidationError("spec.core_present", "expected bool")


def _validate_access_network(name: str, spec: dict, view: _StoreView):
    network = _require(spec, "network", str, "spec")
    if not view.exists("Network", network):
        raise SchemaValidationError("spec.network", f"unknown network {network!r}")
    if "." not in name or name.rsplit(".", 1)[1] != network:
        raise SchemaValidationError(
            "spec.network", f"access network name must be '<label>.{network}'"
        )
    _require_number(spec, "capacity_mbps", minimum=None)
    if spec["capacity_mbps"] <= 0:
        raise SchemaValidationError("spec.capacity_mbps", "must be > 0")
    status = spec.get("status", "up")
    if status not in ACCESS_NETWORK_STATUSES:
        raise SchemaValidationError("spec.status", f"expected one of {ACCESS_NETWORK_STATUSES}")
    cells = spec.get("cells", [])
    if not isinstance(cells, list):
        raise SchemaValidationError("spec.cells", "expected a list")
    for i, cell in enumerate(cells):
        if not isinstance(cell, dict) or "cell_id" not in cell:
            raise SchemaValidationError(f"spec.cells[{i}]", "expected {cell_id, prb_total, ...}")
        prb = cell.get("prb_total", 0)
        if not isinstance(prb, int) or isinstance(prb, bool) or prb <= 0:
            raise SchemaValidationError(f"spec.cells[{i}].prb_total", "must be a positive int")


def _validate_ric(name: str, spec: dict, view: _StoreView):
    network = _require(spec, "network", str, "spec")
    if not view.exists("Network", network):
        raise SchemaValidationError("spec.network", f"unknown network {network!r}")


def _validate_terminal(name: str, spec: dict, view: _StoreView):
    attached = spec.get("attached_to")
    if attached is not None:
        if not isinstance(attached, str):
            raise SchemaValidationError("spec.attached_to", "expected access network name or null")
        if not view.exists("AccessNetwork", attached):
            raise SchemaValidationError("spec.attached_to", f"unknown access network {attached!r}")
    profile = spec.get("profile", "embb")
    if profile not in TERMINAL_PROFILES:
        raise SchemaValidationError("spec.profile", f"expected one of {TERMINAL_PROFILES}")
    _require_number(spec, "offered_load_mbps", minimum=0.0)


def _validate_slice(name: str, spec: dict, view: _StoreView):
    network = _require(spec, "network", str, "spec")
    if not view.exists("Network", network):
        raise SchemaValidationError("spec.network", f"unknown network {network!r}")
    members = spec.get("members", [])
    if not isinstance(members, list):
        raise SchemaValidationError("spec.members", "expected a list of terminal names")
    for member in members:
        if not view.exists("Terminal", member):
            raise SchemaValidationError("spec.members", f"unknown terminal {member!r}")


def _validate_policyjob(name: str, spec: dict, view: _StoreView):
    network = _require(spec, "network", str, "spec")
    slice_name = _require(spec, "slice", str, "spec")
    if not view.exists("Network", network):
        raise SchemaValidationError("spec.network", f"unknown network {network!r}")
    if not view.exists("Slice", slice_name) or view.spec("Slice", slice_name).get("network") != network:
        raise SchemaValidationError("spec.slice", f"unknown slice {slice_name!r} in {network!r}")
    guaranteed = _require_number(spec, "guaranteed_mbps", minimum=0.0)
    max_rate = _require_number(spec, "max_mbps", minimum=0.0)
    if guaranteed > max_rate:
        raise SchemaValidationError(
            "spec.guaranteed_mbps", f"guaranteed ({guaranteed}) exceeds max ({max_rate})"
        )
    # Admission: every access network of this network must be able to carry
    # the sum of all slice guarantees, with this job's value substituted in.
    total = guaranteed
    for other in view.names("PolicyJob"):
        if other == name:
            continue
        ospec = view.spec("PolicyJob", other)
        if ospec.get("network") == network:
            total += float(ospec.get("guaranteed_mbps", 0.0))
    for an_name in view.names("AccessNetwork"):
        an = view.spec("AccessNetwork", an_name)
        if an.get("network") == network and total > float(an["capacity_mbps"]):
            raise SchemaValidationError(
                "spec.guaranteed_mbps",
                f"sum of slice guarantees ({total}) exceeds capacity "
                f"{an['capacity_mbps']} of {an_name}",
            )


_VALIDATORS: dict[str, Callable[[str, dict, _StoreView], None]] = {
    "Network": _validate_network,
    "AccessNetwork": _validate_access_network,
    "Ric": _validate_ric,
    "Terminal": _validate_terminal,
    "Slice": _validate_slice,
    "PolicyJob": _validate_policyjob,
}


def _dependents_of(kind: str, name: str, view: _StoreView) -> list[str]:
    deps: list[str] = []
    if kind == "Network":
        for an in view.names("AccessNetwork"):
            if view.spec("AccessNetwork", an).get("network") == name:
                deps.append(f"AccessNetwork/{an}")
        for ric in view.names("Ric"):
            if view.spec("Ric", ric).get("network") == name:
                deps.append(f"Ric/{ric}")
        for sl in view.names("Slice"):
            if view.spec("Slice", sl).get("network") == name:
                deps.append(f"Slice/{sl}")
        for pj in view.names("PolicyJob"):
            if view.spec("PolicyJob", pj).get("network") == name:
                deps.append(f"PolicyJob/{pj}")
    elif kind == "AccessNetwork":
        for t in view.names("Terminal"):
            if view.spec("Terminal", t).get("attached_to") == name:
                deps.append(f"Terminal/{t}")
    elif kind == "Slice":
        net = view.spec("Slice", name).get("network")
        for pj in view.names("PolicyJob"):
            pspec = view.spec("PolicyJob", pj)
            if pspec.get("slice") == name and pspec.get("network") == net:
                deps.append(f"PolicyJob/{pj}")
    elif kind == "Terminal":
        for sl in view.names("Slice"):
            if name in view.spec("Slice", sl).get("members", []):
                deps.append(f"Slice/{sl}")
    return sorted(deps)


# ---------------------------------------------------------------------------
# Watch plumbing
# ---------------------------------------------------------------------------


class WatchSubscription:
    """Ordered, exactly-once delta stream for one subscriber.

    The buffer is bounded; a subscriber that falls too far behind is
    cancelled with ``SubscriberOverflowError`` instead of silently losing
    deltas.
    """

    def __init__(self, store: "ResourceStore", buffer_size: int):
        self._store = store
        self._buffer: deque[Delta] = deque()
        self._capacity = buffer_size
        self._cond = threading.Condition()
        self._overflowed = False
        self._closed = False

    def _push(self, delta: Delta) -> None:
        with self._cond:
            if self._closed or self._overflowed:
                return
            if len(self._buffer) >= self._capacity:
                self._overflowed = True
                self._buffer.clear()
            else:
                self._buffer.append(delta)
            self._cond.notify_all()

    def poll(self, timeout: Optional[float] = None) -> Optional[Delta]:
        """Next delta, blocking up to ``timeout`` seconds (None = forever)."""
        with self._cond:
            if not self._buffer:
                self._cond.wait_for(
                    lambda: self._buffer or self._overflowed or self._closed,
                    timeout=timeout,
                )
            if self._overflowed:
                self._store._drop_subscriber(self)
                raise SubscriberOverflowError(
                    f"subscriber buffer exceeded {self._capacity} deltas"
                )
            if self._buffer:
                return self._buffer.popleft()
            return None

    def pending(self) -> int:
        with self._cond:
            return len(self._buffer)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        self._store._drop_subscriber(self)


class ResourceStore:
    """Single-writer, multi-reader versioned store.

    ``retention`` caps the kept delta history; watch cursors older than
    the compaction point fail with ``CompactionError`` so the subscriber
    knows to resync from a snapshot.
    """

    def __init__(self, retention: Optional[int] = None, journal: Optional[Callable[[str], None]] = None):
        self._live: dict[tuple[str, str], Resource] = {}
        self._tombstones: dict[tuple[str, str], int] = {}
        self._history: deque[Delta] = deque()
        self._retention = retention
        self._compacted_through = 0  # highest version dropped from history
        self._version = 0
        self._lock = threading.RLock()
        self._subs: list[WatchSubscription] = []
        self._journal = journal

    # -- reads --------------------------------------------------------------

    @property
    def version(self) -> int:
        with self._lock:
            return self._version

    def get(self, kind: str, name: str) -> Resource:
        self._check_kind(kind)
        with self._lock:
            res = self._live.get((kind, name))
            if res is None:
                raise NotFoundError(f"{kind}/{name} not found")
            return Resource(res.kind, res.name, copy.deepcopy(res.spec), res.version)

    def list(self, kind: Optional[str] = None) -> list[Resource]:
        if kind is not None:
            self._check_kind(kind)
        with self._lock:
            out = [
                Resource(r.kind, r.name, copy.deepcopy(r.spec), r.version)
                for (k, _), r in sorted(self._live.items())
                if kind is None or k == kind
            ]
        return out

    def exists(self, kind: str, name: str) -> bool:
        with self._lock:
            return (kind, name) in self._live

    def live_keys(self) -> set[tuple[str, str]]:
        with self._lock:
            return set(self._live)

    def state_fingerprint(self) -> str:
        """Hash of the live state; byte-identical states hash equal."""
        with self._lock:
            doc = {f"{k}/{n}": r.spec for (k, n), r in self._live.items()}
        return hashlib.sha256(canonical_json(doc).encode()).hexdigest()

    # -- writes -------------------------------------------------------------

    def upsert(self, kind: str, name: str, spec: dict) -> tuple[int, Optional[Delta]]:
        """Create or update a resource.

        Returns ``(version, delta)``; an upsert with an identical spec is a
        no-op that bumps nothing and emits nothing.
        """
        self._check_kind(kind)
        if not name or not isinstance(name, str):
            raise SchemaValidationError("name", "identifier must be a non-empty string")
        spec = copy.deepcopy(spec)
        with self._lock:
            _VALIDATORS[kind](name, spec, _StoreView(self._live))
            existing = self._live.get((kind, name))
            if existing is None:
                changes = {p: FieldChange(new=v) for p, v in flatten_spec(spec).items()}
                op = "create"
            else:
                changes = diff_specs(existing.spec, spec)
                if not changes:
                    return self._version, None
                op = "update"
            self._version += 1
            resource = Resource(kind, name, spec, self._version)
            self._live[(kind, name)] = resource
            self._tombstones.pop((kind, name), None)
            delta = Delta(self._version, kind, name, op, changes)
            self._commit(delta)
            return self._version, delta

    def delete(self, kind: str, name: str) -> tuple[int, Delta]:
        """Tombstone a live resource; rejected while dependents exist."""
        self._check_kind(kind)
        with self._lock:
            existing = self._live.get((kind, name))
            if existing is None:
                raise NotFoundError(f"{kind}/{name} not found")
            deps = _dependents_of(kind, name, _StoreView(self._live))
            if deps:
                raise DependencyError(f"{kind}/{name}", deps)
            self._version += 1
            del self._live[(kind, name)]
            self._tombstones[(kind, name)] = self._version
            changes = {p: FieldChange(old=v) for p, v in flatten_spec(existing.spec).items()}
            delta = Delta(self._version, kind, name, "delete", changes)
            self._commit(delta)
            return self._version, delta

    def _commit(self, delta: Delta) -> None:
        # Called under self._lock; appends history, trims retention, fans out.
        self._history.append(delta)
        if self._retention is not None:
            while len(self._history) > self._retention:
                dropped = self._history.popleft()
                self._compacted_through = dropped.version
        for sub in list(self._subs):
            sub._push(delta)
        if self._journal is not None:
            summary = ",".join(sorted(delta.changed_fields)) if delta.op == "update" else delta.op
            self._journal(
                f"commit v{delta.version} {delta.op} {delta.kind}/{delta.name} [{summary}]"
            )

    # -- watch --------------------------------------------------------------

    def watch(self, from_version: int = 0, buffer_size: int = 4096) -> WatchSubscription:
        """Subscribe from a cursor: replay history > ``from_version`` then live."""
        with self._lock:
            if from_version < 0 or from_version > self._version:
                raise StoreError(
                    f"cursor {from_version} outside [0, {self._version}]"
                )
            if from_version < self._compacted_through:
                raise CompactionError(
                    f"cursor {from_version} predates compaction point "
                    f"{self._compacted_through}; full resync required"
                )
            sub = WatchSubscription(self, buffer_size)
            for delta in self._history:
                if delta.version > from_version:
                    sub._push(delta)
            self._subs.append(sub)
            return sub

    def _drop_subscriber(self, sub: WatchSubscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    def deltas_since(self, version: int) -> list[Delta]:
        with self._lock:
            if version < self._compacted_through:
                raise CompactionError(
                    f"deltas before version {self._compacted_through} have been compacted"
                )
            return [d for d in self._history if d.version > version]

    # -- snapshot / export ----------------------------------------------------

    def export_snapshot(self) -> dict:
        with self._lock:
            resources: dict[str, dict[str, dict]] = {}
            for (kind, name), res in sorted(self._live.items()):
                resources.setdefault(kind, {})[name] = copy.deepcopy(res.spec)
            return {"version": self._version, "resources": resources}

    def import_snapshot(self, doc: dict) -> None:
        """Load a snapshot into an empty store (dependency-safe kind order)."""
        if self.version != 0:
            raise StoreError("snapshot import requires an empty store")
        resources = doc.get("resources", {})
        for kind in KINDS:
            for name in sorted(resources.get(kind, {})):
                self.upsert(kind, name, resources[kind][name])

    def export_delta_log(self, path: str) -> int:
        """Write retained history as newline-delimited JSON; returns count."""
        with self._lock:
            deltas = list(self._history)
        with open(path, "w", encoding="utf-8") as fh:
            for delta in deltas:
                fh.write(canonical_json(delta.to_json()) + "\n")
        return len(deltas)

    # -- misc -----------------------------------------------------------------

    @staticmethod
    def _check_kind(kind: str) -> None:
        if kind not in KINDS:
            raise UnknownKindError(f"unknown kind {kind!r}; expected one of {KINDS}")
