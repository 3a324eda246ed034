"""Typed tool registry: read-only monitoring collectors and the ten
deployment actions.

Monitoring tools never touch the store.  Deployment tools run a full
pre-flight (argument schema, referential integrity, capacity admission)
against the live store before writing anything; a failed pre-flight
leaves the store byte-identical.  Execution applies the planned writes
in order, recording the inverse of each one, and rolls back through
those inverses if a later write fails, so multi-write actions are atomic
from the caller's point of view.  Every executed action's result diff is
exactly the store's delta segment for that action.

The ten-action catalog (network/access-network/RIC/terminal lifecycle
plus slice create/update/delete) is a concrete naming of the platform's
control surface; see the README for the full parameter reference.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .runtime import ServiceHub, default_cells
from .store import (
    Delta,
    NotFoundError,
    ResourceStore,
    SchemaValidationError,
    StoreError,
    flatten_spec,
)

SCHEMA_VERSION = 1
DEFAULT_CAPACITY_MBPS = 100.0


class ToolError(Exception):
    pass


class ToolNotFoundError(ToolError):
    pass


class ToolArgumentError(ToolError):
    """Bad argument; carries the parameter name."""

    def __init__(self, parameter: str, message: str):
        self.parameter = parameter
        super().__init__(f"{parameter}: {message}")


@dataclass(frozen=True)
class ToolParam:
    name: str
    type: str  # string | number | integer | boolean | array[string]
    required: bool = True
    description: str = ""

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "type": self.type,
            "required": self.required,
            "description": self.description,
        }


@dataclass(frozen=True)
class ToolSchema:
    name: str
    kind: str  # monitoring | deployment
    description: str
    parameters: tuple[ToolParam, ...] = ()
    mutates: tuple[str, ...] = ()  # resource kinds a deployment tool may touch

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "description": self.description,
            "parameters": [p.to_json() for p in self.parameters],
            "mutates": list(self.mutates),
        }


@dataclass
class ToolAction:
    """Outcome of one deployment call."""

    tool: str
    arguments: dict
    preflight_passed: bool
    preflight_reasons: list[str] = field(default_factory=list)
    ok: bool = False
    error: Optional[str] = None
    diff: list[Delta] = field(default_factory=list)
    rollback: list[dict] = field(default_factory=list)
    version_before: int = 0
    version_after: int = 0

    def to_json(self) -> dict:
        return {
            "tool": self.tool,
            "arguments": self.arguments,
            "preflight": {
                "passed": self.preflight_passed,
                "reasons": self.preflight_reasons,
            },
            "ok": self.ok,
            "error": self.error,
            "diff": [d.to_json() for d in self.diff],
            "rollback": self.rollback,
            "version_before": self.version_before,
            "version_after": self.version_after,
        }


# One planned store write: ("upsert", kind, name, spec) or ("delete", kind, name, None)
_Write = tuple[str, str, str, Optional[dict]]


def _type_ok(value: Any, type_name: str) -> bool:
    if type_name == "string":
        return isinstance(value, str)
    if type_name == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if type_name == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if type_name == "boolean":
        return isinstance(value, bool)
    if type_name == "array[string]":
        return isinstance(value, list) and all(isinstance(v, str) for v in value)
    return False


def validate_args(schema: ToolSchema, args: dict) -> list[str]:
    reasons = []
    known = {p.name for p in schema.parameters}
    for key in args:
        if key not in known:
            reasons.append(f"unknown argument {key!r}")
    for param in schema.parameters:
        if param.name not in args:
            if param.required:
                reasons.append(f"missing required argument {param.name!r}")
            continue
        if not _type_ok(args[param.name], param.type):
            reasons.append(f"argument {param.name!r} must be {param.type}")
    return reasons


def resolve_access_network(store: ResourceStore, name: str) -> str:
    """Accepts a qualified name ('gnb1.bubbleran') or a unique bare label."""
    if store.exists("AccessNetwork", name):
        return name
    candidates = [
        r.name for r in store.list("AccessNetwork") if r.name.split(".", 1)[0] == name
    ]
    if len(candidates) == 1:
        return candidates[0]
    if not candidates:
        raise NotFoundError(f"access network {name!r} not found")
    raise ToolArgumentError(
        "access_network", f"{name!r} is ambiguous: {', '.join(sorted(candidates))}"
    )


class ToolRegistry:
    """Typed registry bound to one service hub."""

    def __init__(self, hub: ServiceHub):
        self.hub = hub
        self._deploy_lock = threading.Lock()
        self.audit: list[dict] = []
        self._monitoring: dict[str, tuple[ToolSchema, Callable[[dict], dict]]] = {}
        self._deployment: dict[
            str, tuple[ToolSchema, Callable[[dict], list[_Write]]]
        ] = {}
        self._register_monitoring()
        self._register_deployment()

    # -- registry surface -------------------------------------------------------

    def list_tools(self) -> list[ToolSchema]:
        mon = [self._monitoring[n][0] for n in sorted(self._monitoring)]
        dep = [self._deployment[n][0] for n in sorted(self._deployment)]
        return mon + dep

    def schema(self, name: str) -> ToolSchema:
        if name in self._monitoring:
            return self._monitoring[name][0]
        if name in self._deployment:
            return self._deployment[name][0]
        raise ToolNotFoundError(f"unknown tool {name!r}")

    def kind_of(self, name: str) -> str:
        return self.schema(name).kind

    def catalog_json(self) -> list[dict]:
        return [schema.to_json() for schema in self.list_tools()]

    def export_audit(self, path: str) -> int:
        import json

        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.audit:
                fh.write(json.dumps(entry) + "\n")
        return len(self.audit)

    # -- monitoring -----------------------------------------------------------------

    def call_monitoring(self, name: str, args: dict) -> dict:
        if name not in self._monitoring:
            raise ToolNotFoundError(f"unknown monitoring tool {name!r}")
        schema, fn = self._monitoring[name]
        reasons = validate_args(schema, args)
        if reasons:
            raise ToolArgumentError(reasons[0].split("'")[1] if "'" in reasons[0] else name, "; ".join(reasons))
        observation = fn(args)
        observation["schema_version"] = SCHEMA_VERSION
        return observation

    def _register_monitoring(self) -> None:
        def register(name, description, params, fn):
            self._monitoring[name] = (
                ToolSchema(name, "monitoring", description, tuple(params)),
                fn,
            )

        register(
            "list_networks",
            "List networks with their access networks, RIC counts and core flag.",
            [],
            self._list_networks,
        )
        register(
            "get_network_status",
            "Operational status of a network or access network element.",
            [ToolParam("name", "string")],
            self._get_network_status,
        )
        register(
            "list_terminals",
            "List terminals (UEs) with attachment, profile and offered load.",
            [],
            self._list_terminals,
        )
        register(
            "list_slices",
            "List slices with membership and throughput policy.",
            [],
            self._list_slices,
        )
        register(
            "get_policyjob",
            "Fetch a slice throughput policy by job name or slice name.",
            [ToolParam("name", "string")],
            self._get_policyjob,
        )
        register(
            "get_kpis",
            "Recent KPI samples, filterable by network/access network/slice/terminal.",
            [
                ToolParam("network", "string", required=False),
                ToolParam("access_network", "string", required=False),
                ToolParam("slice", "string", required=False),
                ToolParam("terminal", "string", required=False),
                ToolParam("last", "integer", required=False, description="max samples"),
            ],
            self._get_kpis,
        )
        register(
            "get_logs",
            "Tail of the platform log, optionally filtered by substring.",
            [
                ToolParam("limit", "integer", required=False),
                ToolParam("contains", "string", required=False),
            ],
            self._get_logs,
        )

    def _list_networks(self, args: dict) -> dict:
        store = self.hub.store
        networks = []
        for net in store.list("Network"):
            ans = [
                an.name
                for an in store.list("AccessNetwork")
                if an.spec.get("network") == net.name
            ]
            rics = sum(
                1 for r in store.list("Ric") if r.spec.get("network") == net.name
            )
            networks.append(
                {
                    "name": net.name,
                    "access_networks": ans,
                    "ric_count": rics,
                    "core_present": bool(net.spec.get("core_present", True)),
                }
            )
        return {"networks": networks}

    def _get_network_status(self, args: dict) -> dict:
        store = self.hub.store
        name = args["name"]
        if store.exists("Network", name):
            ans = [
                an
                for an in store.list("AccessNetwork")
                if an.spec.get("network") == name
            ]
            statuses = {an.spec.get("status", "up") for an in ans}
            status = "up" if statuses <= {"up"} else ("down" if statuses == {"down"} else "degraded")
            return {
                "element": name,
                "type": "network",
                "status": status,
                "access_networks": {an.name: an.spec.get("status", "up") for an in ans},
            }
        try:
            qualified = resolve_access_network(store, name)
        except NotFoundError:
            raise ToolArgumentError("name", f"unknown element {name!r}")
        spec = store.get("AccessNetwork", qualified).spec
        return {
            "element": qualified,
            "type": "access_network",
            "status": spec.get("status", "up"),
            "capacity_mbps": spec.get("capacity_mbps"),
            "cells": spec.get("cells", []),
        }

    def _list_terminals(self, args: dict) -> dict:
        return {
            "terminals": [
                {
                    "name": t.name,
                    "attached_to": t.spec.get("attached_to"),
                    "profile": t.spec.get("profile", "embb"),
                    "offered_load_mbps": t.spec.get("offered_load_mbps", 0.0),
                }
                for t in self.hub.store.list("Terminal")
            ]
        }

    def _list_slices(self, args: dict) -> dict:
        store = self.hub.store
        slices = []
        for sl in store.list("Slice"):
            network = sl.spec.get("network")
            entry = {
                "slice": sl.name,
                "network": network,
                "members": list(sl.spec.get("members", [])),
                "guaranteed_mbps": None,
                "max_mbps": None,
            }
            try:
                pj = store.get("PolicyJob", f"{network}-{sl.name}").spec
                entry["guaranteed_mbps"] = pj.get("guaranteed_mbps")
                entry["max_mbps"] = pj.get("max_mbps")
            except NotFoundError:
                pass
            slices.append(entry)
        return {"slices": slices}

    def _get_policyjob(self, args: dict) -> dict:
        store = self.hub.store
        name = args["name"]
        spec = None
        job_name = name
        try:
            spec = store.get("PolicyJob", name).spec
        except NotFoundError:
            matches = [
                (r.name, r.spec)
                for r in store.list("PolicyJob")
                if r.spec.get("slice") == name
            ]
            if len(matches) == 1:
                job_name, spec = matches[0]
            elif len(matches) > 1:
                raise ToolArgumentError("name", f"{name!r} matches multiple policy jobs")
        if spec is None:
            raise ToolArgumentError("name", f"policy job {name!r} not found")
        return {
            "policyjob": job_name,
            "network": spec.get("network"),
            "slice": spec.get("slice"),
            "guaranteed_mbps": spec.get("guaranteed_mbps"),
            "max_mbps": spec.get("max_mbps"),
        }

    def _get_kpis(self, args: dict) -> dict:
        an = args.get("access_network")
        if an is not None:
            an = resolve_access_network(self.hub.store, an)
        samples = self.hub.sim.kpi_history(
            network=args.get("network"),
            access_network=an,
            slice_name=args.get("slice"),
            terminal=args.get("terminal"),
            last=args.get("last", 20),
        )
        return {"tick": self.hub.sim.tick, "samples": [s.to_json() for s in samples]}

    def _get_logs(self, args: dict) -> dict:
        entries = self.hub.logs.tail(
            limit=args.get("limit", 10), contains=args.get("contains")
        )
        return {"entries": entries, "total_committed": self.hub.store.version}

    # -- deployment ---------------------------------------------------------------

    def call_deployment(self, name: str, args: dict) -> ToolAction:
        """Pre-flight then atomically execute one control action."""
        if name not in self._deployment:
            raise ToolNotFoundError(f"unknown deployment tool {name!r}")
        schema, planner = self._deployment[name]
        action = ToolAction(tool=name, arguments=args, preflight_passed=False)
        reasons = validate_args(schema, args)
        writes: list[_Write] = []
        if not reasons:
            try:
                writes = planner(args)
            except (ToolError, StoreError) as exc:
                reasons = [str(exc)]
        if reasons:
            action.preflight_reasons = reasons
            version = self.hub.store.version
            action.version_before = version
            action.version_after = version
            self.audit.append(action.to_json())
            self.hub.logs.append(f"tool {name}: preflight failed ({reasons[0]})")
            return action

        action.preflight_passed = True
        with self._deploy_lock:
            store = self.hub.store
            action.version_before = store.version
            applied_inverses: list[_Write] = []
            try:
                for op, kind, res_name, spec in writes:
                    if op == "upsert":
                        try:
                            old = store.get(kind, res_name).spec
                            inverse: _Write = ("upsert", kind, res_name, old)
                        except NotFoundError:
                            inverse = ("delete", kind, res_name, None)
                        store.upsert(kind, res_name, spec)
                    else:
                        old = store.get(kind, res_name).spec
                        inverse = ("upsert", kind, res_name, old)
                        store.delete(kind, res_name)
                    applied_inverses.append(inverse)
                    action.rollback.append(
                        {"op": inverse[0], "kind": inverse[1], "name": inverse[2]}
                    )
                action.ok = True
            except (StoreError, ToolError) as exc:
                action.error = str(exc)
                for op, kind, res_name, spec in reversed(applied_inverses):
                    try:
                        if op == "upsert":
                            store.upsert(kind, res_name, spec)
                        else:
                            store.delete(kind, res_name)
                    except StoreError:
                        # Compensation must not mask the original failure.
                        pass
                action.ok = False
            action.version_after = store.version
            action.diff = store.deltas_since(action.version_before)
        self.hub.sync()  # context refresh: index and simulator see the change
        self.audit.append(action.to_json())
        outcome = "ok" if action.ok else f"failed ({action.error})"
        self.hub.logs.append(f"tool {name}: {outcome}")
        return action

    def _register_deployment(self) -> None:
        def register(name, description, params, planner, mutates):
            self._deployment[name] = (
                ToolSchema(
                    name, "deployment", description, tuple(params), tuple(mutates)
                ),
                planner,
            )

        register(
            "create_network",
            "Create a network blueprint with access networks and RICs.",
            [
                ToolParam("name", "string"),
                ToolParam("access_networks", "array[string]", required=False),
                ToolParam("rics", "integer", required=False),
                ToolParam("capacity_mbps", "number", required=False),
            ],
            self._plan_create_network,
            ["Network", "AccessNetwork", "Ric"],
        )
        register(
            "create_access_network",
            "Add an access network to an existing network.",
            [
                ToolParam("network", "string"),
                ToolParam("label", "string"),
                ToolParam("capacity_mbps", "number", required=False),
            ],
            self._plan_create_access_network,
            ["AccessNetwork"],
        )
        register(
            "create_ric",
            "Deploy an additional RIC instance for a network.",
            [ToolParam("network", "string")],
            self._plan_create_ric,
            ["Ric"],
        )
        register(
            "create_terminal",
            "Create a terminal (UE), optionally pre-attached to an access network.",
            [
                ToolParam("name", "string"),
                ToolParam("profile", "string", required=False),
                ToolParam("offered_load_mbps", "number", required=False),
                ToolParam("attached_to", "string", required=False),
            ],
            self._plan_create_terminal,
            ["Terminal"],
        )
        register(
            "connect_terminal",
            "Attach an existing terminal to an access network.",
            [ToolParam("name", "string"), ToolParam("access_network", "string")],
            self._plan_connect_terminal,
            ["Terminal"],
        )
        register(
            "delete_terminal",
            "Delete a terminal (must not be a slice member).",
            [ToolParam("name", "string")],
            self._plan_delete_terminal,
            ["Terminal"],
        )
        register(
            "delete_network",
            "Delete a network blueprint: its policies, slices, access networks "
            "and RICs; attached terminals are detached first.",
            [ToolParam("name", "string")],
            self._plan_delete_network,
            ["Network", "AccessNetwork", "Ric", "Slice", "PolicyJob", "Terminal"],
        )
        register(
            "create_slice",
            "Create a slice with a guaranteed/max throughput policy.",
            [
                ToolParam("network", "string"),
                ToolParam("name", "string"),
                ToolParam("guaranteed_mbps", "number"),
                ToolParam("max_mbps", "number"),
                ToolParam("members", "array[string]", required=False),
            ],
            self._plan_create_slice,
            ["Slice", "PolicyJob"],
        )
        register(
            "update_slice_policy",
            "Change the guaranteed/max throughput policy of an existing slice.",
            [
                ToolParam("network", "string"),
                ToolParam("slice", "string"),
                ToolParam("guaranteed_mbps", "number"),
                ToolParam("max_mbps", "number"),
            ],
            self._plan_update_slice_policy,
            ["PolicyJob"],
        )
        register(
            "delete_slice",
            "Delete a slice and its throughput policy.",
            [ToolParam("network", "string"), ToolParam("name", "string")],
            self._plan_delete_slice,
            ["Slice", "PolicyJob"],
        )

    # -- planners (pre-flight + write plans) ------------------------------------------

    def _plan_create_network(self, args: dict) -> list[_Write]:
        store = self.hub.store
        name = args["name"]
        if store.exists("Network", name):
            raise ToolError(f"network {name!r} already exists")
        capacity = float(args.get("capacity_mbps", DEFAULT_CAPACITY_MBPS))
        if capacity <= 0:
            raise ToolArgumentError("capacity_mbps", "must be > 0")
        writes: list[_Write] = [("upsert", "Network", name, {"core_present": True})]
        for label in args.get("access_networks", []):
            writes.append(
                (
                    "upsert",
                    "AccessNetwork",
                    f"{label}.{name}",
                    {
                        "network": name,
                        "capacity_mbps": capacity,
                        "status": "up",
                        "cells": default_cells(label),
                    },
                )
            )
        for i in range(1, int(args.get("rics", 0)) + 1):
            writes.append(
                (
                    "upsert",
                    "Ric",
                    f"ric{i}.{name}",
                    {"network": name, "flavor": "near-rt"},
                )
            )
        return writes

    def _plan_create_access_network(self, args: dict) -> list[_Write]:
        store = self.hub.store
        network = args["network"]
        if not store.exists("Network", network):
            raise ToolError(f"network {network!r} not found")
        label = args["label"]
        qualified = f"{label}.{network}"
        if store.exists("AccessNetwork", qualified):
            raise ToolError(f"access network {qualified!r} already exists")
        capacity = float(args.get("capacity_mbps", DEFAULT_CAPACITY_MBPS))
        if capacity <= 0:
            raise ToolArgumentError("capacity_mbps", "must be > 0")
        return [
            (
                "upsert",
                "AccessNetwork",
                qualified,
                {
                    "network": network,
                    "capacity_mbps": capacity,
                    "status": "up",
                    "cells": default_cells(label),
                },
            )
        ]

    def _plan_create_ric(self, args: dict) -> list[_Write]:
        store = self.hub.store
        network = args["network"]
        if not store.exists("Network", network):
            raise ToolError(f"network {network!r} not found")
        taken = {
            r.name for r in store.list("Ric") if r.spec.get("network") == network
        }
        i = 1
        while f"ric{i}.{network}" in taken:
            i += 1
        return [
            (
                "upsert",
                "Ric",
                f"ric{i}.{network}",
                {"network": network, "flavor": "near-rt"},
            )
        ]

    def _plan_create_terminal(self, args: dict) -> list[_Write]:
        store = self.hub.store
        name = args["name"]
        if store.exists("Terminal", name):
            raise ToolError(f"terminal {name!r} already exists")
        attached = args.get("attached_to")
        if attached is not None:
            attached = resolve_access_network(store, attached)
        profile = args.get("profile", "embb")
        if profile not in ("embb", "urllc"):
            raise ToolArgumentError("profile", "expected 'embb' or 'urllc'")
        load = float(args.get("offered_load_mbps", 0.0))
        if load < 0:
            raise ToolArgumentError("offered_load_mbps", "must be >= 0")
        return [
            (
                "upsert",
                "Terminal",
                name,
                {
                    "attached_to": attached,
                    "profile": profile,
                    "offered_load_mbps": load,
                },
            )
        ]

    def _plan_connect_terminal(self, args: dict) -> list[_Write]:
        store = self.hub.store
        name = args["name"]
        try:
            spec = store.get("Terminal", name).spec
        except NotFoundError:
            raise ToolError(f"terminal {name!r} not found")
        target = resolve_access_network(store, args["access_network"])
        new_spec = dict(spec)
        new_spec["attached_to"] = target
        return [("upsert", "Terminal", name, new_spec)]

    def _plan_delete_terminal(self, args: dict) -> list[_Write]:
        store = self.hub.store
        name = args["name"]
        if not store.exists("Terminal", name):
            raise ToolError(f"terminal {name!r} not found")
        members_of = [
            sl.name
            for sl in store.list("Slice")
            if name in sl.spec.get("members", [])
        ]
        if members_of:
            raise ToolError(
                f"terminal {name!r} is a member of slice(s): {', '.join(members_of)}"
            )
        return [("delete", "Terminal", name, None)]

    def _plan_delete_network(self, args: dict) -> list[_Write]:
        store = self.hub.store
        name = args["name"]
        if not store.exists("Network", name):
            raise ToolError(f"network {name!r} not found")
        writes: list[_Write] = []
        slices = [
            sl for sl in store.list("Slice") if sl.spec.get("network") == name
        ]
        for pj in store.list("PolicyJob"):
            if pj.spec.get("network") == name:
                writes.append(("delete", "PolicyJob", pj.name, None))
        for sl in slices:
            writes.append(("delete", "Slice", sl.name, None))
        an_names = {
            an.name
            for an in store.list("AccessNetwork")
            if an.spec.get("network") == name
        }
        for term in store.list("Terminal"):
            if term.spec.get("attached_to") in an_names:
                detached = dict(term.spec)
                detached["attached_to"] = None
                writes.append(("upsert", "Terminal", term.name, detached))
        for an_name in sorted(an_names):
            writes.append(("delete", "AccessNetwork", an_name, None))
        for ric in store.list("Ric"):
            if ric.spec.get("network") == name:
                writes.append(("delete", "Ric", ric.name, None))
        writes.append(("delete", "Network", name, None))
        return writes

    def _plan_create_slice(self, args: dict) -> list[_Write]:
        store = self.hub.store
        network = args["network"]
        name = args["name"]
        if not store.exists("Network", network):
            raise ToolError(f"network {network!r} not found")
        if store.exists("Slice", name):
            raise ToolError(f"slice {name!r} already exists")
        members = args.get("members", [])
        for member in members:
            if not store.exists("Terminal", member):
                raise ToolError(f"member terminal {member!r} not found")
        guaranteed, max_rate = self._check_policy_rates(
            network, f"{network}-{name}", args["guaranteed_mbps"], args["max_mbps"]
        )
        return [
            ("upsert", "Slice", name, {"network": network, "members": members}),
            (
                "upsert",
                "PolicyJob",
                f"{network}-{name}",
                {
                    "network": network,
                    "slice": name,
                    "guaranteed_mbps": guaranteed,
                    "max_mbps": max_rate,
                },
            ),
        ]

    def _plan_update_slice_policy(self, args: dict) -> list[_Write]:
        store = self.hub.store
        network = args["network"]
        slice_name = args["slice"]
        job_name = f"{network}-{slice_name}"
        if not store.exists("Slice", slice_name) or not store.exists(
            "PolicyJob", job_name
        ):
            raise ToolError(f"slice {slice_name!r} in {network!r} has no policy job")
        guaranteed, max_rate = self._check_policy_rates(
            network, job_name, args["guaranteed_mbps"], args["max_mbps"]
        )
        return [
            (
                "upsert",
                "PolicyJob",
                job_name,
                {
                    "network": network,
                    "slice": slice_name,
                    "guaranteed_mbps": guaranteed,
                    "max_mbps": max_rate,
                },
            )
        ]

    def _plan_delete_slice(self, args: dict) -> list[_Write]:
        store = self.hub.store
        network = args["network"]
        name = args["name"]
        if not store.exists("Slice", name):
            raise ToolError(f"slice {name!r} not found")
        if store.get("Slice", name).spec.get("network") != network:
            raise ToolError(f"slice {name!r} does not belong to network {network!r}")
        writes: list[_Write] = []
        if store.exists("PolicyJob", f"{network}-{name}"):
            writes.append(("delete", "PolicyJob", f"{network}-{name}", None))
        writes.append(("delete", "Slice", name, None))
        return writes

    def _check_policy_rates(
        self, network: str, job_name: str, guaranteed, max_rate
    ) -> tuple[float, float]:
        guaranteed = float(guaranteed)
        max_rate = float(max_rate)
        if guaranteed < 0:
            raise ToolArgumentError("guaranteed_mbps", "must be >= 0")
        if guaranteed > max_rate:
            raise ToolArgumentError(
                "guaranteed_mbps", f"guaranteed ({guaranteed}) exceeds max ({max_rate})"
            )
        store = self.hub.store
        total = guaranteed
        for pj in store.list("PolicyJob"):
            if pj.name != job_name and pj.spec.get("network") == network:
                total += float(pj.spec.get("guaranteed_mbps", 0.0))
        for an in store.list("AccessNetwork"):
            if an.spec.get("network") == network and total > float(
                an.spec["capacity_mbps"]
            ):
                raise ToolError(
                    f"admission rejected: guarantees sum to {total} Mbps, over "
                    f"capacity {an.spec['capacity_mbps']} of {an.name}"
                )
        return guaranteed, max_rate


# ---------------------------------------------------------------------------
# Ground-truth checking
# ---------------------------------------------------------------------------


def snapshot_resources(store: ResourceStore) -> dict[str, dict]:
    """Flat {"kind/name": spec} view used for before/after comparison."""
    doc = store.export_snapshot()["resources"]
    return {
        f"{kind}/{name}": spec
        for kind, named in doc.items()
        for name, spec in named.items()
    }


def check_action(expectation: dict, before: dict, after: dict) -> bool:
    ok, _ = check_action_detail(expectation, before, after)
    return ok


def check_action_detail(
    expectation: dict, before: dict, after: dict
) -> tuple[bool, list[str]]:
    """True iff the enacted diff satisfies every expectation and touched
    nothing else.

    ``expectation`` = {"changes": [{kind, name, exists?, fields?}, ...],
    "allow_extra"?: bool}; ``before``/``after`` are snapshot_resources()
    views.  ``fields`` paths are spec-relative dotted paths.
    """
    problems: list[str] = []
    expected_keys = set()
    for entry in expectation.get("changes", []):
        key = f"{entry['kind']}/{entry['name']}"
        expected_keys.add(key)
        should_exist = entry.get("exists", True)
        present = key in after
        if present != should_exist:
            problems.append(
                f"{key}: expected {'present' if should_exist else 'absent'}, "
                f"found {'present' if present else 'absent'}"
            )
            continue
        if should_exist:
            leaves = flatten_spec(after[key], prefix="")
            for path, expected_value in entry.get("fields", {}).items():
                actual = leaves.get(f".{path}", _MISSING)
                if not _values_match(expected_value, actual):
                    problems.append(
                        f"{key}: field {path} expected {expected_value!r}, "
                        f"got {actual!r}"
                    )
    touched = {
        key
        for key in set(before) | set(after)
        if before.get(key, _MISSING) != after.get(key, _MISSING)
    }
    if not expectation.get("allow_extra", False):
        for key in sorted(touched - expected_keys):
            problems.append(f"{key}: unexpected mutation")
    return (not problems), problems


class _Missing:
    def __repr__(self):
        return "<missing>"


_MISSING = _Missing()


def _values_match(expected, actual) -> bool:
    if actual is _MISSING:
        return False
    if isinstance(expected, (int, float)) and not isinstance(expected, bool):
        return (
            isinstance(actual, (int, float))
            and not isinstance(actual, bool)
            and float(expected) == float(actual)
        )
    return expected == actual
