"""Language-model backends for the agent graph.

``ScriptedBackend`` is a fully deterministic rule table: it classifies
prompts, maps intents to tool-call sequences, and composes answers from
tool observations only (never from memory), which makes it the reference
backend for the benchmark harness.  ``HttpChatBackend`` speaks a
chat-completions style protocol to an external model endpoint.
``SchemaBlindBackend`` deliberately ignores tool schemas (every control
attempt dies in pre-flight) and ``DelayedBackend`` adds a fixed
per-call latency; both exist to exercise the harness's failure and
timing measurements.

Every backend returns, per call, either exactly one tool call or a
final answer carrying the stop flag.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import httpx

MONITORING = "monitoring"
DEPLOYMENT = "deployment"
RETRIEVAL = "retrieval"


class BackendError(Exception):
    """Backend unreachable or failed; the episode aborts as failed."""


class MalformedModelOutput(Exception):
    """Unparseable model turn; the graph re-prompts once before counting
    a step failure."""


@dataclass(frozen=True)
class BackendProfile:
    name: str
    kind: str  # scripted | http-chat
    metadata: dict = field(default_factory=dict)  # declared figures, informational

    def to_json(self) -> dict:
        return {"name": self.name, "kind": self.kind, "metadata": dict(self.metadata)}


@dataclass
class ModelTurn:
    """One backend output: a tool call or a final answer with stop."""

    tool: Optional[str] = None
    args: Optional[dict] = None
    answer: Optional[str] = None
    stop: bool = False

    @property
    def is_tool_call(self) -> bool:
        return self.tool is not None


@dataclass
class Transcript:
    """What a backend sees: prompt, branch, pruned context, tools, history."""

    prompt: str
    branch: str
    system: str
    retrieval: list[dict] = field(default_factory=list)
    tool_schemas: list[dict] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)
    repair_notice: Optional[str] = None

    def executed_calls(self) -> list[dict]:
        """Tool-call steps that already carry an observation."""
        return [
            s
            for s in self.steps
            if s.get("action", {}).get("tool") and s.get("observation") is not None
        ]

    def to_messages(self) -> list[dict]:
        payload = {
            "prompt": self.prompt,
            "branch": self.branch,
            "retrieved_context": self.retrieval,
            "steps": self.steps,
        }
        if self.repair_notice:
            payload["repair_notice"] = self.repair_notice
        return [
            {
                "role": "system",
                "content": self.system
                + "\nTools:\n"
                + json.dumps(self.tool_schemas, indent=None),
            },
            {"role": "user", "content": json.dumps(payload)},
        ]


def _num(value: float) -> str:
    """Render rates with one decimal ('20.0'), counts as plain ints."""
    if value is None:
        return "unlimited"
    return f"{float(value):.1f}"


def _latest_tick_samples(obs: dict) -> list[dict]:
    samples = obs.get("samples", [])
    if not samples:
        return []
    last_tick = max(s["tick"] for s in samples)
    return [s for s in samples if s["tick"] == last_tick]


@dataclass
class Script:
    """One resolved intent: branch, tool calls to make, answer composer."""

    branch: str
    calls: list[tuple[str, dict]]
    compose: Callable[[list[dict]], str]


class ScriptedBackend:
    """Deterministic rule-table backend.

    Intent patterns are tried in order; the first match wins.  Answers
    are composed exclusively from the observations gathered during the
    episode, so any fact the backend states traces back to a tool result
    or retrieval hit.  Additional rules can be loaded from a JSON rule
    table (see README) and take precedence over the built-ins.
    """

    def __init__(self, name: str = "scripted", rules_path: Optional[str] = None):
        self.name = name
        self.profile = BackendProfile(name=name, kind="scripted")
        self._custom_rules: list[tuple[re.Pattern, dict]] = []
        if rules_path:
            with open(rules_path, encoding="utf-8") as fh:
                table = json.load(fh)
            for rule in table.get("rules", []):
                self._custom_rules.append(
                    (re.compile(rule["pattern"], re.IGNORECASE), rule)
                )

    # -- routing -------------------------------------------------------------

    def classify(self, prompt: str, context_summary: str = "") -> str:
        script = self._resolve(prompt)
        return script.branch

    # -- generation ----------------------------------------------------------

    def generate(self, transcript: Transcript) -> ModelTurn:
        script = self._resolve(transcript.prompt)
        if script.branch == DEPLOYMENT:
            # The validation loop feeds pre-flight failures back; the
            # scripted planner does not re-plan around them, it reports.
            rejected = [s for s in transcript.steps if s.get("node") == "validate"]
            if rejected:
                reasons = rejected[-1].get("observation", {}).get("reasons", [])
                return ModelTurn(
                    answer="Could not enact the request: "
                    + ("; ".join(reasons) if reasons else "pre-flight rejected"),
                    stop=True,
                )
        executed = transcript.executed_calls()
        if len(executed) < len(script.calls):
            tool, args = script.calls[len(executed)]
            return ModelTurn(tool=tool, args=args)
        observations = [s["observation"] for s in executed]
        return ModelTurn(answer=script.compose(observations), stop=True)

    # -- rule table -------------------------------------------------------------

    def _resolve(self, prompt: str) -> Script:
        text = " ".join(prompt.lower().split())
        for pattern, rule in self._custom_rules:
            match = pattern.search(text)
            if match:
                return self._custom_script(rule, match)
        for pattern, builder in _DEPLOYMENT_RULES:
            match = pattern.search(text)
            if match:
                return builder(match)
        for pattern, builder in _MONITORING_RULES:
            match = pattern.search(text)
            if match:
                return builder(match)
        return Script(
            branch=MONITORING,
            calls=[],
            compose=lambda obs: "I cannot interpret this intent; please rephrase.",
        )

    @staticmethod
    def _custom_script(rule: dict, match: re.Match) -> Script:
        def sub(value):
            if isinstance(value, str):
                return re.sub(
                    r"\$(\d+)", lambda m: match.group(int(m.group(1))) or "", value
                )
            if isinstance(value, dict):
                return {k: sub(v) for k, v in value.items()}
            if isinstance(value, list):
                return [sub(v) for v in value]
            return value

        calls = [(c["tool"], sub(c.get("args", {}))) for c in rule.get("calls", [])]
        answer = sub(rule.get("answer", "Done."))
        return Script(
            branch=rule.get("branch", MONITORING),
            calls=calls,
            compose=lambda obs: answer,
        )


# ---------------------------------------------------------------------------
# Built-in deployment rules
# ---------------------------------------------------------------------------


def _deployment_summary(observations: list[dict]) -> str:
    parts = []
    for action in observations:
        status = "ok" if action.get("ok") else f"failed: {action.get('error')}"
        parts.append(f"{action.get('tool')} {status}")
    if not parts:
        return "No actions were executed."
    return "Enacted " + "; ".join(parts) + "."


def _rule_create_network(match: re.Match) -> Script:
    name = match.group(1)
    label = match.group(3)
    rics = int(match.group(4))
    args = {"name": name, "access_networks": [label], "rics": rics}

    def compose(obs):
        if obs and obs[0].get("ok"):
            return (
                f"Created network {name} with access network {label}.{name} "
                f"and {rics} RIC(s)."
            )
        return _deployment_summary(obs)

    return Script(DEPLOYMENT, [("create_network", args)], compose)


def _rule_create_network_bare(match: re.Match) -> Script:
    name = match.group(1)

    def compose(obs):
        if obs and obs[0].get("ok"):
            return f"Created network {name}."
        return _deployment_summary(obs)

    return Script(DEPLOYMENT, [("create_network", {"name": name})], compose)


def _rule_create_and_connect_terminal(match: re.Match) -> Script:
    name, an = match.group(1), match.group(2)

    def compose(obs):
        if len(obs) == 2 and all(a.get("ok") for a in obs):
            return f"Created terminal {name} and connected it to {an}."
        return _deployment_summary(obs)

    return Script(
        DEPLOYMENT,
        [
            ("create_terminal", {"name": name}),
            ("connect_terminal", {"name": name, "access_network": an}),
        ],
        compose,
    )


def _rule_create_terminal(match: re.Match) -> Script:
    name = match.group(1)

    def compose(obs):
        if obs and obs[0].get("ok"):
            return f"Created terminal {name}."
        return _deployment_summary(obs)

    return Script(DEPLOYMENT, [("create_terminal", {"name": name})], compose)


def _rule_connect_terminal(match: re.Match) -> Script:
    name, an = match.group(1), match.group(2)

    def compose(obs):
        if obs and obs[0].get("ok"):
            return f"Connected terminal {name} to {an}."
        return _deployment_summary(obs)

    return Script(
        DEPLOYMENT, [("connect_terminal", {"name": name, "access_network": an})], compose
    )


def _rule_delete_terminal(match: re.Match) -> Script:
    name = match.group(1)

    def compose(obs):
        if obs and obs[0].get("ok"):
            return f"Deleted terminal {name}."
        return _deployment_summary(obs)

    return Script(DEPLOYMENT, [("delete_terminal", {"name": name})], compose)


def _rule_delete_network(match: re.Match) -> Script:
    name = match.group(1)

    def compose(obs):
        if obs and obs[0].get("ok"):
            return f"Deleted network blueprint {name} and its components."
        return _deployment_summary(obs)

    return Script(DEPLOYMENT, [("delete_network", {"name": name})], compose)


def _rule_update_slice_single_value(match: re.Match) -> Script:
    network, slice_name, value = (
        match.group(1),
        match.group(2),
        float(match.group(3)),
    )
    return _update_slice_script(network, slice_name, value, value)


def _rule_update_slice_two_values(match: re.Match) -> Script:
    network, slice_name = match.group(1), match.group(2)
    guaranteed, max_rate = float(match.group(3)), float(match.group(4))
    return _update_slice_script(network, slice_name, guaranteed, max_rate)


def _update_slice_script(
    network: str, slice_name: str, guaranteed: float, max_rate: float
) -> Script:
    args = {
        "network": network,
        "slice": slice_name,
        "guaranteed_mbps": guaranteed,
        "max_mbps": max_rate,
    }

    def compose(obs):
        if obs and obs[0].get("ok"):
            return (
                f"Updated slice {slice_name} in {network}: guaranteed "
                f"{_num(guaranteed)} Mbps, max {_num(max_rate)} Mbps."
            )
        return _deployment_summary(obs)

    return Script(DEPLOYMENT, [("update_slice_policy", args)], compose)


def _rule_create_slice(match: re.Match) -> Script:
    slice_name, network = match.group(1), match.group(2)
    guaranteed, max_rate = float(match.group(3)), float(match.group(4))
    args = {
        "network": network,
        "name": slice_name,
        "guaranteed_mbps": guaranteed,
        "max_mbps": max_rate,
    }

    def compose(obs):
        if obs and obs[0].get("ok"):
            return (
                f"Created slice {slice_name} in {network} with guaranteed "
                f"{_num(guaranteed)} Mbps and max {_num(max_rate)} Mbps."
            )
        return _deployment_summary(obs)

    return Script(DEPLOYMENT, [("create_slice", args)], compose)


def _rule_delete_slice(match: re.Match) -> Script:
    slice_name, network = match.group(1), match.group(2)

    def compose(obs):
        if obs and obs[0].get("ok"):
            return f"Deleted slice {slice_name} from {network}."
        return _deployment_summary(obs)

    return Script(
        DEPLOYMENT, [("delete_slice", {"network": network, "name": slice_name})], compose
    )


def _rule_create_access_network(match: re.Match) -> Script:
    label, network = match.group(1), match.group(2)

    def compose(obs):
        if obs and obs[0].get("ok"):
            return f"Added access network {label}.{network} to {network}."
        return _deployment_summary(obs)

    return Script(
        DEPLOYMENT,
        [("create_access_network", {"network": network, "label": label})],
        compose,
    )


def _rule_create_ric(match: re.Match) -> Script:
    network = match.group(1)

    def compose(obs):
        if obs and obs[0].get("ok"):
            return f"Deployed an additional RIC for network {network}."
        return _deployment_summary(obs)

    return Script(DEPLOYMENT, [("create_ric", {"network": network})], compose)


_DEPLOYMENT_RULES: list[tuple[re.Pattern, Callable[[re.Match], Script]]] = [
    (
        re.compile(
            r"create a network with name (\w+) with (\d+) access networks? "
            r"called (\w+) and (\d+) rics?"
        ),
        _rule_create_network,
    ),
    (re.compile(r"create a network with name (\w+)\W*$"), _rule_create_network_bare),
    (
        re.compile(
            r"create a terminal with name (\w+) and connect it to the "
            r"([\w.]+) access network"
        ),
        _rule_create_and_connect_terminal,
    ),
    (
        re.compile(r"create a terminal with name (\w+)\W*$"),
        _rule_create_terminal,
    ),
    (
        re.compile(r"connect the terminal (\w+) to the ([\w.]+) access network"),
        _rule_connect_terminal,
    ),
    (re.compile(r"delete the terminal with name (\w+)"), _rule_delete_terminal),
    (re.compile(r"delete the terminal (\w+)"), _rule_delete_terminal),
    (
        re.compile(r"delete the network(?: blueprint)? with name (\w+)"),
        _rule_delete_network,
    ),
    (
        re.compile(
            r"(?:change|update|set) the (\w+) (\w+) slice to (\d+(?:\.\d+)?) ?mbps "
            r"guaranteed and max(?:imum)? throughput"
        ),
        _rule_update_slice_single_value,
    ),
    (
        re.compile(
            r"(?:change|update|set) the (\w+) (\w+) slice to (\d+(?:\.\d+)?) ?mbps "
            r"guaranteed and (\d+(?:\.\d+)?) ?mbps max(?:imum)?"
        ),
        _rule_update_slice_two_values,
    ),
    (
        re.compile(
            r"(?:increase|decrease) the (\w+) (\w+) slice (?:max )?throughput to "
            r"(\d+(?:\.\d+)?) ?mbps"
        ),
        _rule_update_slice_single_value,
    ),
    (
        re.compile(
            r"create a slice named (\w+) in the (\w+) network with "
            r"(\d+(?:\.\d+)?) ?mbps guaranteed and (\d+(?:\.\d+)?) ?mbps max(?:imum)?"
        ),
        _rule_create_slice,
    ),
    (re.compile(r"delete the (\w+) slice from the (\w+) network"), _rule_delete_slice),
    (
        re.compile(r"add an access network called (\w+) to the (\w+) network"),
        _rule_create_access_network,
    ),
    (
        re.compile(
            r"deploy (?:one more|an additional|another) ric for the network (\w+)"
        ),
        _rule_create_ric,
    ),
]


# ---------------------------------------------------------------------------
# Built-in monitoring rules
# ---------------------------------------------------------------------------


def _mon(calls, compose, branch=MONITORING):
    return lambda match: Script(branch, [c for c in calls], _bind(compose, match))


def _bind(fn, match):
    return lambda obs: fn(obs, match)


def _networks_overview(obs, match):
    nets = obs[0]["networks"]
    if not nets:
        return "No networks or access networks are currently deployed."
    an_names = [an["name"] for net in nets for an in net["access_networks"]]
    core_nets = [net["name"] for net in nets if net["core_present"]]
    answer = (
        f"Yes. Access networks: {', '.join(an_names)}. "
        f"Networks: {', '.join(net['name'] for net in nets)}."
    )
    if core_nets:
        answer += f" A core network is present in: {', '.join(core_nets)}."
    return answer


def _an_overview(obs, match):
    status = obs[0]
    cells = ", ".join(
        f"{c['cell_id']} ({c['prb_total']} PRBs @ {_num(c['center_frequency_mhz'])} MHz)"
        for c in status.get("cells", [])
    )
    return (
        f"Access network {status['element']} is {status['status']} with capacity "
        f"{_num(status['capacity_mbps'])} Mbps. Cells: {cells}."
    )


def _element_health(obs, match):
    status = obs[0]
    verdict = "working properly" if status["status"] == "up" else status["status"]
    prefix = "Yes," if status["status"] == "up" else "No,"
    return f"{prefix} {status['element']} is {status['status']} and {verdict}."


def _terminal_count(obs, match):
    terminals = obs[0]["terminals"]
    names = ", ".join(t["name"] for t in terminals)
    return f"There are {len(terminals)} UEs available in the current deployment: {names}."


def _network_inventory(obs, match):
    nets = obs[0]["networks"]
    parts = [
        f"{net['name']} with {len(net['access_networks'])} access network(s) "
        f"({', '.join(an['name'] for an in net['access_networks'])})"
        for net in nets
    ]
    return f"{len(nets)} network(s): " + "; ".join(parts) + "."


def _terminal_attachment(obs, match):
    name = match.group(1)
    for t in obs[0]["terminals"]:
        if t["name"] == name:
            if t["attached_to"]:
                return f"Terminal {name} is attached to {t['attached_to']}."
            return f"Terminal {name} is not attached to any access network."
    return f"Terminal {name} is not known."


def _ric_count(obs, match):
    network = match.group(1)
    for net in obs[0]["networks"]:
        if net["name"] == network:
            return f"Network {network} has {net['ric_count']} RIC(s) deployed."
    return f"Network {network} is not known."


def _core_presence(obs, match):
    network = match.group(1)
    for net in obs[0]["networks"]:
        if net["name"] == network:
            if net["core_present"]:
                return f"Yes, a 5G core is present in the {network} network."
            return f"No, the {network} network has no core."
    return f"Network {network} is not known."


def _policyjob_values(obs, match):
    pj = obs[0]
    return (
        f"PolicyJob {pj['policyjob']} for slice {pj['slice']} in network "
        f"{pj['network']}: guaranteed {_num(pj['guaranteed_mbps'])} Mbps, "
        f"max {_num(pj['max_mbps'])} Mbps."
    )


def _slices_above(obs, match):
    threshold = float(match.group(1))
    rows = [
        s
        for s in obs[0]["slices"]
        if (s["guaranteed_mbps"] or 0) > threshold
    ]
    if not rows:
        return f"No slices have a guaranteed throughput above {_num(threshold)} Mbps."
    names = ", ".join(s["slice"] for s in rows)
    return f"Slices with guaranteed throughput above {_num(threshold)} Mbps: {names}."


def _policyjob_list(obs, match):
    rows = [
        f"{s['network']}-{s['slice']}: guaranteed {_num(s['guaranteed_mbps'])} Mbps, "
        f"max {_num(s['max_mbps'])} Mbps"
        for s in obs[0]["slices"]
        if s["guaranteed_mbps"] is not None
    ]
    return "PolicyJob CRDs: " + "; ".join(rows) + "."


def _policy_sane(obs, match):
    pj = obs[0]
    ok = pj["guaranteed_mbps"] <= pj["max_mbps"]
    verdict = "Yes" if ok else "No"
    return (
        f"{verdict}: slice {pj['slice']} has guaranteed {_num(pj['guaranteed_mbps'])} "
        f"Mbps and max {_num(pj['max_mbps'])} Mbps."
    )


def _total_guarantees(obs, match):
    network = match.group(1)
    total = sum(
        s["guaranteed_mbps"] or 0
        for s in obs[0]["slices"]
        if s["network"] == network
    )
    return f"Total guaranteed bandwidth reserved across {network} slices: {_num(total)} Mbps."


def _policyjob_identity(obs, match):
    pj = obs[0]
    return (
        f"PolicyJob {pj['policyjob']} belongs to network {pj['network']} and "
        f"targets slice {pj['slice']}."
    )


def _slice_inventory(obs, match):
    slices = obs[0]["slices"]
    names = ", ".join(s["slice"] for s in slices)
    return f"There are {len(slices)} slices configured: {names}."


def _slice_members(obs, match):
    slice_name = match.group(1)
    for s in obs[0]["slices"]:
        if s["slice"] == slice_name:
            members = ", ".join(s["members"]) if s["members"] else "none"
            return f"Members of slice {slice_name}: {members}."
    return f"Slice {slice_name} is not known."


def _membership_of_terminal(obs, match):
    terminal = match.group(1)
    owners = [s["slice"] for s in obs[0]["slices"] if terminal in s["members"]]
    if owners:
        return f"Terminal {terminal} is a member of slice {', '.join(owners)}."
    return f"Terminal {terminal} is not a member of any slice."


def _slice_throughput(obs, match):
    slice_name = match.group(1)
    samples = _latest_tick_samples(obs[0])
    for s in samples:
        if s["slice"] == slice_name:
            return (
                f"Slice {slice_name} achieved throughput is "
                f"{_num(s['throughput_mbps'])} Mbps (tick {s['tick']})."
            )
    return f"No KPI samples for slice {slice_name} yet."


def _slice_capped(obs, match):
    slice_name = match.group(1)
    kpi = _latest_tick_samples(obs[0])
    pj = obs[1]
    terminals = obs[2]["terminals"]
    slices = obs[3]["slices"]
    members = next(
        (s["members"] for s in slices if s["slice"] == slice_name), []
    )
    offered = sum(
        t["offered_load_mbps"] for t in terminals if t["name"] in members
    )
    achieved = next(
        (s["throughput_mbps"] for s in kpi if s["slice"] == slice_name), 0.0
    )
    max_rate = pj["max_mbps"] if pj["max_mbps"] is not None else float("inf")
    capped = offered > max_rate and achieved <= max_rate
    verdict = "Yes" if capped else "No"
    return (
        f"{verdict}: members offer {_num(offered)} Mbps, the policy max is "
        f"{_num(pj['max_mbps'])} Mbps, achieved {_num(achieved)} Mbps."
    )


def _slice_served(obs, match):
    slice_name = match.group(1)
    kpi = _latest_tick_samples(obs[0])
    terminals = obs[1]["terminals"]
    slices = obs[2]["slices"]
    members = next((s["members"] for s in slices if s["slice"] == slice_name), [])
    offered = sum(t["offered_load_mbps"] for t in terminals if t["name"] in members)
    achieved = next(
        (s["throughput_mbps"] for s in kpi if s["slice"] == slice_name), 0.0
    )
    return (
        f"Slice {slice_name} members offer {_num(offered)} Mbps and are served "
        f"{_num(achieved)} Mbps."
    )


def _admission_risk(obs, match):
    slices = obs[0]["slices"]
    nets = obs[1]["networks"]
    problems = []
    for net in nets:
        total = sum(
            s["guaranteed_mbps"] or 0
            for s in slices
            if s["network"] == net["name"]
        )
        for an in net["access_networks"]:
            if total > an["capacity_mbps"]:
                problems.append(f"{an['name']} ({_num(total)} > {_num(an['capacity_mbps'])})")
    if problems:
        return "Yes, guarantees exceed capacity on: " + ", ".join(problems) + "."
    totals = {
        net["name"]: sum(
            s["guaranteed_mbps"] or 0 for s in slices if s["network"] == net["name"]
        )
        for net in nets
    }
    detail = "; ".join(
        f"{name}: {_num(total)} Mbps reserved" for name, total in totals.items()
    )
    return f"No, all slice guarantees fit within access network capacity ({detail})."


def _terminal_throughput(obs, match):
    terminal = match.group(1)
    for s in _latest_tick_samples(obs[0]):
        if s["terminal"] == terminal:
            return (
                f"Terminal {terminal} throughput is {_num(s['throughput_mbps'])} "
                f"Mbps (tick {s['tick']})."
            )
    return f"No KPI samples for terminal {terminal} yet."


def _terminal_latency(obs, match):
    terminal = match.group(1)
    for s in _latest_tick_samples(obs[0]):
        if s["terminal"] == terminal:
            return f"Terminal {terminal} latency is {_num(s['latency_ms'])} ms (tick {s['tick']})."
    return f"No KPI samples for terminal {terminal} yet."


def _an_prb_utilization(obs, match):
    status = obs[1]
    samples = [
        s for s in _latest_tick_samples(obs[0]) if s["terminal"] is not None
    ]
    prb_used = sum(s["prb_used"] for s in samples)
    prb_total = sum(c["prb_total"] for c in status.get("cells", []))
    throughput = sum(s["throughput_mbps"] for s in samples)
    pct = 100.0 * throughput / status["capacity_mbps"] if status["capacity_mbps"] else 0.0
    return (
        f"Access network {status['element']} uses {prb_used} of {prb_total} PRBs "
        f"(throughput {_num(throughput)} of {_num(status['capacity_mbps'])} Mbps, "
        f"{_num(pct)}% utilization)."
    )


def _network_throughput(obs, match):
    network = match.group(1)
    samples = [
        s for s in _latest_tick_samples(obs[0]) if s["terminal"] is not None
    ]
    total = sum(s["throughput_mbps"] for s in samples)
    return (
        f"Aggregate downlink throughput across {network} is {_num(total)} Mbps "
        f"over {len(samples)} terminals."
    )


def _an_latency(obs, match):
    samples = [s for s in _latest_tick_samples(obs[0]) if s["terminal"] is not None]
    if not samples:
        return "No terminal KPI samples yet."
    avg = sum(s["latency_ms"] for s in samples) / len(samples)
    name = samples[0]["access_network"]
    return f"Terminals on {name} currently experience {_num(avg)} ms latency."


def _slice_stability(obs, slice_name):
    samples = [s for s in obs[0].get("samples", []) if s["slice"] == slice_name]
    if not samples:
        return f"No KPI samples for slice {slice_name} yet."
    values = {round(s["throughput_mbps"], 6) for s in samples}
    if len(values) == 1:
        return (
            f"No, slice {slice_name} throughput is steady at "
            f"{_num(samples[-1]['throughput_mbps'])} Mbps over the window."
        )
    return (
        f"Yes, slice {slice_name} throughput varied between {_num(min(values))} "
        f"and {_num(max(values))} Mbps."
    )


def _slice_sample_count(obs, match):
    slice_name = match.group(1)
    samples = [s for s in obs[0].get("samples", []) if s["slice"] == slice_name]
    return f"There are {len(samples)} KPI samples for slice {slice_name} in that window."


def _busiest_terminal(obs, match):
    terminals = obs[0]["terminals"]
    if not terminals:
        return "No terminals are deployed."
    top = max(terminals, key=lambda t: t["offered_load_mbps"])
    return (
        f"Terminal {top['name']} has the highest offered load "
        f"({_num(top['offered_load_mbps'])} Mbps)."
    )


def _log_tail(obs, match):
    entries = obs[0]["entries"]
    if not entries:
        return "The platform log is empty."
    lines = "; ".join(e["message"] for e in entries)
    return f"Last {len(entries)} log entries: {lines}."


def _log_admission(obs, match):
    entries = obs[0]["entries"]
    if entries:
        return f"Yes, {len(entries)} admission-control rejections: " + "; ".join(
            e["message"] for e in entries
        )
    return "No admission-control rejections appear in the logs."


def _log_commit_count(obs, match):
    return (
        f"{obs[0]['total_committed']} resource changes have been committed "
        f"since startup (store version {obs[0]['total_committed']})."
    )


def _log_last_commit(obs, match):
    entries = obs[0]["entries"]
    if not entries:
        return "No committed changes are recorded."
    return f"Most recent change: {entries[-1]['message']}."


def _log_degradation(obs, match):
    entries = obs[0]["entries"]
    status = obs[1]
    if entries:
        return "Yes: " + "; ".join(e["message"] for e in entries)
    return (
        f"No, there is no degradation in the logs; {status['element']} status "
        f"is {status['status']}."
    )


def _log_kinds(obs, match):
    kinds = []
    for entry in obs[0]["entries"]:
        m = re.search(r"(create|upsert) (\w+)/", entry["message"])
        if m and m.group(2) not in kinds:
            kinds.append(m.group(2))
    return "Resource kinds created since startup: " + ", ".join(kinds) + "."


def _terminal_crd(obs, match):
    name = match.group(1)
    for t in obs[0]["terminals"]:
        if t["name"] == name:
            attached = t["attached_to"] or "nothing"
            return (
                f"Terminal CRD {name}: profile {t['profile']}, attached to "
                f"{attached}, offered load {_num(t['offered_load_mbps'])} Mbps."
            )
    return f"Terminal {name} is not known."


_MONITORING_RULES: list[tuple[re.Pattern, Callable[[re.Match], Script]]] = [
    (
        re.compile(r"is there any access network"),
        _mon([("list_networks", {})], _networks_overview),
    ),
    (
        re.compile(r"overview of the ([\w.]+) access network cells"),
        lambda m: Script(
            RETRIEVAL,
            [("get_network_status", {"name": m.group(1)})],
            _bind(_an_overview, m),
        ),
    ),
    (
        re.compile(r"is the ([\w.]+) element working properly"),
        lambda m: Script(
            MONITORING,
            [("get_network_status", {"name": m.group(1)})],
            _bind(_element_health, m),
        ),
    ),
    (
        re.compile(r"how many (?:ues|terminals) are available"),
        _mon([("list_terminals", {})], _terminal_count),
    ),
    (
        re.compile(r"list all networks .*access network counts"),
        _mon([("list_networks", {})], _network_inventory),
    ),
    (
        re.compile(r"which access network is the terminal (\w+) attached"),
        lambda m: Script(
            MONITORING, [("list_terminals", {})], _bind(_terminal_attachment, m)
        ),
    ),
    (
        re.compile(r"how many rics are deployed in the (\w+) network"),
        lambda m: Script(MONITORING, [("list_networks", {})], _bind(_ric_count, m)),
    ),
    (
        re.compile(r"is there a 5g core present in the (\w+) network"),
        lambda m: Script(MONITORING, [("list_networks", {})], _bind(_core_presence, m)),
    ),
    (
        re.compile(
            r"what are the max and guaranteed throughput in the policyjob crd "
            r"of (\w+) slice"
        ),
        lambda m: Script(
            RETRIEVAL,
            [("get_policyjob", {"name": m.group(1)})],
            _bind(_policyjob_values, m),
        ),
    ),
    (
        re.compile(r"show me the policyjob for the (\w+) slice"),
        lambda m: Script(
            MONITORING,
            [("get_policyjob", {"name": m.group(1)})],
            _bind(_policyjob_values, m),
        ),
    ),
    (
        re.compile(r"which slices have a guaranteed throughput above (\d+(?:\.\d+)?)"),
        lambda m: Script(MONITORING, [("list_slices", {})], _bind(_slices_above, m)),
    ),
    (
        re.compile(r"what is the maximum allowed throughput for the (\w+) slice"),
        lambda m: Script(
            MONITORING,
            [("get_policyjob", {"name": m.group(1)})],
            _bind(
                lambda obs, mm: (
                    f"The maximum allowed throughput for slice {obs[0]['slice']} is "
                    f"{_num(obs[0]['max_mbps'])} Mbps."
                ),
                m,
            ),
        ),
    ),
    (
        re.compile(r"list all policyjob crds"),
        _mon([("list_slices", {})], _policyjob_list),
    ),
    (
        re.compile(r"does the (\w+) slice policy satisfy guaranteed"),
        lambda m: Script(
            MONITORING,
            [("get_policyjob", {"name": m.group(1)})],
            _bind(_policy_sane, m),
        ),
    ),
    (
        re.compile(
            r"total guaranteed bandwidth reserved across all slices of (\w+)"
        ),
        lambda m: Script(MONITORING, [("list_slices", {})], _bind(_total_guarantees, m)),
    ),
    (
        re.compile(r"which network does the ([\w-]+) policyjob belong to"),
        lambda m: Script(
            MONITORING,
            [("get_policyjob", {"name": m.group(1)})],
            _bind(_policyjob_identity, m),
        ),
    ),
    (
        re.compile(r"how many slices are configured"),
        _mon([("list_slices", {})], _slice_inventory),
    ),
    (
        re.compile(r"which terminals are members of the (\w+) slice"),
        lambda m: Script(MONITORING, [("list_slices", {})], _bind(_slice_members, m)),
    ),
    (
        re.compile(r"which slice is the terminal (\w+) a member of"),
        lambda m: Script(
            MONITORING, [("list_slices", {})], _bind(_membership_of_terminal, m)
        ),
    ),
    (
        re.compile(r"current achieved throughput of the (\w+) slice"),
        lambda m: Script(
            MONITORING,
            [("get_kpis", {"slice": m.group(1), "last": 10})],
            _bind(_slice_throughput, m),
        ),
    ),
    (
        re.compile(r"is the (\w+) slice throughput currently capped"),
        lambda m: Script(
            MONITORING,
            [
                ("get_kpis", {"slice": m.group(1), "last": 10}),
                ("get_policyjob", {"name": m.group(1)}),
                ("list_terminals", {}),
                ("list_slices", {}),
            ],
            _bind(_slice_capped, m),
        ),
    ),
    (
        re.compile(r"achieved throughput of the (\w+) slice right now"),
        lambda m: Script(
            MONITORING,
            [("get_kpis", {"slice": m.group(1), "last": 10})],
            _bind(_slice_throughput, m),
        ),
    ),
    (
        re.compile(r"how much of the (\w+) slice.?s offered load is being served"),
        lambda m: Script(
            MONITORING,
            [
                ("get_kpis", {"slice": m.group(1), "last": 10}),
                ("list_terminals", {}),
                ("list_slices", {}),
            ],
            _bind(_slice_served, m),
        ),
    ),
    (
        re.compile(r"guarantees at risk of exceeding access network capacity"),
        _mon([("list_slices", {}), ("list_networks", {})], _admission_risk),
    ),
    (
        re.compile(r"current throughput of the terminal (\w+)"),
        lambda m: Script(
            MONITORING,
            [("get_kpis", {"terminal": m.group(1), "last": 10})],
            _bind(_terminal_throughput, m),
        ),
    ),
    (
        re.compile(r"current latency for the terminal (\w+)"),
        lambda m: Script(
            MONITORING,
            [("get_kpis", {"terminal": m.group(1), "last": 10})],
            _bind(_terminal_latency, m),
        ),
    ),
    (
        re.compile(r"prb utilization of the ([\w.]+) access network"),
        lambda m: Script(
            MONITORING,
            [
                ("get_kpis", {"access_network": m.group(1), "last": 40}),
                ("get_network_status", {"name": m.group(1)}),
            ],
            _bind(_an_prb_utilization, m),
        ),
    ),
    (
        re.compile(r"aggregate downlink throughput across the whole (\w+) network"),
        lambda m: Script(
            MONITORING,
            [("get_kpis", {"network": m.group(1), "last": 40})],
            _bind(_network_throughput, m),
        ),
    ),
    (
        re.compile(r"latency experienced by terminals on the ([\w.]+) access network"),
        lambda m: Script(
            MONITORING,
            [("get_kpis", {"access_network": m.group(1), "last": 40})],
            _bind(_an_latency, m),
        ),
    ),
    (
        re.compile(r"last (\d+) ticks?, has the (\w+) slice throughput changed"),
        lambda m: Script(
            MONITORING,
            [("get_kpis", {"slice": m.group(2), "last": int(m.group(1))})],
            _bind(lambda obs, mm: _slice_stability(obs, mm.group(2)), m),
        ),
    ),
    (
        re.compile(
            r"how many kpi samples do we have for the (\w+) slice in the last (\d+)"
        ),
        lambda m: Script(
            MONITORING,
            [("get_kpis", {"slice": m.group(1), "last": int(m.group(2))})],
            _bind(_slice_sample_count, m),
        ),
    ),
    (
        re.compile(r"which terminal currently has the highest offered load"),
        _mon([("list_terminals", {})], _busiest_terminal),
    ),
    (
        re.compile(r"show me the last (\d+) log entries"),
        lambda m: Script(
            MONITORING,
            [("get_logs", {"limit": int(m.group(1))})],
            _bind(_log_tail, m),
        ),
    ),
    (
        re.compile(r"any admission.control rejections in the logs"),
        _mon([("get_logs", {"contains": "admission rejected", "limit": 50})], _log_admission),
    ),
    (
        re.compile(r"how many resource changes have been committed"),
        _mon([("get_logs", {"limit": 1})], _log_commit_count),
    ),
    (
        re.compile(r"most recent change recorded in the delta log"),
        _mon([("get_logs", {"contains": "commit v", "limit": 5})], _log_last_commit),
    ),
    (
        re.compile(r"did the ([\w.]+) access network report any status degradation"),
        lambda m: Script(
            MONITORING,
            [
                ("get_logs", {"contains": "degraded", "limit": 20}),
                ("get_network_status", {"name": m.group(1)}),
            ],
            _bind(_log_degradation, m),
        ),
    ),
    (
        re.compile(r"kinds of resources that have been created since startup"),
        _mon([("get_logs", {"contains": "commit v", "limit": 200})], _log_kinds),
    ),
    (
        re.compile(r"what is stored in the terminal crd for (\w+)"),
        lambda m: Script(
            RETRIEVAL, [("list_terminals", {})], _bind(_terminal_crd, m)
        ),
    ),
    (
        re.compile(r"describe the cells of the ([\w.]+) access network"),
        lambda m: Script(
            MONITORING,
            [("get_network_status", {"name": m.group(1)})],
            _bind(_an_overview, m),
        ),
    ),
]


# ---------------------------------------------------------------------------
# Diagnostic backends
# ---------------------------------------------------------------------------


class SchemaBlindBackend:
    """Ignores the published tool schemas entirely.

    Control prompts are routed correctly, but every attempted action uses
    an invented tool name or argument shape, so pre-flight rejects each
    one and the store is never mutated.  Mirrors the failure mode where
    tool grounding, not language skill, is the bottleneck.
    """

    def __init__(self, name: str = "schema-blind"):
        self.name = name
        self.profile = BackendProfile(name=name, kind="scripted")
        self._router = ScriptedBackend()

    def classify(self, prompt: str, context_summary: str = "") -> str:
        return self._router.classify(prompt, context_summary)

    def generate(self, transcript: Transcript) -> ModelTurn:
        if transcript.branch != DEPLOYMENT:
            return ModelTurn(
                answer="Everything looks nominal across the network.", stop=True
            )
        attempts = [
            s
            for s in transcript.steps
            if s.get("node") in ("deployment", "validate")
        ]
        if len(attempts) < 4:
            guesses = [
                ("apply_blueprint", {"request": transcript.prompt}),
                ("create_network", {"blueprint": transcript.prompt}),
                ("enforce_policy", {"change": transcript.prompt}),
                ("update_slice_policy", {"slice_spec": transcript.prompt}),
            ]
            tool, args = guesses[len(attempts) % len(guesses)]
            return ModelTurn(tool=tool, args=args)
        return ModelTurn(answer="The requested change has been applied.", stop=True)


class DelayedBackend:
    """Wraps another backend, adding a fixed artificial delay per call."""

    def __init__(self, inner, delay_ms: float = 100.0, name: Optional[str] = None):
        self._inner = inner
        self._delay_s = delay_ms / 1000.0
        self.name = name or f"delayed-{inner.name}"
        self.profile = BackendProfile(
            name=self.name,
            kind=inner.profile.kind,
            metadata={"artificial_delay_ms": delay_ms, **inner.profile.metadata},
        )

    def classify(self, prompt: str, context_summary: str = "") -> str:
        time.sleep(self._delay_s)
        return self._inner.classify(prompt, context_summary)

    def generate(self, transcript: Transcript) -> ModelTurn:
        time.sleep(self._delay_s)
        return self._inner.generate(transcript)


class HttpChatBackend:
    """Chat-completions style HTTP backend.

    Sends the transcript as messages and expects either an OpenAI-style
    ``tool_calls`` entry or a content string.  A content string is the
    final answer (the stop condition); tool calls must name a registered
    tool with JSON arguments.  Unparseable output raises
    ``MalformedModelOutput`` so the graph can run its one repair
    re-prompt.
    """

    def __init__(
        self,
        name: str,
        endpoint: str,
        model: str,
        timeout_s: float = 30.0,
        temperature: float = 0.0,
        api_key: Optional[str] = None,
        metadata: Optional[dict] = None,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.name = name
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.profile = BackendProfile(name=name, kind="http-chat", metadata=metadata or {})
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(
            timeout=timeout_s, headers=headers, transport=transport
        )

    def classify(self, prompt: str, context_summary: str = "") -> str:
        instruction = (
            "Classify the operator prompt as exactly one of: monitoring, "
            "deployment, retrieval. Reply with the single word."
        )
        content = self._chat(
            [
                {"role": "system", "content": instruction},
                {"role": "user", "content": f"{prompt}\n\ncontext: {context_summary}"},
            ]
        )
        if isinstance(content, ModelTurn):
            content = content.answer or ""
        word = (content or "").strip().lower()
        for branch in (DEPLOYMENT, RETRIEVAL, MONITORING):
            if branch in word:
                return branch
        raise MalformedModelOutput(f"unrecognized branch {word!r}")

    def generate(self, transcript: Transcript) -> ModelTurn:
        result = self._chat(transcript.to_messages())
        if isinstance(result, ModelTurn):
            return result
        return ModelTurn(answer=result, stop=True)

    def _chat(self, messages: list[dict]):
        payload = {
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
        }
        try:
            response = self._client.post(self.endpoint, json=payload)
            response.raise_for_status()
            body = response.json()
        except httpx.TimeoutException as exc:
            raise BackendError(f"backend {self.name} timed out: {exc}") from exc
        except (httpx.HTTPError, ValueError) as exc:
            raise BackendError(f"backend {self.name} failed: {exc}") from exc
        try:
            message = body["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedModelOutput(f"unexpected response shape: {body!r}") from exc
        tool_calls = message.get("tool_calls") or []
        if tool_calls:
            call = tool_calls[0]
            fn = call.get("function", call)
            name = fn.get("name")
            raw_args = fn.get("arguments", "{}")
            try:
                args = (
                    json.loads(raw_args) if isinstance(raw_args, str) else dict(raw_args)
                )
            except (ValueError, TypeError) as exc:
                raise MalformedModelOutput(f"bad tool arguments: {raw_args!r}") from exc
            if not name:
                raise MalformedModelOutput("tool call without a name")
            return ModelTurn(tool=name, args=args)
        content = message.get("content")
        if content is None:
            raise MalformedModelOutput("message has neither content nor tool_calls")
        return ModelTurn(answer=str(content), stop=True)


def build_backends(config: Optional[dict] = None) -> dict:
    """Instantiate the backend roster: built-ins plus configured entries."""
    backends: dict = {
        "scripted": ScriptedBackend(),
        "schema-blind": SchemaBlindBackend(),
    }
    if not config:
        return backends
    import os

    for entry in config.get("backends", []):
        kind = entry.get("kind", "scripted")
        name = entry["name"]
        if kind == "scripted":
            backends[name] = ScriptedBackend(name=name, rules_path=entry.get("rules"))
        elif kind == "http-chat":
            api_key = None
            if entry.get("api_key_env"):
                api_key = os.environ.get(entry["api_key_env"])
            backends[name] = HttpChatBackend(
                name=name,
                endpoint=entry["endpoint"],
                model=entry.get("model", name),
                timeout_s=entry.get("timeout_s", 30.0),
                temperature=entry.get("temperature", 0.0),
                api_key=api_key,
                metadata=entry.get("metadata"),
            )
        elif kind == "delayed":
            inner = backends[entry.get("inner", "scripted")]
            backends[name] = DelayedBackend(
                inner, delay_ms=entry.get("delay_ms", 100.0), name=name
            )
        else:
            raise ValueError(f"unknown backend kind {kind!r}")
    return backends
