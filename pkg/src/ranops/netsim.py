"""Deterministic simulated RAN substrate.

Stands in for a live gNB + UE testbed: networks own access networks
(each a capacity-limited cell group), terminals attach to access networks
and offer load, and slice policies cap what their member terminals may
jointly draw.  Time is integer ticks of one simulated second; there is no
wall-clock coupling, so identical (state, seed, dt) always replays to
bit-identical KPI streams.

Per tick and per access network, throughput is allocated guarantees-first,
then the residual capacity is shared proportionally to unmet demand and
clipped at each class's max rate (``kernels.waterfill``).  Terminals not
in any slice form an implicit best-effort class with zero guarantee.

Latency is a synthetic signal, not a radio model: profile base (eMBB
20 ms, URLLC 2 ms) plus 30 ms scaled by the access network's utilization.
"""

from __future__ import annotations

import json
import math
import random
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels

EMBB_BASE_LATENCY_MS = 20.0
URLLC_BASE_LATENCY_MS = 2.0
LOAD_LATENCY_MS = 30.0

_STATUS_FACTOR = {"up": 1.0, "degraded": 0.5, "down": 0.0}
_PROFILE_BASE = {"embb": EMBB_BASE_LATENCY_MS, "urllc": URLLC_BASE_LATENCY_MS}


class SimError(Exception):
    pass


class IntegrityError(SimError):
    """State references an entity that does not exist."""


class PolicyValidationError(SimError):
    """Slice policy violates its own invariants (e.g. guaranteed > max)."""


class AdmissionError(SimError):
    """Slice guarantees exceed what an access network can carry."""


@dataclass
class SimCell:
    cell_id: str
    prb_total: int
    center_frequency_mhz: float


@dataclass
class SimAccessNetwork:
    name: str  # qualified "<label>.<network>"
    parent_network: str
    cell_capacity_mbps: float
    status: str = "up"
    cells: list[SimCell] = field(default_factory=list)

    @property
    def label(self) -> str:
        return self.name.split(".", 1)[0]

    @property
    def prb_total(self) -> int:
        return sum(c.prb_total for c in self.cells)


@dataclass
class SimTerminal:
    name: str
    attached_to: Optional[str]  # qualified access network name, or None
    profile: str = "embb"
    offered_load_mbps: float = 0.0


@dataclass
class SlicePolicy:
    slice_name: str
    network: str
    guaranteed_mbps: float
    max_mbps: Optional[float]  # None = only capacity-bound
    member_terminals: list[str] = field(default_factory=list)

    @property
    def key(self) -> str:
        return f"{self.network}-{self.slice_name}"


@dataclass
class SimNetwork:
    name: str
    access_networks: list[SimAccessNetwork] = field(default_factory=list)
    rics: int = 0
    core_present: bool = True


@dataclass
class SimState:
    networks: dict[str, SimNetwork] = field(default_factory=dict)
    terminals: dict[str, SimTerminal] = field(default_factory=dict)
    policies: dict[str, SlicePolicy] = field(default_factory=dict)


@dataclass(frozen=True)
class KpiSample:
    tick: int
    network: str
    access_network: str
    slice: Optional[str]
    terminal: Optional[str]
    throughput_mbps: float
    latency_ms: float
    prb_used: int

    def to_json(self) -> dict:
        return {
            "tick": self.tick,
            "network": self.network,
            "access_network": self.access_network,
            "slice": self.slice,
            "terminal": self.terminal,
            "throughput_mbps": self.throughput_mbps,
            "latency_ms": self.latency_ms,
            "prb_used": self.prb_used,
        }


@dataclass(frozen=True)
class TopologyReport:
    networks: tuple[str, ...]
    access_networks: tuple[str, ...]
    terminals: tuple[str, ...]
    slices: tuple[str, ...]
    rics: int

    def to_json(self) -> dict:
        return {
            "network_count": len(self.networks),
            "networks": list(self.networks),
            "access_network_count": len(self.access_networks),
            "access_networks": list(self.access_networks),
            "terminal_count": len(self.terminals),
            "terminals": list(self.terminals),
            "slice_count": len(self.slices),
            "slices": list(self.slices),
            "ric_count": self.rics,
        }


def validate_state(state: SimState) -> None:
    """Full integrity sweep; raises naming the offending reference."""
    an_names: set[str] = set()
    for net in state.networks.values():
        if net.rics < 0:
            raise IntegrityError(f"network {net.name}: negative ric count")
        for an in net.access_networks:
            if an.cell_capacity_mbps <= 0:
                raise IntegrityError(f"access network {an.name}: capacity must be > 0")
            if an.status not in _STATUS_FACTOR:
                raise IntegrityError(f"access network {an.name}: bad status {an.status!r}")
            if an.parent_network != net.name or an.parent_network not in state.networks:
                raise IntegrityError(
                    f"access network {an.name}: parent {an.parent_network!r} mismatch"
                )
            for cell in an.cells:
                if cell.prb_total <= 0:
                    raise IntegrityError(f"cell {cell.cell_id}: prb_total must be > 0")
            an_names.add(an.name)
    for term in state.terminals.values():
        if term.offered_load_mbps < 0:
            raise IntegrityError(f"terminal {term.name}: negative offered load")
        if term.profile not in _PROFILE_BASE:
            raise IntegrityError(f"terminal {term.name}: bad profile {term.profile!r}")
        if term.attached_to is not None and term.attached_to not in an_names:
            raise IntegrityError(
                f"terminal {term.name}: attached to unknown access network "
                f"{term.attached_to!r}"
            )
    for policy in state.policies.values():
        _check_policy(policy, state)


def _check_policy(policy: SlicePolicy, state: SimState) -> None:
    if policy.network not in state.networks:
        raise IntegrityError(
            f"slice {policy.slice_name}: unknown network {policy.network!r}"
        )
    if policy.guaranteed_mbps < 0:
        raise PolicyValidationError(f"slice {policy.slice_name}: negative guarantee")
    if policy.max_mbps is not None and policy.guaranteed_mbps > policy.max_mbps:
        raise PolicyValidationError(
            f"slice {policy.slice_name}: guaranteed {policy.guaranteed_mbps} "
            f"> max {policy.max_mbps}"
        )
    for member in policy.member_terminals:
        if member not in state.terminals:
            raise IntegrityError(
                f"slice {policy.slice_name}: unknown member terminal {member!r}"
            )


def _check_admission(state: SimState, policies: dict[str, SlicePolicy]) -> None:
    """Every access network must be able to carry its network's guarantees."""
    for net in state.networks.values():
        total = sum(
            p.guaranteed_mbps for p in policies.values() if p.network == net.name
        )
        for an in net.access_networks:
            if total > an.cell_capacity_mbps:
                raise AdmissionError(
                    f"sum of slice guarantees ({total}) exceeds capacity "
                    f"{an.cell_capacity_mbps} of {an.name}"
                )


class Simulator:
    """Single-writer stepper over a ``SimState``.

    Writes (step, apply_slice_policy, entity mutation via the store
    adapter) are serialized by one lock; reads return fresh copies so
    concurrent readers never observe a half-applied change.
    """

    def __init__(
        self,
        state: Optional[SimState] = None,
        seed: int = 0,
        jitter_pct: float = 0.0,
        history_limit: int = 200_000,
    ):
        self.state = state or SimState()
        validate_state(self.state)
        _check_admission(self.state, self.state.policies)
        self.seed = seed
        self.jitter_pct = jitter_pct
        self._rng = random.Random(seed)
        self.tick = 0
        self._history: deque[KpiSample] = deque(maxlen=history_limit)
        self._lock = threading.RLock()

    # -- control -------------------------------------------------------------

    def apply_slice_policy(self, policy: SlicePolicy) -> None:
        """Swap in a slice policy atomically; state untouched on rejection."""
        with self._lock:
            _check_policy(policy, self.state)
            trial = dict(self.state.policies)
            trial[policy.key] = policy
            _check_admission(self.state, trial)
            self.state.policies[policy.key] = policy

    def remove_slice_policy(self, key: str) -> None:
        with self._lock:
            self.state.policies.pop(key, None)

    # -- observability ---------------------------------------------------------

    def snapshot_topology(self) -> TopologyReport:
        with self._lock:
            nets = sorted(self.state.networks)
            ans = sorted(
                an.name for net in self.state.networks.values() for an in net.access_networks
            )
            return TopologyReport(
                networks=tuple(nets),
                access_networks=tuple(ans),
                terminals=tuple(sorted(self.state.terminals)),
                slices=tuple(sorted(p.slice_name for p in self.state.policies.values())),
                rics=sum(net.rics for net in self.state.networks.values()),
            )

    def kpi_history(
        self,
        network: Optional[str] = None,
        access_network: Optional[str] = None,
        slice_name: Optional[str] = None,
        terminal: Optional[str] = None,
        since_tick: Optional[int] = None,
        until_tick: Optional[int] = None,
        last: Optional[int] = None,
    ) -> list[KpiSample]:
        with self._lock:
            samples = [
                s
                for s in self._history
                if (network is None or s.network == network)
                and (access_network is None or s.access_network == access_network)
                and (slice_name is None or s.slice == slice_name)
                and (terminal is None or s.terminal == terminal)
                and (since_tick is None or s.tick >= since_tick)
                and (until_tick is None or s.tick <= until_tick)
            ]
        if last is not None:
            samples = samples[-last:]
        return samples

    def export_kpis(self, path: str, **filters) -> int:
        samples = self.kpi_history(**filters)
        with open(path, "w", encoding="utf-8") as fh:
            for s in samples:
                fh.write(json.dumps(s.to_json()) + "\n")
        return len(samples)

    # -- stepping ---------------------------------------------------------------

    def step(self, dt: int = 1) -> list[KpiSample]:
        """Advance ``dt`` ticks; one sample per attached terminal and per
        slice per tick."""
        if dt <= 0:
            raise ValueError("dt must be > 0")
        with self._lock:
            validate_state(self.state)
            out: list[KpiSample] = []
            for _ in range(dt):
                self.tick += 1
                out.extend(self._tick_once())
            self._history.extend(out)
            return out

    def _offered_load(self, term: SimTerminal) -> float:
        if self.jitter_pct <= 0.0:
            return term.offered_load_mbps
        swing = self.jitter_pct * (2.0 * self._rng.random() - 1.0)
        return max(0.0, term.offered_load_mbps * (1.0 + swing))

    def _tick_once(self) -> list[KpiSample]:
        state = self.state
        terminal_thpt: dict[str, float] = {}
        terminal_an: dict[str, SimAccessNetwork] = {}
        an_util: dict[str, float] = {}
        # slice key -> {an name -> allocated}
        slice_alloc: dict[str, dict[str, float]] = {p: {} for p in state.policies}

        # Jitter draws happen in sorted terminal order so replay is exact.
        loads = {
            name: self._offered_load(term)
            for name, term in sorted(state.terminals.items())
        }

        for net in state.networks.values():
            net_policies = sorted(
                (p for p in state.policies.values() if p.network == net.name),
                key=lambda p: p.key,
            )
            for an in net.access_networks:
                eff_cap = an.cell_capacity_mbps * _STATUS_FACTOR[an.status]
                attached = sorted(
                    (t for t in state.terminals.values() if t.attached_to == an.name),
                    key=lambda t: t.name,
                )
                sliced_names: set[str] = set()
                classes: list[tuple[Optional[SlicePolicy], list[SimTerminal]]] = []
                for policy in net_policies:
                    members_here = [
                        t for t in attached if t.name in policy.member_terminals
                    ]
                    sliced_names.update(t.name for t in members_here)
                    if members_here:
                        classes.append((policy, members_here))
                best_effort = [t for t in attached if t.name not in sliced_names]
                if best_effort:
                    classes.append((None, best_effort))

                total_alloc = 0.0
                if classes and eff_cap > 0.0:
                    g = np.array(
                        [c[0].guaranteed_mbps if c[0] else 0.0 for c in classes]
                    )
                    mx = np.array(
                        [
                            c[0].max_mbps
                            if c[0] and c[0].max_mbps is not None
                            else eff_cap
                            for c in classes
                        ]
                    )
                    demand = np.array(
                        [sum(loads[t.name] for t in members) for _, members in classes]
                    )
                    alloc = kernels.waterfill(g, mx, demand, eff_cap)
                    for (policy, members), granted, class_demand in zip(
                        classes, alloc, demand
                    ):
                        granted = float(granted)
                        total_alloc += granted
                        if policy is not None:
                            slice_alloc[policy.key][an.name] = granted
                        for t in members:
                            share = (
                                granted * loads[t.name] / float(class_demand)
                                if class_demand > 0
                                else 0.0
                            )
                            terminal_thpt[t.name] = float(share)
                            terminal_an[t.name] = an
                else:
                    for t in attached:
                        terminal_thpt[t.name] = 0.0
                        terminal_an[t.name] = an
                an_util[an.name] = total_alloc / eff_cap if eff_cap > 0 else 0.0

        samples: list[KpiSample] = []
        terminal_latency: dict[str, float] = {}
        for name in sorted(terminal_thpt):
            term = state.terminals[name]
            an = terminal_an[name]
            latency = _PROFILE_BASE[term.profile] + LOAD_LATENCY_MS * an_util[an.name]
            terminal_latency[name] = latency
            samples.append(
                KpiSample(
                    tick=self.tick,
                    network=an.parent_network,
                    access_network=an.name,
                    slice=None,
                    terminal=name,
                    throughput_mbps=terminal_thpt[name],
                    latency_ms=latency,
                    prb_used=_prb_used(terminal_thpt[name], an),
                )
            )

        for key in sorted(state.policies):
            policy = state.policies[key]
            per_an = slice_alloc.get(key, {})
            throughput = sum(per_an.values())
            member_lat = [
                terminal_latency[m]
                for m in policy.member_terminals
                if m in terminal_latency
            ]
            carrying = sorted(per_an) or sorted(
                {
                    state.terminals[m].attached_to
                    for m in policy.member_terminals
                    if m in state.terminals and state.terminals[m].attached_to
                }
            )
            an_lookup = {
                an.name: an
                for net in state.networks.values()
                for an in net.access_networks
            }
            prb = sum(
                _prb_used(mbps, an_lookup[an_name])
                for an_name, mbps in per_an.items()
            )
            samples.append(
                KpiSample(
                    tick=self.tick,
                    network=policy.network,
                    access_network=carrying[0] if carrying else "",
                    slice=policy.slice_name,
                    terminal=None,
                    throughput_mbps=throughput,
                    latency_ms=max(member_lat) if member_lat else 0.0,
                    prb_used=prb,
                )
            )
        return samples


def _prb_used(throughput_mbps: float, an: SimAccessNetwork) -> int:
    if an.cell_capacity_mbps <= 0 or an.prb_total == 0:
        return 0
    used = math.floor(throughput_mbps / an.cell_capacity_mbps * an.prb_total)
    return min(used, an.prb_total)
