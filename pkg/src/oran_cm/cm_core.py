"""Conflict Mitigation for xApp control decisions.

Every E2 Control message from an xApp passes through a :class:`ConflictMitigation`
pipeline before it may touch the RAN. The detection half compares the incoming
message with the decisions that are still in effect for the same control target,
using static Parameter Groups to recognise indirect conflicts. The resolution half
lets one configured xApp win and puts every other xApp involved on a per-target
cooldown.
"""
from __future__ import annotations

import enum
import itertools
import json
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence, Union


class ConfigurationError(ValueError):
    """Raised for inconsistent Conflict Mitigation configuration."""


class TargetKind(str, enum.Enum):
    CELL = "CELL"
    BEARER = "BEARER"
    USER = "USER"


class ConflictClass(str, enum.Enum):
    DIRECT = "DIRECT"
    INDIRECT = "INDIRECT"
    IMPLICIT = "IMPLICIT"


class Outcome(str, enum.Enum):
    ACCEPTED = "ACCEPTED"
    REJECTED_CONFLICT = "REJECTED_CONFLICT"
    REJECTED_COOLDOWN = "REJECTED_COOLDOWN"


class CmMode(str, enum.Enum):
    OFF = "off"
    PRIORITIZE = "prioritize"


@dataclass(frozen=True, order=True)
class ParameterId:
    """A controllable RAN parameter. Well-known ones are class attributes."""

    name: str
    label: Optional[str] = None

    KNOWN = ("CIO", "TTT", "HH", "TILT")

    def __post_init__(self) -> None:
        if self.name == "OTHER":
            if not self.label:
                raise ConfigurationError("OTHER parameter needs a label")
        elif self.name not in self.KNOWN:
            raise ConfigurationError(f"unknown parameter {self.name!r}")
        elif self.label is not None:
            raise ConfigurationError(f"parameter {self.name} takes no label")

    @classmethod
    def parse(cls, text: Union[str, "ParameterId"]) -> "ParameterId":
        if isinstance(text, ParameterId):
            return text
        if text in cls.KNOWN:
            return cls(text)
        if text.startswith("OTHER(") and text.endswith(")"):
            return cls("OTHER", text[6:-1])
        raise ConfigurationError(f"unknown parameter {text!r}")

    def __str__(self) -> str:
        return self.name if self.label is None else f"OTHER({self.label})"


CIO = ParameterId("CIO")
TTT = ParameterId("TTT")
HH = ParameterId("HH")
TILT = ParameterId("TILT")


@dataclass(frozen=True, order=True)
class ControlTarget:
    kind: TargetKind
    id: str

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.id}"


def cell_target(cell_id) -> ControlTarget:
    return ControlTarget(TargetKind.CELL, str(cell_id))


@dataclass(frozen=True)
class E2ControlMessage:
    """One xApp control decision.

    ``msg_id`` is stamped by the pipeline on arrival when left as ``None``.
    Values are in the parameter's native unit: dB for CIO and HH, ms for TTT.
    """

    xapp_id: str
    target: ControlTarget
    parameter: ParameterId
    value: float
    issued_at: float
    msg_id: Optional[int] = None


@dataclass(frozen=True)
class ParameterGroup:
    group_id: str
    target_kind: TargetKind
    members: frozenset

    def __post_init__(self) -> None:
        object.__setattr__(self, "target_kind", TargetKind(self.target_kind))
        object.__setattr__(
            self, "members", frozenset(ParameterId.parse(m) for m in self.members)
        )
        if len(self.members) < 2:
            raise ConfigurationError(
                f"parameter group {self.group_id!r} needs at least two members"
            )


@dataclass
class InEffectDecision:
    message: E2ControlMessage
    expires_at: float
    superseded: bool = False

    def active(self, now: float) -> bool:
        return not self.superseded and self.expires_at > now


@dataclass(frozen=True)
class CooldownEntry:
    xapp_id: str
    target: ControlTarget
    until: float


@dataclass(frozen=True)
class Conflict:
    msg_id: int
    group_id: Optional[str]
    conflict_class: ConflictClass


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    conflicts: tuple = ()
    cooldown_applied: Optional[CooldownEntry] = None
    # cooldowns handed to other xApps when a prioritized message wins
    cooldowns_imposed: tuple = ()

    @property
    def accepted(self) -> bool:
        return self.outcome is Outcome.ACCEPTED


@dataclass(frozen=True)
class CmConfig:
    mode: CmMode = CmMode.OFF
    priority: Optional[str] = None
    effect_ttl: float = 10.0
    cooldown_duration: float = 5.0
    groups: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", CmMode(self.mode))
        object.__setattr__(self, "groups", tuple(self.groups))
        if self.effect_ttl <= 0:
            raise ConfigurationError("effect_ttl must be positive")
        if self.cooldown_duration < 0:
            raise ConfigurationError("cooldown_duration must be non-negative")
        if self.mode is CmMode.PRIORITIZE and not self.priority:
            raise ConfigurationError("prioritize mode needs a priority xApp")

    def validate_xapps(self, xapp_ids: Iterable[str]) -> None:
        if self.mode is CmMode.PRIORITIZE and self.priority not in set(xapp_ids):
            raise ConfigurationError(
                f"prioritized xApp {self.priority!r} is not deployed"
            )


class PgRegistry:
    """Immutable lookup from (target kind, parameter) to the groups holding it."""

    def __init__(self, groups: Sequence[ParameterGroup]):
        self.groups = tuple(groups)
        self._index: dict = defaultdict(list)
        for group in self.groups:
            for member in group.members:
                self._index[(group.target_kind, member)].append(group.group_id)
        self._index = {k: tuple(sorted(v)) for k, v in self._index.items()}
        self._shared: dict = {}

    def __len__(self) -> int:
        return len(self.groups)

    @property
    def membership_count(self) -> int:
        return sum(len(v) for v in self._index.values())

    def groups_for(self, kind: TargetKind, parameter: ParameterId) -> tuple:
        return self._index.get((kind, parameter), ())

    def shared_groups(self, kind: TargetKind, a: ParameterId, b: ParameterId) -> tuple:
        key = (kind, a, b)
        hit = self._shared.get(key)
        if hit is None:
            other = set(self.groups_for(kind, b))
            hit = self._shared[key] = tuple(g for g in self.groups_for(kind, a) if g in other)
        return hit


def register_groups(groups: Iterable[ParameterGroup]) -> PgRegistry:
    groups = list(groups)
    seen = set()
    for group in groups:
        if group.group_id in seen:
            raise ConfigurationError(f"duplicate group_id {group.group_id!r}")
        seen.add(group.group_id)
    return PgRegistry(groups)


class DecisionStore:
    """In-effect decisions, cooldowns and the verdict chronology.

    Mutations (``resolve``, ``purge_expired``) must be serialized by the caller.
    """

    COMPACT_AT = 32

    def __init__(self) -> None:
        self._by_target: dict = defaultdict(list)
        self._cooldowns: dict = {}
        self._log: list = []

    def decisions(self, target: Optional[ControlTarget] = None) -> list:
        if target is not None:
            return list(self._by_target.get(target, ()))
        return [d for ds in self._by_target.values() for d in ds]

    def decisions_on(self, target: ControlTarget) -> Sequence[InEffectDecision]:
        """The live list for ``target`` (not a copy); do not mutate."""
        return self._by_target.get(target, ())

    def in_effect(self, target: ControlTarget, now: float) -> Iterator[InEffectDecision]:
        return (d for d in self._by_target.get(target, ()) if d.active(now))

    def insert(self, msg: E2ControlMessage, effect_ttl: float) -> InEffectDecision:
        entries = self._by_target[msg.target]
        if len(entries) >= self.COMPACT_AT:
            # dead entries can never conflict again; drop them so scans stay short
            entries[:] = [d for d in entries if d.active(msg.issued_at)]
        for d in entries:
            if d.message.xapp_id == msg.xapp_id and d.message.parameter == msg.parameter:
                d.superseded = True
        decision = InEffectDecision(msg, msg.issued_at + effect_ttl)
        entries.append(decision)
        return decision

    def cooldown(self, xapp_id: str, target: ControlTarget, now: float) -> Optional[CooldownEntry]:
        entry = self._cooldowns.get((xapp_id, target))
        if entry is not None and now < entry.until:
            return entry
        return None

    def cooldowns(self) -> list:
        return list(self._cooldowns.values())

    def add_cooldown(self, entry: CooldownEntry) -> None:
        key = (entry.xapp_id, entry.target)
        current = self._cooldowns.get(key)
        if current is None or entry.until > current.until:
            self._cooldowns[key] = entry

    def append_log(self, msg: E2ControlMessage, verdict: Verdict) -> None:
        self._log.append((msg, verdict))

    @property
    def log(self) -> list:
        return list(self._log)


def detect_conflicts(
    msg: E2ControlMessage, store: DecisionStore, registry: PgRegistry, now: float
) -> list:
    """Conflicts between ``msg`` and other xApps' in-effect decisions on its target.

    Same parameter is a DIRECT conflict (no group); a parameter sharing a group
    is INDIRECT, one entry per shared group. Sorted by conflicting msg_id.
    """
    found = []
    for d in store.decisions_on(msg.target):
        if d.superseded or d.expires_at <= now:
            continue
        other = d.message
        if other.xapp_id == msg.xapp_id:
            continue
        if other.parameter == msg.parameter:
            found.append(Conflict(other.msg_id, None, ConflictClass.DIRECT))
            continue
        for gid in registry.shared_groups(msg.target.kind, msg.parameter, other.parameter):
            found.append(Conflict(other.msg_id, gid, ConflictClass.INDIRECT))
    found.sort(key=lambda c: (c.msg_id, c.group_id or ""))
    return found


def resolve(
    msg: E2ControlMessage,
    conflicts: Sequence[Conflict],
    config: CmConfig,
    store: DecisionStore,
    now: float,
) -> Verdict:
    conflicts = tuple(conflicts)
    if store.cooldown(msg.xapp_id, msg.target, now) is not None:
        verdict = Verdict(Outcome.REJECTED_COOLDOWN, conflicts)
    elif not conflicts or config.mode is CmMode.OFF:
        store.insert(msg, config.effect_ttl)
        verdict = Verdict(Outcome.ACCEPTED, conflicts)
    elif msg.xapp_id == config.priority:
        losers = set(c.msg_id for c in conflicts)
        beaten = []
        for d in store.decisions(msg.target):
            if d.message.msg_id in losers:
                d.superseded = True
                if d.message.xapp_id not in beaten:
                    beaten.append(d.message.xapp_id)
        imposed = []
        for xapp_id in sorted(beaten):
            entry = CooldownEntry(xapp_id, msg.target, now + config.cooldown_duration)
            store.add_cooldown(entry)
            imposed.append(entry)
        store.insert(msg, config.effect_ttl)
        verdict = Verdict(Outcome.ACCEPTED, conflicts, cooldowns_imposed=tuple(imposed))
    else:
        entry = CooldownEntry(msg.xapp_id, msg.target, now + config.cooldown_duration)
        store.add_cooldown(entry)
        verdict = Verdict(Outcome.REJECTED_CONFLICT, conflicts, cooldown_applied=entry)
    store.append_log(msg, verdict)
    return verdict


def purge_expired(store: DecisionStore, now: float) -> int:
    removed = 0
    for target in list(store._by_target):
        kept = [d for d in store._by_target[target] if d.expires_at > now]
        removed += len(store._by_target[target]) - len(kept)
        if kept:
            store._by_target[target] = kept
        else:
            del store._by_target[target]
    for key in [k for k, e in store._cooldowns.items() if e.until <= now]:
        del store._cooldowns[key]
        removed += 1
    return removed


def verdict_log(store: DecisionStore) -> list:
    return store.log


class ConflictMitigation:
    """Message-routing front end: every xApp control message goes through here."""

    def __init__(self, config: CmConfig, xapp_ids: Optional[Iterable[str]] = None):
        if xapp_ids is not None:
            config.validate_xapps(xapp_ids)
        self.config = config
        self.registry = register_groups(config.groups)
        self.store = DecisionStore()
        self._ids = itertools.count(1)

    def submit(self, msg: E2ControlMessage, now: float) -> tuple:
        """Stamp, detect and resolve one message. Returns ``(msg, verdict)``."""
        if msg.msg_id is None:
            msg = E2ControlMessage(msg.xapp_id, msg.target, msg.parameter, msg.value,
                                   msg.issued_at, next(self._ids))
        conflicts = detect_conflicts(msg, self.store, self.registry, now)
        return msg, resolve(msg, conflicts, self.config, self.store, now)

    def purge(self, now: float) -> int:
        return purge_expired(self.store, now)

    @property
    def log(self) -> list:
        return verdict_log(self.store)


def replay(log: Sequence[tuple], config: CmConfig) -> list:
    """Re-run a verdict log's messages through a fresh pipeline, at their issue times."""
    cm = ConflictMitigation(config)
    return [cm.submit(msg, msg.issued_at)[1] for msg, _ in log]


def verdict_record(msg: E2ControlMessage, verdict: Verdict) -> dict:
    until = None
    if verdict.cooldown_applied is not None:
        until = verdict.cooldown_applied.until
    return {
        "msg_id": msg.msg_id,
        "xapp_id": msg.xapp_id,
        "target_kind": msg.target.kind.value,
        "target_id": msg.target.id,
        "parameter": str(msg.parameter),
        "value": msg.value,
        "issued_at": msg.issued_at,
        "outcome": verdict.outcome.value,
        "conflicts": [
            {"msg_id": c.msg_id, "group_id": c.group_id, "class": c.conflict_class.value}
            for c in verdict.conflicts
        ],
        "cooldown_until": until,
        "cooldowns_imposed": [
            {"xapp_id": e.xapp_id, "until": e.until} for e in verdict.cooldowns_imposed
        ],
    }


def write_verdict_log(log: Iterable[tuple], fh) -> None:
    for msg, verdict in log:
        fh.write(json.dumps(verdict_record(msg, verdict), sort_keys=True))
        fh.write("\n")


def read_verdict_log(fh) -> list:
    """Parse a JSON-lines verdict log back into ``(msg, verdict)`` pairs."""
    out = []
    for line in fh:
        if not line.strip():
            continue
        rec = json.loads(line)
        msg = E2ControlMessage(
            msg_id=rec["msg_id"],
            xapp_id=rec["xapp_id"],
            target=ControlTarget(TargetKind(rec["target_kind"]), rec["target_id"]),
            parameter=ParameterId.parse(rec["parameter"]),
            value=rec["value"],
            issued_at=rec["issued_at"],
        )
        conflicts = tuple(
            Conflict(c["msg_id"], c["group_id"], ConflictClass(c["class"]))
            for c in rec["conflicts"]
        )
        applied = None
        if rec["cooldown_until"] is not None:
            applied = CooldownEntry(msg.xapp_id, msg.target, rec["cooldown_until"])
        imposed = tuple(
            CooldownEntry(e["xapp_id"], msg.target, e["until"])
            for e in rec.get("cooldowns_imposed", ())
        )
        out.append((msg, Verdict(Outcome(rec["outcome"]), conflicts, applied, imposed)))
    return out
