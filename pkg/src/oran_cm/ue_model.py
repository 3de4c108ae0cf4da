"""User equipment: mobility, sessions and the A3/TTT handover state machine."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


class ProfileClass(str, enum.Enum):
    LOW = "LOW"
    MEDIUM = "MEDIUM"
    HIGH = "HIGH"


class Session(str, enum.Enum):
    IDLE = "IDLE"
    ACTIVE = "ACTIVE"
    BLOCKED_BACKOFF = "BLOCKED_BACKOFF"


class EventKind(str, enum.Enum):
    HANDOVER = "HANDOVER"
    PINGPONG = "PINGPONG"
    RLF = "RLF"
    CALL_BLOCK = "CALL_BLOCK"


@dataclass(frozen=True)
class UserProfile:
    profile_class: ProfileClass
    required_bitrate: float  # bits/s


@dataclass(frozen=True)
class EventRecord:
    kind: EventKind
    time: float
    user_id: int
    from_cell: Optional[int] = None
    to_cell: Optional[int] = None


@dataclass(frozen=True)
class HandoverParams:
    pingpong_window: float = 3.0  # s
    rlf_qout: float = -8.0  # dB
    rlf_qin: float = -6.0  # dB
    rlf_timer: float = 1000.0  # ms
    reestablish_delay: float = 200.0  # ms


@dataclass(frozen=True)
class SessionParams:
    mean_idle: float = 20.0  # s
    mean_active: float = 30.0  # s
    backoff: float = 5.0  # s


@dataclass
class UserState:
    user_id: int
    position: tuple
    profile: UserProfile
    velocity: tuple = (0.0, 0.0)
    serving_cell: Optional[int] = None  # None means DETACHED
    session: Session = Session.IDLE
    a3_timer: dict = field(default_factory=dict)
    rlf_timer: float = 0.0
    last_ho: Optional[tuple] = None  # (from, to, time)
    layer: float = 0.0  # carrier frequency the device camps on, MHz
    waypoint: Optional[tuple] = None
    speed: float = 0.0
    reattach_at: Optional[float] = None
    backoff_until: Optional[float] = None

    @property
    def attached(self) -> bool:
        return self.serving_cell is not None


def draw_waypoint(bounds, rng) -> tuple:
    xmin, ymin, xmax, ymax = bounds
    return (float(rng.uniform(xmin, xmax)), float(rng.uniform(ymin, ymax)))


def step_mobility(user: UserState, dt: float, bounds, rng,
                  speed_range=(0.8, 8.0)) -> UserState:
    """Random-waypoint step of ``dt`` seconds. Mutates and returns ``user``."""
    if user.waypoint is None:
        user.waypoint = draw_waypoint(bounds, rng)
        user.speed = float(rng.uniform(*speed_range))
    if dt <= 0:
        return user
    x, y = user.position
    wx, wy = user.waypoint
    dist = math.hypot(wx - x, wy - y)
    step = user.speed * dt
    if step >= dist:
        user.position = (wx, wy)
        user.velocity = (0.0, 0.0)
        user.waypoint = draw_waypoint(bounds, rng)
        user.speed = float(rng.uniform(*speed_range))
    else:
        ux, uy = (wx - x) / dist, (wy - y) / dist
        user.position = (x + ux * step, y + uy * step)
        user.velocity = (ux * user.speed, uy * user.speed)
    return user


def evaluate_a3(user: UserState, rsrp_row: Sequence[float], cells: Sequence,
                dt: float, neighbors: Optional[Iterable[int]] = None) -> Optional[tuple]:
    """Advance the user's A3 timers by one tick of ``dt`` ms.

    A neighbour ``n`` satisfies the entering condition while
    ``rsrp[n] + cio(serving) > rsrp[serving] + hh(serving)``; its timer accumulates
    while the condition holds and is dropped as soon as it breaks. Returns
    ``(serving, target)`` when some timer reached ``ttt(serving)``, choosing the
    strongest such neighbour; the caller executes the handover.
    """
    s = user.serving_cell
    if s is None:
        return None
    cell = cells[s]
    threshold = rsrp_row[s] + cell.hh
    if neighbors is None:
        neighbors = range(len(rsrp_row))
    old = user.a3_timer
    timers = {}
    best = None
    best_rsrp = -math.inf
    for n in neighbors:
        if n == s:
            continue
        r = rsrp_row[n]
        if r + cell.cio > threshold:
            t = old.get(n, 0.0) + dt
            timers[n] = t
            if t >= cell.ttt and r > best_rsrp:
                best, best_rsrp = n, r
    user.a3_timer = timers
    if best is None:
        return None
    return (s, best)


def execute_handover(user: UserState, target: int, time: float) -> EventRecord:
    source = user.serving_cell
    user.serving_cell = target
    user.a3_timer = {}
    user.rlf_timer = 0.0
    user.last_ho = (source, target, time)
    return EventRecord(EventKind.HANDOVER, time, user.user_id, source, target)


def classify_pingpong(record: EventRecord, history: Sequence, window: float = 3.0) -> bool:
    """True iff ``record`` (A->B) reverses the user's previous handover (B->A) within ``window`` s.

    ``history`` holds the user's earlier handovers as EventRecords or
    ``(from, to, time)`` tuples, oldest first.
    """
    if not history:
        return False
    prev = history[-1]
    if isinstance(prev, EventRecord):
        prev = (prev.from_cell, prev.to_cell, prev.time)
    p_from, p_to, p_time = prev
    return (p_from == record.to_cell and p_to == record.from_cell
            and record.time - p_time <= window)


def check_rlf(user: UserState, sinr_db: float, dt: float, time: float,
              params: HandoverParams = HandoverParams()) -> Optional[EventRecord]:
    """Radio link monitoring for an attached, active user; ``dt`` in ms."""
    if user.serving_cell is None:
        return None
    if sinr_db < params.rlf_qout:
        user.rlf_timer += dt
    elif sinr_db > params.rlf_qin:
        user.rlf_timer = 0.0
    if user.rlf_timer < params.rlf_timer:
        return None
    cell = user.serving_cell
    user.serving_cell = None
    user.a3_timer = {}
    user.rlf_timer = 0.0
    user.reattach_at = time + params.reestablish_delay / 1000.0
    return EventRecord(EventKind.RLF, time, user.user_id, cell, None)


def _try_activate(user: UserState, serving_cell, time: float, params: SessionParams):
    if serving_cell is None:
        return None
    if serving_cell.free_prb <= 0:
        user.session = Session.BLOCKED_BACKOFF
        user.backoff_until = time + params.backoff
        return EventRecord(EventKind.CALL_BLOCK, time, user.user_id, serving_cell.cell_id, None)
    user.session = Session.ACTIVE
    user.backoff_until = None
    return None


def step_session(user: UserState, serving_cell, rng, dt: float, time: float = 0.0,
                 params: SessionParams = SessionParams()) -> Optional[EventRecord]:
    """On/off session process; ``dt`` in seconds.

    Exactly one uniform is drawn per call whatever the state, so a user's random
    stream does not depend on network behaviour.
    """
    u = rng.random()
    if user.session is Session.IDLE:
        if u < -math.expm1(-dt / params.mean_idle):
            return _try_activate(user, serving_cell, time, params)
    elif user.session is Session.ACTIVE:
        if u < -math.expm1(-dt / params.mean_active):
            user.session = Session.IDLE
    elif time >= user.backoff_until - 1e-9:
        return _try_activate(user, serving_cell, time, params)
    return None


def sample_profile(rng, profiles: Sequence[tuple]) -> UserProfile:
    """Pick one of ``(class, probability, bitrate)`` entries."""
    probs = np.array([p for _, p, _ in profiles], dtype=float)
    k = int(rng.choice(len(profiles), p=probs / probs.sum()))
    cls, _, bitrate = profiles[k]
    return UserProfile(ProfileClass(cls), float(bitrate))


EVENT_FIELDS = ("time", "kind", "user_id", "from_cell", "to_cell")


def write_events_csv(events: Iterable[EventRecord], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(EVENT_FIELDS)
    for e in events:
        w.writerow([
            f"{e.time:.3f}", e.kind.value, e.user_id,
            "" if e.from_cell is None else e.from_cell,
            "" if e.to_cell is None else e.to_cell,
        ])
