"""Fixed-step simulation loop wiring radio, users, xApps and Conflict Mitigation."""
from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import cm_core
from .config import ScenarioConfig, to_dict
from .ran_model import CellArrays, SiteKind, build_layout, per_prb_rate, round_robin
from .ue_model import (
    EventKind,
    EventRecord,
    Session,
    UserState,
    check_rlf,
    classify_pingpong,
    evaluate_a3,
    execute_handover,
    sample_profile,
    step_mobility,
    step_session,
    write_events_csv,
)
from .xapps import MLB, MRO, CellKpi, KpiReport, MlbXApp, MroXApp, apply_accepted

log = logging.getLogger(__name__)

COUNTERS = ("handover_count", "pingpong_count", "rlf_count", "call_block_count")
_KIND_COUNTER = {
    EventKind.HANDOVER: "handover_count",
    EventKind.PINGPONG: "pingpong_count",
    EventKind.RLF: "rlf_count",
    EventKind.CALL_BLOCK: "call_block_count",
}


@dataclass(frozen=True)
class MetricsSummary:
    mean_bs_load: float
    mean_user_satisfaction: float
    call_block_count: int
    rlf_count: int
    handover_count: int
    pingpong_count: int

    def as_dict(self) -> dict:
        return asdict(self)


METRICS = tuple(MetricsSummary.__dataclass_fields__)


@dataclass
class TickTrace:
    """Per-tick record of a run. ``satisfaction`` holds NaN for users that are not active."""

    times: np.ndarray
    load: np.ndarray  # (ticks, cells)
    satisfaction: np.ndarray  # (ticks, users)
    counters: np.ndarray  # (ticks, 4) cumulative, ordered as COUNTERS

    def __len__(self) -> int:
        return len(self.times)

    def rows(self):
        for k in range(len(self.times)):
            yield (self.times[k], self.load[k], self.satisfaction[k],
                   dict(zip(COUNTERS, (int(c) for c in self.counters[k]))))

    @classmethod
    def empty(cls, n_cells: int, n_users: int) -> "TickTrace":
        return cls(np.zeros(0), np.zeros((0, n_cells)), np.zeros((0, n_users)),
                   np.zeros((0, len(COUNTERS)), dtype=np.int64))

    def window(self, start: float) -> "TickTrace":
        keep = self.times > start + 1e-9
        return TickTrace(self.times[keep], self.load[keep], self.satisfaction[keep],
                         self.counters[keep])


@dataclass
class RunResult:
    summary: MetricsSummary
    trace: TickTrace
    verdicts: list
    events: list
    config: ScenarioConfig
    cells: list = field(default_factory=list)
    applied: list = field(default_factory=list)  # (time, cell, param, old, new, msg_id)
    positions: Optional[np.ndarray] = None  # final user positions


def mean_user_satisfaction(trace: TickTrace) -> float:
    """Time average of the per-tick mean satisfaction of active users, in percent."""
    sat = trace.satisfaction
    if sat.size == 0:
        return 0.0
    active = ~np.isnan(sat)
    counts = active.sum(axis=1)
    ok = counts > 0
    if not ok.any():
        log.warning("no active user in the whole trace; satisfaction defined as 0")
        return 0.0
    per_tick = np.where(active, sat, 0.0).sum(axis=1)[ok] / counts[ok]
    return float(100.0 * per_tick.mean())


def mean_bs_load(trace: TickTrace) -> float:
    """Time average of the mean cell load (assigned / available PRBs), in percent."""
    if trace.load.size == 0:
        return 0.0
    return float(100.0 * trace.load.mean(axis=1).mean())


def summarize(trace: TickTrace, warmup: float = 0.0) -> MetricsSummary:
    window = trace.window(warmup)
    final = trace.counters[-1] if len(trace) else np.zeros(len(COUNTERS), dtype=np.int64)
    counts = dict(zip(COUNTERS, (int(c) for c in final)))
    return MetricsSummary(
        mean_bs_load=mean_bs_load(window),
        mean_user_satisfaction=mean_user_satisfaction(window),
        call_block_count=counts["call_block_count"],
        rlf_count=counts["rlf_count"],
        handover_count=counts["handover_count"],
        pingpong_count=counts["pingpong_count"],
    )


def _uniform_in_disk(rng, center, radius):
    r = radius * math.sqrt(rng.random())
    a = 2 * math.pi * rng.random()
    return (center[0] + r * math.cos(a), center[1] + r * math.sin(a))


class Simulation:
    """One isolated run. ``bypass_cm`` applies xApp messages without the CM component."""

    def __init__(self, config: ScenarioConfig, bypass_cm: bool = False):
        self.config = config
        self.bypass_cm = bypass_cm
        self.tick_ms = config.tick_ms
        self.dt = config.tick_ms / 1000.0
        self.radio = config.radio_params()
        h = config.handover
        self.cells = build_layout(
            config.site(SiteKind.MACRO), config.site(SiteKind.MICRO),
            ring_radius=config.layout.ring_radius, ring_sites=config.layout.ring_sites,
            sectors=config.layout.sectors, initial_cio=h.initial_cio,
            initial_ttt=h.initial_ttt, initial_hh=h.initial_hh,
        )
        self.arrays = CellArrays(self.cells, self.radio)
        self.ho_params = config.handover_params()
        self.session_params = config.session_params()
        self.bounds = config.bounds()
        self.speed_range = (config.mobility.speed_min, config.mobility.speed_max)
        self.interruption = min(1.0, h.interruption_ms / config.tick_ms)

        root = np.random.SeedSequence(config.seed)
        placement_ss, shadow_ss, mobility_ss, session_ss = root.spawn(4)
        self._place_users(np.random.default_rng(placement_ss))
        n = len(self.users)
        self.mobility_rngs = [np.random.default_rng(s) for s in mobility_ss.spawn(n)]
        self.session_rngs = [np.random.default_rng(s) for s in session_ss.spawn(n)]
        self.shadow_sigma = config.radio.shadowing_sigma
        self.shadow_rng = np.random.default_rng(shadow_ss)
        self.shadowing = None
        if self.shadow_sigma > 0:
            self.shadowing = self.shadow_rng.normal(0.0, self.shadow_sigma, (n, len(self.cells)))

        freqs = self.arrays.frequency
        if config.layout.handover_scope == "intra_frequency":
            self.allowed = {
                f: [c.cell_id for c in self.cells if c.site.frequency == f] for f in set(freqs)
            }
        else:
            all_cells = [c.cell_id for c in self.cells]
            self.allowed = {f: all_cells for f in set(freqs)}

        self.xapps = {}
        if MLB in config.xapps.enabled:
            self.xapps[MLB] = MlbXApp(config.mlb_params())
        if MRO in config.xapps.enabled:
            self.xapps[MRO] = MroXApp(config.mro_params())
        self.order = [x for x in config.xapps.order if x in self.xapps]
        self.cm = None
        if not bypass_cm:
            self.cm = cm_core.ConflictMitigation(config.cm_config(), self.xapps.keys())

        self.history = {u.user_id: [] for u in self.users}
        self.windows = {x: np.zeros((len(self.cells), 4), dtype=np.int64) for x in self.xapps}
        self.events: list = []
        self.applied: list = []
        self.verdicts: list = []

    def _place_users(self, rng) -> None:
        cfg = self.config
        macro_f = cfg.layout.macro.frequency
        micro_f = cfg.layout.micro.frequency
        profiles = [(k, p.probability, p.bitrate) for k, p in sorted(cfg.users.profiles.items())]
        specs = [((0.0, 0.0), cfg.mobility.macro_user_radius, macro_f)] * cfg.users.macro_users
        micro_sites = sorted({c.site.position for c in self.cells if c.site.kind is SiteKind.MICRO},
                             key=lambda p: [c.site.position for c in self.cells].index(p))
        for pos in micro_sites:
            specs += [(pos, cfg.mobility.micro_user_radius, micro_f)] * cfg.users.users_per_micro
        xmin, ymin, xmax, ymax = self.bounds
        self.users = []
        p_active = cfg.session.mean_active / (cfg.session.mean_active + cfg.session.mean_idle)
        for uid, (center, radius, layer) in enumerate(specs):
            x, y = _uniform_in_disk(rng, center, radius)
            pos = (min(max(x, xmin), xmax), min(max(y, ymin), ymax))
            user = UserState(uid, pos, sample_profile(rng, profiles), layer=layer)
            if rng.random() < p_active:
                user.session = Session.ACTIVE
            self.users.append(user)

    def _strongest(self, user: UserState, row) -> int:
        return max(self.allowed[user.layer], key=lambda c: (row[c], -c))

    def run(self) -> RunResult:
        cfg = self.config
        n_ticks = cfg.n_ticks
        n_cells, n_users = len(self.cells), len(self.users)
        if n_ticks == 0:
            trace = TickTrace.empty(n_cells, n_users)
            return RunResult(summarize(trace, cfg.warmup), trace, [], [], cfg, self.cells, [],
                             np.array([u.position for u in self.users]))

        positions = np.array([u.position for u in self.users])
        rsrp = self.arrays.rsrp_matrix(positions, self.shadowing)
        for user, row in zip(self.users, rsrp.tolist()):
            user.serving_cell = self._strongest(user, row)
        for user, mrng in zip(self.users, self.mobility_rngs):
            step_mobility(user, 0.0, self.bounds, mrng, self.speed_range)

        times = np.zeros(n_ticks)
        load = np.zeros((n_ticks, n_cells))
        sat = np.full((n_ticks, n_users), np.nan)
        counters = np.zeros((n_ticks, len(COUNTERS)), dtype=np.int64)
        totals = np.zeros(len(COUNTERS), dtype=np.int64)
        periods = {x: int(round(app.descriptor.control_period * 1000)) for x, app in self.xapps.items()}

        for k in range(n_ticks):
            now_ms = (k + 1) * self.tick_ms
            now = now_ms / 1000.0
            tick_events = []

            # 1. mobility
            for user, mrng in zip(self.users, self.mobility_rngs):
                step_mobility(user, self.dt, self.bounds, mrng, self.speed_range)
            new_positions = np.array([u.position for u in self.users])
            if self.shadowing is not None:
                self._evolve_shadowing(np.hypot(*(new_positions - positions).T))
            positions = new_positions

            # 2. radio, re-establishment after RLF
            rsrp = self.arrays.rsrp_matrix(positions, self.shadowing)
            rows = rsrp.tolist()
            for user in self.users:
                if user.serving_cell is None and user.reattach_at is not None \
                        and now >= user.reattach_at - 1e-9:
                    user.serving_cell = self._strongest(user, rows[user.user_id])
                    user.reattach_at = None
                    user.a3_timer = {}
                    user.rlf_timer = 0.0

            # 3. handover, radio link monitoring, sessions
            handed = set()
            for user in self.users:
                if user.serving_cell is None:
                    continue
                decision = evaluate_a3(user, rows[user.user_id], self.cells, self.tick_ms,
                                       self.allowed[user.layer])
                if decision is None:
                    continue
                rec = execute_handover(user, decision[1], now)
                tick_events.append(rec)
                handed.add(user.user_id)
                hist = self.history[user.user_id]
                if classify_pingpong(rec, hist, self.ho_params.pingpong_window):
                    tick_events.append(EventRecord(EventKind.PINGPONG, now, user.user_id,
                                                   rec.from_cell, rec.to_cell))
                hist.append((rec.from_cell, rec.to_cell, now))

            serving = np.array([-1 if u.serving_cell is None else u.serving_cell for u in self.users])
            activity = None
            if cfg.radio.interference == "load":
                activity = np.array([c.assigned_prb / c.n_prb for c in self.cells])
            sinr = self.arrays.serving_sinr(rsrp, serving, activity).tolist()
            for user in self.users:
                if user.serving_cell is not None and user.session is Session.ACTIVE:
                    rec = check_rlf(user, sinr[user.user_id], self.tick_ms, now, self.ho_params)
                    if rec is not None:
                        tick_events.append(rec)
            for user, srng in zip(self.users, self.session_rngs):
                cell = None if user.serving_cell is None else self.cells[user.serving_cell]
                rec = step_session(user, cell, srng, self.dt, now, self.session_params)
                if rec is not None:
                    tick_events.append(rec)

            # 4. scheduling
            rates = per_prb_rate(np.nan_to_num(np.asarray(sinr, dtype=float), nan=-np.inf), self.radio)
            demands = [[] for _ in self.cells]
            for user in self.users:
                if user.session is not Session.ACTIVE:
                    continue
                if user.serving_cell is None:
                    sat[k, user.user_id] = 0.0
                    continue
                demands[user.serving_cell].append(user.user_id)
            for cell in self.cells:
                ids = demands[cell.cell_id]
                reqs = []
                for uid in ids:
                    r = rates[uid]
                    req = self.users[uid].profile.required_bitrate
                    reqs.append(cell.n_prb if r <= 0 else min(cell.n_prb, math.ceil(req / r)))
                alloc = round_robin(reqs, cell.n_prb)
                cell.assigned_prb = sum(alloc)
                for uid, a in zip(ids, alloc):
                    achieved = a * rates[uid]
                    if uid in handed:
                        achieved *= 1.0 - self.interruption
                    sat[k, uid] = min(1.0, achieved / self.users[uid].profile.required_bitrate)
                load[k, cell.cell_id] = cell.assigned_prb / cell.n_prb

            tick_events.sort(key=lambda e: e.user_id)
            for e in tick_events:
                idx = COUNTERS.index(_KIND_COUNTER[e.kind])
                totals[idx] += 1
                cell = e.from_cell
                if cell is not None:
                    for w in self.windows.values():
                        w[cell, idx] += 1
            self.events.extend(tick_events)
            times[k] = now
            counters[k] = totals

            # 5. control loop
            messages = []
            for x in self.order:
                if now_ms % periods[x]:
                    continue
                w = self.windows[x]
                report = KpiReport(now, {
                    c.cell_id: CellKpi(c.assigned_prb / c.n_prb,
                                       int(w[c.cell_id, 0]), int(w[c.cell_id, 1]), int(w[c.cell_id, 2]))
                    for c in self.cells
                })
                w[:] = 0
                messages.extend(self.xapps[x].decide(report, self.cells))
            if messages:
                self._control(messages, now)
            if self.cm is not None:
                self.cm.purge(now)

        trace = TickTrace(times, load, sat, counters)
        verdicts = self.cm.log if self.cm is not None else []
        return RunResult(summarize(trace, cfg.warmup), trace, verdicts, self.events,
                         cfg, self.cells, self.applied, positions)

    def _evolve_shadowing(self, moved: np.ndarray) -> None:
        """First-order autoregressive shadowing, decorrelating with distance travelled."""
        rho = np.exp(-moved / self.config.radio.shadowing_decorrelation)[:, None]
        noise = self.shadow_rng.standard_normal(self.shadowing.shape)
        self.shadowing = rho * self.shadowing + np.sqrt(1.0 - rho * rho) * self.shadow_sigma * noise

    def _control(self, messages, now: float) -> None:
        if self.cm is None:
            accepted = ACCEPT_ALL
            pairs = [(m, accepted) for m in messages]
        else:
            pairs = [self.cm.submit(m, now) for m in messages]
        for msg, verdict in pairs:
            if not verdict.accepted:
                continue
            cell = self.cells[int(msg.target.id)]
            old = {"CIO": cell.cio, "TTT": cell.ttt, "HH": cell.hh}[str(msg.parameter)]
            apply_accepted(self.cells, [(msg, verdict)])
            self.applied.append((now, cell.cell_id, str(msg.parameter), old, msg.value, msg.msg_id))


ACCEPT_ALL = cm_core.Verdict(cm_core.Outcome.ACCEPTED)


def run(config: ScenarioConfig, bypass_cm: bool = False) -> RunResult:
    return Simulation(config, bypass_cm=bypass_cm).run()


def compare_runs(summaries: Sequence[tuple]) -> dict:
    """Table of metrics (rows) by variant (columns) plus deltas against the first variant."""
    if len(summaries) < 2:
        raise ValueError("need at least two summaries to compare")
    variants = [v for v, _ in summaries]
    base = summaries[0][1]
    table = {}
    for metric in METRICS:
        values = {v: getattr(s, metric) for v, s in summaries}
        deltas = {v: getattr(s, metric) - getattr(base, metric) for v, s in summaries}
        table[metric] = {"values": values, "delta": deltas}
    return {"variants": variants, "baseline": variants[0], "metrics": table}


def format_comparison(comparison: dict) -> str:
    variants = comparison["variants"]
    width = max(14, *(len(v) + 2 for v in variants))
    head = f"{'metric':<24}" + "".join(f"{v:>{width}}" for v in variants)
    lines = [head, "-" * len(head)]
    for metric, row in comparison["metrics"].items():
        cells = []
        for v in variants:
            val = row["values"][v]
            txt = f"{val:.2f}" if isinstance(val, float) else str(val)
            if v != comparison["baseline"]:
                d = row["delta"][v]
                txt += f" ({d:+.2f})" if isinstance(d, float) else f" ({d:+d})"
            cells.append(f"{txt:>{width}}")
        lines.append(f"{metric:<24}" + "".join(cells))
    return "\n".join(lines)


# artifact writers


def summary_json(result: RunResult, variant: Optional[str] = None) -> str:
    doc = {
        "variant": variant,
        "seed": result.config.seed,
        "metrics": result.summary.as_dict(),
        "config": to_dict(result.config),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _fmt(x: float) -> str:
    return "" if x != x else f"{x:.6f}"


def trace_csv(trace: TickTrace) -> str:
    buf = io.StringIO()
    n_cells = trace.load.shape[1]
    n_users = trace.satisfaction.shape[1]
    header = (["time"] + list(COUNTERS) + [f"load_{c}" for c in range(n_cells)]
              + [f"sat_{u}" for u in range(n_users)])
    buf.write(",".join(header) + "\n")
    for k in range(len(trace)):
        parts = [f"{trace.times[k]:.3f}"]
        parts += [str(int(c)) for c in trace.counters[k]]
        parts += [_fmt(x) for x in trace.load[k]]
        parts += [_fmt(x) for x in trace.satisfaction[k]]
        buf.write(",".join(parts) + "\n")
    return buf.getvalue()


def verdicts_jsonl(verdicts) -> str:
    buf = io.StringIO()
    cm_core.write_verdict_log(verdicts, buf)
    return buf.getvalue()


def events_csv(events) -> str:
    buf = io.StringIO()
    write_events_csv(events, buf)
    return buf.getvalue()
