"""The two xApps: Mobility Load Balancing (CIO) and Mobility Robustness Optimization (TTT, HH)."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .cm_core import CIO, HH, TTT, E2ControlMessage, TargetKind, cell_target
from .ran_model import TTT_STEPS

MLB = "MLB"
MRO = "MRO"


class RunAbort(RuntimeError):
    """The control loop referenced something the network does not have."""


@dataclass(frozen=True)
class CellKpi:
    load: float
    handover_count: int = 0
    pingpong_count: int = 0
    rlf_count: int = 0


@dataclass(frozen=True)
class KpiReport:
    time: float
    per_cell: Mapping[int, CellKpi]


@dataclass(frozen=True)
class XAppDescriptor:
    xapp_id: str
    control_period: float
    controlled_parameters: frozenset


@dataclass(frozen=True)
class MlbParams:
    gain: float = 10.0  # dB per unit load
    target_load: float = 0.7
    step: float = 0.5
    cio_min: float = -6.0
    cio_max: float = 6.0
    control_period: float = 1.0


@dataclass(frozen=True)
class MroParams:
    pp_high: float = 0.5
    pp_low: float = 0.2
    hh_step: float = 0.5
    hh_min: float = 0.0
    hh_max: float = 10.0
    ttt_steps: tuple = TTT_STEPS
    control_period: float = 1.0


def quantize(x: float, step: float) -> float:
    return math.floor(x / step + 0.5) * step


def mlb_target_cio(load: float, params: MlbParams = MlbParams()) -> float:
    raw = params.gain * (load - params.target_load)
    return quantize(min(max(raw, params.cio_min), params.cio_max), params.step)


def mlb_decide(report: KpiReport, cells: Sequence, params: MlbParams = MlbParams()) -> list:
    """CIO proportional to how far each cell's load sits above the target load."""
    out = []
    for cell_id in sorted(report.per_cell):
        cio = mlb_target_cio(report.per_cell[cell_id].load, params)
        if cio != cells[cell_id].cio:
            out.append(E2ControlMessage(MLB, cell_target(cell_id), CIO, cio, report.time))
    return out


def ttt_step(current: float, direction: int, steps: Sequence[float] = TTT_STEPS) -> float:
    """Neighbouring value in the TTT step set, saturating at both ends."""
    if direction > 0:
        i = bisect.bisect_right(steps, current)
        return steps[min(i, len(steps) - 1)]
    i = bisect.bisect_left(steps, current) - 1
    return steps[max(i, 0)]


def mro_decide(report: KpiReport, cells: Sequence, params: MroParams = MroParams()) -> list:
    """Lengthen TTT and widen HH where ping-pongs dominate; relax them where RLFs appear."""
    out = []
    for cell_id in sorted(report.per_cell):
        kpi = report.per_cell[cell_id]
        if kpi.handover_count <= 0:
            continue
        cell = cells[cell_id]
        ratio = kpi.pingpong_count / kpi.handover_count
        if ratio > params.pp_high:
            ttt = ttt_step(cell.ttt, +1, params.ttt_steps)
            hh = min(params.hh_max, cell.hh + params.hh_step)
        elif ratio < params.pp_low and kpi.rlf_count > 0:
            ttt = ttt_step(cell.ttt, -1, params.ttt_steps)
            hh = max(params.hh_min, cell.hh - params.hh_step)
        else:
            continue
        target = cell_target(cell_id)
        if ttt != cell.ttt:
            out.append(E2ControlMessage(MRO, target, TTT, float(ttt), report.time))
        if hh != cell.hh:
            out.append(E2ControlMessage(MRO, target, HH, hh, report.time))
    return out


class XApp:
    descriptor: XAppDescriptor

    def decide(self, report: KpiReport, cells: Sequence) -> list:
        raise NotImplementedError


class MlbXApp(XApp):
    def __init__(self, params: MlbParams = MlbParams()):
        self.params = params
        self.descriptor = XAppDescriptor(MLB, params.control_period, frozenset({CIO}))

    def decide(self, report, cells):
        return mlb_decide(report, cells, self.params)


class MroXApp(XApp):
    def __init__(self, params: MroParams = MroParams()):
        self.params = params
        self.descriptor = XAppDescriptor(MRO, params.control_period, frozenset({TTT, HH}))

    def decide(self, report, cells):
        return mro_decide(report, cells, self.params)


_FIELDS = {CIO: "cio", TTT: "ttt", HH: "hh"}


def apply_accepted(cells: Sequence, verdicts: Iterable[tuple]) -> Sequence:
    """Write the values of ACCEPTED ``(msg, verdict)`` pairs onto their target cells."""
    for msg, verdict in verdicts:
        if not verdict.accepted:
            continue
        if msg.target.kind is not TargetKind.CELL:
            raise RunAbort(f"unsupported control target {msg.target}")
        try:
            idx = int(msg.target.id)
        except ValueError:
            raise RunAbort(f"unknown cell {msg.target.id!r}") from None
        if not 0 <= idx < len(cells):
            raise RunAbort(f"unknown cell {msg.target.id!r}")
        attr = _FIELDS.get(msg.parameter)
        if attr is None:
            raise RunAbort(f"parameter {msg.parameter} is not controllable on cells")
        setattr(cells[idx], attr, msg.value)
    return cells
