"""Network geometry and radio computations for the macro/micro layout.

Scalar helpers (``path_loss``, ``rsrp``, ``sinr``) follow the per-link definitions;
``rsrp_matrix`` and ``serving_sinr`` compute the same quantities for a whole user
population at once and are what the simulation loop calls every tick.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np


class ConfigError(ValueError):
    pass


class SiteKind(str, enum.Enum):
    MACRO = "MACRO"
    MICRO = "MICRO"


#: handover time-to-trigger values (ms) allowed for a cell
TTT_STEPS = (0, 40, 64, 80, 100, 128, 160, 256, 320, 480, 512, 640, 1024, 1280, 2560, 5120)


@dataclass(frozen=True)
class SiteConfig:
    position: tuple
    height: float
    eirp: float
    frequency: float  # MHz
    bandwidth: float  # MHz
    kind: SiteKind


@dataclass(frozen=True)
class RadioParams:
    """Propagation and link-level constants."""

    min_distance: float = 10.0
    macro_intercept: float = 120.9
    macro_slope: float = 37.6
    micro_slope: float = 36.7
    micro_intercept: float = 22.7
    micro_freq_coeff: float = 26.0
    sector_beamwidth: float = 70.0
    sector_max_attenuation: float = 25.0
    sector_pattern_coeff: float = 12.0
    noise_density: float = -174.0  # dBm/Hz
    noise_figure: float = 9.0
    prb_bandwidth: float = 180e3
    shannon_cap: float = 6.0

    @property
    def noise_dbm(self) -> float:
        return self.noise_density + 10 * math.log10(self.prb_bandwidth) + self.noise_figure


DEFAULT_RADIO = RadioParams()


@dataclass
class CellState:
    cell_id: int
    site: SiteConfig
    azimuth: float
    n_prb: int
    assigned_prb: int = 0
    cio: float = 0.0
    ttt: float = 160.0
    hh: float = 2.0
    site_index: int = 0

    @property
    def load(self) -> float:
        return self.assigned_prb / self.n_prb

    @property
    def free_prb(self) -> int:
        return self.n_prb - self.assigned_prb


@dataclass(frozen=True)
class LinkBudget:
    rsrp: float
    sinr: float
    per_prb_rate: float


def prb_count(bandwidth: float) -> int:
    """LTE resource grid size for a channel bandwidth in MHz."""
    if bandwidth not in (10, 20):
        raise ConfigError(f"unsupported bandwidth {bandwidth} MHz (use 10 or 20)")
    # 90% occupied bandwidth in 180 kHz blocks
    return int(round(0.9 * bandwidth * 1e3)) // 180


def _distance(site: SiteConfig, user_pos, radio: RadioParams) -> float:
    d = math.hypot(user_pos[0] - site.position[0], user_pos[1] - site.position[1])
    return max(d, radio.min_distance)


def path_loss_at(kind: SiteKind, frequency: float, d, radio: RadioParams = DEFAULT_RADIO):
    """Path loss in dB at 2D distance ``d`` (m, already clamped). Works on arrays."""
    if kind is SiteKind.MACRO:
        return radio.macro_intercept + radio.macro_slope * np.log10(d / 1000.0)
    return (
        radio.micro_slope * np.log10(d)
        + radio.micro_intercept
        + radio.micro_freq_coeff * math.log10(frequency / 1000.0)
    )


def path_loss(site: SiteConfig, user_pos, radio: RadioParams = DEFAULT_RADIO) -> float:
    return float(path_loss_at(site.kind, site.frequency, _distance(site, user_pos, radio), radio))


def _angle_offset(azimuth: float, bearing):
    return np.abs((bearing - azimuth + 180.0) % 360.0 - 180.0)


def sector_gain(cell: CellState, user_pos, radio: RadioParams = DEFAULT_RADIO) -> float:
    sx, sy = cell.site.position
    bearing = math.degrees(math.atan2(user_pos[1] - sy, user_pos[0] - sx))
    delta = float(_angle_offset(cell.azimuth, bearing))
    return -min(radio.sector_pattern_coeff * (delta / radio.sector_beamwidth) ** 2,
                radio.sector_max_attenuation)


def rsrp(cell: CellState, user_pos, radio: RadioParams = DEFAULT_RADIO) -> float:
    per_prb = cell.site.eirp - 10 * math.log10(cell.n_prb)
    return per_prb + sector_gain(cell, user_pos, radio) - path_loss(cell.site, user_pos, radio)


def db_to_linear(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(x)


def sinr(serving: CellState, user_pos, all_cells: Sequence[CellState],
         radio: RadioParams = DEFAULT_RADIO) -> float:
    if serving not in all_cells:
        raise ValueError("serving cell must be part of all_cells")
    signal = 10 ** (rsrp(serving, user_pos, radio) / 10)
    interference = sum(
        10 ** (rsrp(c, user_pos, radio) / 10)
        for c in all_cells
        if c is not serving and c.site.frequency == serving.site.frequency
    )
    noise = 10 ** (radio.noise_dbm / 10)
    return 10 * math.log10(signal / (noise + interference))


def per_prb_rate(sinr_db, radio: RadioParams = DEFAULT_RADIO):
    """Truncated-Shannon throughput of one PRB, bits/s. Works on arrays."""
    se = np.minimum(radio.shannon_cap, np.log2(1.0 + db_to_linear(sinr_db)))
    out = radio.prb_bandwidth * se
    return float(out) if np.ndim(out) == 0 else out


def link_budget(serving: CellState, user_pos, all_cells, radio: RadioParams = DEFAULT_RADIO) -> LinkBudget:
    s = sinr(serving, user_pos, all_cells, radio)
    return LinkBudget(rsrp(serving, user_pos, radio), s, per_prb_rate(s, radio))


class CellArrays:
    """Static per-cell geometry packed into arrays for population-wide evaluation."""

    def __init__(self, cells: Sequence[CellState], radio: RadioParams = DEFAULT_RADIO):
        self.radio = radio
        self.n = len(cells)
        self.site_xy = np.array([c.site.position for c in cells], dtype=float)
        self.azimuth = np.array([c.azimuth for c in cells], dtype=float)
        self.frequency = np.array([c.site.frequency for c in cells], dtype=float)
        self.per_prb_power = np.array(
            [c.site.eirp - 10 * math.log10(c.n_prb) for c in cells], dtype=float
        )
        self.is_macro = np.array([c.site.kind is SiteKind.MACRO for c in cells])
        self.micro_offset = np.array(
            [radio.micro_intercept + radio.micro_freq_coeff * math.log10(c.site.frequency / 1000.0)
             for c in cells]
        )
        self.co_channel = self.frequency[:, None] == self.frequency[None, :]

    def rsrp_matrix(self, positions: np.ndarray, shadowing: Optional[np.ndarray] = None) -> np.ndarray:
        """RSRP in dBm for every (user, cell) pair; shape ``(n_users, n_cells)``."""
        radio = self.radio
        positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        dx = positions[:, 0:1] - self.site_xy[None, :, 0]
        dy = positions[:, 1:2] - self.site_xy[None, :, 1]
        d = np.maximum(np.hypot(dx, dy), radio.min_distance)
        pl = np.where(
            self.is_macro[None, :],
            radio.macro_intercept + radio.macro_slope * np.log10(d / 1000.0),
            radio.micro_slope * np.log10(d) + self.micro_offset[None, :],
        )
        bearing = np.degrees(np.arctan2(dy, dx))
        delta = _angle_offset(self.azimuth[None, :], bearing)
        gain = -np.minimum(radio.sector_pattern_coeff * (delta / radio.sector_beamwidth) ** 2,
                           radio.sector_max_attenuation)
        out = self.per_prb_power[None, :] + gain - pl
        if shadowing is not None:
            out = out - shadowing
        return out

    def serving_sinr(self, rsrp_db: np.ndarray, serving: np.ndarray,
                     activity: Optional[np.ndarray] = None) -> np.ndarray:
        """Per-PRB SINR (dB) of each user towards its serving cell; NaN when detached.

        ``activity`` scales each interferer's power, e.g. by its PRB utilisation;
        omitted means every co-channel cell transmits on every PRB.
        """
        lin = db_to_linear(rsrp_db)
        attached = serving >= 0
        idx = np.where(attached, serving, 0)
        rows = np.arange(len(serving))
        signal = lin[rows, idx]
        interferers = self.co_channel[idx]
        interferers[rows, idx] = False
        weighted = lin if activity is None else lin * np.asarray(activity, dtype=float)[None, :]
        interference = np.where(interferers, weighted, 0.0).sum(axis=1)
        noise = 10 ** (self.radio.noise_dbm / 10)
        out = 10 * np.log10(signal / (noise + interference))
        return np.where(attached, out, np.nan)


def build_layout(
    macro: SiteConfig,
    micro: SiteConfig,
    ring_radius: float = 500.0,
    ring_sites: int = 6,
    sectors: int = 3,
    initial_cio: float = 0.0,
    initial_ttt: float = 160.0,
    initial_hh: float = 2.0,
) -> list:
    """Macro site with a collocated micro at the origin plus a ring of micro sites.

    Cells are numbered site by site (macro, centre micro, ring micros), sector by
    sector within each site.
    """
    sites = [replace_position(macro, (0.0, 0.0)), replace_position(micro, (0.0, 0.0))]
    for k in range(ring_sites):
        angle = math.radians(360.0 * k / ring_sites)
        sites.append(replace_position(
            micro, (ring_radius * math.cos(angle), ring_radius * math.sin(angle))
        ))
    cells = []
    for s_idx, site in enumerate(sites):
        n_prb = prb_count(site.bandwidth)
        for k in range(sectors):
            cells.append(CellState(
                cell_id=len(cells), site=site, azimuth=360.0 * k / sectors,
                n_prb=n_prb, cio=initial_cio, ttt=initial_ttt, hh=initial_hh,
                site_index=s_idx,
            ))
    return cells


def replace_position(site: SiteConfig, position) -> SiteConfig:
    return SiteConfig(tuple(float(p) for p in position), site.height, site.eirp,
                      site.frequency, site.bandwidth, site.kind)


def prb_requests(required_bitrate: float, rate: float, n_prb: int) -> int:
    if rate <= 0 or not math.isfinite(rate):
        return n_prb
    return min(n_prb, math.ceil(required_bitrate / rate))


def round_robin(requests: Sequence[int], capacity: int) -> list:
    """Hand out ``capacity`` PRBs one at a time, cycling over unmet requests in order.

    Closed form of the cyclic hand-out: every request is filled up to the deepest
    complete round, and leftover PRBs go to the earliest still-unmet requests.
    """
    if not requests:
        return []
    if sum(requests) <= capacity:
        return list(requests)
    lo, hi = 0, max(requests)
    while lo < hi:  # largest level L with sum(min(r, L)) <= capacity
        mid = (lo + hi + 1) // 2
        if sum(min(r, mid) for r in requests) <= capacity:
            lo = mid
        else:
            hi = mid - 1
    alloc = [min(r, lo) for r in requests]
    left = capacity - sum(alloc)
    for i, r in enumerate(requests):
        if left == 0:
            break
        if r > lo:
            alloc[i] += 1
            left -= 1
    return alloc


def schedule_prbs(cell: CellState, demands: Iterable[tuple]) -> dict:
    """Allocate PRBs to ``(user_id, required_bitrate, per_prb_rate)`` demands.

    Updates ``cell.assigned_prb`` and returns ``{user_id: prbs}``.
    """
    demands = sorted(demands, key=lambda d: d[0])
    requests = [prb_requests(bitrate, rate, cell.n_prb) for _, bitrate, rate in demands]
    alloc = round_robin(requests, cell.n_prb)
    cell.assigned_prb = sum(alloc)
    return {d[0]: a for d, a in zip(demands, alloc)}
