"""Scenario configuration: JSON schema, defaults, validation and overrides."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import cm_core
from .ran_model import TTT_STEPS, RadioParams, SiteConfig, SiteKind
from .ue_model import HandoverParams, SessionParams
from .xapps import MLB, MRO, MlbParams, MroParams

VARIANTS = {
    "off": ("off", None),
    "prio-mlb": ("prioritize", MLB),
    "prio-mro": ("prioritize", MRO),
}


class ConfigError(ValueError):
    """Invalid scenario configuration; the message names the offending key."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class GroupSection(_Strict):
    group_id: str
    target_kind: Literal["CELL", "BEARER", "USER"] = "CELL"
    members: List[str]

    @model_validator(mode="after")
    def _members(self):
        for m in self.members:
            cm_core.ParameterId.parse(m)
        if len(set(self.members)) < 2:
            raise ValueError("a parameter group needs at least two distinct members")
        return self


class CmSection(_Strict):
    mode: Literal["off", "prioritize"] = "off"
    priority: Optional[str] = None
    effect_ttl: float = Field(10.0, gt=0)
    cooldown_duration: float = Field(5.0, ge=0)
    groups: List[GroupSection] = Field(
        default_factory=lambda: [GroupSection(group_id="hob", members=["CIO", "TTT", "HH"])]
    )

    @model_validator(mode="after")
    def _priority(self):
        if self.mode == "prioritize" and not self.priority:
            raise ValueError("mode 'prioritize' requires 'priority'")
        ids = [g.group_id for g in self.groups]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate group_id in groups")
        return self


class SiteSection(_Strict):
    height: float = Field(gt=0)
    eirp: float
    frequency: float = Field(gt=0)
    bandwidth: Literal[10, 20]


class LayoutSection(_Strict):
    macro: SiteSection = SiteSection(height=28, eirp=42, frequency=800, bandwidth=10)
    micro: SiteSection = SiteSection(height=12, eirp=26, frequency=2100, bandwidth=20)
    ring_radius: float = Field(500.0, gt=0)
    ring_sites: int = Field(6, ge=0)
    sectors: int = Field(3, ge=1)
    handover_scope: Literal["intra_frequency", "all"] = "intra_frequency"


class RadioSection(_Strict):
    min_distance: float = Field(10.0, gt=0)
    macro_intercept: float = 120.9
    macro_slope: float = 37.6
    micro_slope: float = 36.7
    micro_intercept: float = 22.7
    micro_freq_coeff: float = 26.0
    sector_beamwidth: float = Field(70.0, gt=0)
    sector_max_attenuation: float = Field(25.0, ge=0)
    sector_pattern_coeff: float = 12.0
    noise_density: float = -174.0
    noise_figure: float = 9.0
    prb_bandwidth: float = Field(180e3, gt=0)
    shannon_cap: float = Field(6.0, gt=0)
    shadowing_sigma: float = Field(6.0, ge=0)
    shadowing_decorrelation: float = Field(50.0, gt=0)
    # "load" scales each interferer by its PRB utilisation in the previous tick
    interference: Literal["full", "load"] = "load"


class MobilitySection(_Strict):
    speed_min: float = Field(0.8, ge=0)
    speed_max: float = Field(8.0, gt=0)
    area_margin: float = Field(250.0, ge=0)
    macro_user_radius: float = Field(750.0, gt=0)
    micro_user_radius: float = Field(200.0, gt=0)

    @model_validator(mode="after")
    def _speeds(self):
        if self.speed_min > self.speed_max:
            raise ValueError("speed_min exceeds speed_max")
        return self


class ProfileSection(_Strict):
    probability: float = Field(ge=0, le=1)
    bitrate: float = Field(gt=0)


def _default_profiles():
    return {
        "LOW": ProfileSection(probability=0.4, bitrate=0.5e6),
        "MEDIUM": ProfileSection(probability=0.3, bitrate=1.5e6),
        "HIGH": ProfileSection(probability=0.3, bitrate=4.0e6),
    }


class UsersSection(_Strict):
    macro_users: int = Field(100, ge=0)
    users_per_micro: int = Field(30, ge=0)
    profiles: Dict[Literal["LOW", "MEDIUM", "HIGH"], ProfileSection] = Field(
        default_factory=_default_profiles
    )

    @model_validator(mode="after")
    def _probabilities(self):
        total = sum(p.probability for p in self.profiles.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"profile probabilities sum to {total}, expected 1")
        return self


class SessionSection(_Strict):
    mean_idle: float = Field(20.0, gt=0)
    mean_active: float = Field(30.0, gt=0)
    backoff: float = Field(5.0, ge=0)


class HandoverSection(_Strict):
    pingpong_window: float = Field(3.0, ge=0)
    rlf_qout: float = -8.0
    rlf_qin: float = -6.0
    rlf_timer_ms: float = Field(1000.0, gt=0)
    reestablish_ms: float = Field(200.0, ge=0)
    interruption_ms: float = Field(0.0, ge=0)
    initial_cio: float = Field(0.0, ge=-6, le=6)
    initial_hh: float = Field(2.0, ge=0, le=10)
    initial_ttt: float = 160.0

    @model_validator(mode="after")
    def _checks(self):
        if self.initial_ttt not in TTT_STEPS:
            raise ValueError(f"initial_ttt {self.initial_ttt} is not in the TTT step set {TTT_STEPS}")
        if self.rlf_qin < self.rlf_qout:
            raise ValueError("rlf_qin must not be below rlf_qout")
        return self


class MlbSection(_Strict):
    gain: float = 10.0
    target_load: float = Field(0.7, ge=0, le=1)
    step: float = Field(0.5, gt=0)
    cio_min: float = -6.0
    cio_max: float = 6.0
    control_period: float = Field(1.0, gt=0)


class MroSection(_Strict):
    pp_high: float = Field(0.5, ge=0, le=1)
    pp_low: float = Field(0.2, ge=0, le=1)
    hh_step: float = Field(0.5, gt=0)
    hh_min: float = 0.0
    hh_max: float = 10.0
    control_period: float = Field(1.0, gt=0)


class XAppsSection(_Strict):
    enabled: List[Literal["MLB", "MRO"]] = Field(default_factory=lambda: [MLB, MRO])
    order: List[Literal["MLB", "MRO"]] = Field(default_factory=lambda: [MLB, MRO])
    mlb: MlbSection = MlbSection()
    # "mro" would shadow BaseModel.mro, so the attribute is renamed and the key aliased
    mro_section: MroSection = Field(MroSection(), alias="mro")

    @model_validator(mode="after")
    def _order(self):
        if sorted(self.order) != [MLB, MRO]:
            raise ValueError("order must list MLB and MRO exactly once")
        return self


class ScenarioConfig(_Strict):
    duration: float = Field(200.0, ge=0)
    tick_ms: int = Field(100, gt=0)
    seed: int = 1
    warmup: float = Field(10.0, ge=0)
    cm: CmSection = CmSection()
    layout: LayoutSection = LayoutSection()
    radio: RadioSection = RadioSection()
    mobility: MobilitySection = MobilitySection()
    users: UsersSection = UsersSection()
    session: SessionSection = SessionSection()
    handover: HandoverSection = HandoverSection()
    xapps: XAppsSection = XAppsSection()

    @model_validator(mode="after")
    def _cross(self):
        for name, period in (("mlb", self.xapps.mlb.control_period),
                             ("mro", self.xapps.mro_section.control_period)):
            period_ms = period * 1000.0
            if abs(period_ms / self.tick_ms - round(period_ms / self.tick_ms)) > 1e-9:
                raise ValueError(
                    f"xapps.{name}.control_period ({period} s) is not a multiple of tick_ms"
                )
        if self.cm.mode == "prioritize" and self.cm.priority not in self.xapps.enabled:
            raise ValueError(f"cm.priority {self.cm.priority!r} is not an enabled xApp")
        return self

    # conversions to the runtime parameter objects

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration * 1000.0 / self.tick_ms))

    def cm_config(self) -> cm_core.CmConfig:
        groups = [
            cm_core.ParameterGroup(g.group_id, cm_core.TargetKind(g.target_kind), frozenset(g.members))
            for g in self.cm.groups
        ]
        mode = cm_core.CmMode(self.cm.mode)
        return cm_core.CmConfig(
            mode=mode,
            priority=self.cm.priority if mode is cm_core.CmMode.PRIORITIZE else None,
            effect_ttl=self.cm.effect_ttl,
            cooldown_duration=self.cm.cooldown_duration,
            groups=groups,
        )

    def radio_params(self) -> RadioParams:
        data = self.radio.model_dump()
        data.pop("shadowing_sigma")
        data.pop("shadowing_decorrelation")
        data.pop("interference")
        return RadioParams(**data)

    def site(self, kind: SiteKind) -> SiteConfig:
        s = self.layout.macro if kind is SiteKind.MACRO else self.layout.micro
        return SiteConfig((0.0, 0.0), s.height, s.eirp, s.frequency, s.bandwidth, kind)

    def handover_params(self) -> HandoverParams:
        h = self.handover
        return HandoverParams(h.pingpong_window, h.rlf_qout, h.rlf_qin, h.rlf_timer_ms, h.reestablish_ms)

    def session_params(self) -> SessionParams:
        s = self.session
        return SessionParams(s.mean_idle, s.mean_active, s.backoff)

    def mlb_params(self) -> MlbParams:
        return MlbParams(**self.xapps.mlb.model_dump())

    def mro_params(self) -> MroParams:
        return MroParams(**self.xapps.mro_section.model_dump())

    def bounds(self) -> tuple:
        half = self.layout.ring_radius + self.mobility.area_margin
        return (-half, -half, half, half)


def _format_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>: configuration must be a JSON object")
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_error(err)) from None


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such configuration file")
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: parse error: {err}") from None
    return from_dict(data)


def to_dict(config: ScenarioConfig) -> dict:
    return config.model_dump(mode="json", by_alias=True)


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(config: ScenarioConfig, overrides) -> ScenarioConfig:
    """Apply ``key.path=value`` overrides; values are parsed as JSON when possible."""
    data = to_dict(config)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"{item}: override must look like key=value")
        key, raw = item.split("=", 1)
        node = data
        parts = key.strip().split(".")
        for i, part in enumerate(parts):
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"{'.'.join(parts[:i + 1])}: unknown configuration key")
            if i == len(parts) - 1:
                node[part] = _parse_value(raw)
            else:
                node = node[part]
    return from_dict(data)


def with_variant(config: ScenarioConfig, variant: str) -> ScenarioConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"variant: unknown variant {variant!r} (choose from {sorted(VARIANTS)})")
    mode, priority = VARIANTS[variant]
    data = to_dict(config)
    data["cm"]["mode"] = mode
    data["cm"]["priority"] = priority
    return from_dict(data)


def default_config() -> ScenarioConfig:
    return ScenarioConfig()
