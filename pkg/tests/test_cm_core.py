import io
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oran_cm import cm_core
from oran_cm.cm_core import (
    CIO,
    HH,
    TILT,
    TTT,
    CmConfig,
    CmMode,
    ConfigurationError,
    ConflictClass,
    ConflictMitigation,
    DecisionStore,
    E2ControlMessage,
    Outcome,
    ParameterGroup,
    ParameterId,
    TargetKind,
    cell_target,
    detect_conflicts,
    purge_expired,
    register_groups,
    resolve,
)

from .streams import HOB, PARAMS, check_stream, random_config, random_stream


def msg(xapp, cell, param, value=1.0, t=0.0, msg_id=None):
    return E2ControlMessage(xapp, cell_target(cell), param, value, t, msg_id)


def prio(x, ttl=10.0, cooldown=5.0, groups=(HOB,)):
    return CmConfig(CmMode.PRIORITIZE, x, ttl, cooldown, groups)


OFF = CmConfig(CmMode.OFF, None, 10.0, 5.0, (HOB,))


def accept(store, m, ttl=10.0):
    return resolve(m, [], CmConfig(effect_ttl=ttl), store, m.issued_at)


class TestParameterTypes:
    def test_parse_known_and_other(self):
        assert ParameterId.parse("CIO") == CIO
        other = ParameterId.parse("OTHER(tx_power)")
        assert other.name == "OTHER" and other.label == "tx_power"
        assert str(other) == "OTHER(tx_power)"

    def test_unknown_parameter(self):
        with pytest.raises(ConfigurationError):
            ParameterId.parse("BOGUS")

    def test_group_needs_two_members(self):
        with pytest.raises(ConfigurationError):
            ParameterGroup("g", TargetKind.CELL, frozenset({CIO}))

    def test_config_invariants(self):
        with pytest.raises(ConfigurationError):
            CmConfig(effect_ttl=0)
        with pytest.raises(ConfigurationError):
            CmConfig(cooldown_duration=-1)
        with pytest.raises(ConfigurationError):
            CmConfig(CmMode.PRIORITIZE, None)
        with pytest.raises(ConfigurationError):
            ConflictMitigation(prio("XYZ"), xapp_ids=["MLB", "MRO"])


class TestRegistry:
    def test_handover_boundary_group(self):
        reg = register_groups([HOB])
        assert len(reg) == 1
        assert reg.membership_count == 3

    def test_empty_registry_never_conflicts(self):
        reg = register_groups([])
        store = DecisionStore()
        accept(store, msg("MRO", 3, TTT, msg_id=1))
        assert detect_conflicts(msg("MLB", 3, CIO, msg_id=2), store, reg, 0.0) == []

    def test_shared_member_lists_both_groups(self):
        g2 = ParameterGroup("load", TargetKind.CELL, frozenset({CIO, TILT}))
        groups = [HOB, g2]
        reg = register_groups(groups)
        expected = sorted(g.group_id for g in groups if CIO in g.members)
        assert list(reg.groups_for(TargetKind.CELL, CIO)) == expected
        assert reg.groups_for(TargetKind.USER, CIO) == ()

    def test_duplicate_group_id(self):
        with pytest.raises(ConfigurationError):
            register_groups([HOB, ParameterGroup("hob", TargetKind.CELL, frozenset({CIO, TILT}))])


class TestDetect:
    def setup_method(self):
        self.reg = register_groups([HOB])
        self.store = DecisionStore()

    def test_indirect_conflict_between_xapps(self):
        accept(self.store, msg("MRO", 3, TTT, msg_id=7))
        found = detect_conflicts(msg("MLB", 3, CIO, msg_id=8), self.store, self.reg, 0.0)
        assert [(c.msg_id, c.group_id, c.conflict_class) for c in found] == [
            (7, "hob", ConflictClass.INDIRECT)
        ]

    def test_same_xapp_is_not_a_conflict(self):
        accept(self.store, msg("MLB", 3, TTT, msg_id=1))
        assert detect_conflicts(msg("MLB", 3, CIO, msg_id=2), self.store, self.reg, 0.0) == []

    def test_other_target_is_not_a_conflict(self):
        accept(self.store, msg("MRO", 5, TTT, msg_id=1))
        assert detect_conflicts(msg("MLB", 3, CIO, msg_id=2), self.store, self.reg, 0.0) == []

    def test_expired_decision_is_ignored(self):
        accept(self.store, msg("MRO", 3, TTT, t=0.0, msg_id=1), ttl=10.0)
        late = msg("MLB", 3, CIO, t=11.0, msg_id=2)
        assert detect_conflicts(late, self.store, self.reg, 11.0) == []
        # the boundary itself: expires_at <= now is out of effect
        assert detect_conflicts(late, self.store, self.reg, 10.0) == []
        assert len(detect_conflicts(late, self.store, self.reg, 9.99)) == 1

    def test_direct_conflict(self):
        accept(self.store, msg("MRO", 3, CIO, msg_id=1))
        found = detect_conflicts(msg("MLB", 3, CIO, msg_id=2), self.store, self.reg, 0.0)
        assert [(c.group_id, c.conflict_class) for c in found] == [(None, ConflictClass.DIRECT)]

    def test_pure(self):
        accept(self.store, msg("MRO", 3, TTT, msg_id=1))
        accept(self.store, msg("MRO", 3, HH, msg_id=2))
        m = msg("MLB", 3, CIO, msg_id=3)
        before = [(d.message, d.superseded) for d in self.store.decisions()]
        a = detect_conflicts(m, self.store, self.reg, 1.0)
        b = detect_conflicts(m, self.store, self.reg, 1.0)
        assert a == b and [c.msg_id for c in a] == [1, 2]
        assert [(d.message, d.superseded) for d in self.store.decisions()] == before


class TestResolve:
    def setup_method(self):
        self.reg = register_groups([HOB])
        self.store = DecisionStore()

    def run(self, m, config, now=None):
        now = m.issued_at if now is None else now
        return resolve(m, detect_conflicts(m, self.store, self.reg, now), config, self.store, now)

    def test_non_prioritized_rejected_and_cooled_down(self):
        self.run(msg("MRO", 3, TTT, msg_id=1, t=1.0), prio("MRO"))
        v = self.run(msg("MLB", 3, CIO, msg_id=2, t=2.0), prio("MRO"))
        assert v.outcome is Outcome.REJECTED_CONFLICT
        assert v.cooldown_applied == cm_core.CooldownEntry("MLB", cell_target(3), 7.0)
        assert [d.message.msg_id for d in self.store.decisions()] == [1]

    def test_prioritized_supersedes_and_cools_down_loser(self):
        self.run(msg("MLB", 3, CIO, msg_id=1, t=1.0), prio("MRO"))
        v = self.run(msg("MRO", 3, TTT, msg_id=2, t=2.0), prio("MRO"))
        assert v.outcome is Outcome.ACCEPTED
        mlb = [d for d in self.store.decisions() if d.message.msg_id == 1][0]
        assert mlb.superseded
        assert self.store.cooldown("MLB", cell_target(3), 2.5).until == 7.0
        assert v.cooldowns_imposed == (cm_core.CooldownEntry("MLB", cell_target(3), 7.0),)

    def test_off_mode_accepts_everything(self):
        self.run(msg("MRO", 3, TTT, msg_id=1), OFF)
        v = self.run(msg("MLB", 3, CIO, msg_id=2), OFF)
        assert v.outcome is Outcome.ACCEPTED
        assert len(v.conflicts) == 1
        assert self.store.cooldowns() == []

    def test_cooldown_blocks_non_conflicting_messages(self):
        cfg = prio("MRO", ttl=2.0)
        self.run(msg("MRO", 3, TTT, msg_id=1, t=0.0), cfg)
        self.run(msg("MLB", 3, CIO, msg_id=2, t=1.0), cfg)
        # MRO's decision has expired at t=2; MLB keeps cooling down until t=6
        v = self.run(msg("MLB", 3, CIO, msg_id=3, t=5.0), cfg)
        assert v.outcome is Outcome.REJECTED_COOLDOWN
        assert v.conflicts == ()
        v = self.run(msg("MLB", 3, CIO, msg_id=4, t=6.0), cfg)
        assert v.outcome is Outcome.ACCEPTED

    def test_two_non_prioritized_first_wins(self):
        self.run(msg("A", 3, TTT, msg_id=1), prio("MRO"))
        v = self.run(msg("B", 3, CIO, msg_id=2), prio("MRO"))
        assert v.outcome is Outcome.REJECTED_CONFLICT

    def test_self_update_supersedes_silently(self):
        self.run(msg("MLB", 3, CIO, 1.0, msg_id=1), prio("MRO"))
        v = self.run(msg("MLB", 3, CIO, 2.0, msg_id=2), prio("MRO"))
        assert v.outcome is Outcome.ACCEPTED and v.conflicts == ()
        live = [d.message.msg_id for d in self.store.in_effect(cell_target(3), 0.0)]
        assert live == [2]


class TestPurgeAndLog:
    def test_purge_counts_expired(self):
        store = DecisionStore()
        accept(store, msg("MLB", 1, CIO, t=0.0, msg_id=1), ttl=5.0)
        accept(store, msg("MLB", 2, CIO, t=0.0, msg_id=2), ttl=15.0)
        assert purge_expired(store, 10.0) == 1
        assert [d.message.msg_id for d in store.decisions()] == [2]

    def test_long_lived_target_stays_bounded(self):
        store = DecisionStore()
        for i in range(500):
            accept(store, msg("MLB", 1, CIO, float(i), t=i * 0.5, msg_id=i + 1), ttl=3.0)
        assert len(store.decisions()) <= DecisionStore.COMPACT_AT
        live = [d.message.msg_id for d in store.in_effect(cell_target(1), 249.5)]
        assert live == [500]

    def test_purge_empty_and_fresh(self):
        assert purge_expired(DecisionStore(), 3.0) == 0
        store = DecisionStore()
        accept(store, msg("MLB", 1, CIO, t=0.0, msg_id=1))
        assert purge_expired(store, 0.0) == 0

    def test_purge_drops_finished_cooldowns(self):
        store = DecisionStore()
        store.add_cooldown(cm_core.CooldownEntry("MLB", cell_target(1), 4.0))
        assert purge_expired(store, 4.0) == 1
        assert store.cooldowns() == []

    def test_log_order_and_roundtrip(self):
        cm = ConflictMitigation(prio("MRO"))
        cm.submit(msg("MRO", 1, TTT, t=0.0), 0.0)
        cm.submit(msg("MLB", 1, CIO, t=0.5), 0.5)
        cm.submit(msg("MLB", 2, CIO, t=0.5), 0.5)
        log = cm.log
        assert [m.msg_id for m, _ in log] == [1, 2, 3]
        assert ConflictMitigation(OFF).log == []
        buf = io.StringIO()
        cm_core.write_verdict_log(log, buf)
        lines = buf.getvalue().splitlines()
        assert len(lines) == 3
        back = cm_core.read_verdict_log(io.StringIO(buf.getvalue()))
        assert back == log

    def test_replay_reproduces_verdicts(self):
        cfg = prio("MRO", ttl=3.0, cooldown=2.0)
        cm = ConflictMitigation(cfg)
        rng = random.Random(4)
        t = 0.0
        for _ in range(300):
            t += rng.choice([0.0, 0.5, 1.0])
            m = msg(rng.choice(["MLB", "MRO"]), rng.randrange(4), rng.choice([CIO, TTT, HH]), t=t)
            cm.submit(m, t)
        replayed = cm_core.replay(cm.log, cfg)
        assert replayed == [v for _, v in cm.log]


# randomized streams


@pytest.mark.parametrize("seed", range(20))
def test_detection_matches_pairwise_scan(seed):
    rng = random.Random(seed)
    cfg = random_config(rng)
    stream = random_stream(rng, rng.randint(1, 400), rng.randint(1, 10))
    mismatches, _ = check_stream(cfg, stream)
    assert mismatches == 0


stream_st = st.lists(
    st.tuples(st.sampled_from(["MLB", "MRO"]), st.integers(0, 3), st.sampled_from(PARAMS),
              st.sampled_from([0.0, 0.5, 1.0, 3.0])),
    max_size=80,
)


def build(raw):
    t = 0.0
    out = []
    for x, cell, p, dt in raw:
        t += dt
        out.append(E2ControlMessage(x, cell_target(cell), p, 1.0, t))
    return out


@settings(max_examples=60, deadline=None)
@given(stream_st, st.sampled_from(["MLB", "MRO"]), st.floats(0.5, 10), st.floats(0, 10))
def test_cooldown_soundness(raw, priority, ttl, cooldown):
    cm = ConflictMitigation(prio(priority, ttl, cooldown))
    windows = []
    for m in build(raw):
        m, v = cm.submit(m, m.issued_at)
        if v.accepted:
            for x, target, start, end in windows:
                assert not (x == m.xapp_id and target == m.target and start < m.issued_at < end)
        entries = list(v.cooldowns_imposed)
        if v.cooldown_applied:
            entries.append(v.cooldown_applied)
        for e in entries:
            windows.append((e.xapp_id, e.target, m.issued_at, e.until))


@settings(max_examples=60, deadline=None)
@given(stream_st, st.sampled_from(["MLB", "MRO"]))
def test_single_xapp_is_never_in_conflict(raw, priority):
    cm = ConflictMitigation(prio(priority))
    for m in build(raw):
        m = E2ControlMessage("MLB", m.target, m.parameter, m.value, m.issued_at)
        _, v = cm.submit(m, m.issued_at)
        assert v.outcome is not Outcome.REJECTED_CONFLICT
    assert cm.store.cooldowns() == []


@settings(max_examples=60, deadline=None)
@given(stream_st)
def test_off_mode_accepts_all(raw):
    cm = ConflictMitigation(OFF)
    for m in build(raw):
        _, v = cm.submit(m, m.issued_at)
        assert v.outcome is Outcome.ACCEPTED


@settings(max_examples=60, deadline=None)
@given(stream_st, st.sampled_from(["MLB", "MRO"]))
def test_rejection_leaves_configuration_untouched(raw, priority):
    from oran_cm.xapps import apply_accepted
    from oran_cm.ran_model import CellState, SiteConfig, SiteKind

    site = SiteConfig((0.0, 0.0), 12, 26, 2100, 20, SiteKind.MICRO)
    cells = [CellState(i, site, 0.0, 100) for i in range(4)]
    cm = ConflictMitigation(prio(priority))
    for m in build(raw):
        if m.parameter == TILT:
            continue
        before = [(c.cio, c.ttt, c.hh) for c in cells]
        m, v = cm.submit(m, m.issued_at)
        apply_accepted(cells, [(m, v)])
        if not v.accepted:
            assert [(c.cio, c.ttt, c.hh) for c in cells] == before
