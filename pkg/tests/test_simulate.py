"""Synthetic venue: bookkeeping, determinism, and reporting policies."""

from __future__ import annotations

import random
from decimal import Decimal

import pytest

from oiaudit.model import EventKind, SubPeriod, TRADE_KINDS
from oiaudit.reconcile import AuditConfig, build_intervals
from oiaudit.simulate import (
    PolicyKind,
    ReportingPolicy,
    ScenarioSpec,
    SizeDist,
    TruthLedger,
    apply_fill,
    generate,
    policy_apply,
)


def test_three_transaction_walkthrough():
    # four flat traders plus a pre-existing 40-short (l) with its long
    # counterpart (m): open 100, transfer 40, then settle 20
    pos = [0, 0, 0, 0, 0]  # i, j, k, l, m
    i, j, k, l, m = range(5)
    assert apply_fill(pos, m, l, 40) == 40  # stage l's short

    deltas = [
        apply_fill(pos, i, j, 100),  # both flat: new contracts
        apply_fill(pos, k, i, 40),   # transfer of 40 long from i to k
        apply_fill(pos, l, i, 20),   # short covers against long: settles 20
    ]
    assert deltas == [100, 0, -20]
    # relative OI trajectory over the script
    oi0 = 40
    trajectory = []
    level = oi0
    for d in deltas:
        level += d
        trajectory.append(level - oi0)
    assert trajectory == [100, 100, 80]


def test_apply_fill_conserves_longs_and_shorts():
    rng = random.Random(11)
    pos = [0] * 20
    oi = 0
    for _ in range(2000):
        b, s = rng.randrange(20), rng.randrange(20)
        if b == s:
            continue
        size = rng.randint(1, 500)
        delta = apply_fill(pos, b, s, size)
        oi += delta
        assert abs(delta) <= size
    assert sum(pos) == 0
    assert sum(p for p in pos if p > 0) == oi
    assert -sum(p for p in pos if p < 0) == oi


def test_identical_spec_identical_streams():
    spec = ScenarioSpec(n_steps=2000, rng_seed=77)
    a = generate(spec)
    b = generate(spec)
    assert a.true_stream == b.true_stream
    assert a.reported_stream == b.reported_stream


def test_truth_ledger_consistency():
    out = generate(ScenarioSpec(n_steps=3000, rng_seed=5))
    level = 0
    for row in out.truth.rows:
        if row.kind in TRADE_KINDS:
            assert abs(row.oi_delta_quanta) <= row.size_quanta
            level += row.oi_delta_quanta
        assert row.oi_after_quanta == level
        assert level >= 0


def test_true_stream_always_reconciles_per_interval():
    # volume covers |ΔOI| between consecutive OI reports by construction,
    # with no latency allowance needed
    for seed in (1, 2, 3):
        out = generate(ScenarioSpec(n_steps=4000, rng_seed=seed))
        ivs = build_intervals(out.true_stream, AuditConfig(tau_ms=0))
        assert all(iv.excess.quanta == 0 for iv in ivs)


def test_policy_identities():
    out = generate(ScenarioSpec(n_steps=500, rng_seed=9))
    for policy in (
        ReportingPolicy(),
        ReportingPolicy(kind=PolicyKind.DELAY, delay_ms=0),
        ReportingPolicy(kind=PolicyKind.HIDE, hide_fraction=0.0),
        ReportingPolicy(kind=PolicyKind.FABRICATE_OI, fabricate_amplitude=Decimal(0)),
    ):
        assert policy_apply(policy, out.true_stream, seed=9) == out.true_stream


def test_delay_shifts_only_selected_kinds():
    out = generate(ScenarioSpec(n_steps=1000, rng_seed=13))
    policy = ReportingPolicy(kind=PolicyKind.DELAY, delay_ms=500)
    reported = policy_apply(policy, out.true_stream, seed=13)
    true_by_kind = {}
    for ev in out.true_stream:
        true_by_kind.setdefault(ev.kind, []).append(ev)
    rep_by_kind = {}
    for ev in reported:
        rep_by_kind.setdefault(ev.kind, []).append(ev)

    for kind in (EventKind.TRADE, EventKind.BLOCK_TRADE, EventKind.LIQUIDATION):
        before = true_by_kind.get(kind, [])
        after = rep_by_kind.get(kind, [])
        assert [e.ts + 500 for e in before] == [e.ts for e in after]
        assert [e.price for e in before] == [e.price for e in after]  # never re-priced
    assert [e.ts for e in true_by_kind[EventKind.OI_SAMPLE]] == \
           [e.ts for e in rep_by_kind[EventKind.OI_SAMPLE]]
    # reported stream is re-sequenced in arrival order
    assert [e.seq for e in reported] == list(range(len(reported)))
    assert all(reported[i].ts <= reported[i + 1].ts for i in range(len(reported) - 1))


def test_hide_removes_only_volume_never_oi():
    out = generate(ScenarioSpec(n_steps=2000, rng_seed=21, liq_fraction=0.5))
    policy = ReportingPolicy(kind=PolicyKind.HIDE, hide_fraction=0.5)
    reported = policy_apply(policy, out.true_stream, seed=21)
    assert policy_apply(policy, out.true_stream, seed=21) == reported  # seeded

    n_oi_true = sum(1 for e in out.true_stream if e.kind is EventKind.OI_SAMPLE)
    n_oi_rep = sum(1 for e in reported if e.kind is EventKind.OI_SAMPLE)
    assert n_oi_true == n_oi_rep

    n_trades_true = sum(1 for e in out.true_stream if e.kind is EventKind.TRADE)
    n_trades_rep = sum(1 for e in reported if e.kind is EventKind.TRADE)
    assert n_trades_true == n_trades_rep  # plain trades never hidden

    hideable_true = sum(1 for e in out.true_stream
                        if e.kind in (EventKind.LIQUIDATION, EventKind.BLOCK_TRADE))
    hideable_rep = sum(1 for e in reported
                       if e.kind in (EventKind.LIQUIDATION, EventKind.BLOCK_TRADE))
    assert hideable_rep < hideable_true


def test_hide_full_fraction_removes_everything_hideable():
    out = generate(ScenarioSpec(n_steps=1000, rng_seed=2, liq_fraction=0.5))
    reported = policy_apply(
        ReportingPolicy(kind=PolicyKind.HIDE, hide_fraction=1.0),
        out.true_stream, seed=2,
    )
    assert not any(e.kind in (EventKind.LIQUIDATION, EventKind.BLOCK_TRADE)
                   for e in reported)


def test_fabricate_bounded_and_trades_untouched():
    amp = Decimal("250")
    out = generate(ScenarioSpec(n_steps=1500, rng_seed=31))
    reported = policy_apply(
        ReportingPolicy(kind=PolicyKind.FABRICATE_OI, fabricate_amplitude=amp),
        out.true_stream, seed=31,
    )
    true_oi = [e for e in out.true_stream if e.kind is EventKind.OI_SAMPLE]
    rep_oi = [e for e in reported if e.kind is EventKind.OI_SAMPLE]
    assert len(true_oi) == len(rep_oi)
    amp_q = int(amp * 10**8)
    moved = 0
    for t, r in zip(true_oi, rep_oi):
        drift = abs(r.size_or_value.quanta - t.size_or_value.quanta)
        assert drift <= amp_q
        assert r.size_or_value.quanta >= 0
        moved += drift > 0
    assert moved > len(rep_oi) // 2
    rep_trades = [(e.ts, e.size_or_value, e.price) for e in reported if e.kind in TRADE_KINDS]
    true_trades = [(e.ts, e.size_or_value, e.price) for e in out.true_stream if e.kind in TRADE_KINDS]
    assert rep_trades == true_trades


def test_scenario_spec_json_round_trip(tmp_path):
    spec = ScenarioSpec(
        n_steps=123,
        rng_seed=9,
        trade_size_dist=SizeDist(kind="pareto", lo=Decimal("1"), hi=Decimal("50")),
        policy=ReportingPolicy(kind=PolicyKind.DELAY, delay_ms=750),
        burst=(0.5, 0.75),
    )
    path = tmp_path / "scenario.json"
    spec.save(path)
    assert ScenarioSpec.load(path) == spec


def test_truth_ledger_round_trip(tmp_path):
    out = generate(ScenarioSpec(
        n_steps=300, rng_seed=17,
        policy=ReportingPolicy(kind=PolicyKind.HIDE, hide_fraction=0.7),
    ))
    path = tmp_path / "truth.jsonl"
    out.truth.save(path)
    loaded = TruthLedger.load(path)
    assert loaded.market == out.truth.market
    assert loaded.rows == out.truth.rows
    assert loaded.hidden_volume_quanta() == out.truth.hidden_volume_quanta()


def test_invalid_specs_rejected():
    with pytest.raises(ValueError):
        ScenarioSpec(n_traders=1)
    with pytest.raises(ValueError):
        ScenarioSpec(case_probs=(0.9, 0.2, 0.1))
    with pytest.raises(ValueError):
        ReportingPolicy(kind=PolicyKind.HIDE, hide_fraction=1.5)
    with pytest.raises(ValueError):
        ReportingPolicy(kind=PolicyKind.DELAY, delay_ms=-1)
    with pytest.raises(ValueError):
        SizeDist(lo=Decimal("5"), hi=Decimal("1"))
