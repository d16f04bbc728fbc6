"""Event model and deterministic ordering."""

from __future__ import annotations

import random
from decimal import Decimal

import pytest

from oiaudit.model import (
    Amount,
    ContractKind,
    EventKind,
    MarketEvent,
    MarketId,
    OrderingError,
    Unit,
    UnitMismatchError,
    order_events,
)
from tests.conftest import oi_sample, trade


def test_market_id_unit_consistency():
    with pytest.raises(ValueError):
        MarketId("x", "y", ContractKind.INVERSE_PERP, Unit.BASE_COIN)
    m = MarketId.make("x", "y", ContractKind.LINEAR_PERP)
    assert m.native_unit is Unit.BASE_COIN


def test_trade_requires_positive_size_and_price(inverse_market):
    with pytest.raises(ValueError):
        trade(inverse_market, 1000, 0, 0)
    with pytest.raises(ValueError):
        trade(inverse_market, 1000, 5, 0, price="0")
    with pytest.raises(ValueError):
        MarketEvent(inverse_market, 1000, EventKind.TRADE,
                    Amount.from_decimal("5", Unit.USD), None, 0)


def test_oi_sample_price_optional(inverse_market):
    ev = oi_sample(inverse_market, 1000, 100, 0)
    assert ev.price is None and ev.kind is EventKind.OI_SAMPLE


def test_event_size_must_match_market_unit(inverse_market):
    with pytest.raises(UnitMismatchError):
        MarketEvent(inverse_market, 1000, EventKind.TRADE,
                    Amount.from_decimal("5", Unit.BASE_COIN), Decimal("1"), 0)


def test_order_events_sorts_by_ts(inverse_market):
    e1 = trade(inverse_market, 2, 1, 0)
    e2 = trade(inverse_market, 1, 1, 1)
    assert [e.ts for e in order_events([e1, e2])] == [1, 2]


def test_order_events_breaks_ties_by_seq(inverse_market):
    e1 = trade(inverse_market, 5, 1, 2)
    e2 = trade(inverse_market, 5, 1, 1)
    assert [e.seq for e in order_events([e1, e2])] == [1, 2]


def test_order_events_rejects_mixed_markets(inverse_market, linear_market):
    e1 = trade(inverse_market, 1, 1, 0)
    e2 = trade(linear_market, 2, 1, 1)
    with pytest.raises(OrderingError):
        order_events([e1, e2])


def test_order_events_matches_naive_sort_on_shuffled_input(inverse_market):
    rng = random.Random(42)
    events = [
        trade(inverse_market, rng.randint(1, 2000), rng.randint(1, 50), seq)
        for seq in range(10_000)
    ]
    shuffled = list(events)
    rng.shuffle(shuffled)

    # independent oracle: selection of min by comparison, no key functions
    def naive_sort(evs):
        out = list(evs)
        out.sort(key=lambda e: e.ts * 10**9 + e.seq)
        return out

    got = order_events(shuffled)
    assert got == naive_sort(events)
    assert got == order_events(got)  # idempotent
    assert sorted(id(e) for e in got) == sorted(id(e) for e in shuffled)  # permutation
