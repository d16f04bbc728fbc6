from __future__ import annotations

from decimal import Decimal

import pytest

from oiaudit.model import Amount, ContractKind, EventKind, MarketEvent, MarketId, Unit


def usd(x) -> Amount:
    return Amount.from_decimal(Decimal(str(x)), Unit.USD)


def btc(x) -> Amount:
    return Amount.from_decimal(Decimal(str(x)), Unit.BASE_COIN)


@pytest.fixture
def inverse_market() -> MarketId:
    return MarketId.make("testex", "BTC_USD_IP", ContractKind.INVERSE_PERP)


@pytest.fixture
def linear_market() -> MarketId:
    return MarketId.make("testex", "BTC_USDT_P", ContractKind.LINEAR_PERP)


def trade(market, ts, size, seq, price="20000", kind=EventKind.TRADE) -> MarketEvent:
    return MarketEvent(
        market=market,
        ts=ts,
        kind=kind,
        size_or_value=Amount.from_decimal(Decimal(str(size)), market.native_unit),
        price=Decimal(price),
        seq=seq,
    )


def oi_sample(market, ts, value, seq) -> MarketEvent:
    return MarketEvent(
        market=market,
        ts=ts,
        kind=EventKind.OI_SAMPLE,
        size_or_value=Amount.from_decimal(Decimal(str(value)), market.native_unit),
        price=None,
        seq=seq,
    )
