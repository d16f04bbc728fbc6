"""Unit-safe domain types shared by every stage of the audit pipeline.

Monetary quantities are fixed-point decimals with 8 fractional digits,
stored as an integer count of 1e-8 units ("quanta"). Sums are therefore
exact and independent of summation order, which matters when billions of
dollars of volume are accumulated one trade at a time. Display rounding
happens in the report layer, never here.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation, localcontext
from enum import Enum
from typing import Iterable, Sequence, Union

FRACTIONAL_DIGITS = 8
QUANTA_PER_UNIT = 10**FRACTIONAL_DIGITS

_QUANTUM = Decimal(1).scaleb(-FRACTIONAL_DIGITS)

#: Epoch ms for 2023-01-01T00:00:00Z, a convenient default origin for
#: synthetic streams.
EPOCH_2023 = 1_672_531_200_000


class AuditError(Exception):
    """Base class for all errors raised by this package."""


class UnitMismatchError(AuditError):
    """Arithmetic or conversion attempted across incompatible units."""


class OrderingError(AuditError):
    """Events violate the required (ts, seq) total order or mix markets."""


class Unit(Enum):
    USD = "USD"
    BASE_COIN = "BASE_COIN"


class ContractKind(Enum):
    LINEAR_PERP = "LINEAR_PERP"
    INVERSE_PERP = "INVERSE_PERP"

    @property
    def native_unit(self) -> Unit:
        # Inverse contracts denominate sizes and open interest in USD,
        # linear contracts in the base coin.
        if self is ContractKind.INVERSE_PERP:
            return Unit.USD
        return Unit.BASE_COIN


class EventKind(Enum):
    TRADE = "TRADE"
    BLOCK_TRADE = "BLOCK_TRADE"
    LIQUIDATION = "LIQUIDATION"
    OI_SAMPLE = "OI_SAMPLE"


TRADE_KINDS = frozenset(
    {EventKind.TRADE, EventKind.BLOCK_TRADE, EventKind.LIQUIDATION}
)


@dataclass(frozen=True, slots=True)
class Amount:
    """Non-negative fixed-point quantity tagged with its unit.

    `quanta` is the integer number of 1e-8 units. Signed deltas are
    computed transiently (see `abs_diff`) but never stored.
    """

    quanta: int
    unit: Unit

    def __post_init__(self) -> None:
        # hot path: exact-type checks, no hashing
        if self.quanta.__class__ is not int:
            raise TypeError(f"quanta must be int, got {type(self.quanta).__name__}")
        if self.quanta < 0:
            raise ValueError(f"Amount cannot be negative: {self.quanta} quanta")
        if self.unit.__class__ is not Unit:
            raise TypeError(f"unit must be Unit, got {type(self.unit).__name__}")

    @classmethod
    def from_decimal(cls, value: Union[Decimal, int, str], unit: Unit) -> "Amount":
        """Build from a decimal value, rounding half-even to 8 digits."""
        try:
            dec = value if isinstance(value, Decimal) else Decimal(value)
        except InvalidOperation as exc:
            raise ValueError(f"not a decimal value: {value!r}") from exc
        quanta = int(dec.scaleb(FRACTIONAL_DIGITS).quantize(Decimal(1), ROUND_HALF_EVEN))
        return cls(quanta, unit)

    @classmethod
    def zero(cls, unit: Unit) -> "Amount":
        return cls(0, unit)

    @property
    def value(self) -> Decimal:
        return Decimal(self.quanta).scaleb(-FRACTIONAL_DIGITS)

    @property
    def is_zero(self) -> bool:
        return self.quanta == 0

    def _check_unit(self, other: "Amount") -> None:
        if self.unit is not other.unit:
            raise UnitMismatchError(
                f"cannot combine {self.unit.value} with {other.unit.value}"
            )

    def __add__(self, other: "Amount") -> "Amount":
        self._check_unit(other)
        return Amount(self.quanta + other.quanta, self.unit)

    def __sub__(self, other: "Amount") -> "Amount":
        """Exact subtraction; negative results are a caller bug."""
        self._check_unit(other)
        if other.quanta > self.quanta:
            raise ValueError(
                f"subtraction would go negative: {self.value} - {other.value}"
            )
        return Amount(self.quanta - other.quanta, self.unit)

    def abs_diff(self, other: "Amount") -> "Amount":
        self._check_unit(other)
        return Amount(abs(self.quanta - other.quanta), self.unit)

    def saturating_sub(self, other: "Amount") -> "Amount":
        """max(self - other, 0); the per-interval excess operator."""
        self._check_unit(other)
        return Amount(max(self.quanta - other.quanta, 0), self.unit)

    def __lt__(self, other: "Amount") -> bool:
        self._check_unit(other)
        return self.quanta < other.quanta

    def __le__(self, other: "Amount") -> bool:
        self._check_unit(other)
        return self.quanta <= other.quanta

    def __gt__(self, other: "Amount") -> bool:
        self._check_unit(other)
        return self.quanta > other.quanta

    def __ge__(self, other: "Amount") -> bool:
        self._check_unit(other)
        return self.quanta >= other.quanta

    def __str__(self) -> str:
        return f"{self.value.normalize():f} {self.unit.value}"


def sum_amounts(amounts: Iterable[Amount], unit: Unit) -> Amount:
    """Exact sum; result is identical for any permutation of the input."""
    total = 0
    for a in amounts:
        if a.unit is not unit:
            raise UnitMismatchError(
                f"sum over {unit.value} hit a {a.unit.value} amount"
            )
        total += a.quanta
    return Amount(total, unit)


def convert(amount: Amount, avg_price: Decimal, target_unit: Unit) -> Amount:
    """Convert between USD and base-coin terms at a period-average price.

    BASE_COIN -> USD multiplies, USD -> BASE_COIN divides; the result is
    rounded half-even to 8 fractional digits. Same-unit conversion is a
    caller bug and is rejected.
    """
    if not isinstance(avg_price, Decimal):
        avg_price = Decimal(avg_price)
    if avg_price <= 0:
        raise ValueError(f"avg_price must be positive, got {avg_price}")
    if amount.unit is target_unit:
        raise UnitMismatchError(
            f"same-unit conversion requested ({target_unit.value})"
        )
    with localcontext() as ctx:
        ctx.prec = 60
        if target_unit is Unit.USD:
            raw = Decimal(amount.quanta) * avg_price
        else:
            raw = Decimal(amount.quanta) / avg_price
        quanta = int(raw.quantize(Decimal(1), ROUND_HALF_EVEN))
    return Amount(quanta, target_unit)


@dataclass(frozen=True, slots=True)
class MarketId:
    """A (trading pair, exchange) tuple plus its contract convention."""

    exchange: str
    symbol: str
    contract_kind: ContractKind
    native_unit: Unit

    def __post_init__(self) -> None:
        if not self.exchange or not self.symbol:
            raise ValueError("exchange and symbol must be non-empty")
        if self.native_unit is not self.contract_kind.native_unit:
            raise ValueError(
                f"{self.contract_kind.value} must denominate in "
                f"{self.contract_kind.native_unit.value}, got {self.native_unit.value}"
            )

    @classmethod
    def make(cls, exchange: str, symbol: str, contract_kind: ContractKind) -> "MarketId":
        return cls(exchange, symbol, contract_kind, contract_kind.native_unit)

    @property
    def key(self) -> str:
        return f"{self.exchange}:{self.symbol}"


@dataclass(frozen=True, slots=True)
class MarketEvent:
    """One normalized feed message: a trade-like fill or an OI sample.

    `size_or_value` holds the trade size for trade-like kinds and the open
    interest level for OI_SAMPLE, always in the market's native unit.
    `seq` is the per-market ingestion sequence number and breaks ties
    between events sharing a millisecond timestamp.
    """

    market: MarketId
    ts: int
    kind: EventKind
    size_or_value: Amount
    price: Union[Decimal, None]
    seq: int

    def __post_init__(self) -> None:
        if self.ts <= 0:
            raise ValueError(f"ts must be positive epoch ms, got {self.ts}")
        if self.size_or_value.unit is not self.market.native_unit:
            raise UnitMismatchError(
                f"event size in {self.size_or_value.unit.value} on a "
                f"{self.market.native_unit.value} market"
            )
        if self.kind is EventKind.OI_SAMPLE:
            if self.price is not None and self.price <= 0:
                raise ValueError("price must be positive when present")
        else:
            if self.size_or_value.quanta <= 0:
                raise ValueError(f"{self.kind.value} size must be strictly positive")
            if self.price is None or self.price <= 0:
                raise ValueError(f"{self.kind.value} requires a positive price")

    @property
    def sort_key(self) -> tuple:
        return (self.ts, self.seq)

    @property
    def is_trade(self) -> bool:
        return self.kind is not EventKind.OI_SAMPLE


@dataclass(frozen=True, slots=True)
class GapMarker:
    """Synthetic record of a feed outage; audit intervals it touches are
    invalidated instead of silently trusting partial data."""

    market: MarketId
    ts_start: int
    ts_end: int
    seq: int
    reason: str = "disconnect"

    def __post_init__(self) -> None:
        if self.ts_end < self.ts_start:
            raise ValueError(f"gap ends before it starts: {self.ts_start}..{self.ts_end}")

    @property
    def sort_key(self) -> tuple:
        return (self.ts_start, self.seq)


StreamItem = Union[MarketEvent, GapMarker]


class SubPeriod(Enum):
    """Calendar-aligned reporting granularities (UTC anchored)."""

    FULL = "full"
    D1 = "1d"
    H1 = "1h"
    MIN1 = "1min"

    @property
    def width_ms(self) -> Union[int, None]:
        return _SUBPERIOD_WIDTH[self]


_SUBPERIOD_WIDTH = {
    SubPeriod.FULL: None,
    SubPeriod.D1: 86_400_000,
    SubPeriod.H1: 3_600_000,
    SubPeriod.MIN1: 60_000,
}


@dataclass(frozen=True, slots=True)
class PeriodSpec:
    """Closed time range [start, end] in epoch ms, UTC anchored.

    When `subperiod` is not FULL, bucket boundaries fall on the absolute
    UTC calendar grid (midnight / top of hour / top of minute), not on
    offsets from `start`.
    """

    start: int
    end: int
    subperiod: SubPeriod = SubPeriod.FULL

    def __post_init__(self) -> None:
        if self.start >= self.end:
            raise ValueError(f"empty period: start={self.start} end={self.end}")

    def contains(self, ts: int) -> bool:
        return self.start <= ts <= self.end

    def buckets(self, granularity: SubPeriod) -> Iterable["PeriodSpec"]:
        """UTC-aligned buckets of `granularity` intersecting this period."""
        width = granularity.width_ms
        if width is None:
            yield PeriodSpec(self.start, self.end, SubPeriod.FULL)
            return
        first = self.start // width
        last = self.end // width
        for idx in range(first, last + 1):
            yield PeriodSpec(idx * width, (idx + 1) * width - 1, granularity)


def order_events(events: Sequence[MarketEvent]) -> list[MarketEvent]:
    """Deterministic total order by (ts, seq); stable and idempotent.

    All events must belong to one market; reconciliation never mixes
    markets in one pass.
    """
    market = None
    for ev in events:
        if market is None:
            market = ev.market
        elif ev.market != market:
            raise OrderingError(
                f"mixed markets in one stream: {market.key} and {ev.market.key}"
            )
    return sorted(events, key=lambda e: (e.ts, e.seq))


def order_stream(items: Sequence[StreamItem]) -> list[StreamItem]:
    """Order a mixed stream of events and gap markers by (ts, seq)."""
    return sorted(items, key=lambda it: it.sort_key)


def split_stream(items: Iterable[StreamItem]) -> tuple[list[MarketEvent], list[GapMarker]]:
    events: list[MarketEvent] = []
    gaps: list[GapMarker] = []
    for it in items:
        if isinstance(it, GapMarker):
            gaps.append(it)
        else:
            events.append(it)
    return events, gaps
