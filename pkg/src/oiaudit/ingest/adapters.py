"""Data-driven normalization of venue payloads into audit events.

Each venue is described declaratively: which payloads carry trades,
liquidations or open interest, and where the timestamp, size and price
live inside them. Seven venues with near-identical message shapes do not
earn seven code paths; they earn seven tables. Payloads matching no rule
are never silently dropped: the caller quarantines them to a dead-letter
file.

Sizes are parsed exactly (Decimal, never float) and scaled by the
market's contract multiplier, so venues quoting contract counts map onto
the market's native unit. Integer-contract venues are a restriction the
decimal representation absorbs, not a conflict with it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Sequence, Union

from oiaudit.model import AuditError, EventKind, QUANTA_PER_UNIT

Path_ = tuple  # JSON path: tuple of dict keys / list indices


class ConfigError(AuditError):
    """Bad connector or adapter configuration."""


EXISTS = object()  # match sentinel: path must resolve to something non-None


@dataclass(frozen=True)
class Match:
    path: tuple
    value: Any = EXISTS
    op: str = "eq"  # "eq" | "prefix" | "contains" | "exists"


@dataclass(frozen=True)
class Rule:
    """How one payload family maps onto events."""

    name: str
    kind: EventKind
    where: tuple[Match, ...]
    ts: Union[tuple, None]           # None: stamp with local receipt time
    size: tuple
    records: Union[tuple, None] = None   # path to a list of records; () = payload is the list
    price: Union[tuple, None] = None
    ts_root: bool = False            # resolve ts against the payload root
    ts_iso: bool = False             # ISO-8601 timestamp instead of epoch ms
    block_flag: Union[tuple, None] = None      # truthy field promotes to BLOCK_TRADE
    liq_flag: Union[Match, None] = None        # match promotes to LIQUIDATION
    symbol: Union[tuple, None] = None          # per-record symbol filter


@dataclass(frozen=True)
class VenueDescriptor:
    name: str
    rules: tuple[Rule, ...]


@dataclass(frozen=True, slots=True)
class NormalizedTick:
    """Venue-independent event fields, before sequencing."""

    kind: EventKind
    ts: int
    size_quanta: int
    price: Union[Decimal, None]
    ts_from_venue: bool


def _get(obj: Any, path: tuple) -> Any:
    cur = obj
    for step in path:
        if isinstance(step, int):
            if not isinstance(cur, list) or step >= len(cur):
                return None
            cur = cur[step]
        else:
            if not isinstance(cur, dict):
                return None
            cur = cur.get(step)
        if cur is None:
            return None
    return cur


def _matches(payload: Any, m: Match) -> bool:
    got = _get(payload, m.path)
    if m.value is EXISTS or m.op == "exists":
        return got is not None
    if got is None:
        return False
    if m.op == "eq":
        return got == m.value
    if m.op == "prefix":
        return isinstance(got, str) and got.startswith(m.value)
    if m.op == "contains":
        return isinstance(got, str) and m.value in got
    raise ConfigError(f"unknown match op {m.op!r}")


def _parse_ts(raw: Any, iso: bool) -> Union[int, None]:
    if raw is None:
        return None
    if iso:
        try:
            text = str(raw).replace("Z", "+00:00")
            dt = datetime.fromisoformat(text)
        except ValueError:
            return None
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return int(dt.timestamp() * 1000)
    try:
        return int(raw)
    except (TypeError, ValueError):
        return None


def _parse_size_quanta(raw: Any, multiplier: Decimal) -> Union[int, None]:
    try:
        size = Decimal(str(raw)) * multiplier
    except (InvalidOperation, TypeError):
        return None
    quanta = int(size * QUANTA_PER_UNIT)
    return quanta if quanta >= 0 else None


def _parse_price(raw: Any) -> Union[Decimal, None]:
    if raw is None:
        return None
    try:
        px = Decimal(str(raw))
    except (InvalidOperation, TypeError):
        return None
    return px if px > 0 else None


def normalize_payload(
    descriptor: VenueDescriptor,
    payload: Any,
    *,
    symbol: Union[str, None] = None,
    multiplier: Decimal = Decimal(1),
    recv_ts: int = 0,
) -> Union[list[NormalizedTick], None]:
    """Map one venue payload to zero or more ticks.

    Returns None when no rule recognizes the payload (dead-letter it) and
    [] when a rule matched but every record was filtered out (e.g. other
    symbols in a shared feed).
    """
    for rule in descriptor.rules:
        if not all(_matches(payload, m) for m in rule.where):
            continue
        if rule.records is None:
            records: list[Any] = [payload]
        elif rule.records == ():
            if not isinstance(payload, list):
                return None
            records = payload
        else:
            got = _get(payload, rule.records)
            if not isinstance(got, list):
                return None
            records = got

        out: list[NormalizedTick] = []
        for rec in records:
            if rule.symbol is not None and symbol is not None:
                rec_sym = _get(rec, rule.symbol)
                if not isinstance(rec_sym, str) or rec_sym.lower() != symbol.lower():
                    continue
            ts_source = payload if rule.ts_root else rec
            ts = _parse_ts(_get(ts_source, rule.ts), rule.ts_iso) if rule.ts else None
            from_venue = ts is not None
            if ts is None:
                ts = recv_ts
            size_q = _parse_size_quanta(_get(rec, rule.size), multiplier)
            if size_q is None or ts <= 0:
                return None  # matched but unreadable: quarantine whole payload
            kind = rule.kind
            if rule.liq_flag is not None and _matches(rec, rule.liq_flag):
                kind = EventKind.LIQUIDATION
            elif rule.block_flag is not None and bool(_get(rec, rule.block_flag)):
                kind = EventKind.BLOCK_TRADE
            price = _parse_price(_get(rec, rule.price)) if rule.price else None
            if kind is not EventKind.OI_SAMPLE and (size_q == 0 or price is None):
                return None
            out.append(NormalizedTick(kind, ts, size_q, price, from_venue))
        return out
    return None


# ---------------------------------------------------------------------------
# Venue descriptor table
# ---------------------------------------------------------------------------

DESCRIPTORS: dict[str, VenueDescriptor] = {
    "binance": VenueDescriptor(
        "binance",
        rules=(
            Rule(
                name="trade",
                kind=EventKind.TRADE,
                where=(Match(("e",), "aggTrade"),),
                ts=("T",),
                size=("q",),
                price=("p",),
            ),
            Rule(
                name="liquidation",
                kind=EventKind.LIQUIDATION,
                where=(Match(("e",), "forceOrder"),),
                ts=("o", "T"),
                size=("o", "q"),
                price=("o", "ap"),
            ),
            Rule(
                name="oi",
                kind=EventKind.OI_SAMPLE,
                where=(Match(("openInterest",),),),
                ts=("time",),
                size=("openInterest",),
            ),
        ),
    ),
    "bybit": VenueDescriptor(
        "bybit",
        rules=(
            Rule(
                name="trade",
                kind=EventKind.TRADE,
                where=(Match(("topic",), "publicTrade.", op="prefix"),),
                records=("data",),
                ts=("T",),
                size=("v",),
                price=("p",),
                block_flag=("BT",),
            ),
            Rule(
                name="liquidation",
                kind=EventKind.LIQUIDATION,
                where=(Match(("topic",), "liquidation.", op="prefix"),),
                ts=("data", "updatedTime"),
                size=("data", "size"),
                price=("data", "price"),
            ),
            Rule(
                name="oi",
                kind=EventKind.OI_SAMPLE,
                where=(Match(("result", "list", 0, "openInterest"),),),
                records=("result", "list"),
                ts=("timestamp",),
                size=("openInterest",),
            ),
        ),
    ),
    "okx": VenueDescriptor(
        "okx",
        rules=(
            Rule(
                name="trade",
                kind=EventKind.TRADE,
                where=(Match(("arg", "channel"), "trades"),),
                records=("data",),
                ts=("ts",),
                size=("sz",),
                price=("px",),
            ),
            Rule(
                name="liquidation",
                kind=EventKind.LIQUIDATION,
                where=(Match(("arg", "channel"), "liquidation-orders"),),
                records=("data", 0, "details"),
                ts=("ts",),
                size=("sz",),
                price=("bkPx",),
            ),
            Rule(
                name="oi_push",
                kind=EventKind.OI_SAMPLE,
                where=(Match(("arg", "channel"), "open-interest"),),
                records=("data",),
                ts=("ts",),
                size=("oi",),
            ),
            Rule(
                name="oi_poll",
                kind=EventKind.OI_SAMPLE,
                where=(Match(("data", 0, "oi"),),),
                records=("data",),
                ts=("ts",),
                size=("oi",),
            ),
        ),
    ),
    "bitmex": VenueDescriptor(
        "bitmex",
        rules=(
            Rule(
                name="trade",
                kind=EventKind.TRADE,
                where=(Match(("table",), "trade"),),
                records=("data",),
                ts=("timestamp",),
                ts_iso=True,
                size=("size",),
                price=("price",),
            ),
            Rule(
                # the liquidation table carries no event timestamp;
                # such events are stamped with local receipt time
                name="liquidation",
                kind=EventKind.LIQUIDATION,
                where=(Match(("table",), "liquidation"),),
                records=("data",),
                ts=None,
                size=("leavesQty",),
                price=("price",),
            ),
            Rule(
                name="oi",
                kind=EventKind.OI_SAMPLE,
                where=(Match((0, "openInterest"),),),
                records=(),
                ts=("timestamp",),
                ts_iso=True,
                size=("openInterest",),
                symbol=("symbol",),
            ),
        ),
    ),
    "deribit": VenueDescriptor(
        "deribit",
        rules=(
            Rule(
                name="trade",
                kind=EventKind.TRADE,
                where=(Match(("params", "channel"), "trades.", op="prefix"),),
                records=("params", "data"),
                ts=("timestamp",),
                size=("amount",),
                price=("price",),
                liq_flag=Match(("liquidation",)),
                block_flag=("block_trade_id",),
            ),
            Rule(
                name="oi",
                kind=EventKind.OI_SAMPLE,
                where=(Match(("result", "open_interest"),),),
                ts=("result", "timestamp"),
                size=("result", "open_interest"),
            ),
        ),
    ),
    "kraken": VenueDescriptor(
        "kraken",
        rules=(
            Rule(
                name="trade",
                kind=EventKind.TRADE,
                where=(Match(("feed",), "trade"), Match(("qty",),)),
                ts=("time",),
                size=("qty",),
                price=("price",),
                liq_flag=Match(("type",), "liquidation"),
            ),
            Rule(
                name="oi",
                kind=EventKind.OI_SAMPLE,
                where=(Match(("tickers", 0, "openInterest"),),),
                records=("tickers",),
                ts=("lastTime",),
                ts_iso=True,
                size=("openInterest",),
                symbol=("symbol",),
            ),
        ),
    ),
    "htx": VenueDescriptor(
        "htx",
        rules=(
            Rule(
                name="trade",
                kind=EventKind.TRADE,
                where=(Match(("ch",), ".trade.detail", op="contains"),),
                records=("tick", "data"),
                ts=("ts",),
                size=("amount",),
                price=("price",),
            ),
            Rule(
                name="liquidation",
                kind=EventKind.LIQUIDATION,
                where=(Match(("topic",), ".liquidation_orders", op="contains"),),
                records=("data",),
                ts=("created_at",),
                size=("volume",),
                price=("price",),
            ),
            Rule(
                name="oi",
                kind=EventKind.OI_SAMPLE,
                where=(Match(("status",), "ok"), Match(("data", 0, "volume"),)),
                records=("data",),
                ts=("ts",),
                ts_root=True,
                size=("volume",),
                symbol=("contract_code",),
            ),
        ),
    ),
}


def get_descriptor(venue: str) -> VenueDescriptor:
    try:
        return DESCRIPTORS[venue.lower()]
    except KeyError:
        raise ConfigError(
            f"no adapter descriptor for venue {venue!r}; "
            f"known: {', '.join(sorted(DESCRIPTORS))}"
        ) from None


class DeadLetterFile:
    """Quarantine for unrecognized payloads: one JSON line per payload
    with its receipt timestamp. Nothing is silently dropped."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._fh = open(self.path, "a", encoding="utf-8")
        self.count = 0

    def put(self, raw: Union[str, bytes], recv_ts: int) -> None:
        text = raw.decode("utf-8", errors="replace") if isinstance(raw, bytes) else raw
        self._fh.write(json.dumps({"recv_ts": recv_ts, "raw": text}) + "\n")
        self._fh.flush()
        self.count += 1

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> "DeadLetterFile":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
