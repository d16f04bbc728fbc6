"""Live venue connectivity: websocket streams plus periodic OI polling.

One connection task per feed, normalizing into a single per-market sink
with a monotone sequence number. Disconnects reconnect with backoff and
leave a gap marker behind so reconciliation can invalidate the intervals
the outage touched. Transports are injectable, which is how the test
suite drives the full path against a scripted local venue without real
network access.
"""

from __future__ import annotations

import asyncio
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Awaitable, Callable, Protocol, Union

from oiaudit.ingest.adapters import (
    ConfigError,
    DeadLetterFile,
    NormalizedTick,
    get_descriptor,
    normalize_payload,
)
from oiaudit.model import (
    Amount,
    AuditError,
    EventKind,
    GapMarker,
    MarketEvent,
    MarketId,
    StreamItem,
)

log = logging.getLogger(__name__)

Sink = Callable[[StreamItem, int], None]
Clock = Callable[[], int]


class TerminalStreamError(AuditError):
    """Unrecoverable connector failure (auth/4xx); no retry."""


@dataclass(frozen=True)
class ConnectorConfig:
    """Connectivity for one market; endpoint strings live here, not in code."""

    market: MarketId
    ws_endpoint: str
    rest_oi_endpoint: str
    symbol_map: str
    oi_poll_ms: int = 500
    reconnect_backoff_ms: tuple[int, ...] = (500, 1000, 2000, 5000)
    contract_multiplier: Decimal = Decimal(1)
    clock_skew_ms: int = 5000
    subscribe_json: Union[str, None] = None
    oi_source: str = "poll"  # "poll" | "push" | "both"
    venue: Union[str, None] = None

    def __post_init__(self) -> None:
        if self.oi_poll_ms < 100:
            raise ConfigError("oi_poll_ms below the 100 ms rate-limit floor")
        if not self.reconnect_backoff_ms or min(self.reconnect_backoff_ms) <= 0:
            raise ConfigError("reconnect backoff schedule must be positive")
        if self.oi_source not in ("poll", "push", "both"):
            raise ConfigError(f"unknown oi_source {self.oi_source!r}")
        if self.contract_multiplier <= 0:
            raise ConfigError("contract multiplier must be positive")

    @property
    def venue_key(self) -> str:
        return self.venue or self.market.exchange.lower()


class Transport(Protocol):
    async def send(self, message: str) -> None: ...
    def __aiter__(self) -> Any: ...
    async def close(self) -> None: ...


TransportFactory = Callable[[ConnectorConfig], Awaitable[Transport]]
OiFetcher = Callable[[ConnectorConfig], Awaitable[Any]]


async def _default_transport(cfg: ConnectorConfig) -> Transport:
    import websockets

    try:
        return await websockets.connect(cfg.ws_endpoint, open_timeout=15)
    except Exception as exc:
        status = getattr(getattr(exc, "response", None), "status_code", None)
        if status is not None and 400 <= status < 500 and status not in (408, 429):
            raise TerminalStreamError(f"websocket handshake rejected: {status}") from exc
        raise


async def _default_oi_fetch(cfg: ConnectorConfig) -> Any:
    import httpx

    async with httpx.AsyncClient(timeout=10.0) as client:
        resp = await client.get(cfg.rest_oi_endpoint)
    if 400 <= resp.status_code < 500 and resp.status_code not in (408, 429):
        raise TerminalStreamError(
            f"OI endpoint rejected request: {resp.status_code}"
        )
    resp.raise_for_status()
    return resp.json()


def _now_ms() -> int:
    return int(time.time() * 1000)


@dataclass
class StreamStats:
    events: int = 0
    gaps: int = 0
    dead_letters: int = 0
    skew_violations: int = 0
    reconnects: int = 0
    oi_source_used: set = field(default_factory=set)


class StreamHandle:
    """Running connector; stop() is idempotent and joins the worker."""

    def __init__(self) -> None:
        self.stats = StreamStats()
        self.error: Union[Exception, None] = None
        self._thread: Union[threading.Thread, None] = None
        self._loop: Union[asyncio.AbstractEventLoop, None] = None
        self._stop_event: Union[asyncio.Event, None] = None
        self._started = threading.Event()

    def stop(self) -> None:
        loop, ev = self._loop, self._stop_event
        if loop is not None and ev is not None and loop.is_running():
            loop.call_soon_threadsafe(ev.set)

    def join(self, timeout: Union[float, None] = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def __enter__(self) -> "StreamHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
        self.join(timeout=30)


def connect_and_stream(
    cfg: ConnectorConfig,
    sink: Sink,
    *,
    transport_factory: Union[TransportFactory, None] = None,
    oi_fetch: Union[OiFetcher, None] = None,
    dead_letter: Union[DeadLetterFile, None] = None,
    clock: Union[Clock, None] = None,
) -> StreamHandle:
    """Start streaming normalized events for one market into `sink`.

    `sink(item, recv_ts)` is called from the connector thread in arrival
    order with a per-market monotone seq already assigned. A sink exception
    is terminal: the feed must never outrun capture silently.
    """
    descriptor = get_descriptor(cfg.venue_key)
    transport_factory = transport_factory or _default_transport
    oi_fetch = oi_fetch or _default_oi_fetch
    clock = clock or _now_ms

    handle = StreamHandle()
    runner = _Runner(cfg, descriptor, sink, transport_factory, oi_fetch,
                     dead_letter, clock, handle)
    thread = threading.Thread(target=runner.run, name=f"oiaudit-{cfg.market.key}",
                              daemon=True)
    handle._thread = thread
    thread.start()
    handle._started.wait(timeout=10)
    return handle


class _Runner:
    def __init__(self, cfg, descriptor, sink, transport_factory, oi_fetch,
                 dead_letter, clock, handle: StreamHandle):
        self.cfg = cfg
        self.descriptor = descriptor
        self.sink = sink
        self.transport_factory = transport_factory
        self.oi_fetch = oi_fetch
        self.dead_letter = dead_letter
        self.clock = clock
        self.handle = handle
        self.seq = 0
        self.stop_event: Union[asyncio.Event, None] = None

    def run(self) -> None:
        try:
            asyncio.run(self._main())
        except Exception as exc:
            self.handle.error = exc
        finally:
            self.handle._started.set()

    async def _main(self) -> None:
        self.stop_event = asyncio.Event()
        loop = asyncio.get_running_loop()
        self.handle._loop = loop
        self.handle._stop_event = self.stop_event
        self.handle._started.set()

        tasks = [asyncio.create_task(self._ws_loop())]
        if self.cfg.oi_source in ("poll", "both") and self.cfg.rest_oi_endpoint:
            tasks.append(asyncio.create_task(self._oi_loop()))
        stopper = asyncio.create_task(self.stop_event.wait())
        done, pending = await asyncio.wait(
            tasks + [stopper], return_when=asyncio.FIRST_COMPLETED
        )
        for t in done:
            if t is not stopper and t.exception() is not None:
                self.handle.error = t.exception()
        for t in pending:
            t.cancel()
        await asyncio.gather(*pending, return_exceptions=True)

    async def _sleep_or_stop(self, ms: int) -> bool:
        """Returns True when the sleep ran to completion (not stopped)."""
        try:
            await asyncio.wait_for(self.stop_event.wait(), timeout=ms / 1000.0)
            return False
        except asyncio.TimeoutError:
            return True

    def _emit_ticks(self, ticks: list[NormalizedTick], feed: str) -> None:
        cfg = self.cfg
        for tick in ticks:
            recv = self.clock()
            if tick.ts > recv + cfg.clock_skew_ms:
                self.handle.stats.skew_violations += 1
                log.warning(
                    "%s: event ts %d ahead of receipt %d beyond %d ms skew",
                    cfg.market.key, tick.ts, recv, cfg.clock_skew_ms,
                )
            ev = MarketEvent(
                market=cfg.market,
                ts=tick.ts,
                kind=tick.kind,
                size_or_value=Amount(tick.size_quanta, cfg.market.native_unit),
                price=tick.price,
                seq=self.seq,
            )
            self.seq += 1
            self.handle.stats.events += 1
            if tick.kind is EventKind.OI_SAMPLE:
                self.handle.stats.oi_source_used.add(feed)
            self.sink(ev, recv)

    def _emit_gap(self, start_ts: int, end_ts: int, reason: str) -> None:
        gap = GapMarker(
            market=self.cfg.market,
            ts_start=start_ts,
            ts_end=max(end_ts, start_ts),
            seq=self.seq,
            reason=reason,
        )
        self.seq += 1
        self.handle.stats.gaps += 1
        self.sink(gap, self.clock())

    def _quarantine(self, raw: Union[str, bytes]) -> None:
        self.handle.stats.dead_letters += 1
        if self.dead_letter is not None:
            self.dead_letter.put(raw, self.clock())
        else:
            log.warning("%s: unrecognized payload (no dead-letter file): %.200s",
                        self.cfg.market.key, raw)

    def _handle_raw(self, raw: Union[str, bytes], feed: str) -> None:
        try:
            payload = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError):
            self._quarantine(raw)
            return
        ticks = normalize_payload(
            self.descriptor,
            payload,
            symbol=self.cfg.symbol_map,
            multiplier=self.cfg.contract_multiplier,
            recv_ts=self.clock(),
        )
        if ticks is None:
            self._quarantine(raw)
            return
        self._emit_ticks(ticks, feed)

    async def _ws_loop(self) -> None:
        cfg = self.cfg
        backoff = cfg.reconnect_backoff_ms
        attempt = 0
        disconnected_at: Union[int, None] = None
        while not self.stop_event.is_set():
            try:
                conn = await self.transport_factory(cfg)
            except TerminalStreamError:
                raise
            except Exception as exc:
                if disconnected_at is None:
                    disconnected_at = self.clock()
                log.warning("%s: connect failed: %s", cfg.market.key, exc)
                if not await self._sleep_or_stop(backoff[min(attempt, len(backoff) - 1)]):
                    return
                attempt += 1
                continue

            if disconnected_at is not None:
                self._emit_gap(disconnected_at, self.clock(), "ws reconnect")
                self.handle.stats.reconnects += 1
                disconnected_at = None
            attempt = 0
            try:
                if cfg.subscribe_json:
                    await conn.send(cfg.subscribe_json)
                async for raw in conn:
                    self._handle_raw(raw, "push")
                    if self.stop_event.is_set():
                        break
            except (TerminalStreamError, AuditError):
                raise
            except Exception as exc:
                log.warning("%s: stream dropped: %s", cfg.market.key, exc)
            finally:
                try:
                    await conn.close()
                except Exception:
                    pass
            if self.stop_event.is_set():
                return
            # clean server close or error: both are outages to the audit
            disconnected_at = self.clock()
            if not await self._sleep_or_stop(backoff[0]):
                return

    async def _oi_loop(self) -> None:
        cfg = self.cfg
        backoff = cfg.reconnect_backoff_ms
        attempt = 0
        failed_at: Union[int, None] = None
        while not self.stop_event.is_set():
            try:
                payload = await self.oi_fetch(cfg)
            except TerminalStreamError:
                raise
            except Exception as exc:
                if failed_at is None:
                    failed_at = self.clock()
                log.warning("%s: OI poll failed: %s", cfg.market.key, exc)
                if not await self._sleep_or_stop(backoff[min(attempt, len(backoff) - 1)]):
                    return
                attempt += 1
                continue
            if failed_at is not None:
                self._emit_gap(failed_at, self.clock(), "oi poll outage")
                failed_at = None
            attempt = 0
            self._handle_raw(json.dumps(payload) if not isinstance(payload, (str, bytes)) else payload, "poll")
            if not await self._sleep_or_stop(cfg.oi_poll_ms):
                return
