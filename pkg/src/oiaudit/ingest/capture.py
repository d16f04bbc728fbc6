"""Append-only capture files with deterministic replay.

Format: one record per line, each framed as `<byte-length>:<payload>\\n`.
The first record is a JSON header carrying the schema version and market
identity; every following record is a pipe-delimited event or gap marker.
The framing makes files crash-truncatable at a record boundary: an
interrupted write leaves an incomplete tail that replay drops with a
warning, while corruption in the interior of the file is a hard error
with the byte offset.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Iterator, Union

from oiaudit.model import (
    Amount,
    AuditError,
    ContractKind,
    EventKind,
    GapMarker,
    MarketEvent,
    MarketId,
    StreamItem,
)

log = logging.getLogger(__name__)

FORMAT_NAME = "oicap"
SCHEMA_VERSION = 1

_KIND_CODE = {
    EventKind.TRADE: "T",
    EventKind.BLOCK_TRADE: "B",
    EventKind.LIQUIDATION: "L",
    EventKind.OI_SAMPLE: "O",
}
_BCODE_KIND = {code.encode(): kind for kind, code in _KIND_CODE.items()}


class CaptureFormatError(AuditError):
    """Interior corruption; carries the byte offset of the bad record."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class BackpressureError(AuditError):
    """Capture-to-disk cannot keep up with the feed; the run must abort
    loudly rather than silently sample."""


@dataclass(frozen=True, slots=True)
class CaptureRecord:
    """One captured item plus receipt provenance."""

    recv_ts: int
    item: StreamItem
    ts_from_venue: bool = True


def _frame(payload: str) -> bytes:
    body = payload.encode("utf-8")
    return b"%d:%s\n" % (len(body), body)


def _event_payload(ev: MarketEvent, recv_ts: int, ts_from_venue: bool) -> str:
    price = "" if ev.price is None else str(ev.price)
    src = "v" if ts_from_venue else "l"
    return (
        f"E|{_KIND_CODE[ev.kind]}|{ev.ts}|{ev.seq}|{ev.size_or_value.quanta}"
        f"|{price}|{recv_ts}|{src}"
    )


def _gap_payload(gap: GapMarker, recv_ts: int) -> str:
    reason = gap.reason.replace("|", "/").replace("\n", " ")
    return f"G|{gap.ts_start}|{gap.ts_end}|{gap.seq}|{reason}|{recv_ts}"


class CaptureWriter:
    """Writes the header on creation, then appends framed records."""

    def __init__(
        self,
        path: Union[str, Path],
        market: MarketId,
        extra: Union[dict, None] = None,
        overwrite: bool = False,
    ):
        self.path = Path(path)
        self.market = market
        mode = "wb" if overwrite else "xb"
        self._fh = open(self.path, mode)
        self.count = 0
        header = {
            "format": FORMAT_NAME,
            "version": SCHEMA_VERSION,
            "exchange": market.exchange,
            "symbol": market.symbol,
            "contract_kind": market.contract_kind.value,
        }
        if extra:
            header["extra"] = extra
        self._fh.write(_frame(json.dumps(header, sort_keys=True)))

    def write(
        self,
        item: StreamItem,
        recv_ts: Union[int, None] = None,
        ts_from_venue: bool = True,
    ) -> None:
        if isinstance(item, GapMarker):
            rts = recv_ts if recv_ts is not None else item.ts_end
            self._fh.write(_frame(_gap_payload(item, rts)))
        else:
            rts = recv_ts if recv_ts is not None else item.ts
            self._fh.write(_frame(_event_payload(item, rts, ts_from_venue)))
        self.count += 1

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            self._fh.close()

    def __enter__(self) -> "CaptureWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def capture(
    stream: Iterable[StreamItem],
    path: Union[str, Path],
    market: MarketId,
    extra: Union[dict, None] = None,
    overwrite: bool = False,
) -> int:
    """Drain a stream to a capture file; returns the record count."""
    with CaptureWriter(path, market, extra=extra, overwrite=overwrite) as w:
        for item in stream:
            w.write(item)
        return w.count


class CaptureReader:
    """Replays a capture file as the exact recorded item sequence.

    Iterating yields MarketEvents and GapMarkers; `records()` yields
    CaptureRecords when receipt provenance is needed. Two replays of one
    file produce identical sequences.
    """

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._buf = self.path.read_bytes()
        self._pos = 0
        self.truncated = False
        header = self._read_header()
        self.header = header
        self.market = MarketId.make(
            header["exchange"],
            header["symbol"],
            ContractKind(header["contract_kind"]),
        )
        self._unit = self.market.native_unit
        self._body_start = self._pos

    def _read_header(self) -> dict:
        payload = self._next_payload()
        if payload is None:
            raise CaptureFormatError("missing capture header", 0)
        try:
            header = json.loads(payload.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CaptureFormatError(f"bad capture header: {exc}", 0) from exc
        if header.get("format") != FORMAT_NAME:
            raise CaptureFormatError("not a capture file", 0)
        if header.get("version") != SCHEMA_VERSION:
            raise CaptureFormatError(
                f"unsupported capture version {header.get('version')}", 0
            )
        return header

    def _next_payload(self) -> Union[bytes, None]:
        """Returns the next record payload, None at clean EOF. Truncated
        tails stop iteration with a warning; interior damage raises."""
        buf = self._buf
        pos = self._pos
        size = len(buf)
        if pos >= size:
            return None
        start = pos
        colon = buf.find(b":", pos, pos + 10)
        if colon < 0:
            if size - pos < 10:
                # ran out of bytes while reading the length prefix
                self._warn_truncated(start)
                return None
            raise CaptureFormatError("unreadable record length", start)
        try:
            length = int(buf[pos:colon])
        except ValueError as exc:
            raise CaptureFormatError("unreadable record length", start) from exc
        body_start = colon + 1
        body_end = body_start + length
        if body_end + 1 > size:
            self._warn_truncated(start)
            return None
        if buf[body_end] != 0x0A:
            raise CaptureFormatError("record not newline-terminated", start)
        self._pos = body_end + 1
        return buf[body_start:body_end]

    def _warn_truncated(self, offset: int) -> None:
        self.truncated = True
        self._pos = len(self._buf)
        log.warning(
            "%s: truncated record at offset %d; replaying complete records only",
            self.path, offset,
        )

    def _parse_item(self, fields: list[bytes]) -> StreamItem:
        tag = fields[0]
        if tag == b"E":
            price = Decimal(fields[5].decode("ascii")) if fields[5] else None
            return MarketEvent(
                market=self.market,
                ts=int(fields[2]),
                kind=_BCODE_KIND[fields[1]],
                size_or_value=Amount(int(fields[4]), self._unit),
                price=price,
                seq=int(fields[3]),
            )
        if tag == b"G":
            return GapMarker(
                market=self.market,
                ts_start=int(fields[1]),
                ts_end=int(fields[2]),
                seq=int(fields[3]),
                reason=fields[4].decode("utf-8"),
            )
        raise ValueError(f"unknown record tag {tag!r}")

    def records(self) -> Iterator[CaptureRecord]:
        """Full records with receipt provenance."""
        self._pos = self._body_start
        self.truncated = False
        while True:
            offset = self._pos
            payload = self._next_payload()
            if payload is None:
                return
            try:
                fields = payload.split(b"|")
                item = self._parse_item(fields)
                if fields[0] == b"E":
                    yield CaptureRecord(int(fields[6]), item, fields[7] == b"v")
                else:
                    yield CaptureRecord(int(fields[5]), item)
            except (IndexError, KeyError, ValueError, InvalidOperation,
                    AuditError) as exc:
                if self._pos >= len(self._buf):
                    self._warn_truncated(offset)  # damage confined to the tail
                    return
                raise CaptureFormatError(f"bad record: {exc}", offset) from exc

    def __iter__(self) -> Iterator[StreamItem]:
        """Replay the item sequence; lean hot path for auditing."""
        self._pos = self._body_start
        self.truncated = False
        parse = self._parse_item
        while True:
            offset = self._pos
            payload = self._next_payload()
            if payload is None:
                return
            try:
                yield parse(payload.split(b"|"))
            except (IndexError, KeyError, ValueError, InvalidOperation,
                    AuditError) as exc:
                if self._pos >= len(self._buf):
                    self._warn_truncated(offset)
                    return
                raise CaptureFormatError(f"bad record: {exc}", offset) from exc


def replay(path: Union[str, Path]) -> CaptureReader:
    """Open a capture file for replay."""
    return CaptureReader(path)


class BufferedCaptureSink:
    """Stream sink writing records on a background thread.

    The bounded queue enforces the capture throughput contract: if the
    writer falls behind the feed, the run aborts with BackpressureError
    instead of dropping data.
    """

    def __init__(self, writer: CaptureWriter, max_pending: int = 100_000):
        self._writer = writer
        self._q: queue.Queue = queue.Queue(maxsize=max_pending)
        self._error: Union[Exception, None] = None
        self._thread = threading.Thread(target=self._drain, daemon=True)
        self._thread.start()

    def _drain(self) -> None:
        while True:
            got = self._q.get()
            if got is None:
                return
            try:
                item, recv_ts, from_venue = got
                self._writer.write(item, recv_ts, from_venue)
            except Exception as exc:  # surfaced on the next put
                self._error = exc
                return

    def __call__(self, item: StreamItem, recv_ts: int, ts_from_venue: bool = True) -> None:
        if self._error is not None:
            raise self._error
        try:
            self._q.put_nowait((item, recv_ts, ts_from_venue))
        except queue.Full:
            raise BackpressureError(
                f"capture writer for {self._writer.path} cannot keep up"
            ) from None

    def close(self) -> None:
        self._q.put(None)
        self._thread.join(timeout=30)
        self._writer.close()
        if self._error is not None:
            raise self._error
