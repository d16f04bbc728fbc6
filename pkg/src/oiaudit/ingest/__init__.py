"""Exchange connectivity, normalization, durable capture and replay."""

from oiaudit.ingest.adapters import DeadLetterFile, NormalizedTick, normalize_payload
from oiaudit.ingest.capture import (
    BackpressureError,
    CaptureFormatError,
    CaptureReader,
    CaptureRecord,
    CaptureWriter,
    capture,
    replay,
)
from oiaudit.ingest.stream import ConnectorConfig, StreamHandle, connect_and_stream

__all__ = [
    "BackpressureError",
    "CaptureFormatError",
    "CaptureReader",
    "CaptureRecord",
    "CaptureWriter",
    "ConnectorConfig",
    "DeadLetterFile",
    "NormalizedTick",
    "StreamHandle",
    "capture",
    "connect_and_stream",
    "normalize_payload",
    "replay",
]
