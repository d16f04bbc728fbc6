"""Open-interest audit toolkit for perpetual swap markets.

Reconciles reported open-interest changes against reported trading volume
on a tick-by-tick basis, quantifies the excess that volume cannot explain,
and ships the supporting pipeline: venue ingestion and capture, a synthetic
exchange used as a ground-truth oracle, and report generation.
"""

from oiaudit.model import (
    Amount,
    ContractKind,
    EventKind,
    GapMarker,
    MarketEvent,
    MarketId,
    PeriodSpec,
    SubPeriod,
    Unit,
    convert,
    order_events,
)

__version__ = "0.1.0"

__all__ = [
    "Amount",
    "ContractKind",
    "EventKind",
    "GapMarker",
    "MarketEvent",
    "MarketId",
    "PeriodSpec",
    "SubPeriod",
    "Unit",
    "convert",
    "order_events",
    "__version__",
]
