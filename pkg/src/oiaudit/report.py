"""Report assembly: period tables, sub-period statistics tables, tick
series, and the run manifest.

All display rounding lives here. Tables come in two forms: aligned text
for humans and tab-separated values for machines, both deterministic for
a given input (rows sort by descending excess, then exchange, then
symbol). Every USD-converted figure is printed next to the native figure
and the average price used for the conversion.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Sequence, Union

from oiaudit import __version__
from oiaudit.model import (
    Amount,
    GapMarker,
    MarketEvent,
    MarketId,
    PeriodSpec,
    StreamItem,
    SubPeriod,
    TRADE_KINDS,
    Unit,
    convert,
    split_stream,
)
from oiaudit.reconcile import (
    AuditConfig,
    IntervalLedger,
    PeriodAudit,
    TickPoint,
    aggregate,
    aggregate_buckets,
    build_intervals,
    tick_excess_series,
)
from oiaudit.stats import StatsError, SubPeriodStats, avg_price, subperiod_stats

BTC_SIGN = "₿"


@dataclass
class MarketReport:
    """Everything the report layer knows about one audited market."""

    market: MarketId
    full: PeriodAudit
    buckets: dict[SubPeriod, list[PeriodAudit]]
    stats: dict[SubPeriod, Union[SubPeriodStats, None]]
    series: list[TickPoint]
    intervals: list[IntervalLedger]
    avg_price: Union[Decimal, None]

    @property
    def coverage(self) -> Fraction:
        total = len(self.intervals)
        if total == 0:
            return Fraction(0)
        valid = sum(1 for iv in self.intervals if iv.valid)
        return Fraction(valid, total)


def audit_stream(
    items: Sequence[StreamItem],
    cfg: AuditConfig,
    period: Union[PeriodSpec, None] = None,
    subperiods: Sequence[SubPeriod] = (SubPeriod.D1, SubPeriod.H1, SubPeriod.MIN1),
    price_events: Union[Sequence[MarketEvent], None] = None,
) -> MarketReport:
    """Run the full audit for one market's ordered stream.

    `period` defaults to the span of the open-interest feed. `price_events`
    overrides the feed used for the period-average price (a reference
    market), defaulting to the stream's own trades.
    """
    events, gaps = split_stream(items)
    if not events:
        raise ValueError("empty stream")
    market = events[0].market
    intervals = build_intervals(items, cfg)

    if period is None:
        start = intervals[0].t_start
        end = max(intervals[-1].t_end, start + 1)
        period = PeriodSpec(start, end)
    else:
        intervals = [iv for iv in intervals if period.contains(iv.t_end)]

    full = aggregate(
        intervals,
        period,
        market,
        gap_overlap=any(g.ts_start <= period.end and g.ts_end >= period.start for g in gaps),
    )

    price_src = price_events if price_events is not None else events
    try:
        px = avg_price(price_src, period)
    except StatsError:
        px = None

    buckets: dict[SubPeriod, list[PeriodAudit]] = {}
    stats: dict[SubPeriod, Union[SubPeriodStats, None]] = {}
    for gran in subperiods:
        if gran is SubPeriod.FULL:
            buckets[gran] = [full]
        else:
            buckets[gran] = aggregate_buckets(intervals, period, market, gran, gaps)
        try:
            stats[gran] = subperiod_stats(buckets[gran], avg_price=px)
        except StatsError:
            stats[gran] = None

    return MarketReport(
        market=market,
        full=full,
        buckets=buckets,
        stats=stats,
        series=tick_excess_series(intervals),
        intervals=intervals,
        avg_price=px,
    )


# ---------------------------------------------------------------------------
# Formatting
# ---------------------------------------------------------------------------

def _trim(text: str) -> str:
    return text.rstrip("0").rstrip(".") if "." in text else text


def fmt_usd_compact(value: Decimal) -> str:
    """$45.66B-style figure: two decimals of B/M/K, trailing zeros trimmed."""
    sign = "-" if value < 0 else ""
    v = abs(value)
    for bound, suffix in ((Decimal(10) ** 9, "B"), (Decimal(10) ** 6, "M"),
                          (Decimal(10) ** 3, "K")):
        if v >= bound:
            return f"{sign}${_trim(f'{(v / bound):.2f}')}{suffix}"
    return f"{sign}${_trim(f'{v:.2f}')}"


def fmt_native(amount: Amount) -> str:
    """Native-unit display: whole units with thousands separators, keeping
    decimals only for small quantities where rounding would hide them."""
    sym = "$" if amount.unit is Unit.USD else BTC_SIGN
    v = amount.value
    if v == v.to_integral_value() or v >= 100:
        whole = int(v.quantize(Decimal(1), ROUND_HALF_EVEN))
        return f"{sym}{whole:,}"
    return f"{sym}{_trim(f'{v:.8f}')}"


def fmt_amount_cell(amount: Amount, px: Union[Decimal, None]) -> str:
    """Native figure, with the USD equivalent in parentheses for base-coin
    amounts when a conversion price is available."""
    text = fmt_native(amount)
    if amount.unit is Unit.BASE_COIN and px is not None:
        usd = convert(amount, px, Unit.USD)
        text += f" ({fmt_usd_compact(usd.value)})"
    return text


def fmt_pct(p: Fraction) -> str:
    dec = (Decimal(p.numerator) * 100 / Decimal(p.denominator)).quantize(
        Decimal("0.1"), ROUND_HALF_EVEN
    )
    return f"{dec}%"


def _usd_value(amount: Amount, px: Union[Decimal, None]) -> Decimal:
    if amount.unit is Unit.USD:
        return amount.value
    if px is None:
        return Decimal(0)
    return convert(amount, px, Unit.USD).value


def _text_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def line(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(headers), sep] + [line(r) for r in rows]) + "\n"


def _tsv(headers: list[str], rows: list[list[str]]) -> str:
    out = ["\t".join(headers)]
    out += ["\t".join(r) for r in rows]
    return "\n".join(out) + "\n"


def period_table(reports: Sequence[MarketReport]) -> tuple[str, str]:
    """Period totals per market: O_TV, V_T and X_TV, largest excess first."""
    ordered = sorted(
        reports,
        key=lambda r: (-_usd_value(r.full.x_tv, r.avg_price),
                       r.market.exchange, r.market.symbol),
    )
    headers = ["Exchange", "Symbol", "O_TV", "V_T", "X_TV"]
    text_rows = []
    tsv_rows = []
    for r in ordered:
        px = r.avg_price
        text_rows.append([
            r.market.exchange,
            r.market.symbol,
            fmt_amount_cell(r.full.o_tv, px),
            fmt_amount_cell(r.full.v_t, px),
            fmt_amount_cell(r.full.x_tv, px),
        ])
        tsv_rows.append([
            r.market.exchange,
            r.market.symbol,
            r.market.contract_kind.value,
            f"{r.full.o_tv.value:f}",
            f"{r.full.v_t.value:f}",
            f"{r.full.x_tv.value:f}",
            r.market.native_unit.value,
            "" if px is None else f"{px:f}",
            f"{_usd_value(r.full.o_tv, px):f}",
            f"{_usd_value(r.full.v_t, px):f}",
            f"{_usd_value(r.full.x_tv, px):f}",
            str(r.full.intervals),
            str(r.full.invalid_intervals),
        ])
    tsv_headers = [
        "exchange", "symbol", "contract_kind", "o_tv", "v_t", "x_tv", "unit",
        "avg_price", "o_tv_usd", "v_t_usd", "x_tv_usd", "intervals",
        "invalid_intervals",
    ]
    return _text_table(headers, text_rows), _tsv(tsv_headers, tsv_rows)


_STAT_GRANS = (SubPeriod.D1, SubPeriod.H1, SubPeriod.MIN1)


def subperiod_table(
    reports: Sequence[MarketReport],
    granularities: Sequence[SubPeriod] = _STAT_GRANS,
) -> tuple[str, str]:
    """P(X_TV>0) and E[X_TV | X_TV>0] per market and granularity."""
    grans = [g for g in granularities if g is not SubPeriod.FULL]

    def sort_key(r: MarketReport):
        first = r.stats.get(grans[0]) if grans else None
        p = first.p_excess if first else Fraction(0)
        e = _usd_value(first.cond_mean_excess, r.avg_price) if first else Decimal(0)
        return (-p, -e, r.market.exchange, r.market.symbol)

    ordered = sorted(reports, key=sort_key)
    headers = ["Exchange", "Symbol"]
    tsv_headers = ["exchange", "symbol"]
    for g in grans:
        headers += [f"P_{g.value}(X_TV>0)", f"E_{g.value}[X_TV|X_TV>0]"]
        tsv_headers += [
            f"p_{g.value}", f"e_{g.value}", f"e_{g.value}_usd",
            f"n_{g.value}", f"n_excess_{g.value}",
        ]
    text_rows = []
    tsv_rows = []
    for r in ordered:
        trow = [r.market.exchange, r.market.symbol]
        vrow = [r.market.exchange, r.market.symbol]
        for g in grans:
            st = r.stats.get(g)
            if st is None:
                trow += ["n/a", "n/a"]
                vrow += ["", "", "", "0", "0"]
                continue
            trow.append(fmt_pct(st.p_excess))
            trow.append(fmt_amount_cell(st.cond_mean_excess, r.avg_price))
            vrow += [
                f"{st.p_excess.numerator}/{st.p_excess.denominator}",
                f"{st.cond_mean_excess.value:f}",
                f"{_usd_value(st.cond_mean_excess, r.avg_price):f}",
                str(st.n_total),
                str(st.n_excess),
            ]
        text_rows.append(trow)
        tsv_rows.append(vrow)
    return _text_table(headers, text_rows), _tsv(tsv_headers, tsv_rows)


def series_tsv(report: MarketReport) -> str:
    """Plot-ready excess series: one row per OI update."""
    rows = [
        [str(p.ts), f"{p.excess.value:f}",
         "" if p.last_price is None else f"{p.last_price:f}"]
        for p in report.series
    ]
    return _tsv(["ts", "excess", "last_price"], rows)


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunManifest:
    """Reproducibility record: equal manifests imply byte-identical reports."""

    version: str
    config_hash: str
    markets: tuple[str, ...]
    period_start: int
    period_end: int
    tau_ms: int
    subperiods: tuple[str, ...]
    coverage: dict
    input_digests: dict

    def to_json(self) -> str:
        payload = {
            "version": self.version,
            "config_hash": self.config_hash,
            "markets": list(self.markets),
            "period": {"start": self.period_start, "end": self.period_end},
            "tau_ms": self.tau_ms,
            "subperiods": list(self.subperiods),
            "coverage": self.coverage,
            "input_digests": self.input_digests,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def file_digest(path: Union[str, Path]) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(
    cfg: AuditConfig,
    reports: Sequence[MarketReport],
    period: PeriodSpec,
    subperiods: Sequence[SubPeriod],
    input_paths: Sequence[Union[str, Path]] = (),
) -> RunManifest:
    cfg_canon = json.dumps(
        {
            "tau_ms": cfg.tau_ms,
            "interval_mode": cfg.interval_mode.value,
            "fixed_width": cfg.fixed_width.value if cfg.fixed_width else None,
            "gap_cadence_factor": cfg.gap_cadence_factor,
        },
        sort_keys=True,
    )
    coverage = {
        r.market.key: {
            "intervals": len(r.intervals),
            "invalid": r.full.invalid_intervals,
            "ratio": f"{r.coverage.numerator}/{r.coverage.denominator}"
            if r.coverage.denominator
            else "0/0",
        }
        for r in reports
    }
    return RunManifest(
        version=__version__,
        config_hash=hashlib.sha256(cfg_canon.encode()).hexdigest(),
        markets=tuple(sorted(r.market.key for r in reports)),
        period_start=period.start,
        period_end=period.end,
        tau_ms=cfg.tau_ms,
        subperiods=tuple(s.value for s in subperiods),
        coverage=coverage,
        input_digests={str(Path(p).name): file_digest(p) for p in input_paths},
    )
