"""Per-interval reconciliation of open-interest changes against volume.

The audit walks a single market's ordered event stream, closes one
reconciliation interval at every open-interest update (or at fixed
calendar boundaries), and checks that the traded volume inside each
interval covers the minimal trading volume |OI_end - OI_start| implied by
the update. A small latency allowance `tau` lets volume reported just
after an update count toward the interval it settled, without ever
double-counting a trade.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, replace
from decimal import Decimal
from enum import Enum
from typing import Iterable, Sequence, Union

from oiaudit.model import (
    Amount,
    AuditError,
    EventKind,
    GapMarker,
    MarketEvent,
    MarketId,
    OrderingError,
    PeriodSpec,
    StreamItem,
    SubPeriod,
)


class NoOpenInterestError(AuditError):
    """The stream carries no usable open-interest feed."""


class IntervalMode(Enum):
    PER_OI_UPDATE = "per_oi_update"
    FIXED = "fixed"


# Covering subsets are searched exactly up to this many candidate trades in
# one latency window; beyond it (pathological density) we fall back to
# consuming the window in stream order.
_EXACT_COVER_LIMIT = 16

_SEQ_INF = 1 << 62


@dataclass(frozen=True, slots=True)
class AuditConfig:
    """Reconciliation parameters.

    `tau_ms` extends each interval's volume window past its closing OI
    update to absorb honest reporting latency; at 1 ms feed resolution the
    honest delay cannot exceed 1 ms, hence the default. `gap_cadence_factor`
    invalidates intervals longer than that multiple of the median OI
    sampling cadence (missed polls); None disables the heuristic.
    """

    tau_ms: int = 1
    interval_mode: IntervalMode = IntervalMode.PER_OI_UPDATE
    fixed_width: Union[SubPeriod, None] = None
    gap_cadence_factor: Union[float, None] = 2.0

    def __post_init__(self) -> None:
        if not 0 <= self.tau_ms <= 1000:
            raise ValueError(f"tau_ms must be in [0, 1000], got {self.tau_ms}")
        if self.interval_mode is IntervalMode.FIXED:
            if self.fixed_width is None or self.fixed_width is SubPeriod.FULL:
                raise ValueError("FIXED interval mode needs a calendar width")
        if self.gap_cadence_factor is not None and self.gap_cadence_factor <= 1:
            raise ValueError("gap_cadence_factor must exceed 1")


@dataclass(frozen=True, slots=True)
class IntervalLedger:
    """One reconciliation interval (t_start, t_end].

    `volume` counts every trade attributed to this interval, including any
    carried in from the latency window; `carried_from_next` records that
    carried part. A carried trade is excluded from its native interval, so
    no size is ever counted twice.
    """

    t_start: int
    t_end: int
    oi_start: Amount
    oi_end: Amount
    volume: Amount
    mtv: Amount
    excess: Amount
    carried_from_next: Amount
    valid: bool
    last_price: Union[Decimal, None]


@dataclass(frozen=True, slots=True)
class PeriodAudit:
    """Aggregate reconciliation result for one market over one period."""

    market: MarketId
    period: PeriodSpec
    o_tv: Amount
    v_t: Amount
    x_tv: Amount
    intervals: int
    invalid_intervals: int
    gap_overlap: bool = False

    @property
    def usable(self) -> bool:
        """True when no feed gap taints this period's numbers."""
        return self.invalid_intervals == 0 and not self.gap_overlap


@dataclass(frozen=True, slots=True)
class TickPoint:
    ts: int
    excess: Amount
    last_price: Union[Decimal, None]


def mtv(oi_prev: Amount, oi_next: Amount) -> Amount:
    """Minimal trading volume implied by an open-interest move: |ΔOI|."""
    return oi_next.abs_diff(oi_prev)


def _min_cover(sizes: Sequence[int], need: int) -> list[int]:
    """Indices of the smallest-total subset of `sizes` with total >= need.

    Caller guarantees 0 < need <= sum(sizes). Choosing the smallest total
    leaves the most volume behind for the following interval, which is what
    makes carry decisions safe: any stream that some attribution can fully
    reconcile, this one reconciles too (windows never span more than one
    interval ahead when OI updates arrive further apart than tau).
    """
    n = len(sizes)
    if n > _EXACT_COVER_LIMIT:
        total = 0
        out = []
        for i, s in enumerate(sizes):
            out.append(i)
            total += s
            if total >= need:
                break
        return out

    order = sorted(range(n), key=lambda i: (-sizes[i], i))
    suffix = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1] + sizes[order[i]]

    best_total: Union[int, None] = None
    best_set: list[int] = []
    chosen: list[int] = []

    def dfs(pos: int, total: int) -> None:
        nonlocal best_total, best_set
        if best_total is not None and total >= best_total:
            return
        if total >= need:
            best_total = total
            best_set = chosen.copy()
            return
        if pos == n or total + suffix[pos] < need:
            return
        chosen.append(order[pos])
        dfs(pos + 1, total + sizes[order[pos]])
        chosen.pop()
        dfs(pos + 1, total)

    dfs(0, 0)
    return sorted(best_set)


def _validate_ordered(events: Sequence[MarketEvent]) -> None:
    market = None
    prev = None
    for ev in events:
        if market is None:
            market = ev.market
        elif ev.market != market:
            raise OrderingError(
                f"mixed markets: {market.key} and {ev.market.key}"
            )
        key = (ev.ts, ev.seq)
        if prev is not None and key <= prev:
            raise OrderingError(
                f"events not strictly ordered at ts={ev.ts} seq={ev.seq}; "
                "order_events() must run first"
            )
        prev = key


def _boundaries_per_update(oi: list[MarketEvent]) -> list[tuple[int, int, int]]:
    return [(s.ts, s.seq, s.size_or_value.quanta) for s in oi]


def _boundaries_fixed(oi: list[MarketEvent], width: int) -> list[tuple[int, int, int]]:
    """Calendar-grid boundaries spanning the OI feed, with step-function OI."""
    first, last = oi[0], oi[-1]
    ticks = [first.ts]
    t = (first.ts // width + 1) * width
    while t < last.ts:
        ticks.append(t)
        t += width
    ticks.append(last.ts)

    out: list[tuple[int, int, int]] = []
    j = 0
    level = first.size_or_value.quanta
    for k, ts in enumerate(ticks):
        while j < len(oi) and oi[j].ts <= ts:
            level = oi[j].size_or_value.quanta
            j += 1
        # Span opens just after the first real sample; later boundaries cut
        # by time only, so same-ms trades land left of the cut.
        seq = first.seq if k == 0 else _SEQ_INF
        out.append((ts, seq, level))
    return out


def detect_cadence_gaps(
    oi_samples: Sequence[MarketEvent], factor: Union[float, None]
) -> list[tuple[int, int]]:
    """Spans between consecutive OI samples that look like missed polls."""
    if factor is None or len(oi_samples) < 3:
        return []
    deltas = [
        oi_samples[i].ts - oi_samples[i - 1].ts for i in range(1, len(oi_samples))
    ]
    med = statistics.median(deltas)
    if med <= 0:
        return []
    out = []
    for i in range(1, len(oi_samples)):
        if oi_samples[i].ts - oi_samples[i - 1].ts > factor * med:
            out.append((oi_samples[i - 1].ts, oi_samples[i].ts))
    return out


def build_intervals(
    items: Sequence[StreamItem], cfg: AuditConfig
) -> list[IntervalLedger]:
    """Close one ledger per OI update (or calendar boundary) with the
    tau-window volume attribution.

    Trades reported within `tau` after an interval's closing update are
    pulled back into it only when the interval is otherwise short of its
    minimal trading volume, choosing the smallest covering set so the next
    interval keeps as much of its own volume as possible. Trades trailing
    the final update within `tau` have no later home and attach to the last
    interval. Every counted trade is counted exactly once.
    """
    events: list[MarketEvent] = []
    gaps: list[GapMarker] = []
    for it in items:
        if isinstance(it, GapMarker):
            gaps.append(it)
        else:
            events.append(it)
    _validate_ordered(events)

    oi = [e for e in events if e.kind is EventKind.OI_SAMPLE]
    if not oi:
        raise NoOpenInterestError("no open interest feed in stream")
    if len(oi) < 2 and cfg.interval_mode is IntervalMode.PER_OI_UPDATE:
        raise NoOpenInterestError(
            "need at least two open interest samples to form an interval"
        )

    if cfg.interval_mode is IntervalMode.PER_OI_UPDATE:
        bounds = _boundaries_per_update(oi)
    else:
        width = cfg.fixed_width.width_ms  # type: ignore[union-attr]
        bounds = _boundaries_fixed(oi, width)
        if len(bounds) < 2:
            raise NoOpenInterestError("open interest feed spans no full boundary")

    unit = events[0].market.native_unit
    tau = cfg.tau_ms

    t_ts: list[int] = []
    t_seq: list[int] = []
    t_q: list[int] = []
    t_px: list[Union[Decimal, None]] = []
    for e in events:
        if e.kind is not EventKind.OI_SAMPLE:
            t_ts.append(e.ts)
            t_seq.append(e.seq)
            t_q.append(e.size_or_value.quanta)
            t_px.append(e.price)

    cadence_spans = (
        detect_cadence_gaps(oi, cfg.gap_cadence_factor)
        if cfg.interval_mode is IntervalMode.PER_OI_UPDATE
        else []
    )
    cadence_set = set(cadence_spans)
    gap_spans = [(g.ts_start, g.ts_end) for g in gaps]

    n_trades = len(t_ts)
    consumed: set[int] = set()
    ledgers: list[IntervalLedger] = []

    p = 0
    b0_ts, b0_seq, _ = bounds[0]
    while p < n_trades and (t_ts[p], t_seq[p]) <= (b0_ts, b0_seq):
        p += 1  # before the first OI sample: outside the audited span

    last_price: Union[Decimal, None] = None
    n_bounds = len(bounds)
    for i in range(1, n_bounds):
        pts, pseq, poi = bounds[i - 1]
        bts, bseq, boi = bounds[i]
        is_last = i == n_bounds - 1

        vol = 0
        while p < n_trades and (t_ts[p], t_seq[p]) <= (bts, bseq):
            if p in consumed:
                consumed.discard(p)
            else:
                vol += t_q[p]
            last_price = t_px[p]
            p += 1

        mtv_q = abs(boi - poi)
        carried = 0
        if is_last:
            j = p
            while j < n_trades and t_ts[j] <= bts + tau:
                if j not in consumed:
                    vol += t_q[j]
                    carried += t_q[j]
                j += 1
        elif vol < mtv_q and tau > 0:
            w_idx = []
            j = p
            while j < n_trades and t_ts[j] <= bts + tau:
                if j not in consumed:
                    w_idx.append(j)
                j += 1
            if w_idx:
                need = mtv_q - vol
                sizes = [t_q[k] for k in w_idx]
                if sum(sizes) <= need:
                    take = list(range(len(w_idx)))
                else:
                    take = _min_cover(sizes, need)
                for k in take:
                    idx = w_idx[k]
                    consumed.add(idx)
                    vol += t_q[idx]
                    carried += t_q[idx]

        valid = True
        if (pts, bts) in cadence_set:
            valid = False
        if valid:
            for gs, ge in gap_spans:
                if gs <= bts + tau and ge > pts:
                    valid = False
                    break

        ledgers.append(
            IntervalLedger(
                t_start=pts,
                t_end=bts,
                oi_start=Amount(poi, unit),
                oi_end=Amount(boi, unit),
                volume=Amount(vol, unit),
                mtv=Amount(mtv_q, unit),
                excess=Amount(max(mtv_q - vol, 0), unit),
                carried_from_next=Amount(carried, unit),
                valid=valid,
                last_price=last_price,
            )
        )
    return ledgers


def aggregate(
    intervals: Sequence[IntervalLedger],
    period: PeriodSpec,
    market: MarketId,
    gap_overlap: bool = False,
) -> PeriodAudit:
    """Sum valid intervals into period totals and the period excess.

    An empty interval set is not an error: it aggregates to zeros and is
    reported as no-data.
    """
    unit = market.native_unit
    o_tv = 0
    v_t = 0
    invalid = 0
    for iv in intervals:
        if not period.contains(iv.t_end):
            raise ValueError(
                f"interval ending at {iv.t_end} lies outside period "
                f"[{period.start}, {period.end}]"
            )
        if not iv.valid:
            invalid += 1
            continue
        o_tv += iv.mtv.quanta
        v_t += iv.volume.quanta
    return PeriodAudit(
        market=market,
        period=period,
        o_tv=Amount(o_tv, unit),
        v_t=Amount(v_t, unit),
        x_tv=Amount(max(o_tv - v_t, 0), unit),
        intervals=len(intervals),
        invalid_intervals=invalid,
        gap_overlap=gap_overlap,
    )


def aggregate_buckets(
    intervals: Sequence[IntervalLedger],
    period: PeriodSpec,
    market: MarketId,
    granularity: SubPeriod,
    gaps: Sequence[GapMarker] = (),
) -> list[PeriodAudit]:
    """One PeriodAudit per UTC calendar bucket intersecting the feed span.

    An interval belongs to the bucket containing its closing update. Buckets
    the feed was live for but that no update closed in aggregate to zeros;
    buckets touched by a feed gap or by an invalidated interval are flagged
    so statistics can exclude them.
    """
    if not intervals:
        return []
    feed_start = intervals[0].t_start
    feed_end = intervals[-1].t_end

    bad_spans = [(g.ts_start, g.ts_end) for g in gaps]
    bad_spans += [(iv.t_start, iv.t_end) for iv in intervals if not iv.valid]

    out: list[PeriodAudit] = []
    idx = 0
    n = len(intervals)
    for bucket in period.buckets(granularity):
        if bucket.end <= feed_start or bucket.start > feed_end:
            continue
        members: list[IntervalLedger] = []
        while idx < n and intervals[idx].t_end < bucket.start:
            idx += 1
        j = idx
        while j < n and intervals[j].t_end <= bucket.end:
            members.append(intervals[j])
            j += 1
        idx = j
        overlap = any(s <= bucket.end and e >= bucket.start for s, e in bad_spans)
        out.append(aggregate(members, bucket, market, gap_overlap=overlap))
    return out


def tick_excess_series(intervals: Sequence[IntervalLedger]) -> list[TickPoint]:
    """One plot-ready point per OI update: interval excess and the last
    traded price at or before the update. Zero-excess points are kept so an
    honest venue plots flat; invalidated intervals are omitted."""
    return [
        TickPoint(ts=iv.t_end, excess=iv.excess, last_price=iv.last_price)
        for iv in intervals
        if iv.valid
    ]


def floor_excess(intervals: Iterable[IntervalLedger]) -> int:
    """Sum of per-interval excesses (quanta) over valid intervals; the
    tick-series total, which floors at zero interval by interval."""
    return sum(iv.excess.quanta for iv in intervals if iv.valid)
