"""Descriptive statistics over per-bucket audit results.

For a set of calendar-aligned sub-period audits this module reports how
often excess appeared, P(X_TV > 0), and how large it was when it did,
E[X_TV | X_TV > 0]. No significance testing: the numbers are descriptive.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction
from typing import Sequence, Union

from oiaudit.model import (
    Amount,
    AuditError,
    MarketEvent,
    MarketId,
    PeriodSpec,
    SubPeriod,
    TRADE_KINDS,
)
from oiaudit.reconcile import PeriodAudit


class StatsError(AuditError):
    """No usable data to compute the requested statistic."""


@dataclass(frozen=True, slots=True)
class SubPeriodStats:
    """P(X_TV > 0) and E[X_TV | X_TV > 0] over one bucket granularity.

    `p_excess` is kept as an exact rational; `cond_mean_excess` is the
    conditional mean rounded half-even to 8 fractional digits, with
    `sum_excess` preserving the exact numerator so that
    cond_mean * n_excess == sum_excess holds pre-rounding.
    """

    market: MarketId
    subperiod: SubPeriod
    n_total: int
    n_excess: int
    p_excess: Fraction
    sum_excess: Amount
    cond_mean_excess: Amount
    avg_price: Union[Decimal, None] = None


def subperiod_stats(
    audits: Sequence[PeriodAudit],
    avg_price: Union[Decimal, None] = None,
) -> SubPeriodStats:
    """Fold one market's bucket audits into excess-frequency statistics.

    Buckets tainted by feed gaps are excluded from the denominator; the
    result is independent of the order of `audits`.
    """
    if not audits:
        raise StatsError("no coverage: empty audit set")
    market = audits[0].market
    sub = audits[0].period.subperiod
    for a in audits:
        if a.market != market:
            raise ValueError("audits mix markets")
        if a.period.subperiod is not sub:
            raise ValueError("audits mix sub-period granularities")

    usable = [a for a in audits if a.usable]
    n_total = len(usable)
    if n_total == 0:
        raise StatsError("no coverage: every sub-period overlaps a feed gap")

    unit = market.native_unit
    excess_q = [a.x_tv.quanta for a in usable if a.x_tv.quanta > 0]
    n_excess = len(excess_q)
    total_q = sum(excess_q)
    if n_excess:
        mean_q = int(
            (Decimal(total_q) / n_excess).quantize(Decimal(1), ROUND_HALF_EVEN)
        )
    else:
        mean_q = 0
    return SubPeriodStats(
        market=market,
        subperiod=sub,
        n_total=n_total,
        n_excess=n_excess,
        p_excess=Fraction(n_excess, n_total),
        sum_excess=Amount(total_q, unit),
        cond_mean_excess=Amount(mean_q, unit),
        avg_price=avg_price,
    )


def avg_price(
    trades: Sequence[MarketEvent],
    period: PeriodSpec,
    weighted: bool = False,
) -> Decimal:
    """Period-average traded price, rounded to cents for display.

    Defaults to the unweighted mean of tick prices; `weighted` switches to
    a size-weighted mean. All trade-like kinds count.
    """
    num = Decimal(0)
    den = Decimal(0)
    for ev in trades:
        if ev.kind not in TRADE_KINDS or not period.contains(ev.ts):
            continue
        if weighted:
            w = ev.size_or_value.value
            num += ev.price * w
            den += w
        else:
            num += ev.price
            den += 1
    if den == 0:
        raise StatsError("no price basis: no trades in period")
    return (num / den).quantize(Decimal("0.01"), ROUND_HALF_EVEN)
