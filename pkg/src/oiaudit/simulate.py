"""Synthetic perpetual-swap venue with configurable misreporting.

A population of traders exchanges contracts under position-netting
bookkeeping: open interest is the summed long exposure, every trade moves
it by at most the trade size, and each transaction realizes one of the
three possible effects (create contracts, transfer them, settle them).
Because the bookkeeping is exact, the generated streams are a ground-truth
oracle for the auditor: an honestly reported stream can always be
reconciled, and each misreporting policy leaves its own measurable
signature.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from pathlib import Path
from random import Random
from typing import Sequence, Union

from oiaudit.model import (
    Amount,
    ContractKind,
    EPOCH_2023,
    EventKind,
    MarketEvent,
    MarketId,
    QUANTA_PER_UNIT,
    TRADE_KINDS,
    Unit,
)

_DEFAULT_MARKET = MarketId.make("simex", "BTC_USD_IP", ContractKind.INVERSE_PERP)


@dataclass(frozen=True, slots=True)
class SizeDist:
    """Bounded positive size distribution, in native units."""

    kind: str = "uniform"  # "uniform" | "pareto"
    lo: Decimal = Decimal("10")
    hi: Decimal = Decimal("1000")
    alpha: float = 1.5  # pareto tail exponent

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "pareto"):
            raise ValueError(f"unknown size distribution {self.kind!r}")
        if not (0 < self.lo <= self.hi):
            raise ValueError("size bounds must satisfy 0 < lo <= hi")

    @property
    def bounds_quanta(self) -> tuple[int, int]:
        return int(self.lo * QUANTA_PER_UNIT), int(self.hi * QUANTA_PER_UNIT)

    def sample_quanta(self, rng: Random) -> int:
        lo_q, hi_q = self.bounds_quanta
        if self.kind == "uniform":
            return lo_q + int(rng.random() * (hi_q - lo_q + 1))
        q = int(lo_q * (1.0 / (1.0 - rng.random())) ** (1.0 / self.alpha))
        return min(q, hi_q)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lo": str(self.lo), "hi": str(self.hi),
                "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d: dict) -> "SizeDist":
        return cls(kind=d.get("kind", "uniform"), lo=Decimal(d["lo"]),
                   hi=Decimal(d["hi"]), alpha=float(d.get("alpha", 1.5)))


class PolicyKind(Enum):
    HONEST = "HONEST"
    DELAY = "DELAY"
    HIDE = "HIDE"
    FABRICATE_OI = "FABRICATE_OI"


_DELAYABLE = (EventKind.TRADE, EventKind.BLOCK_TRADE, EventKind.LIQUIDATION)
_HIDEABLE = (EventKind.LIQUIDATION, EventKind.BLOCK_TRADE)


@dataclass(frozen=True)
class ReportingPolicy:
    """How the simulated venue distorts what it reports.

    DELAY re-stamps selected events later (as if timestamped at
    transmission); HIDE drops a seeded-random fraction of liquidation and
    block volume; FABRICATE_OI overlays a bounded mean-reverting
    perturbation on reported open interest. Trades are never re-priced and
    HIDE never touches OI samples.
    """

    kind: PolicyKind = PolicyKind.HONEST
    delay_ms: int = 0
    delay_kinds: tuple[EventKind, ...] = _DELAYABLE
    hide_fraction: float = 0.0
    hide_kinds: tuple[EventKind, ...] = _HIDEABLE
    fabricate_amplitude: Decimal = Decimal(0)

    def __post_init__(self) -> None:
        if self.delay_ms < 0:
            raise ValueError("delay must be non-negative")
        if not 0.0 <= self.hide_fraction <= 1.0:
            raise ValueError("hide fraction must lie in [0, 1]")
        if self.fabricate_amplitude < 0:
            raise ValueError("fabrication amplitude must be non-negative")
        if EventKind.OI_SAMPLE in self.hide_kinds:
            raise ValueError("hiding OI samples is not a supported policy")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "delay_ms": self.delay_ms,
            "delay_kinds": [k.value for k in self.delay_kinds],
            "hide_fraction": self.hide_fraction,
            "hide_kinds": [k.value for k in self.hide_kinds],
            "fabricate_amplitude": str(self.fabricate_amplitude),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReportingPolicy":
        return cls(
            kind=PolicyKind(d.get("kind", "HONEST")),
            delay_ms=int(d.get("delay_ms", 0)),
            delay_kinds=tuple(EventKind(k) for k in d.get("delay_kinds", [k.value for k in _DELAYABLE])),
            hide_fraction=float(d.get("hide_fraction", 0.0)),
            hide_kinds=tuple(EventKind(k) for k in d.get("hide_kinds", [k.value for k in _HIDEABLE])),
            fabricate_amplitude=Decimal(d.get("fabricate_amplitude", "0")),
        )


@dataclass(frozen=True)
class ScenarioSpec:
    """Deterministic scenario: equal specs produce identical streams."""

    n_traders: int = 50
    n_steps: int = 10_000
    rng_seed: int = 1
    trade_size_dist: SizeDist = field(default_factory=SizeDist)
    oi_report_cadence_ms: int = 250
    policy: ReportingPolicy = field(default_factory=ReportingPolicy)
    market: MarketId = _DEFAULT_MARKET
    start_ts: int = EPOCH_2023
    step_gap_ms: tuple[int, int] = (1, 20)
    case_probs: tuple[float, float, float] = (0.4, 0.3, 0.3)  # open/transfer/settle
    liq_fraction: float = 0.25
    block_fraction: float = 0.05
    burst: Union[tuple[float, float], None] = None  # forced-unwind window, step fractions
    tail_ms: int = 2000
    price_start: Decimal = Decimal("20000")

    def __post_init__(self) -> None:
        if self.n_traders < 2:
            raise ValueError("need at least two traders")
        if self.n_steps < 1:
            raise ValueError("need at least one step")
        if self.oi_report_cadence_ms < 1:
            raise ValueError("OI cadence must be positive")
        lo, hi = self.step_gap_ms
        if not (1 <= lo <= hi):
            raise ValueError("step gap bounds must satisfy 1 <= lo <= hi")
        if abs(sum(self.case_probs) - 1.0) > 1e-9 or min(self.case_probs) < 0:
            raise ValueError("case probabilities must be non-negative and sum to 1")
        if self.burst is not None:
            f0, f1 = self.burst
            if not (0.0 <= f0 < f1 <= 1.0):
                raise ValueError("burst window must satisfy 0 <= start < end <= 1")
        if self.tail_ms < self.oi_report_cadence_ms:
            raise ValueError("tail must cover at least one OI report")

    def to_dict(self) -> dict:
        return {
            "n_traders": self.n_traders,
            "n_steps": self.n_steps,
            "rng_seed": self.rng_seed,
            "trade_size_dist": self.trade_size_dist.to_dict(),
            "oi_report_cadence_ms": self.oi_report_cadence_ms,
            "policy": self.policy.to_dict(),
            "market": {
                "exchange": self.market.exchange,
                "symbol": self.market.symbol,
                "contract_kind": self.market.contract_kind.value,
            },
            "start_ts": self.start_ts,
            "step_gap_ms": list(self.step_gap_ms),
            "case_probs": list(self.case_probs),
            "liq_fraction": self.liq_fraction,
            "block_fraction": self.block_fraction,
            "burst": list(self.burst) if self.burst else None,
            "tail_ms": self.tail_ms,
            "price_start": str(self.price_start),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        m = d.get("market")
        market = (
            MarketId.make(m["exchange"], m["symbol"], ContractKind(m["contract_kind"]))
            if m
            else _DEFAULT_MARKET
        )
        return cls(
            n_traders=int(d.get("n_traders", 50)),
            n_steps=int(d.get("n_steps", 10_000)),
            rng_seed=int(d.get("rng_seed", 1)),
            trade_size_dist=SizeDist.from_dict(d["trade_size_dist"]) if "trade_size_dist" in d else SizeDist(),
            oi_report_cadence_ms=int(d.get("oi_report_cadence_ms", 250)),
            policy=ReportingPolicy.from_dict(d["policy"]) if "policy" in d else ReportingPolicy(),
            market=market,
            start_ts=int(d.get("start_ts", EPOCH_2023)),
            step_gap_ms=tuple(d.get("step_gap_ms", (1, 20))),
            case_probs=tuple(d.get("case_probs", (0.4, 0.3, 0.3))),
            liq_fraction=float(d.get("liq_fraction", 0.25)),
            block_fraction=float(d.get("block_fraction", 0.05)),
            burst=tuple(d["burst"]) if d.get("burst") else None,
            tail_ms=int(d.get("tail_ms", 2000)),
            price_start=Decimal(d.get("price_start", "20000")),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ScenarioSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass(frozen=True, slots=True)
class TruthRow:
    """Ground truth for one emitted event, annotated with what the
    reporting policy did to it."""

    seq: int
    ts: int
    kind: EventKind
    size_quanta: int
    oi_delta_quanta: int
    oi_after_quanta: int
    hidden: bool = False
    reported_ts: Union[int, None] = None
    reported_oi_quanta: Union[int, None] = None


class TruthLedger:
    """Per-event ground truth: net effect on open interest, the OI level
    after each event, and the policy's distortions. Conservation holds at
    every row: summed long positions equal summed shorts equal OI."""

    def __init__(self, market: MarketId, rows: list[TruthRow]):
        self.market = market
        self.rows = rows

    def sample_rows(self) -> list[TruthRow]:
        return [r for r in self.rows if r.kind is EventKind.OI_SAMPLE]

    def trade_rows(self) -> list[TruthRow]:
        return [r for r in self.rows if r.kind in TRADE_KINDS]

    def hidden_volume_quanta(self) -> int:
        return sum(r.size_quanta for r in self.rows if r.hidden)

    def expected_full_excess_quanta(self, tau_ms: int) -> int:
        """Period excess implied by the ledger alone, for cross-checking
        the auditor: reported |ΔOI| summed over samples, minus reported
        volume inside the audited span, floored at zero. Computed without
        any of the reconciliation code."""
        samples = self.sample_rows()
        if len(samples) < 2:
            return 0
        rep = [
            (r.reported_ts if r.reported_ts is not None else r.ts,
             r.reported_oi_quanta if r.reported_oi_quanta is not None else r.oi_after_quanta)
            for r in samples
        ]
        o_tv = sum(abs(rep[i][1] - rep[i - 1][1]) for i in range(1, len(rep)))
        lo = rep[0][0]
        hi = rep[-1][0] + tau_ms
        v_rep = 0
        for r in self.trade_rows():
            if r.hidden:
                continue
            ts = r.reported_ts if r.reported_ts is not None else r.ts
            if lo < ts <= hi:
                v_rep += r.size_quanta
        return max(o_tv - v_rep, 0)

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"market": {
                "exchange": self.market.exchange,
                "symbol": self.market.symbol,
                "contract_kind": self.market.contract_kind.value,
            }}) + "\n")
            for r in self.rows:
                fh.write(json.dumps({
                    "seq": r.seq, "ts": r.ts, "kind": r.kind.value,
                    "size": r.size_quanta, "delta": r.oi_delta_quanta,
                    "oi": r.oi_after_quanta, "hidden": r.hidden,
                    "rts": r.reported_ts, "roi": r.reported_oi_quanta,
                }, separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TruthLedger":
        rows: list[TruthRow] = []
        with open(path, "r", encoding="utf-8") as fh:
            head = json.loads(fh.readline())
            m = head["market"]
            market = MarketId.make(m["exchange"], m["symbol"], ContractKind(m["contract_kind"]))
            for line in fh:
                d = json.loads(line)
                rows.append(TruthRow(
                    seq=d["seq"], ts=d["ts"], kind=EventKind(d["kind"]),
                    size_quanta=d["size"], oi_delta_quanta=d["delta"],
                    oi_after_quanta=d["oi"], hidden=d["hidden"],
                    reported_ts=d["rts"], reported_oi_quanta=d["roi"],
                ))
        return cls(market, rows)


@dataclass
class SimulationOutput:
    spec: ScenarioSpec
    true_stream: list[MarketEvent]
    reported_stream: list[MarketEvent]
    truth: TruthLedger


_OPEN, _TRANSFER, _SETTLE = 0, 1, 2


def apply_fill(pos: list[int], buyer: int, seller: int, size: int) -> int:
    """Net a fill into the position ledger; returns the open-interest delta.

    Open interest is the summed long exposure, so the delta is whatever the
    two position changes do to the positive parts: +size when both sides
    extend, 0 for a pure transfer, -size when both sides close, and the
    in-between values when a trader flips through flat. |delta| <= size
    always, which is exactly why reported volume must cover |ΔOI|.
    """
    pb, ps = pos[buyer], pos[seller]
    pos[buyer] = pb + size
    pos[seller] = ps - size
    return (max(pb + size, 0) - max(pb, 0)) + (max(ps - size, 0) - max(ps, 0))


def generate(spec: ScenarioSpec) -> SimulationOutput:
    """Run one scenario: produce the true stream, the policy-distorted
    reported stream, and the per-event truth ledger."""
    rng = Random(spec.rng_seed)
    market = spec.market
    unit = market.native_unit
    n = spec.n_traders
    pos = [0] * n  # signed quanta per trader; sums to zero at all times
    oi = 0

    events: list[MarketEvent] = []
    rows: list[TruthRow] = []
    seq = 0
    price_cents = int(spec.price_start * 100)

    burst_lo = burst_hi = -1
    if spec.burst is not None:
        burst_lo = int(spec.burst[0] * spec.n_steps)
        burst_hi = int(spec.burst[1] * spec.n_steps)

    def emit_sample(ts: int) -> None:
        nonlocal seq
        events.append(MarketEvent(market, ts, EventKind.OI_SAMPLE,
                                  Amount(oi, unit), None, seq))
        rows.append(TruthRow(seq, ts, EventKind.OI_SAMPLE, 0, 0, oi))
        seq += 1

    cadence = spec.oi_report_cadence_ms
    gap_lo, gap_hi = spec.step_gap_ms
    gap_span = gap_hi - gap_lo + 1
    size_kind = spec.trade_size_dist.kind
    size_lo, size_hi = spec.trade_size_dist.bounds_quanta
    size_span = size_hi - size_lo + 1
    p_open, p_transfer, _ = spec.case_probs
    p_cum = p_open + p_transfer
    ts = spec.start_ts
    emit_sample(ts)
    next_tick = ts + cadence

    r = rng.random

    for step in range(spec.n_steps):
        ts += gap_lo + int(r() * gap_span)
        while next_tick < ts:
            emit_sample(next_tick)
            next_tick += cadence

        in_burst = burst_lo <= step < burst_hi
        if in_burst:
            case = _SETTLE
        else:
            x = r()
            case = _OPEN if x < p_open else (_TRANSFER if x < p_cum else _SETTLE)
        if size_kind == "uniform":
            size = size_lo + int(r() * size_span)
        else:
            size = spec.trade_size_dist.sample_quanta(rng)

        buyer = seller = -1
        for _ in range(24):
            b = int(r() * n)
            s = int(r() * n)
            if b == s:
                continue
            if case == _OPEN:
                if pos[b] >= 0 and pos[s] <= 0:
                    buyer, seller = b, s
                    break
            elif case == _TRANSFER:
                if pos[b] >= 0 and pos[s] > 0:
                    buyer, seller = b, s
                    size = min(size, pos[s])
                    break
            else:
                if pos[b] < 0 and pos[s] > 0:
                    buyer, seller = b, s
                    size = min(size, -pos[b], pos[s])
                    break
        if buyer < 0:
            # no eligible pair sampled; opening new contracts always works
            case = _OPEN
            buyer = next(i for i in range(n) if pos[i] >= 0)
            seller = next(i for i in range(n) if pos[i] <= 0 and i != buyer)
        if size <= 0:
            continue

        delta = apply_fill(pos, buyer, seller, size)
        oi += delta

        if case == _SETTLE and (in_burst or r() < spec.liq_fraction):
            kind = EventKind.LIQUIDATION
        elif case == _OPEN and r() < spec.block_fraction:
            kind = EventKind.BLOCK_TRADE
        else:
            kind = EventKind.TRADE

        step_cents = price_cents // 500 or 1
        price_cents = max(100, price_cents + int(r() * (2 * step_cents + 1)) - step_cents)
        price = Decimal(price_cents).scaleb(-2)
        events.append(MarketEvent(market, ts, kind, Amount(size, unit), price, seq))
        rows.append(TruthRow(seq, ts, kind, size, delta, oi))
        seq += 1

        if next_tick == ts:
            emit_sample(next_tick)
            next_tick += cadence

    end = ts + spec.tail_ms
    while next_tick <= end:
        emit_sample(next_tick)
        next_tick += cadence

    truth = TruthLedger(market, rows)
    reported = _apply_policy_traced(spec.policy, events, spec.rng_seed, truth)
    return SimulationOutput(spec, events, reported, truth)


def policy_apply(
    policy: ReportingPolicy, true_stream: Sequence[MarketEvent], seed: int = 0
) -> list[MarketEvent]:
    """Distort an ordered true stream per the reporting policy. Seeded and
    deterministic; HONEST is the identity."""
    return _apply_policy_traced(policy, true_stream, seed, None)


def _apply_policy_traced(
    policy: ReportingPolicy,
    events: Sequence[MarketEvent],
    seed: int,
    truth: Union[TruthLedger, None],
) -> list[MarketEvent]:
    kind = policy.kind
    if kind is PolicyKind.HONEST:
        return list(events)
    if kind is PolicyKind.DELAY and policy.delay_ms == 0:
        return list(events)
    if kind is PolicyKind.HIDE and policy.hide_fraction == 0.0:
        return list(events)
    if kind is PolicyKind.FABRICATE_OI and policy.fabricate_amplitude == 0:
        return list(events)

    hidden: set[int] = set()
    new_ts: dict[int, int] = {}
    new_oi: dict[int, int] = {}

    if kind is PolicyKind.DELAY:
        sel = set(policy.delay_kinds)
        for ev in events:
            if ev.kind in sel:
                new_ts[ev.seq] = ev.ts + policy.delay_ms
    elif kind is PolicyKind.HIDE:
        rng = Random(f"{seed}:hide")
        sel = set(policy.hide_kinds)
        frac = policy.hide_fraction
        for ev in events:
            if ev.kind in sel and rng.random() < frac:
                hidden.add(ev.seq)
    elif kind is PolicyKind.FABRICATE_OI:
        rng = Random(f"{seed}:fabricate")
        amp = int(policy.fabricate_amplitude * QUANTA_PER_UNIT)
        walk = 0.0
        for ev in events:
            if ev.kind is EventKind.OI_SAMPLE:
                walk = 0.9 * walk + rng.uniform(-amp / 4.0, amp / 4.0)
                walk = max(-float(amp), min(float(amp), walk))
                new_oi[ev.seq] = max(ev.size_or_value.quanta + int(walk), 0)

    reported: list[MarketEvent] = []
    for ev in events:
        if ev.seq in hidden:
            continue
        ts = new_ts.get(ev.seq, ev.ts)
        if ev.seq in new_oi:
            ev = MarketEvent(ev.market, ts, ev.kind,
                             Amount(new_oi[ev.seq], ev.size_or_value.unit),
                             ev.price, ev.seq)
        elif ts != ev.ts:
            ev = MarketEvent(ev.market, ts, ev.kind, ev.size_or_value, ev.price, ev.seq)
        reported.append(ev)

    reported.sort(key=lambda e: (e.ts, e.seq))
    renumbered = [
        MarketEvent(e.market, e.ts, e.kind, e.size_or_value, e.price, i)
        for i, e in enumerate(reported)
    ]

    if truth is not None and (hidden or new_ts or new_oi):
        rebuilt = []
        for r in truth.rows:
            if r.seq in hidden or r.seq in new_ts or r.seq in new_oi:
                rebuilt.append(TruthRow(
                    seq=r.seq, ts=r.ts, kind=r.kind, size_quanta=r.size_quanta,
                    oi_delta_quanta=r.oi_delta_quanta,
                    oi_after_quanta=r.oi_after_quanta,
                    hidden=r.seq in hidden,
                    reported_ts=new_ts.get(r.seq),
                    reported_oi_quanta=new_oi.get(r.seq),
                ))
            else:
                rebuilt.append(r)
        truth.rows = rebuilt

    return renumbered
