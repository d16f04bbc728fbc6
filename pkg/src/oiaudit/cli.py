"""Command-line surface.

Subcommands:
  capture   run venue connectors and write capture files until stopped
  audit     reconcile capture files and emit period/sub-period reports
  simulate  generate a synthetic scenario (true + reported captures + truth)
  verify    re-audit a simulated scenario and check the oracle expectations

Exit codes: 0 ok, 1 usage error, 2 data error, 3 oracle violation.
"""

from __future__ import annotations

import argparse
import json
import signal
import sys
import time
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path

from oiaudit.ingest.adapters import ConfigError, DeadLetterFile
from oiaudit.ingest.capture import BufferedCaptureSink, CaptureWriter, replay
from oiaudit.ingest.stream import ConnectorConfig, connect_and_stream
from oiaudit.model import (
    AuditError,
    ContractKind,
    MarketId,
    PeriodSpec,
    SubPeriod,
    order_stream,
)
from oiaudit.reconcile import AuditConfig, IntervalMode
from oiaudit.report import (
    MarketReport,
    audit_stream,
    build_manifest,
    period_table,
    series_tsv,
    subperiod_table,
)
from oiaudit.simulate import ScenarioSpec, TruthLedger, generate

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ORACLE = 3


class UsageError(Exception):
    pass


class OracleViolation(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit(2); we map usage to 1
        raise UsageError(message)


_SUBPERIOD_NAMES = {s.value: s for s in SubPeriod}


def _parse_period(text: str) -> PeriodSpec:
    try:
        lo, hi = text.split("..", 1)
        return PeriodSpec(_parse_instant(lo, False), _parse_instant(hi, True))
    except (ValueError, AuditError) as exc:
        raise UsageError(f"bad period {text!r}: {exc}") from exc


def _parse_instant(text: str, end_of_day: bool) -> int:
    text = text.strip()
    if text.isdigit():
        return int(text)
    dt = datetime.strptime(text, "%Y-%m-%d").replace(tzinfo=timezone.utc)
    ms = int(dt.timestamp() * 1000)
    return ms + 86_400_000 - 1 if end_of_day else ms


def _parse_subperiods(text: str) -> list[SubPeriod]:
    out = []
    for part in text.split(","):
        part = part.strip().lower()
        if part not in _SUBPERIOD_NAMES:
            raise UsageError(
                f"unknown sub-period {part!r}; choose from {', '.join(_SUBPERIOD_NAMES)}"
            )
        out.append(_SUBPERIOD_NAMES[part])
    return out


def build_parser() -> _Parser:
    p = _Parser(prog="oiaudit", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    cap = sub.add_parser("capture", help="run live connectors until interrupted")
    cap.add_argument("--config", required=True, help="connector config JSON")
    cap.add_argument("--out", required=True, help="output directory")
    cap.add_argument("--duration-s", type=float, default=None,
                     help="stop after this many seconds")
    cap.add_argument("--max-events", type=int, default=None,
                     help="stop after this many records per market")

    aud = sub.add_parser("audit", help="reconcile captures and emit reports")
    aud.add_argument("--in", dest="inputs", required=True, nargs="+",
                     help="capture file(s) or directory of .cap files")
    aud.add_argument("--period", default=None,
                     help="START..END as YYYY-MM-DD (inclusive) or epoch ms")
    aud.add_argument("--subperiods", default="full,1d,1h,1min")
    aud.add_argument("--tau-ms", type=int, default=1)
    aud.add_argument("--interval-mode", choices=["per-oi-update", "fixed"],
                     default="per-oi-update")
    aud.add_argument("--fixed-width", default="1h",
                     help="calendar width for fixed interval mode")
    aud.add_argument("--price-market", default=None,
                     help="EXCHANGE:SYMBOL whose trades set the conversion price")
    aud.add_argument("--out", required=True, help="output directory")

    sim = sub.add_parser("simulate", help="run a synthetic scenario")
    sim.add_argument("--scenario", required=True, help="scenario JSON file")
    sim.add_argument("--out", required=True, help="output directory")

    ver = sub.add_parser("verify", help="check a simulated scenario against the auditor")
    ver.add_argument("--in", dest="input_dir", required=True,
                     help="directory produced by `oiaudit simulate`")
    ver.add_argument("--tau-ms", type=int, default=1)
    return p


# ---------------------------------------------------------------------------
# capture
# ---------------------------------------------------------------------------

def _connector_from_dict(d: dict) -> ConnectorConfig:
    try:
        market = MarketId.make(d["exchange"], d["symbol"],
                               ContractKind(d["contract_kind"]))
        return ConnectorConfig(
            market=market,
            ws_endpoint=d["ws_endpoint"],
            rest_oi_endpoint=d.get("rest_oi_endpoint", ""),
            symbol_map=d["symbol_map"],
            oi_poll_ms=int(d.get("oi_poll_ms", 500)),
            reconnect_backoff_ms=tuple(d.get("reconnect_backoff_ms",
                                             (500, 1000, 2000, 5000))),
            contract_multiplier=Decimal(str(d.get("contract_multiplier", 1))),
            clock_skew_ms=int(d.get("clock_skew_ms", 5000)),
            subscribe_json=d.get("subscribe_json"),
            oi_source=d.get("oi_source", "poll"),
            venue=d.get("venue"),
        )
    except KeyError as exc:
        raise ConfigError(f"connector config missing key {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad connector config: {exc}") from exc


def load_capture_config(path: str) -> list[ConnectorConfig]:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    markets = doc.get("markets")
    if not isinstance(markets, list) or not markets:
        raise ConfigError("config must declare a non-empty 'markets' list")
    return [_connector_from_dict(m) for m in markets]


def cmd_capture(args) -> int:
    configs = load_capture_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    handles = []
    sinks = []
    stop = False

    def on_signal(_sig, _frm):
        nonlocal stop
        stop = True

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)

    for cfg in configs:
        stem = f"{cfg.market.exchange}_{cfg.market.symbol}".lower()
        writer = CaptureWriter(out / f"{stem}.cap", cfg.market,
                               extra={"oi_source": cfg.oi_source}, overwrite=True)
        dead = DeadLetterFile(out / f"{stem}.deadletter.jsonl")
        sink = BufferedCaptureSink(writer)
        handle = connect_and_stream(cfg, sink, dead_letter=dead)
        handles.append((cfg, handle, writer, dead))
        sinks.append(sink)

    started = time.monotonic()
    try:
        while not stop:
            time.sleep(0.2)
            if args.duration_s is not None and time.monotonic() - started >= args.duration_s:
                break
            if args.max_events is not None and all(
                h.stats.events >= args.max_events for _, h, _, _ in handles
            ):
                break
            for _, h, _, _ in handles:
                if h.error is not None:
                    raise h.error
    finally:
        for _, h, _, _ in handles:
            h.stop()
        for _, h, _, _ in handles:
            h.join(timeout=15)
        for sink in sinks:
            sink.close()
        for _, _, _, dead in handles:
            dead.close()

    summary = {
        cfg.market.key: {
            "events": h.stats.events,
            "gaps": h.stats.gaps,
            "dead_letters": h.stats.dead_letters,
            "skew_violations": h.stats.skew_violations,
            "oi_source_used": sorted(h.stats.oi_source_used),
        }
        for cfg, h, _, _ in handles
    }
    (out / "capture_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------

def _collect_captures(inputs: list[str]) -> list[Path]:
    paths: list[Path] = []
    for raw in inputs:
        p = Path(raw)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.cap")))
        elif p.exists():
            paths.append(p)
        else:
            raise AuditError(f"no such capture input: {p}")
    if not paths:
        raise AuditError("no capture files found")
    return paths


def cmd_audit(args) -> int:
    period = _parse_period(args.period) if args.period else None
    subperiods = _parse_subperiods(args.subperiods)
    mode = (IntervalMode.PER_OI_UPDATE if args.interval_mode == "per-oi-update"
            else IntervalMode.FIXED)
    paths = _collect_captures(args.inputs)
    cfg = AuditConfig(
        tau_ms=args.tau_ms,
        interval_mode=mode,
        fixed_width=_SUBPERIOD_NAMES[args.fixed_width] if mode is IntervalMode.FIXED else None,
    )

    streams = {}
    for path in paths:
        reader = replay(path)
        items = order_stream(list(reader))
        streams[reader.market.key] = (reader.market, items, path)

    price_events = None
    if args.price_market:
        key = args.price_market
        if key not in streams:
            raise AuditError(f"price market {key!r} not among the inputs")
        from oiaudit.model import split_stream

        price_events, _ = split_stream(streams[key][1])

    reports: list[MarketReport] = []
    grans = [s for s in subperiods if s is not SubPeriod.FULL]
    for market, items, path in streams.values():
        reports.append(
            audit_stream(items, cfg, period=period, subperiods=grans,
                         price_events=price_events)
        )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    text, tsv = period_table(reports)
    (out / "period_table.txt").write_text(text)
    (out / "period_table.tsv").write_text(tsv)
    stext, stsv = subperiod_table(reports, grans)
    (out / "subperiod_table.txt").write_text(stext)
    (out / "subperiod_table.tsv").write_text(stsv)
    for r in reports:
        stem = f"{r.market.exchange}_{r.market.symbol}".lower()
        (out / f"{stem}_series.tsv").write_text(series_tsv(r))

    effective_period = period or PeriodSpec(
        min(r.full.period.start for r in reports),
        max(r.full.period.end for r in reports),
    )
    manifest = build_manifest(cfg, reports, effective_period, subperiods,
                              input_paths=paths)
    (out / "manifest.json").write_text(manifest.to_json())

    print(text)
    if grans:
        print(stext)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / verify
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        spec = ScenarioSpec.load(args.scenario)
    except FileNotFoundError as exc:
        raise AuditError(f"scenario file not found: {args.scenario}") from exc
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise AuditError(f"bad scenario file: {exc}") from exc

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = generate(spec)

    with CaptureWriter(out / "true.cap", spec.market, overwrite=True) as w:
        for ev in result.true_stream:
            w.write(ev)
    with CaptureWriter(out / "reported.cap", spec.market, overwrite=True) as w:
        for ev in result.reported_stream:
            w.write(ev)
    result.truth.save(out / "truth.jsonl")
    spec.save(out / "scenario.json")

    print(f"scenario: policy={spec.policy.kind.value} seed={spec.rng_seed}")
    print(f"true events:     {len(result.true_stream)}")
    print(f"reported events: {len(result.reported_stream)}")
    return EXIT_OK


def _verify_expectations(spec: ScenarioSpec, truth: TruthLedger,
                         report: MarketReport, tau_ms: int) -> list[str]:
    """Returns violation messages; empty means the oracle holds."""
    from oiaudit.simulate import PolicyKind

    problems: list[str] = []
    expected_q = truth.expected_full_excess_quanta(tau_ms)
    got_q = report.full.x_tv.quanta
    print(f"full-period excess: audited={report.full.x_tv.value} "
          f"truth-implied={Decimal(expected_q).scaleb(-8)}")
    if got_q != expected_q:
        problems.append(
            f"full-period excess mismatch: audited {got_q} quanta, "
            f"truth ledger implies {expected_q}"
        )

    minute_stats = report.stats.get(SubPeriod.MIN1)
    p_min = minute_stats.p_excess if minute_stats else None
    kind = spec.policy.kind
    if kind is PolicyKind.HONEST:
        if got_q != 0:
            problems.append("honest scenario shows period excess")
        for gran, st in report.stats.items():
            if st is not None and st.n_excess != 0:
                problems.append(f"honest scenario shows {gran.value} excess")
        print("signature: honest — excess must be zero at every resolution")
    elif kind is PolicyKind.DELAY:
        if spec.policy.delay_ms <= tau_ms:
            if got_q != 0 or any(
                st is not None and st.n_excess for st in report.stats.values()
            ):
                problems.append("delay within tau still produced excess")
            print(f"signature: delay {spec.policy.delay_ms}ms <= tau — fully absorbed")
        else:
            if got_q != 0:
                problems.append("long-delay scenario must still settle over the full period")
            if p_min is not None:
                print(f"signature: eventual consistency — minute-level excess "
                      f"probability {p_min} settles to 0 at the full period")
    elif kind is PolicyKind.HIDE:
        print(f"signature: hidden volume — period excess equals the truth "
              f"ledger's unreported contribution exactly")
    elif kind is PolicyKind.FABRICATE_OI:
        print("signature: fabricated OI — excess tracks the injected perturbation")
    return problems


def cmd_verify(args) -> int:
    base = Path(args.input_dir)
    scenario_path = base / "scenario.json"
    truth_path = base / "truth.jsonl"
    reported_path = base / "reported.cap"
    for p in (scenario_path, truth_path, reported_path):
        if not p.exists():
            raise AuditError(f"verify input missing: {p}")

    spec = ScenarioSpec.load(scenario_path)
    truth = TruthLedger.load(truth_path)
    items = order_stream(list(replay(reported_path)))
    cfg = AuditConfig(tau_ms=args.tau_ms)
    report = audit_stream(items, cfg)

    problems = _verify_expectations(spec, truth, report, args.tau_ms)
    if problems:
        for msg in problems:
            print(f"VIOLATION: {msg}", file=sys.stderr)
        raise OracleViolation("; ".join(problems))
    print("verify: ok")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "capture":
            return cmd_capture(args)
        if args.command == "audit":
            return cmd_audit(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "verify":
            return cmd_verify(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OracleViolation:
        return EXIT_ORACLE
    except AuditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
