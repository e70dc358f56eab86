"""
v6telescope - IPv6 network telescope scanner analysis

Subcommands:
- ingest        normalize pcap/pcapng/NDJSON captures into probe NDJSON
- sessions      split probes into scan sessions (/128 or /64 sources)
- classify      addresses | temporal | netsel
- nist          randomness tests over target address sections
- fingerprint   payload clustering and scan tool attribution
- schedule      prefix-splitting announcement schedule
- simulate      synthetic scanner traces with ground truth
- report        tables + manifest from sessions and classifications
- validate      simulator -> pipeline -> scorecard against ground truth

Exit codes: 0 ok, 1 usage, 2 data error, 3 acceptance failure.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import IO, List, Optional

from addr6 import Level, parse_prefix
from address_types import AddressType, aggregate_types, type_histogram
from artifacts import load_json, save_json, write_csv
from bgp_schedule import generate_schedule, schedule_from_json, schedule_to_json
from config import RunConfig, load_config
from errors import DataError, UsageError, V6Error
from fingerprint import (
    cluster_payloads, cluster_rows, label_cluster, load_signatures, tool_report,
)
from ingest import (
    IngestSummary, load_enrichment_maps, parse_ts, read_packets, write_ndjson,
)
from netsel import classify_sources, cluster_archetypes
from pipeline import build_profiles, fingerprint_tables, run_validate, session_address_label, write_profiles
from randomness import RandomnessConfig, TESTS, Section, result_rows, session_randomness
from report import build_bundle, read_profiles, write_bundle
from sessionizer import SessionizerConfig, load_sessions, sessionize, sessions_by_source, write_sessions
from simulator import generate_population, simulate, spec_from_json, write_ground_truth
from temporal import classify_temporal

log = logging.getLogger("v6t")


def setup_logger(level: str = "INFO", stream: IO[str] = sys.stdout) -> logging.Logger:
    root = logging.getLogger()
    root.setLevel(getattr(logging, level.upper(), logging.INFO))
    h = logging.StreamHandler(stream)
    fmt = logging.Formatter("%(asctime)s | %(levelname)s | %(message)s", "%H:%M:%S")
    h.setFormatter(fmt)
    root.handlers[:] = [h]
    return log


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _open_out(path: str) -> IO[str]:
    if path == "-":
        return sys.stdout
    return open(path, "w", encoding="utf-8")


def _load_schedule(path: Optional[str]):
    if not path:
        return None
    return schedule_from_json(load_json(path))


def _maps(cfg: RunConfig, rdns: str = ""):
    if not (cfg.asn_map or cfg.geo_map or cfg.nettype_map or cfg.rdns_map or rdns):
        return None
    return load_enrichment_maps(cfg.asn_map, cfg.geo_map, cfg.nettype_map, rdns or cfg.rdns_map)


def _cli_value(parse, value, flag: str):
    try:
        return parse(value)
    except ValueError as e:
        raise UsageError(f"{flag}: {e}") from e


# ---------- subcommands ----------
def cmd_ingest(args, cfg: RunConfig) -> int:
    summary = IngestSummary()
    telescopes = cfg.telescope_table()
    exclude = list(cfg.exclude)
    for text in args.exclude or ():
        prefix = _cli_value(parse_prefix, text, "--exclude")
        if prefix not in exclude:
            exclude.append(prefix)
    packets = read_packets(args.inp, args.format, summary, exclude, cfg.payload_cap,
                           telescope_of=lambda dst: telescopes.lookup(dst) or "")
    out = _open_out(args.out)
    try:
        n = write_ndjson(packets, out)
    finally:
        if out is not sys.stdout:
            out.close()
    log.info(f"Ingest: {n} packets written | {summary.as_dict()}")
    return 0


def cmd_sessions(args, cfg: RunConfig) -> int:
    level = _cli_value(Level.parse, args.level, "--level") if args.level else cfg.sessions.level
    timeout = args.timeout_secs if args.timeout_secs is not None else cfg.sessions.timeout_secs
    summary = IngestSummary()
    packets = read_packets(args.inp, "auto", summary, cfg.exclude, cfg.payload_cap)
    sessions = sessionize(packets, SessionizerConfig(timeout, level), args.threads)
    if summary.rejected:
        log.warning(f"{summary.rejected} input lines rejected")
    out = _open_out(args.out)
    try:
        write_sessions(sessions, out)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_classify_addresses(args, cfg: RunConfig) -> int:
    sessions = load_sessions(args.inp)
    header = ["session_id", "source", "telescope", "targets", "addrsel"] + [t.value for t in AddressType]
    rows = []
    for s in sessions:
        label, _ = session_address_label(s, cfg)
        hist = type_histogram(s, cfg.address.service_ports)
        rows.append([s.session_id, s.source.render(), s.telescope, len(s.targets), label.value]
                    + [hist[t] for t in AddressType])
    write_csv(args.out, header, rows)
    if args.table:
        write_csv(args.table, ["type", "packets", "packets_share", "sources", "sources_share"],
                  aggregate_types(sessions, cfg.address.service_ports) if sessions else [])
    log.info(f"Address types: {len(rows)} sessions classified")
    return 0


def cmd_classify_temporal(args, cfg: RunConfig) -> int:
    sessions = load_sessions(args.inp)
    tcfg = cfg.temporal
    if args.bin_secs:
        tcfg = _cli_value(lambda v: replace(cfg.temporal, bin_secs=v), args.bin_secs, "--bin-secs")
    rows = []
    if sessions:
        window = (min(s.start_ts for s in sessions), max(s.end_ts for s in sessions) + 1)
        for (src, tel), group in sorted(sessions_by_source(sessions).items(), key=lambda kv: (kv[0][0].sort_key(), kv[0][1])):
            label = classify_temporal(group, tcfg, window)
            rows.append([src.render(), tel, len(group), sum(s.packet_count for s in group),
                         label.kind.value, label.period_secs])
    write_csv(args.out, ["source", "telescope", "sessions", "packets", "temporal", "period_secs"], rows)
    log.info(f"Temporal: {len(rows)} sources classified")
    return 0


def cmd_classify_netsel(args, cfg: RunConfig) -> int:
    sessions = load_sessions(args.sessions)
    schedule = _load_schedule(args.schedule)
    if any(s.source.level is Level.NET64 and not s.packets for s in sessions):
        log.warning("Sessions are keyed at /64 without packets; heavy hitters and /128 intersections use /64 sources")
    if args.params:
        cfg = load_config(args.params)
    labels, features = classify_sources(sessions, schedule, cfg.netsel)
    rows = [[src.render(), tel, lbl.value]
            for (src, tel), lbl in sorted(labels.items(), key=lambda kv: (kv[0][0].sort_key(), kv[0][1]))]
    write_csv(args.out, ["source", "telescope", "netsel"], rows)
    if args.archetypes:
        write_csv(args.archetypes, ["source", "cycle", "cluster", "archetype"],
                  [[a.source.render(), a.cycle, a.cluster, a.archetype.value if a.archetype else ""]
                   for a in cluster_archetypes(features, cfg=cfg.netsel)])
    log.info(f"Netsel: {len(rows)} sources labeled")
    return 0


def cmd_nist(args, cfg: RunConfig) -> int:
    sessions = load_sessions(args.inp)
    prefix = _cli_value(parse_prefix, args.prefix, "--prefix") if args.prefix else None
    rcfg = RandomnessConfig(
        alpha=args.alpha if args.alpha is not None else cfg.randomness.alpha,
        min_packets=cfg.randomness.min_packets,
        min_bits=cfg.randomness.min_bits,
    )
    rows = []
    skipped = 0
    for s in sessions:
        tel_prefix = prefix or cfg.telescopes.get(s.telescope)
        if tel_prefix is None:
            raise UsageError(f"no prefix for telescope {s.telescope}; pass --prefix")
        sr = session_randomness(s, tel_prefix, rcfg)
        if not sr.applicable:
            skipped += 1
            continue
        rows.extend(result_rows(s.source.render(), sr))
    write_csv(args.out, ["source", "session_id", "section", "test", "n_bits", "p_value", "pass"], rows)
    log.info(f"NIST: {len(rows) // (len(TESTS) * len(Section)) if rows else 0} sessions tested, "
             f"{skipped} below {rcfg.min_packets} packets")
    return 0


def cmd_fingerprint(args, cfg: RunConfig) -> int:
    packets = list(read_packets(args.inp, "auto", IngestSummary(), cfg.exclude, cfg.payload_cap))
    sessions = sessionize(packets, SessionizerConfig(cfg.sessions.timeout_secs, Level.ADDR128), args.threads)
    sigs = load_signatures(args.sigs or cfg.signatures)
    maps = _maps(cfg, args.rdns or "")
    rdns = maps.rdns_table if maps else {}
    clusters = [label_cluster(c, sigs, rdns, cfg.fingerprint)
                for c in cluster_payloads(sessions, cfg.fingerprint.clustering, cfg.fingerprint)]
    write_csv(args.out, ["cluster", "label", "subtag", "noise", "sessions", "sources", "representative"],
              cluster_rows(clusters))
    if args.tools:
        write_csv(args.tools, ["tool", "scanners", "scanners_share", "sessions", "sessions_share"],
                  tool_report(clusters))
    log.info(f"Fingerprint: {len(clusters)} clusters, {sum(c.is_tool for c in clusters)} attributed")
    return 0


def cmd_schedule(args, cfg: RunConfig) -> int:
    start = _cli_value(parse_ts, args.start, "--start") if args.start else 0
    schedule = generate_schedule(
        _cli_value(parse_prefix, args.base, "--base"), args.cycles, start,
        cycle_days=args.cycle_days or cfg.schedule_cycle_days,
        dark_days=args.dark_days if args.dark_days is not None else cfg.schedule_dark_days,
        baseline_days=args.baseline_days if args.baseline_days is not None else cfg.schedule_baseline_days,
    )
    doc = schedule_to_json(schedule)
    if args.out == "-":
        sys.stdout.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    else:
        save_json(args.out, doc)
    return 0


def cmd_simulate(args, cfg: RunConfig) -> int:
    schedule = _load_schedule(args.schedule)
    if schedule is None:
        raise UsageError("simulate needs --schedule")
    if args.specs:
        doc = load_json(args.specs)
        if not isinstance(doc, list):
            raise DataError(f"{args.specs}: expected a JSON list of scanner specs")
        specs = [spec_from_json(d) for d in doc]
    else:
        specs = generate_population(args.scanners, args.seed, schedule, cfg.netsel.schedule_telescope)
    packets, truth = simulate(specs, schedule, args.seed, cfg.reaction_delay_secs)
    with open(args.out, "w", encoding="utf-8") as f:
        write_ndjson(packets, f)
    write_ground_truth(args.truth, truth)
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    sessions = load_sessions(args.sessions)
    schedule = _load_schedule(args.schedule)
    maps = _maps(cfg)
    if args.classify:
        profiles = read_profiles(args.classify)
        features = classify_sources(sessions, schedule, cfg.netsel)[1] if schedule else []
    else:
        profiles, features = build_profiles(sessions, cfg, schedule, maps, args.threads)
        write_profiles(os.path.join(args.out_dir, "profiles.csv"), profiles)
    tables = build_bundle(sessions, profiles, schedule, features, maps, cfg.report, cfg.netsel,
                          cfg.address.service_ports)
    if any(s.packets for s in sessions):
        tables += fingerprint_tables(sessions, cfg)
    inputs = [args.sessions] + list(args.classify or []) + ([args.schedule] if args.schedule else [])
    write_bundle(tables, args.out_dir, cfg.as_dict(), cfg.config_hash(), inputs)
    return 0


def cmd_validate(args, cfg: RunConfig) -> int:
    card = run_validate(cfg, args.seed, args.scanners, args.out_dir, args.threads)
    acc = card.accuracy()
    log.info("=" * 58)
    log.info(f"Scorecard seed={args.seed} scanners={args.scanners}")
    for axis, value in acc.items():
        log.info(f"  {axis:<9} {value:.3f}")
    log.info("=" * 58)
    return 0


# ---------- argument parsing ----------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="v6telescope", description="IPv6 telescope scanner analysis")
    p.add_argument("--config", help="dotenv config file (default: ./v6telescope.env if present)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--log-level", default=None)
    sub = p.add_subparsers(dest="cmd", parser_class=_Parser)

    s = sub.add_parser("ingest")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--format", choices=("auto", "ndjson", "pcap"), default="auto")
    s.add_argument("--exclude", nargs="+", metavar="PREFIX", help="drop packets from these source prefixes")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("sessions")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--level")
    s.add_argument("--timeout-secs", type=int)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_sessions)

    c = sub.add_parser("classify")
    csub = c.add_subparsers(dest="what", parser_class=_Parser)
    s = csub.add_parser("addresses")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--table", help="also write the per-type aggregate")
    s.set_defaults(func=cmd_classify_addresses)
    s = csub.add_parser("temporal")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--bin-secs", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_classify_temporal)
    s = csub.add_parser("netsel")
    s.add_argument("--sessions", required=True)
    s.add_argument("--schedule")
    s.add_argument("--params", help="config file with NETSEL_* thresholds")
    s.add_argument("--out", required=True)
    s.add_argument("--archetypes", help="also write DBSCAN archetype assignments")
    s.set_defaults(func=cmd_classify_netsel)

    s = sub.add_parser("nist")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--prefix")
    s.add_argument("--alpha", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_nist)

    s = sub.add_parser("fingerprint")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--sigs")
    s.add_argument("--rdns")
    s.add_argument("--out", required=True)
    s.add_argument("--tools")
    s.set_defaults(func=cmd_fingerprint)

    s = sub.add_parser("schedule")
    s.add_argument("--base", required=True)
    s.add_argument("--cycles", type=int, default=16)
    s.add_argument("--start", help="RFC 3339 time or microseconds")
    s.add_argument("--cycle-days", type=int)
    s.add_argument("--dark-days", type=int)
    s.add_argument("--baseline-days", type=int)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_schedule)

    s = sub.add_parser("simulate")
    s.add_argument("--schedule", required=True)
    s.add_argument("--specs", help="JSON list of scanner specs")
    s.add_argument("--scanners", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--truth", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("report")
    s.add_argument("--sessions", required=True)
    s.add_argument("--classify", nargs="+")
    s.add_argument("--schedule")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("validate")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--scanners", type=int, default=200)
    s.add_argument("--out-dir", default="validate-out")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not hasattr(args, "func"):
            raise UsageError("missing subcommand")
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        cfg = load_config(args.config)
        to_stdout = getattr(args, "out", None) == "-"
        setup_logger(args.log_level or cfg.log_level, sys.stderr if to_stdout else sys.stdout)
        log.debug(f"Config hash {cfg.config_hash()}")
        return args.func(args, cfg)
    except V6Error as e:
        logging.getLogger("v6t").error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return UsageError.exit_code


if __name__ == "__main__":
    sys.exit(main())
