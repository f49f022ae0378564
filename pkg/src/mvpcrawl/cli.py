"""Command-line entry point: plan, scenario, simulate, broker, worker,
dispatch, postprocess/report.

The simulate command runs the whole pipeline in one process on the
virtual clock: broker, scheduler, and per-VP worker pools against the
simulated web. The broker/worker/dispatch commands run the same pieces
against a real TCP broker on the wall clock.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import threading
from datetime import datetime, timezone
from importlib import resources

from . import __version__
from .abp import load_filterset
from .analytics import IngestError, ingest_dir, write_report
from .broker import Broker, RESIDENTIAL_QUEUE, COMMON_QUEUE, WORKER_LEASE_MS
from .captcha import load_detection_rules, parse_detection_rules
from .model import ALL_PROFILES, BrowserProfile, VantagePoint, vp_from_code
from .records import RecordWriter
from .runtime import SystemClock, VirtualClock, VirtualRuntime
from .scheduler import (
    ExperimentPlan,
    dispatch,
    generate_plan,
    load_domains,
    read_plan,
    reap,
    write_plan,
)
from .simweb import ScenarioError, SimDriver, build_world, load_scenario, paper_scenario
from .suffixes import load_suffixes
from .wire import DEFAULT_PORT, BrokerClient, BrokerServer, WireError, serve_forever
from .worker import Worker

log = logging.getLogger("mvp")

ENV_BROKER = "MVP_BROKER_ADDR"
ENV_OUT = "MVP_OUT_DIR"


def _data_path(name: str) -> str:
    return str(resources.files("mvpcrawl").joinpath("data", name))


def bundled_suffix_table():
    return load_suffixes(_data_path("public_suffix_list.dat"))


def bundled_captcha_rules():
    return load_detection_rules(_data_path("captcha_rules.json"))


def _parse_profiles(text: str) -> tuple[BrowserProfile, ...]:
    if text.strip().lower() in ("all", ""):
        return ALL_PROFILES
    return tuple(BrowserProfile.from_code(code) for code in text.split(","))


def _parse_vps(text: str) -> tuple[VantagePoint, ...]:
    if text.strip().lower() in ("all", ""):
        return tuple(VantagePoint)
    return tuple(vp_from_code(code) for code in text.split(","))


def _atomic_json(path: str, obj: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


# -- subcommands ---------------------------------------------------------------

def cmd_scenario(args) -> int:
    if not args.paper:
        print("only the bundled --paper scenario is available", file=sys.stderr)
        return 2
    scenario = paper_scenario(site_count=args.sites)
    json.dump(scenario.to_json(), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def cmd_plan(args) -> int:
    domains = load_domains(args.domains, top=args.top)
    if not domains:
        print(f"no domains parsed from {args.domains}", file=sys.stderr)
        return 2
    plan = ExperimentPlan(
        domains=tuple(domains),
        profiles=_parse_profiles(args.profiles),
        vps=_parse_vps(args.vps),
        repetitions=args.reps,
        width=args.width,
        depth=args.depth,
    )
    count = write_plan(args.out, generate_plan(plan))
    log.info("plan: %d configs (%d sets) -> %s", count, plan.set_count, args.out)
    return 0


def _spawn_sim_workers(runtime, clock, broker, world, table, rules, records_dir, per_vp):
    writers = []
    workers = []
    for vp in VantagePoint:
        for i in range(per_vp):
            worker_id = f"{vp.value}-{i}"
            writer = RecordWriter(os.path.join(records_dir, f"records-{worker_id}.jsonl"))
            writers.append(writer)
            queue = RESIDENTIAL_QUEUE if vp is VantagePoint.RESIDENTIAL else COMMON_QUEUE
            worker = Worker(
                worker_id=worker_id,
                queue=queue,
                broker=broker,
                driver=SimDriver(world, clock),
                clock=clock,
                table=table,
                writer=writer,
                captcha_rules=rules,
                poll_ms=500,
                lease_ms=WORKER_LEASE_MS,
            )
            workers.append(worker)
            runtime.spawn(worker_id, worker.run)
    return writers, workers


def cmd_simulate(args) -> int:
    try:
        scenario = load_scenario(args.scenario) if args.scenario else paper_scenario()
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out or os.environ.get(ENV_OUT) or "mvp-out"
    records_dir = os.path.join(out_dir, "records")
    os.makedirs(records_dir, exist_ok=True)

    world = build_world(scenario, args.seed)
    top = args.top if args.top is not None else scenario.site_count
    if top < 1 or top > len(world.domains):
        print(f"--top must be within 1..{len(world.domains)}", file=sys.stderr)
        return 2
    plan = ExperimentPlan(
        domains=tuple(world.domains[:top]),
        profiles=_parse_profiles(args.profiles),
        vps=_parse_vps(args.vps),
        repetitions=args.reps,
        width=args.width,
        depth=args.depth,
    )
    configs = list(generate_plan(plan))
    plan_path = os.path.join(out_dir, "plan.jsonl")
    write_plan(plan_path, configs)

    manifest_path = os.path.join(out_dir, "manifest.json")
    manifest = {
        "scenario": args.scenario or "<bundled>",
        "seed": args.seed,
        "plan": plan_path,
        "broker-address": "in-process",
        "output-dir": out_dir,
        "component-versions": {"mvpcrawl": __version__},
        "crawls": len(configs),
        "sets": plan.set_count,
        "started": datetime.now(timezone.utc).isoformat(),
        "finished": None,
    }
    _atomic_json(manifest_path, manifest)

    runtime = VirtualRuntime()
    clock = VirtualClock(runtime)
    broker = Broker(clock)
    table = bundled_suffix_table()
    rules = bundled_captcha_rules()

    sched_writer = RecordWriter(os.path.join(records_dir, "records-scheduler.jsonl"))

    def scheduler_activity():
        summary = dispatch(configs, broker, party_size=plan.party_size)
        broker.close_dispatch()
        log.info(
            "dispatched %d jobs (%d residential / %d common)",
            summary.total, summary.residential, summary.common,
        )

    def reaper_activity():
        while not broker.drained():
            reap(broker, writer=sched_writer)
            clock.sleep(30_000)

    runtime.spawn("scheduler", scheduler_activity)
    runtime.spawn("reaper", reaper_activity)
    writers, workers = _spawn_sim_workers(
        runtime, clock, broker, world, table, rules, records_dir, args.workers_per_vp
    )
    log.info("simulate: %d crawls over %d sets, %d workers", len(configs), plan.set_count,
             len(workers))
    runtime.run()
    for writer in writers:
        writer.close()
    sched_writer.close()

    ok = broker.drained()
    manifest["finished"] = datetime.now(timezone.utc).isoformat()
    manifest["stats"] = broker.stats()
    manifest["virtual-ms"] = clock.now_ms()
    _atomic_json(manifest_path, manifest)
    log.info("simulate done: %s (virtual %.1f h)", broker.stats(), clock.now_ms() / 3.6e6)
    return 0 if ok else 1


def cmd_broker(args) -> int:
    host, _, port = args.addr.rpartition(":")
    server = BrokerServer((host or "0.0.0.0", int(port or DEFAULT_PORT)))
    if args.plan:
        configs = read_plan(args.plan)
        party = len({c.vp for c in configs})
        summary = dispatch(configs, server.broker, party_size=party)
        server.broker.close_dispatch()
        log.info("dispatched %d jobs from %s", summary.total, args.plan)

    out_dir = args.out or os.environ.get(ENV_OUT) or "."
    os.makedirs(out_dir, exist_ok=True)
    reap_writer = RecordWriter(os.path.join(out_dir, "records-broker.jsonl"))

    stop = threading.Event()

    def reaper():
        while not stop.wait(30.0):
            reap(server.broker, writer=reap_writer)

    threading.Thread(target=reaper, daemon=True).start()
    log.info("broker serving on %s", args.addr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        stop.set()
        server.shutdown()
        reap_writer.close()
    return 0


def cmd_worker(args) -> int:
    if args.driver == "real":
        print(
            "driver 'real' needs an external browser driver wired in via the "
            "FetchDriver interface; this build bundles only the sim driver",
            file=sys.stderr,
        )
        return 2
    try:
        scenario = load_scenario(args.scenario) if args.scenario else paper_scenario()
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    world = build_world(scenario, args.seed)
    table = bundled_suffix_table()
    rules = bundled_captcha_rules()
    out_dir = args.out or os.environ.get(ENV_OUT) or "mvp-out"
    os.makedirs(out_dir, exist_ok=True)
    vp = vp_from_code(args.vp)
    queue = RESIDENTIAL_QUEUE if vp is VantagePoint.RESIDENTIAL else COMMON_QUEUE
    broker_addr = args.broker or os.environ.get(ENV_BROKER) or f"127.0.0.1:{DEFAULT_PORT}"

    clock = SystemClock()
    threads = []
    failures: list[Exception] = []
    counts: list[int] = []

    def run_one(i: int) -> None:
        worker_id = f"{vp.value}-{i}"
        try:
            client = BrokerClient(broker_addr, clock)
        except WireError as exc:
            failures.append(exc)
            return
        writer = RecordWriter(os.path.join(out_dir, f"records-{worker_id}.jsonl"))
        worker = Worker(
            worker_id=worker_id,
            queue=queue,
            broker=client,
            driver=SimDriver(world, clock),
            clock=clock,
            table=table,
            writer=writer,
            captcha_rules=rules,
            tunnel_base=args.tunnel or "",
            idle_exit_ms=args.idle_exit_ms,
        )
        try:
            counts.append(worker.run())
        except Exception as exc:  # surfaced as a nonzero exit below
            failures.append(exc)
        finally:
            writer.close()
            client.close()

    for i in range(args.parallel):
        t = threading.Thread(target=run_one, args=(i,), name=f"worker-{i}")
        t.start()
        threads.append(t)
    for t in threads:
        t.join()
    if failures:
        for exc in failures:
            print(f"worker error: {exc}", file=sys.stderr)
        return 2
    log.info("workers done: %d crawls", sum(counts))
    return 0


def cmd_dispatch(args) -> int:
    broker_addr = args.broker or os.environ.get(ENV_BROKER) or f"127.0.0.1:{DEFAULT_PORT}"
    try:
        client = BrokerClient(broker_addr)
    except WireError as exc:
        print(f"dispatch error: {exc}", file=sys.stderr)
        return 2
    configs = read_plan(args.plan)
    party = len({c.vp for c in configs})
    summary = dispatch(configs, client, party_size=party)
    if args.close:
        client.close_dispatch()
    client.close()
    log.info("dispatched %d jobs (%d residential)", summary.total, summary.residential)
    return 0


def cmd_report(args) -> int:
    in_dir = args.records
    if not os.path.isdir(in_dir):
        print(f"records directory not found: {in_dir}", file=sys.stderr)
        return 2
    el_fs = ep_fs = None
    if args.filters:
        paths = [p.strip() for p in args.filters.split(",") if p.strip()]
        for path in paths:
            if not os.path.exists(path):
                print(f"filter list not found: {path}", file=sys.stderr)
                return 2
        if len(paths) >= 1:
            el_fs = load_filterset(paths[0])
        if len(paths) >= 2:
            ep_fs = load_filterset(paths[1])
    if args.captcha_rules:
        if not os.path.exists(args.captcha_rules):
            print(f"captcha rules not found: {args.captcha_rules}", file=sys.stderr)
            return 2
        load_detection_rules(args.captcha_rules)  # validated; detection happened at crawl time
    try:
        store = ingest_dir(in_dir)
    except IngestError as exc:
        print(f"ingest error: {exc}", file=sys.stderr)
        return 1
    write_report(store, args.out, el_fs, ep_fs, min_load=args.min_load)
    log.info("report written to %s", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenario", help="emit a scenario spec to stdout")
    p.add_argument("--paper", action="store_true", help="the bundled evaluation scenario")
    p.add_argument("--sites", type=int, default=500)
    p.set_defaults(fn=cmd_scenario)

    p = sub.add_parser("plan", help="generate a crawl plan from a domain list")
    p.add_argument("--domains", required=True, help="CSV of rank,domain")
    p.add_argument("--top", type=int, default=None)
    p.add_argument("--profiles", default="hl,hd,hw")
    p.add_argument("--vps", default="u,r,c,t")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--width", type=int, default=3)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("simulate", help="run the full pipeline on the virtual clock")
    p.add_argument("--scenario", default=None, help="scenario JSON (default: bundled)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--top", type=int, default=None, help="number of domains (default: all sites)")
    p.add_argument("--profiles", default="hl,hd,hw")
    p.add_argument("--vps", default="u,r,c,t")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--width", type=int, default=3)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--workers-per-vp", type=int, default=8)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("broker", help="broker service")
    broker_sub = p.add_subparsers(dest="mode", required=True)
    ps = broker_sub.add_parser("serve")
    ps.add_argument("--addr", default=os.environ.get(ENV_BROKER) or f"0.0.0.0:{DEFAULT_PORT}")
    ps.add_argument("--plan", default=None, help="dispatch this plan on startup")
    ps.add_argument("--out", default=None, help="where dropped-crawl records go")
    ps.set_defaults(fn=cmd_broker)

    p = sub.add_parser("worker", help="crawl worker pool")
    worker_sub = p.add_subparsers(dest="mode", required=True)
    pw = worker_sub.add_parser("run")
    pw.add_argument("--broker", default=None, help=f"host:port (or ${ENV_BROKER})")
    pw.add_argument("--vp", required=True)
    pw.add_argument("--driver", choices=("sim", "real"), default="sim")
    pw.add_argument("--scenario", default=None)
    pw.add_argument("--seed", type=int, default=1)
    pw.add_argument("--tunnel", default=None, help="opaque tunnel config for the driver")
    pw.add_argument("--out", default=None)
    pw.add_argument("--parallel", type=int, default=8)
    pw.add_argument("--idle-exit-ms", type=int, default=None)
    pw.set_defaults(fn=cmd_worker)

    p = sub.add_parser("dispatch", help="enqueue a plan file into a running broker")
    p.add_argument("--broker", default=None)
    p.add_argument("--plan", required=True)
    p.add_argument("--close", action="store_true", help="close dispatch after enqueueing")
    p.set_defaults(fn=cmd_dispatch)

    for name in ("postprocess", "report"):
        p = sub.add_parser(name, help="ingest records and emit the report")
        p.add_argument("--in", dest="records", required=True)
        p.add_argument("--filters", default=None, help="ad-list,tracker-list paths")
        p.add_argument("--captcha-rules", default=None)
        p.add_argument("--min-load", type=int, default=3)
        p.add_argument("--out", required=True)
        p.set_defaults(fn=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
