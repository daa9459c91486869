"""Entry point for one cell process: ``python -m cellkit.sim.node <component> --scenario FILE``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from cellkit.bus.tcp import TcpEndpoint, default_port
from cellkit.runtime import LiveReactor
from cellkit.sim.cell import CellModel
from cellkit.sim.components import BusWorldLink, WorldServer, driver_for
from cellkit.sim.faults import FaultSpec
from cellkit.sim.scenario import ConfigError, load_scenario


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="cellkit-node", description="run one simulated cell component")
    ap.add_argument("component")
    ap.add_argument("--scenario", default=None)
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=None)
    ap.add_argument("--epoch", type=float, default=None)
    ap.add_argument("--time-scale", type=float, default=1.0)
    ap.add_argument("--incarnation", type=int, default=0)
    ap.add_argument("--faults", default=None, help="JSON list overriding the scenario's fault specs")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format=f"{args.component}: %(message)s")

    try:
        scenario = load_scenario(args.scenario)
        faults = None if args.faults is None else tuple(FaultSpec.from_dict(f) for f in json.loads(args.faults))
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    reactor = LiveReactor(args.time_scale, args.epoch)
    port = default_port() if args.port is None else args.port
    ep = TcpEndpoint(args.component, reactor, args.host, port)
    # the process lives exactly as long as its bus connection
    ep.disconnect_callbacks.append(lambda reason: os._exit(0))

    if args.component == "world":
        cell = CellModel(scenario, start_time=reactor.now())
        WorldServer(cell, ep)
    else:
        if args.component not in scenario.components:
            print(f"unknown component {args.component!r}", file=sys.stderr)
            return 2
        comp = driver_for(args.component)(scenario.components[args.component], scenario, ep, BusWorldLink(ep),
                                          incarnation=args.incarnation, exit_process=lambda: os._exit(3),
                                          faults=faults)
        reactor.post(comp.start)
    try:
        reactor.run_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
