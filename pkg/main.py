#!/usr/bin/env python3
"""
Causeway - timeline-guided fault-schedule fuzzer for distributed systems

Runs a simulated Raft-like cluster, injects faults chosen by a Q-learning
agent rewarded for reaching new timeline-abstraction states, and checks the
cluster with log, assertion and consistency oracles.
"""

import logging
import sys

from config import Config
from cli.commands import main as cli_main


def main() -> int:
    """Main entry point for the Causeway command line"""
    logging.basicConfig(
        level=getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    return cli_main()


if __name__ == "__main__":
    sys.exit(main())
