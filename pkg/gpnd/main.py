"""
GPND — Entry Point
Configures logging and hands the command line to gpnd.cli.

    python -m gpnd.main eval --data data/mnist --class 7 --config desk.cfg --out report.json
"""

import logging
import sys

from gpnd.cli import main as cli_main
from gpnd.config import LOG_FORMAT, LOG_LEVEL


def main() -> None:
    logging.basicConfig(level=getattr(logging, LOG_LEVEL, logging.INFO), format=LOG_FORMAT)
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
