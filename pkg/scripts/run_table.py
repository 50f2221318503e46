"""Run `cccp experiment-table` with configs/table.json; extra arguments (e.g. --out, --seed) pass through."""

import sys
from pathlib import Path

from cccp.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "table.json"

if __name__ == "__main__":
    sys.exit(main(["-v", "experiment-table", "--config", str(CONFIG), *sys.argv[1:]]))
