"""Run `cccp experiment-gap` with configs/gap.json; extra arguments (e.g. --out, --seed) pass through."""

import sys
from pathlib import Path

from cccp.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "gap.json"

if __name__ == "__main__":
    sys.exit(main(["-v", "experiment-gap", "--config", str(CONFIG), *sys.argv[1:]]))
