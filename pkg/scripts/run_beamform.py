"""Run `cccp beamform` with configs/beamform.json; extra arguments (e.g. --out, --seed) pass through."""

import sys
from pathlib import Path

from cccp.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "beamform.json"

if __name__ == "__main__":
    sys.exit(main(["-v", "beamform", "--config", str(CONFIG), *sys.argv[1:]]))
