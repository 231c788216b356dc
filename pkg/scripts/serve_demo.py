#!/usr/bin/env python3
"""Launch the interactive demo: wall-clock run plus control API and dashboard.

Equivalent to:
  edgelora run --scenario scenarios/demo.scn --realtime --serve 127.0.0.1:8080
"""

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from edgelora.cli import main  # noqa: E402

ROOT = pathlib.Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    addr = sys.argv[1] if len(sys.argv) > 1 else "127.0.0.1:8080"
    raise SystemExit(main([
        "run",
        "--scenario", str(ROOT / "scenarios" / "demo.scn"),
        "--realtime",
        "--serve", addr,
    ]))
