#!/usr/bin/env python3
"""Run the full pipeline for one config: `python scripts/run_pipeline.py configs/tiny.cfg`.

Thin wrapper over the CLI's run-all; forwards extra flags.
"""

import sys

from taskemb.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    if not args or args[0].startswith("-"):
        print(__doc__)
        sys.exit(2)
    sys.exit(main(["run-all", "--config", args[0], *args[1:]]))
