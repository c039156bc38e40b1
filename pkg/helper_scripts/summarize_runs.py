#!/usr/bin/env python3
"""
Summarize Runs
Prints a summary of every run directory under a runs folder (same output as `python -m dni_lab report`)
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from dni_lab.cli import main  # noqa: E402


if __name__ == "__main__":
    runs_dir = sys.argv[1] if len(sys.argv) > 1 else "runs"
    sys.exit(main(["report", "--runs-dir", runs_dir]))
