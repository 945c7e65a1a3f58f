#!/usr/bin/env python3
"""
trackwise launcher
==================

Runs the experiment CLI or the HTTP API.

Usage:
    python launch.py track                       # BS constant-beta tracking, built-in parameters
    python launch.py vxx --paths 500             # roll strategy under CIR
    python launch.py calibrate --config configs/calibrate_cir.toml
    python launch.py verify                      # invariant suite
    python launch.py serve --port 8000           # HTTP API
"""

import sys

from app.cli import main


if __name__ == '__main__':
    sys.exit(main())
