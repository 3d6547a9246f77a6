#!/usr/bin/env python3
"""Proximity / phase-space / flow-expansion audits of the base working set.

Usage: python scripts/run_audits.py [T] [outdir]
"""

import sys

from lengthsep.cli import main

if __name__ == "__main__":
    T = sys.argv[1] if len(sys.argv) > 1 else "6.0"
    out = sys.argv[2] if len(sys.argv) > 2 else "out/audit"
    sys.exit(main(["audit", "-T", T, "--out", out]))
