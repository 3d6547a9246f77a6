#!/usr/bin/env python3
"""Desk-scale separation experiment: enumerate the working set, run the
two-window pipeline with the default rescaled exponents, and print a summary
of the certificate.  Artifacts land in out/separation/."""

import sys

from lengthsep.cli import main

if __name__ == "__main__":
    args = sys.argv[1:] or ["separate", "--windows", "2", "--out", "out/separation"]
    if args[0] != "separate":
        args = ["separate"] + args
    sys.exit(main(args))
