#!/usr/bin/env python3
"""Separating input design for constrained affine models.

Usage:
    python discrimination-design.py design --scenario builtin:numerical --objective inf --formulation both
    python discrimination-design.py eliminate --scenario builtin:numerical
    python discrimination-design.py simulate --scenario builtin:numerical --design results/design.json --runs 10
"""
import sys

from discrimination.cli import main

if __name__ == "__main__":
    sys.exit(main())
