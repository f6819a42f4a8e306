#!/usr/bin/env python3
"""Command-line entry point; see ``panfuse_exporter.cli`` for the arguments."""

import sys

from panfuse_exporter.cli import main

if __name__ == "__main__":
    sys.exit(main())
