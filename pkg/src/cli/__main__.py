"""
CLI entry point for latsep.

This allows running the CLI with: python3 -m src.cli
"""
from .commands import main

if __name__ == "__main__":
    raise SystemExit(main())
