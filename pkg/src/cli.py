#!/usr/bin/env python3
"""
Entry point for tree-ensemble bandit experiments.

Canonical entry: from project root run `uv run python src/cli.py <verb> ...`
(or the installed `tebandit` script).
"""

import logging
import sys

import config as config_module
from app import EXIT_RUNTIME, dispatch


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=config_module.settings.log_level_number,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return dispatch(argv)
    except KeyboardInterrupt:
        print("\nStopped by user", file=sys.stderr)
        return 0
    except Exception as e:
        print(f"Fatal error: {e}", file=sys.stderr)
        import traceback

        traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
