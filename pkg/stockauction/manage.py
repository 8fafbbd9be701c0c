#!/usr/bin/env python
"""Command-line entry point for the stockauction simulator.

Besides the usual Django commands, the `market` app adds:
    train_mc, train_ddpg, evaluate, verify_ic, reproduce, cumalloc
"""
import os
import sys


def main():
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "stockauction.settings")
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Install the packages in requirements.txt "
            "inside an activated virtual environment (see activate.sh)."
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == "__main__":
    main()
