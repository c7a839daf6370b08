#!/usr/bin/env python3
"""Entry point for the skeleton search engine."""

from src.automr.cli.main import main

if __name__ == "__main__":
    main()
