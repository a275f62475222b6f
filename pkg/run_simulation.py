#!/usr/bin/env python3
"""
Limited-advice bandit simulator.
Entry point for the `simulate`, `bounds`, `maxload` and `scaling` commands.
"""

import sys
from modules.main import main
from modules.utils import logger

if __name__ == "__main__":
    logger.info("=== Limited Advice Bandit Simulator Started ===")
    exit_code = main()
    logger.info("=== Limited Advice Bandit Simulator Finished ===")
    sys.exit(exit_code)
