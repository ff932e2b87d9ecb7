#!/usr/bin/env python3
"""Sampled-LP approximate dynamic programming - Main entry point.

This script runs the experiments and checks without installing the package:
- Learns quadratic q-functions with the classical and the relaxed program
- Compares learned gains and offsets with the Riccati solution
- Evaluates cart-pole policies against the LQR baseline
- Verifies the Bellman operator properties on random finite MDPs

Usage Examples:
    # Constraint-count sweep with the default parameters
    python adp.py exp1

    # Smaller sweep, fixed seed, stable CSVs
    python adp.py exp1 --constraints 500,1000 --reps 3 --seed 7 --no-timing

    # State-dimension sweep with a parameter file
    python adp.py exp2 --config ./exp2.json --out ./results/exp2

    # Cart-pole policies against LQR, four concurrent runs
    python adp.py exp3 --workers 4

    # Operator properties on 100 random MDPs
    python adp.py verify-operators --mdps 100

    # Solve an exported program
    python adp.py solve --lp ./problem.lp

Environment Variables:
    ADP_LOG_LEVEL: Logging level
    ADP_LOG_FILE: Log file path, empty disables file logging
    ADP_OUTPUT_DIRECTORY: Default output directory
    ADP_MAX_WORKERS: Concurrent experiment runs

Requirements:
    pip install numpy scipy loguru pydantic pydantic-settings click rich tenacity
"""

import sys
from pathlib import Path

# Add the src directory to the Python path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from adp.cli import cli

if __name__ == "__main__":
    cli()
