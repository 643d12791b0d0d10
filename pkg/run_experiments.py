#!/usr/bin/env python3
"""
Multi-subject CSP - experiment runner

    python run_experiments.py gen-toy --out data/toy --eta 1 --perturb A
    python run_experiments.py run-toy --config src/data/example_toy_config.json
    python run_experiments.py run --data data/toy --methods csp,covcsp,sscsp
"""
import sys
from pathlib import Path

sys.path.append(str(Path(__file__).parent / "src"))

from app.main import main

if __name__ == "__main__":
    sys.exit(main())
