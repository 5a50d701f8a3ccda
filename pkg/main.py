#!/usr/bin/env python3
"""
MIME Experiments - Main Entry Point

Run `python main.py <command> --help` for the experiment commands
(storage, energy, throughput, ablate, train, sparsity).
"""

import sys

try:
    from src.main_app import main
except ImportError as e:
    print(f"Import error: {e}")
    print("Make sure all dependencies are installed:")
    print("pip install -r requirements.txt")
    sys.exit(1)

if __name__ == "__main__":
    sys.exit(main())
