"""
scripts/quick_check.py
======================
Fast smoke run: sphere moments at small n, a short Monte Carlo run and the
fast verification level. Uses the same code paths as main.py.

Usage:
  python scripts/quick_check.py [n]
"""
import os
import sys
from pathlib import Path

# Setup paths to ensure we can import modules from the parent directory
script_dir = Path(__file__).parent.resolve()
project_root = script_dir.parent.resolve()

# Change working directory to project root so 'output/' is created in the right place
os.chdir(project_root)
sys.path.insert(0, str(project_root))

import main

if __name__ == "__main__":
    n = sys.argv[1] if len(sys.argv) > 1 else "8"
    print(f"🚀 Starting quick check (sphere, n={n})")

    steps = [
        ["moments", "--family", "sphere", "--n", n, "--k", "3"],
        ["simulate", "--family", "sphere", "--n", n, "--paths", "500", "--seed", "1"],
        ["verify", "--level", "fast"],
    ]
    for argv in steps:
        code = main.main(argv)
        if code != 0:
            print(f"❌ '{' '.join(argv)}' exited with {code}")
            sys.exit(code)
    print("\n✅ Quick check passed.")
