"""Run the acceptance gate and print one PASS/FAIL line per criterion.

    python3 scripts/run_acceptance.py [-k EXPR]
"""

import sys
from pathlib import Path

import pytest

if __name__ == "__main__":
    tests = Path(__file__).resolve().parent.parent / "tests" / "test_acceptance.py"
    sys.exit(pytest.main([str(tests), "-q", *sys.argv[1:]]))
