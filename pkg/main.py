"""
polyland - Entry point.

Geometry toolkit for shallow polynomial networks.
"""
import sys
import os

# Ensure project root is on the path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from core.cli import dispatch


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
