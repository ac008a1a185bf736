"""
LPP Conditional - Main Entry Point
Conditional distributions of exponential last-passage percolation under an upper large deviation
"""

import sys


def main():
    """Main entry point for the experiment command line"""
    from src.cli import main as cli_main
    return cli_main()


if __name__ == "__main__":
    sys.exit(main())
