#!/usr/bin/env python3
"""
stainkit - stain deconvolution and virtual HE to HES restaining
Main entry point
"""

import sys

from src.cli.app import run


def main():
    """Main application entry point"""
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
