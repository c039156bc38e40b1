#!/usr/bin/env python3
"""
Fetch MNIST
Downloads the four standard MNIST IDX files from a mirror and gunzips them into a data directory
"""

import argparse
import logging
import os
import sys

from dotenv import load_dotenv

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from dni_lab.data import fetch_mnist  # noqa: E402

logging.basicConfig(level=logging.INFO)


def main():
    load_dotenv()
    parser = argparse.ArgumentParser(description="Download the MNIST IDX files")
    parser.add_argument('--dest', default=os.getenv("MNIST_DATA_DIR", "data/mnist"),
                        help='Destination directory (default: $MNIST_DATA_DIR or data/mnist)')
    parser.add_argument('--base-url', default=os.getenv("MNIST_BASE_URL"),
                        help='Mirror URL holding the .gz files (default: $MNIST_BASE_URL)')
    args = parser.parse_args()

    if not args.base_url:
        print("Error: give --base-url or set MNIST_BASE_URL in .env")
        sys.exit(2)
    written = fetch_mnist(args.base_url, args.dest)
    print(f"\n{len(written)} files ready in {args.dest}:")
    for path in written:
        print(f"  {os.path.basename(path)}")


if __name__ == "__main__":
    main()
