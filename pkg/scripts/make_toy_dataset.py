#!/usr/bin/env python3
"""Write the synthetic square-attribute dataset to disk.

Produces a directory of PNGs plus an attribute file in the CelebA list
layout, ready for `attrflip prepare-data`.
"""

import argparse
from pathlib import Path

from attrflip.synthetic import write_toy_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--n-per-class", type=int, default=512)
    parser.add_argument("--resolution", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    image_dir, attr_path = write_toy_dataset(
        args.out_dir, n_per_class=args.n_per_class, resolution=args.resolution, seed=args.seed
    )
    print(f"images: {image_dir}")
    print(f"attributes: {attr_path}")


if __name__ == "__main__":
    main()
