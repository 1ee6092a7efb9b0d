"""Print visit-rank grids for the raster and frequency-block scan orders.

The frequency order walks the wavelet packet mosaic strictly from the lowest
band (top-left) to the highest (bottom-right), quadrant block by quadrant
block, unlike the plain raster walk.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from freqmamba import scan as S


def grid(order, h, w):
    rank = np.empty(h * w, dtype=int)
    rank[order.forward] = np.arange(h * w)
    return rank.reshape(h, w)


def show(name, g):
    print(f"\n{name}:")
    for row in g:
        print("  " + " ".join(f"{v:3d}" for v in row))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=8)
    ap.add_argument("--k", type=int, default=2)
    args = ap.parse_args()
    h = w = args.size
    show("raster row-major", grid(S.order_raster(h, w, "row_fwd"), h, w))
    show("raster col-major", grid(S.order_raster(h, w, "col_fwd"), h, w))
    show(f"frequency blocks (k={args.k})", grid(S.order_freq_blocks(h, w, args.k), h, w))
    ranks = S.tile_rank_map(h, w, args.k)
    show("band rank per pixel", ranks)


if __name__ == "__main__":
    main()
