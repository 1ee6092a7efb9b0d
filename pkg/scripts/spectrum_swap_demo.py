"""Amplitude/phase exchange on synthetic rainy/clean pairs.

Swapping the amplitude spectra while keeping phases shows that rain lives
mostly in the amplitude component: the image carrying the rainy amplitude
stays visibly degraded, the one carrying the clean amplitude is mostly rain
free.  Writes the four images and prints L2 distances to the clean target.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from freqmamba import fourier as F
from freqmamba import training as TR
from freqmamba.ppm import write_ppm
from freqmamba.tensor import Tensor, no_grad


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--n", type=int, default=20)
    ap.add_argument("--out", default="runs/spectrum_swap")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = TR.synth_rain(TR.RainSynthParams(), seed=args.seed, n=args.n, size=(64, 64))
    hits = 0
    with no_grad():
        for i, (rainy, clean, _) in enumerate(pairs):
            amp_rainy, amp_clean = F.spectrum_swap(Tensor(rainy[None]), Tensor(clean[None]))
            d_rainy = np.linalg.norm(amp_rainy.data - clean[None])
            d_clean = np.linalg.norm(amp_clean.data - clean[None])
            hits += int(d_rainy > d_clean)
            if i == 0:
                write_ppm(Tensor(rainy[None]), out / "rainy.ppm")
                write_ppm(Tensor(clean[None]), out / "clean.ppm")
                write_ppm(Tensor(np.clip(amp_rainy.data, 0, 1)), out / "rainy_amp_clean_phase.ppm")
                write_ppm(Tensor(np.clip(amp_clean.data, 0, 1)), out / "clean_amp_rainy_phase.ppm")
            print(f"pair {i:02d}: |rainy-amp - clean| = {d_rainy:.3f}, "
                  f"|clean-amp - clean| = {d_clean:.3f}")
    print(f"\nrainy amplitude farther from clean in {hits}/{args.n} pairs "
          f"(degradation rides the amplitude spectrum); images in {out}/")


if __name__ == "__main__":
    main()
