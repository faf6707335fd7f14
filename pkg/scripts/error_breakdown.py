"""Where a trained protocol model errs: by frame index, by true air column and by container.

    python3 scripts/error_breakdown.py --kind gru --seed 0
"""

import argparse

import numpy as np

from pouringnet import protocol
from pouringnet.training import predict_clips


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kind", default="gru")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--alpha", type=float, default=0.01)
    args = ap.parse_args()

    m = protocol.get_model(protocol.train_config(args.kind, args.seed, args.alpha))
    clips = list(protocol.test_corpus())
    truth = np.stack([c.labels for c in clips])
    signed = predict_clips(m.params, clips) - truth
    err = np.abs(signed)

    print(f"{len(clips)} clips, MAE {err.mean():.3f} mm, {(err < 2).mean():.1%} under 2 mm")
    print("\nframes      MAE   <2mm")
    for lo in range(0, truth.shape[1], 25):
        e = err[:, lo:lo + 25]
        print(f"{lo:3d}-{min(lo + 24, truth.shape[1] - 1):3d}  {e.mean():6.3f} {(e < 2).mean():6.1%}")

    print("\nair column  MAE    bias")
    edges = np.arange(0, 160, 20)
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (truth >= lo) & (truth < hi)
        if sel.any():
            print(f"{lo:3d}-{hi:3d} mm  {err[sel].mean():6.3f} {signed[sel].mean():+6.3f}")

    print("\ncontainer   MAE    bias")
    names = np.array([c.container for c in clips])
    for name in sorted(set(names)):
        sel = names == name
        print(f"{name:10s} {err[sel].mean():6.3f} {signed[sel].mean():+6.3f}")


if __name__ == "__main__":
    main()
