"""Train (or load from cache) every model the acceptance suite needs and tabulate them.

    python3 scripts/train_protocol.py            # all encoders, both alphas
    python3 scripts/train_protocol.py --kinds gru --seeds 0

Checkpoints land in .artifacts/ (or $POURINGNET_ARTIFACTS) and are reused by
tests/test_acceptance.py.
"""

import argparse
import logging

from pouringnet import protocol


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kinds", default="gru,lstm,fc")
    ap.add_argument("--seeds", type=int, nargs="+", default=list(protocol.SEEDS))
    ap.add_argument("--no-alpha-zero", action="store_true", help="skip the alpha=0 GRU runs")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    jobs = [(k, s, 0.01) for k in args.kinds.split(",") for s in args.seeds]
    if not args.no_alpha_zero:
        jobs += [("gru", s, 0.0) for s in args.seeds]

    print(f"{'kind':5} {'seed':>4} {'alpha':>6} {'MAE mm':>7} {'<2 mm':>6} {'final':>6} "
          f"{'val mono':>8} {'best ep':>7} {'min':>5}")
    for kind, seed, alpha in jobs:
        m = protocol.get_model(protocol.train_config(kind, seed, alpha))
        err = protocol.held_out_errors(m.params)
        print(f"{kind:5} {seed:4d} {alpha:6g} {err.mean():7.3f} {(err < 2).mean():6.1%} "
              f"{err[:, -1].mean():6.3f} {m.val_mono:8.3f} {m.best_epoch:7d} "
              f"{m.train_seconds / 60:5.1f}", flush=True)


if __name__ == "__main__":
    main()
