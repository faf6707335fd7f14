"""Closed-loop stopping error of a cached protocol model across containers and targets.

    python3 scripts/closed_loop_sweep.py --containers glass plastic_cup --repeats 3
"""

import argparse

import numpy as np

from pouringnet import acoustics, control, protocol, training


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kind", default="gru")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--containers", nargs="+", default=["glass", "plastic_cup"])
    ap.add_argument("--targets", type=float, nargs="+", default=[40, 50, 60, 70, 80])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--descent-rate", type=float, default=6.0)
    ap.add_argument("--oracle", action="store_true", help="use the ground-truth estimator")
    args = ap.parse_args()

    params = None if args.oracle else protocol.get_model(
        protocol.train_config(args.kind, args.seed)).params
    for name in args.containers:
        spec = acoustics.CONTAINERS[name]
        profile = control.closed_loop_profile(spec, descent_rate=args.descent_rate)
        all_err, loop = [], []
        for target in args.targets:
            errs = []
            for r in range(args.repeats):
                seed = training.pour_seed(7, r)
                est = control.OracleEstimator(spec, profile, seed) if args.oracle else None
                res = control.run_closed_loop(params, spec, profile, target, seed=seed,
                                              estimator=est)
                errs.append(res.overshoot)
                loop += res.loop_latencies
            all_err += errs
            print(f"{name:12s} target {target:5.1f} mm  overshoot mean {np.mean(errs):+6.2f} "
                  f"|mean| {np.mean(np.abs(errs)):5.2f} mm", flush=True)
        summary = control.measure_loop_latency(loop)
        print(f"{name:12s} mean |error| {np.mean(np.abs(all_err)):.2f} mm, "
              f"loop {summary.mean_ms:.1f} ms mean / {summary.p95_ms:.1f} ms p95\n")


if __name__ == "__main__":
    main()
