"""Small-time variance series sigma^2_t / t against f'(0)^2 and against the
independent-particle value (1 - exp(-8 pi^2 t)) / (2 t) for f = sin(2 pi x).

The second column shows how far the finite-t values are from the limit: the
approach is governed by 8 pi^2 t, so t = 0.01 is still far from it.
"""
import argparse
import math

from mmaf.mc_engine import ExperimentConfig, run_small_time


def independent_particle(t: float) -> float:
    return (1.0 - math.exp(-8.0 * math.pi**2 * t)) / (2.0 * t)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--t-list", type=float, nargs="+", default=[0.05, 0.02, 0.01, 0.005, 0.002])
    ap.add_argument("--reps", type=int, default=2000)
    ap.add_argument("--n", type=int, default=512)
    ap.add_argument("--seed", type=int, default=20240917)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    cfg = ExperimentConfig(experiment="smalltime", t_list=tuple(args.t_list), reps=args.reps,
                           n=args.n, master_seed=args.seed, workers=args.workers)
    rep = run_small_time(cfg)
    target = rep.summary["target"]
    print(f"{'t':>8} {'sigma2/t':>10} {'stderr':>8} {'indep.':>8} {'rel. to 4pi^2':>14}")
    for t, v, se in rep.rows:
        print(f"{t:8.4f} {v:10.3f} {se:8.3f} {independent_particle(t):8.3f} {v / target:14.3f}")


if __name__ == "__main__":
    main()
