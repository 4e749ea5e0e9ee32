"""Coupling of the full and one-sided maps beyond a realised gap, and the
pad-doubling stabilization check, at several base points l."""
import argparse

from mmaf.coalescing_flow import apply_flow_map
from mmaf.coupling import gap_event, stabilization_check, verify_coupling
from mmaf.rng_paths import make_grid, sample_driving


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=500)
    ap.add_argument("--T", type=float, default=0.25)
    ap.add_argument("--M", type=int, default=500)
    ap.add_argument("--l", type=int, nargs="+", default=[-4, 0, 3])
    ap.add_argument("--j", type=int, default=2)
    ap.add_argument("--seed", type=int, default=20240917)
    args = ap.parse_args()
    g = make_grid(args.T, args.M)
    n = args.j + 12
    for l in args.l:
        counts = {"plus": [0, 0], "minus": [0, 0]}
        for r in range(args.reps):
            e = sample_driving(l - n, l + n, g, args.seed, r)
            full = apply_flow_map(e, (l - n, l + n), "full", anchor=l)
            for sign, c in counts.items():
                if not gap_event(e, l, args.j, args.T, sign):
                    continue
                c[0] += 1
                ok = True
                for p in range(args.j + 1):
                    dom = (l + p, l + n) if sign == "plus" else (l - n, l - p)
                    ok &= verify_coupling(full, apply_flow_map(e, dom, sign), l, args.j, p, sign)
                c[1] += ok
        stab = [stabilization_check(args.seed, r, l, 16, 10, make_grid(1.0, 200)) for r in range(args.reps // 5)]
        applicable = [s for a, s in stab if a]
        print(f"l={l:+d} coupling plus {counts['plus'][1]}/{counts['plus'][0]} "
              f"minus {counts['minus'][1]}/{counts['minus'][0]}; "
              f"stabilization {sum(applicable)}/{len(applicable)}")


if __name__ == "__main__":
    main()
