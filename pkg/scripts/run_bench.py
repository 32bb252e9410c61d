"""Minimum-ball versus brute-force face probabilities over a log ladder of face counts."""

import argparse
import sys

from minball_mesh import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nmin", type=int, default=1_000)
    ap.add_argument("--nmax", type=int, default=100_000)
    ap.add_argument("--trials", type=int, default=3)
    ap.add_argument("--dims", default="2,3")
    ap.add_argument("--bruteforce-max", type=int, default=50_000)
    ap.add_argument("--out", help="CSV path (default: stdout)")
    args = ap.parse_args()

    print(f"max |d_minball - d_bruteforce| = {bench.check_agreement():.3g}", file=sys.stderr)
    dims = tuple(int(d) for d in args.dims.split(","))
    rows = bench.run(args.nmin, args.nmax, args.trials, dims, args.bruteforce_max,
                     progress=lambda r: print(r, file=sys.stderr))
    text = bench.to_csv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
