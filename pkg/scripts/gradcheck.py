"""Run the finite-difference gradient audit and print per-trial errors.

    python3 scripts/gradcheck.py --trials 100 --seed 0
"""

import argparse

from vosynth.gradcheck import run_gradcheck


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--step", type=float, default=1e-5)
    ap.add_argument("--tol", type=float, default=1e-4)
    ap.add_argument("--verbose", action="store_true", help="print every trial")
    args = ap.parse_args()
    rep = run_gradcheck(args.seed, args.trials, args.step)
    if args.verbose:
        for i, e in enumerate(rep.per_trial):
            print(f"trial {i:3d}  max rel error {e:.3e}")
    print(f"trials={rep.trials} max_rel_error={rep.max_rel_error:.3e} worst_trial={rep.worst_trial} seconds={rep.seconds:.1f}")
    return 0 if rep.passed(args.tol) else 1


if __name__ == "__main__":
    raise SystemExit(main())
