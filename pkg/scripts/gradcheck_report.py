"""Per-op and per-parameter finite-difference errors, worst first.

    python3 scripts/gradcheck_report.py [--top 15] [--size 32]
"""

import argparse

from damformer.gradcheck import full_model_check, op_suite


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--top", type=int, default=15)
    ap.add_argument("--size", type=int, default=32)
    args = ap.parse_args()

    ops = op_suite()
    print(f"{'op':<20} rel.error")
    for name, err in sorted(ops.items(), key=lambda kv: -kv[1]):
        print(f"{name:<20} {err:.2e}")

    params = sorted(full_model_check(size=args.size), key=lambda r: -r.error)
    print(f"\n{'parameter':<52} {'size':>6} {'entries':>9} {'direction':>9}")
    for r in params[: args.top]:
        print(f"{r.name:<52} {r.size:>6} {r.entry_error:>9.2e} {r.directional_error:>9.2e}")
    print(f"\n{len(params)} tensors, worst {params[0].error:.2e}")


if __name__ == "__main__":
    main()
