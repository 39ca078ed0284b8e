"""Print parameter counts of the completion model and the two baselines, layer group by layer group."""

import argparse
from collections import defaultdict

import numpy as np

from pcn.model import PRESETS, param_count, param_shapes, preset

TABLE = [("Ours", "pcn-default"), ("Folding", "folding"), ("FC", "fc")]


def groups(name: str) -> dict[str, int]:
    out: dict[str, int] = defaultdict(int)
    for key, shape in param_shapes(preset(name)).items():
        out[".".join(key.split(".")[:2])] += int(np.prod(shape))
    return dict(out)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--breakdown", action="store_true", help="also list per-group counts")
    ap.add_argument("names", nargs="*", choices=sorted(PRESETS), metavar="PRESET")
    args = ap.parse_args()
    rows = [(n, n) for n in args.names] or TABLE
    for label, name in rows:
        n = param_count(preset(name))
        print(f"{label:<10} {n:>12,d}  ({n / 1e6:.2f}M)")
        if args.breakdown:
            for g, c in groups(name).items():
                print(f"    {g:<22} {c:>12,d}")


if __name__ == "__main__":
    main()
