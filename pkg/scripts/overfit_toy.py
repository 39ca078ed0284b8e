"""Memorisation run: train the toy model on a handful of shapes and report training-set Chamfer distance.

    python scripts/overfit_toy.py --out runs/overfit --shapes 4 --views 1
"""

import argparse
import dataclasses
from pathlib import Path

from pcn.datagen import DATA_PRESETS, build_dataset
from pcn.model import preset
from pcn.training import TRAIN_PRESETS, evaluate, train


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("runs/overfit"))
    ap.add_argument("--shapes", type=int, default=4)
    ap.add_argument("--views", type=int, default=1)
    ap.add_argument("--iterations", type=int, default=TRAIN_PRESETS["toy"].max_iterations)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data_cfg = dataclasses.replace(DATA_PRESETS["toy"], shapes=args.shapes, views=args.views, seed=args.seed)
    data = build_dataset(data_cfg, args.out / "data")
    pairs = data.load()
    tc = dataclasses.replace(TRAIN_PRESETS["toy"], max_iterations=args.iterations, seed=args.seed)

    def log(row):
        if row["iteration"] % 100 == 0:
            print(f"it {row['iteration']:>5}  lr {row['lr']:.2e}  alpha {row['alpha']:.2f}  loss {row['loss']:.5f}")

    params, report = train(preset("toy"), tc, pairs, out_dir=args.out / "train", log=log)
    ev = evaluate(params, pairs)
    ev.write_csv(args.out / "metrics.csv")
    print(f"{len(pairs)} pairs, {len(report.rows)} iterations, {report.wall_clock:.0f}s: "
          f"mean CD {ev.mean('cd'):.4f}, mean EMD {ev.mean('emd'):.4f}")


if __name__ == "__main__":
    main()
