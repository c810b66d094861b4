#!/usr/bin/env python3
"""Train dense, MPO and pruned desk MLPs on the synthetic task and tabulate them."""
import argparse
import logging

from mpose import experiments, metrics


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--task", default="matched", choices=("matched", "mismatched"))
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--rates", type=float, nargs="+", default=[5, 100])
    ap.add_argument("--n-train", type=int, default=200)
    ap.add_argument("--csv", help="write the table here")
    ap.add_argument("-q", "--quiet", action="store_true")
    a = ap.parse_args()
    logging.basicConfig(level=logging.WARNING if a.quiet else logging.INFO, format="%(message)s")
    rates = tuple(int(r) if r == int(r) else r for r in a.rates)
    cfg = experiments.DeskConfig(task=a.task, epochs=a.epochs, seeds=tuple(a.seeds), rates=rates,
                                 n_train=a.n_train)
    res = experiments.desk_comparison(cfg)
    print(experiments.summary(res))
    for r in rates:
        print(f"rate {r:g}: mpo mask MSE <= pruning in {experiments.mpo_wins(res, r, cfg.seeds)}"
              f"/{len(cfg.seeds)} seeds")
    if a.csv:
        metrics.write_csv(res.rows(), a.csv)


if __name__ == "__main__":
    main()
