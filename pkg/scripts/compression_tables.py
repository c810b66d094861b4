#!/usr/bin/env python3
"""Parameter counts, compression rates and contraction cost for every preset."""
import argparse

import numpy as np

from mpose import metrics, presets
from mpose.compress import cost_ratio
from mpose.nn import Model, compression_report, zero_params

RATES = {"mlp": (5, 10, 20, 25, 50, 75, 100), "lstm": (5, 10, 20, 25, 50, 75, 100),
         "mlp-desk": (5, 10, 25, 50, 100), "lstm-desk": (5, 10, 25, 50, 100)}


def rows(arch):
    dense = presets.build_from_preset(arch, 0)
    out = [{"model": f"{arch} dense", "params": dense.n_params(), "weights": dense.weight_params(),
            "rate": 1.0, "rate_bias": 1.0, "cost_ratio": 1.0}]
    for r in RATES[arch]:
        spec = presets.build_from_preset(arch, r)
        rep = compression_report(spec)
        out.append({"model": f"{arch} mpo@{r}", "params": spec.n_params(), "weights": rep.mpo_params,
                    "rate": rep.rate, "rate_bias": rep.rate_with_bias,
                    "cost_ratio": cost_ratio(Model(spec, zero_params(spec, np.float32)))})
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("architectures", nargs="*", default=list(RATES))
    ap.add_argument("--csv")
    a = ap.parse_args()
    table = [row for arch in a.architectures for row in rows(arch)]
    print(metrics.format_table(table))
    if a.csv:
        metrics.write_csv(table, a.csv)


if __name__ == "__main__":
    main()
