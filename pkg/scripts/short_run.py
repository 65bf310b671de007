"""Short-run protocol: warm up, then sample until every split R-hat is below 1.01.

Reports the total gradient evaluations per chain (warmup plus sampling) for
each criterion and warmup length, as percentiles over replicates.
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from snaper_hmc.config import CompareConfig, ModelSpec, RunConfig, SamplingConfig, build_model
from snaper_hmc.runner import COMPARE_COLUMNS, compare


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--model", default="aniso_gaussian")
    parser.add_argument("--warmups", type=int, nargs="+", default=[500, 750, 1000])
    parser.add_argument("--criteria", nargs="+", default=["snaper", "cheesr", "chees"])
    parser.add_argument("--replicates", type=int, default=20)
    parser.add_argument("--base-seed", type=int, default=0)
    parser.add_argument("--out", type=Path, default=Path("out/short_run"))
    args = parser.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)

    spec = ModelSpec(name=args.model)
    model = build_model(spec)
    col = COMPARE_COLUMNS.index("total_grads")
    with open(args.out / "replicates.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("warmup_steps",) + COMPARE_COLUMNS)
        for warm in args.warmups:
            run_cfg = RunConfig(warmup_steps=warm, seed=args.base_seed, model=spec,
                                sampling=SamplingConfig(mode="rhat", check_every=100))
            rows, _ = compare(CompareConfig(run=run_cfg, criteria=tuple(args.criteria),
                                            replicates=args.replicates, mode="short"), model)
            writer.writerows((warm,) + row for row in rows)
            for crit in args.criteria:
                vals = [row[col] for row in rows if row[0] == crit]
                q = np.percentile(vals, [10, 50, 90])
                print(f"warmup {warm:5d}  {crit:7s} total grads p10 {q[0]:.0f}  "
                      f"median {q[1]:.0f}  p90 {q[2]:.0f}")


if __name__ == "__main__":
    main()
