"""Long-run protocol: learned hyperparameters against a grid over mean leapfrog steps.

For each model, runs replicated warmups per criterion, then sweeps the mean
number of leapfrog steps at the median learned step size and the average
learned mass. Writes replicates.csv and grid.csv per model.
"""

import argparse
import csv
from dataclasses import replace
from pathlib import Path

import numpy as np

from snaper_hmc.config import ModelSpec, RunConfig, SamplingConfig, SweepConfig, build_model
from snaper_hmc.runner import (COMPARE_COLUMNS, SWEEP_COLUMNS, compare_row, replicate_seed,
                               run, sweep, sweep_csv)

GRID = (1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0, 6.0, 8.0)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--models", nargs="+", default=["aniso_gaussian", "logistic"])
    parser.add_argument("--criteria", nargs="+", default=["snaper", "cheesr", "chees"])
    parser.add_argument("--replicates", type=int, default=20)
    parser.add_argument("--base-seed", type=int, default=0)
    parser.add_argument("--warmup", type=int, default=1000)
    parser.add_argument("--draws", type=int, default=1000)
    parser.add_argument("--out", type=Path, default=Path("out/long_run"))
    args = parser.parse_args(argv)

    for name in args.models:
        out = args.out / name
        out.mkdir(parents=True, exist_ok=True)
        spec = ModelSpec(name=name)
        model = build_model(spec)
        results = {}
        for crit in args.criteria:
            cfg = RunConfig(criterion=crit, warmup_steps=args.warmup, model=spec,
                            sampling=SamplingConfig(draws=args.draws))
            results[crit] = [
                run(replace(cfg, seed=replicate_seed(args.base_seed, r)), model, keep_draws=False)
                for r in range(args.replicates)]
        with open(out / "replicates.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(COMPARE_COLUMNS)
            for crit, runs in results.items():
                writer.writerows(compare_row(crit, r, res) for r, res in enumerate(runs))

        ref = results.get("snaper") or next(iter(results.values()))
        step = float(np.median([res.hyper.step_size for res in ref]))
        inv_mass = np.mean([res.hyper.inv_mass for res in ref], axis=0)
        mass = ", ".join(repr(float(v)) for v in inv_mass / inv_mass.max())
        table = sweep(SweepConfig(grid=GRID, step_size=step, mass=mass, draws=2000,
                                  seed=args.base_seed, model=spec), model)
        (out / "grid.csv").write_text(sweep_csv(table))
        col = SWEEP_COLUMNS.index("ess_per_grad")
        best = max((row for row in table if row[2] == "min_sq"), key=lambda row: row[col])
        print(f"{name}: grid optimum {best[col]:.4g} at mean L {best[0]:.2f}")
        for crit, runs in results.items():
            vals = [res.report.ess_per_grad for res in runs]
            print(f"  {crit:7s} median min ESS/grad {np.median(vals):.4g} "
                  f"({np.median(vals) / best[col]:.2f}x grid optimum)")


if __name__ == "__main__":
    main()
