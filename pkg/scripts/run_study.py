"""Setting-I convergence-rate study (d=30, T in {500, 1000, 2000}, 10 replications).

    python3 scripts/run_study.py --out-dir runs/setting1 [--threads N] [--emt] [--paper-scale]
"""

import argparse
import time

from msvar.em import EmConfig
from msvar.experiment import ExperimentSpec, run_experiment
from msvar.simulate import SettingSpec


def study_spec(out_dir: str, master_seed: int = 2024, emt: bool = False, t_values=(500, 1000, 2000)) -> ExperimentSpec:
    return ExperimentSpec(
        setting=SettingSpec(kind=1, d=30),
        t_values=t_values,
        n_reps=10,
        em=EmConfig(n_inits=5),
        run_em=not emt,
        run_oracle=not emt,
        run_emt=emt,
        out_dir=out_dir,
        master_seed=master_seed,
    )


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--out-dir", default="runs/setting1")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--emt", action="store_true", help="run only the truncated variant")
    p.add_argument("--paper-scale", action="store_true")
    args = p.parse_args()
    spec = study_spec(args.out_dir, args.seed, args.emt)
    if args.paper_scale:
        spec = spec.paper_scale()
    t0 = time.perf_counter()
    run_experiment(spec, args.threads)
    print(open(f"{args.out_dir}/report.txt").read(), end="")
    print(f"elapsed {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
