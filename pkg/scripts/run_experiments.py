"""Run the bundled experiment configs and print their summary tables.

    python scripts/run_experiments.py                # every config in configs/
    python scripts/run_experiments.py lv_trend       # a subset by name

Worker count comes from AMPLV_WORKERS as for the CLI.
"""
import argparse
import csv
import sys
from pathlib import Path

from amplv.harness import ExperimentConfig, run_experiment

ROOT = Path(__file__).resolve().parents[1]


def show(summary_path, metrics=None):
    with open(summary_path, newline="") as fh:
        for r in csv.DictReader(fh):
            if metrics is None or r["metric"] in metrics:
                print(f"  n={r['n']:>5} {r['metric']:<24} median={float(r['median']):.4g} "
                      f"[{float(r['q25']):.4g}, {float(r['q75']):.4g}] count={r['count']}")


KEY_METRICS = {
    "lv_equilibrium": {"d2", "survival_emp", "gamma", "excluded", "sigma_norm"},
    "amp_vs_se": {"gap_x2_t1", "gap_x2_t5", "gap_relu_t5", "gap_ind_t5", "gap_x2_uncorrected_t4"},
    "norm_bound": {"w_norm", "bound", "within"},
    "fixed_point_study": {"fp_residual", "a_vs_p_err", "zeta_err", "gamma"},
}


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("names", nargs="*", help="config names without .json")
    args = ap.parse_args(argv)
    paths = [ROOT / "configs" / f"{n}.json" for n in args.names] or sorted((ROOT / "configs").glob("*.json"))
    for p in paths:
        cfg = ExperimentConfig.load(p)
        cfg.output_dir = str(ROOT / cfg.output_dir)
        man = run_experiment(cfg)
        print(f"{p.stem}: {man['cells_done']}/{man['cells_total']} cells in {man['wall_clock_s']:.1f} s")
        show(Path(cfg.output_dir) / "summary.csv", KEY_METRICS.get(cfg.kind))
    return 0


if __name__ == "__main__":
    sys.exit(main())
