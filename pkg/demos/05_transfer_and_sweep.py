"""
Transfer to a shift-augmented model
===================================

Crafts adversarial digits on cnn-s2 and feeds them to the other zoo members,
including cnn-s1-shift3, which saw randomly shifted digits during training.
Then sweeps the Gaussian kernel size for the TI attack.
"""

import warnings
from pathlib import Path

from tiattack.harness import ExperimentPlan, kernel_size_sweep, run_plan, with_samples

plans = Path(__file__).resolve().parents[1] / "plans"

report = run_plan(ExperimentPlan.load(plans / "transfer.json"))
print(report.to_csv())

margin = report.rate("cnn-s2", "TI-MI-FGSM", "cnn-s1-shift3") - report.rate("cnn-s2", "MI-FGSM", "cnn-s1-shift3")
print(f"TI margin on the shift-augmented target: {margin:+.3f}")

# a smaller sample keeps the sweep to about a minute
sweep_plan = with_samples(ExperimentPlan.load(plans / "sweep.json"), 200)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    sweep = kernel_size_sweep(sweep_plan, [0, 1, 2, 3, 5, 7, 10])
for row in sweep.rows:
    print(f"k={row.k:2d} ({row.kernel:12s}) success {row.success_rate:.3f}")
