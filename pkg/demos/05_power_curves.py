"""
Calibrated power curves and the thresholding combination
========================================================

Under intermediate identification strength the jackknife K test has high
power near the null and against negative deviations, but loses power
against a band of positive deviations where the partialled-out first
stage turns uninformative.  The thresholding test detects that situation
through the conditioning statistic and switches to the sup-score test,
recovering much of the lost power.

Desk-scale settings; raise ``reps``/``calibration_reps`` to smooth the
curves.
"""

import time

import jkiv

spec = jkiv.SimulationSpec(
    n=250,
    regime="dz65",
    rho1=0.2,
    rho2=0.3,
    strength="intermediate",
    reps=150,
    bootstrap_draws=300,
    tests=("jk", "sup_score", "thresholding_75"),
    seed=0,
)
offsets = (-3.0, -1.5, 0.0, 1.5, 3.0)

t0 = time.time()
table = jkiv.power_curve(spec, offsets, calibrated=True, calibration_reps=800)
print(f"done in {time.time() - t0:.0f}s; calibrated criticals: "
      + ", ".join(f"{k}={v:.3f}" for k, v in table.criticals.items()))

header = f"{'offset':>7} " + " ".join(f"{t:>16}" for t in spec.tests)
print("\nrejection frequency at beta0 = beta + offset")
print(header)
for off in offsets:
    cells = " ".join(f"{table.frequency(t, off):16.3f}" for t in spec.tests)
    print(f"{off:7.1f} {cells}")

print(
    "\nlook for: rejection near 0.05 at offset 0, the jk power trough at\n"
    "positive offsets (around 1/rho), and the thresholding switch to the\n"
    "sup-score branch repairing most of that trough"
)
