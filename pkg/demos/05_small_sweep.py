"""A miniature (rho x T) sweep with the Lyapunov-time overlay.

Uses the four-cluster toy problem so it runs in a few seconds. The grid
is resumable: rerun the script and the finished cells are read back.
The real experiments use ``chaosnet sweep --preset ffesn``.
"""

import os

from chaosnet.experiments.config import ExperimentConfig
from chaosnet.experiments.plotting import plot
from chaosnet.experiments.sweep import run_sweep

OUT = os.path.join(os.path.dirname(__file__), "out", "sweep")

cfg = ExperimentConfig(
    family="ffesn",
    model={"n": 50, "in_dim": 2, "n_classes": 4},
    axis1={"name": "rho", "values": [0.5, 1.0, 1.5, 2.0]},
    axis2={"name": "T", "values": [1, 3, 6, 10]},
    train={"epochs": 3},
    dataset={"name": "synth2d", "kind": "clusters", "n_train": 600, "n_test": 300},
    ftmle_samples=50,
    out_dir=OUT,
)
grid = run_sweep(cfg, log=print)
for a, mle, t in grid.lyapunov:
    print(f"rho={a}: MLE {mle:+.3f}, Lyapunov time {t:.2f}")
plot(os.path.join(OUT, "grid.csv"), os.path.join(OUT, "heatmap.svg"),
     lyapunov_csv=os.path.join(OUT, "lyapunov.csv"))
print("heat map:", os.path.join(OUT, "heatmap.svg"))
