"""Where does a trained classifier stretch its input space?

Train a small tanh MLP on three Gaussian clusters, then compute the
overall finite-time Lyapunov exponent at every point of a uniform grid.
The expanding regions line up with the decision boundaries: the network
pulls each class together and pushes neighbouring classes apart there.
"""

import os

import numpy as np

from chaosnet import models as M
from chaosnet.data import synth_2d
from chaosnet.experiments.analysis import boundary_mask, ftmle_map
from chaosnet.experiments.plotting import plot
from chaosnet.training import TrainConfig, train

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

train_set, grid = synth_2d("clusters", n_classes=3, n_test_grid=4900, seed=0)
test_set, _ = synth_2d("clusters", n_classes=3, seed=1)
model = M.mlp([2, 32, 32, 32, 32, 3], seed=0)
hist = train(model, train_set, test_set, TrainConfig(epochs=20))
model.set_params(hist.best_params)
print(f"test accuracy {max(hist.test_acc):.3f}")

csv_path = os.path.join(OUT, "ftmle_map.csv")
lam = ftmle_map(model, grid, out_csv=csv_path)
near = boundary_mask(grid, model.predict(grid), 0.3)
print(f"median FTMLE {np.median(lam):+.3f}; near the boundary {np.median(lam[near]):+.3f}, "
      f"far from it {np.median(lam[~near]):+.3f}")
print(f"{100 * np.mean(lam[near] > np.median(lam)):.0f}% of near-boundary points sit above the median")
plot(csv_path, os.path.join(OUT, "ftmle_map.svg"), kind="scatter", x="x", y="y", color="lambda")
