"""Small labeling ablation: ikNN k and density beta side by side.

Run: python3 demos/05_label_sweep.py [metrics.csv]
One short run per row (6 epochs, 100 synthetic scenes), so rankings here are noisy;
see the acceptance suite for the 3-seed version.
"""
import sys

from mudiknn.evaluate import ablation_sweep, write_metrics_csv
from mudiknn.labelmaps import MapConfig
from mudiknn.synthetic import Sample, SceneConfig, generate_scene, scene_seeds
from mudiknn.train import TrainConfig


def scenes(seed, n):
    return [Sample(f"s{i}", *generate_scene(SceneConfig(seed=s))) for i, s in enumerate(scene_seeds(seed, n))]


train_set, test_set = scenes(3, 100), scenes(4, 20)
show = lambda method, r: print(f"{method:24s} MAE {r.mae:6.2f}  RMSE {r.rmse:6.2f}")

rows = ablation_sweep(train_set, test_set, "k", [1, 3], TrainConfig(epochs=6), progress=show)
rows += ablation_sweep(train_set, test_set, "beta", [0.1, 0.3],
                       TrainConfig(label_kind="density", epochs=6, maps=MapConfig()), progress=show)
rows += ablation_sweep(train_set, test_set, "resolution", [28], TrainConfig(epochs=6), progress=show)

if len(sys.argv) > 1:
    write_metrics_csv(sys.argv[1], rows)
