"""A small two-stage training run, then the phase losses side by side.

Stage 1 fits the magnitude branch; every stage-2 variant reuses it. Default
sizes finish in a few minutes on one core; pass --desk for the full desk
preset (about half an hour).

Run: python demos/03_two_stage_training.py [--desk]
"""

import dataclasses
import sys

from dualnet_magpha.experiments import ExperimentSpec, compare_losses, summarize, train_magnitude
from dualnet_magpha.training import TrainConfig, evaluate

spec = ExperimentSpec.desk(cr_pha=[1 / 8], r_s=[0.25], methods=["smdp", "mdpp", "naive", "mdpq"])
if "--desk" not in sys.argv:
    spec = dataclasses.replace(spec, n_samples=1200, n_train=1000, train=TrainConfig.desk(epochs=20))

data = spec.dataset()
print(f"{len(data.samples)} samples, {data.split} for training")

base = train_magnitude(spec, data)
print("magnitude scale:", round(base.config.mag_scale, 4))
print("before stage 2 (untrained phase branch, zero refinement):", round(evaluate(base, data), 2), "dB")

rows = compare_losses(spec, data, base, progress=lambda r: print(f"  {r.method}: {r.nmse_db:.2f} dB"))
print()
print(summarize(rows))
