"""
From SGD to natural gradient by turning one knob
================================================

The simulated device runs for ``t`` time constants per iteration. At
``t = 0`` it returns the gradient it was loaded with, so training is plain
SGD; for large ``t`` it returns the damped natural gradient.
"""

import numpy as np

from tngd.bench.desk import desk_dataset, desk_model, desk_optimizer
from tngd.optim import train_one

model, data = desk_model(), desk_dataset()
print(f"{model.n_params} parameters, Bayes accuracy {data.info['bayes_accuracy']:.3f}")

# exact NGD is the target the device should approach
exact = [train_one(model, data, desk_optimizer(solver="exact"), s).final_train_loss for s in range(3)]
print(f"exact NGD         final train loss {np.median(exact):.4f}")

for t in (0.0, 1.0, 5.0, 10.0, 50.0):
    cfg = desk_optimizer(analog_time=t, track_direction_cosine=True)
    runs = [train_one(model, data, cfg, s) for s in range(3)]
    loss = np.median([h.final_train_loss for h in runs])
    cos = np.median([np.nanmean(h.column("direction_cosine")) for h in runs])
    print(f"TNGD t = {t:>4g} tau  final train loss {loss:.4f}  cosine to NGD {cos:.4f}")
