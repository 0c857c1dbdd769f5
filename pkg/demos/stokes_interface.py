"""
Two viscosities and a flat interface in coupled Stokes flow
===========================================================

Stationary Stokes flow in (0,1) x (-1,1) with a slip interface near y=0.
Velocity and pressure samples are given; the two viscosities and the
interface curve are unknown.  The full default run takes about half an
hour; pass a smaller outer-iteration count for a quick look, e.g.

    python demos/stokes_interface.py 5
"""

import sys

import numpy as np

from pisal import STOKES, TrainConfig, evaluate_model, sal_train

k_max = int(sys.argv[1]) if len(sys.argv) > 1 else None
cfg = TrainConfig.for_problem(STOKES, **({"k_max": k_max} if k_max else {}))


def show(rec, model):
    print(f"k={rec.k:2d}  loss={rec.mse_m:.3e}  nu1={rec.lambda1:.5f}  nu2={rec.lambda2:.5f}  "
          f"|D1|={rec.n_d1} |D2|={rec.n_d2} |DI|={rec.n_di}", flush=True)


result = sal_train(STOKES, cfg, callback=show)
report = evaluate_model(result.model, STOKES)
print("true viscosities:", STOKES.lambda_true)
print(f"percentage errors: {report.pe_lambda1:.3f}%  {report.pe_lambda2:.3f}%")
for name in STOKES.field_names:
    print(f"RMSE {name}: {report.rmse[name]['all']:.3e}")

x = np.linspace(0, 1, 11)
print("learned interface:", result.model.interface(STOKES, x).round(4))
print(f"max deviation from y=0: {report.max_interface_deviation:.2e}")
