"""
Recovering two conductivities and a moving front
================================================

Two-phase Stefan problem on x in [0, 2], t in [0, 1].  Temperature samples
are given; the conductivities of the two phases and the front position are
unknown.  Takes about a minute on one CPU core.
"""

import numpy as np

from pisal import STEFAN, TrainConfig, evaluate_model, sal_train
from pisal.sal import pinn_baseline_train

cfg = TrainConfig.for_problem(STEFAN)
print(f"{cfg.n_u} measurements ({cfg.n_initial} at t=0), {cfg.n_f} collocation points")


def show(rec, model):
    print(f"k={rec.k:2d}  loss={rec.mse_m:.3e}  k1={rec.lambda1:.5f}  k2={rec.lambda2:.5f}")


result = sal_train(STEFAN, cfg, callback=show)
report = evaluate_model(result.model, STEFAN)
print("true conductivities:", STEFAN.lambda_true)
print(f"percentage errors: {report.pe_lambda1:.4f}%  {report.pe_lambda2:.4f}%")
print(f"field RMSE on the 201x101 grid: {report.rmse['u']['all']:.3e}")
print(f"front RMSE: {report.rmse_interface:.3e}")

# the learned front against s(t) = t + 1/2
t = np.linspace(0, 1, 6)
print(np.column_stack([t, result.model.interface(STEFAN, t), STEFAN.true_interface(t)]).round(4))

# a single network with one shared conductivity cannot fit both phases
base = pinn_baseline_train(STEFAN, cfg)
shared = evaluate_model(base.model, STEFAN)
print(f"shared conductivity {shared.lambdas['lambda1']:.4f}, field RMSE {shared.rmse['u']['all']:.3e}")
