"""
A small simulation study
========================

Mean squared error of the difference-in-mean estimate for each method as N
grows, under a linear, a quadratic and a sinusoidal response. The linear
case favours rerandomization; the other two favour the KDE partition.
"""

from kdebalance.harness import StudyConfig, gen_coefficients, run_study

models = [gen_coefficients(kind, seed=[0, j]) for j, kind in enumerate(("linear", "quadratic", "sinusoidal"))]
report = run_study(StudyConfig([20, 40, 60], m=200, seed=0), models)

print(f"{'model':11s} {'N':>3s} {'random':>9s} {'rerandom':>9s} {'kde':>9s}")
for model in models:
    for N in (20, 40, 60):
        row = [report.mse(model.label, meth, N) for meth in ("random", "rerandom", "kde")]
        print(f"{model.label:11s} {N:3d} " + " ".join(f"{v:9.4f}" for v in row))
