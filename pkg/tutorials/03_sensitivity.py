"""How many ternary products does a 2x2 filter need?

For three filters, fit a strassenified 2x2 product at each hidden width and
print the converged L2 loss. A vertical-edge filter is exact from h=2; a
generic filter only becomes exact at h=8 (the naive expansion). The sharpen
filter sits in between.

    python tutorials/03_sensitivity.py      # about a minute
"""
from hybridfb.train.experiments import BUILTIN_FILTERS, sensitivity_experiment

H = list(range(2, 9))
print("h      " + "".join(f"{h:>11d}" for h in H))
for name in ("vertical", "sharpen", "matmul2x2"):
    pts = sensitivity_experiment(BUILTIN_FILTERS[name], H, num_pairs=10_000, seed=0)
    print(f"{name:<7}" + "".join(f"{p.loss:11.2e}" for p in pts))
