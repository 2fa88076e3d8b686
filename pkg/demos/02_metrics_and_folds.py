"""Correlation metrics, the optional logistic mapping, and content-disjoint folds.

    python demos/02_metrics_and_folds.py
"""
import numpy as np

from dhhqa.stats import aggregate, evaluate, krcc, logistic_fit, make_folds, plcc, rmse, srcc

rng = np.random.default_rng(0)

# scores that saturate at both ends of the MOS scale: the rank metrics do not
# care, PLCC and RMSE do until a 4-parameter logistic maps predictions onto MOS
pred = np.linspace(-3, 3, 40)
mos = 100 / (1 + np.exp(-2 * pred)) + rng.normal(0, 1, pred.size)
print(f"saturating predictor  srcc {srcc(pred, mos):.4f}  krcc {krcc(pred, mos):.4f}")
print(f"  raw               plcc {plcc(pred, mos):.4f}  rmse {rmse(pred, mos):.2f}")
print(f"  logistic mapped   plcc {plcc(pred, mos, logistic=True):.4f}  "
      f"rmse {rmse(pred, mos, logistic=True):.2f}")
print("  mapped scores:", np.round(logistic_fit(pred, mos)[::8], 1))

# ties are handled with average ranks (rho) and tau-b
a = [1, 2, 2, 3, 4, 4, 4]
b = [1, 3, 2, 2, 4, 5, 5]
print(f"\nties: srcc {srcc(a, b):.6f}  krcc {krcc(a, b):.6f}")

# noise eats into every metric
mos = np.linspace(10, 90, 40)
for sigma in (0, 5, 15, 30):
    noisy = mos + sigma * rng.standard_normal(mos.size)
    r = evaluate(noisy, mos)
    print(f"sigma {sigma:>2}:  srcc {r.srcc:.3f}  plcc {r.plcc:.3f}  krcc {r.krcc:.3f}  rmse {r.rmse:6.2f}")

# folds split by content, never by sample, so a head is never both trained and tested on
contents = [f"head{i:03d}" for i in range(23)]
folds = make_folds(contents, k=5, seed=1)
for f in folds:
    print(f"fold {f.fold_index}: test {sorted(f.test_contents)}")
assert not any(f.train_contents & f.test_contents for f in folds)

# per-fold reports average into one row
reports = []
for f in folds:
    n = 28 * len(f.test_contents)
    truth = rng.uniform(0, 100, n)
    kinds = rng.integers(0, 7, n)
    guess = np.where(rng.random(n) < 0.7, kinds, rng.integers(0, 7, n))
    reports.append(evaluate(truth + 10 * rng.standard_normal(n), truth, guess, kinds, fold_index=f.fold_index))
print("\nmean over folds:", aggregate(reports).to_dict())
