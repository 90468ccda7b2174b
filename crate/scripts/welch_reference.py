"""Writes Welch t-test reference p-values (scipy) for the Rust test suite."""
import sys

import numpy as np
from scipy import stats

rng = np.random.default_rng(20241015)
out = sys.stdout
out.write("# a values;b values;two-tailed p (scipy.stats.ttest_ind, equal_var=False)\n")
for i in range(20):
    na, nb = rng.integers(2, 12, size=2)
    a = rng.normal(30.0, rng.uniform(0.05, 2.0), size=na)
    b = rng.normal(30.0 + rng.uniform(-1.5, 1.5), rng.uniform(0.05, 2.0), size=nb)
    p = stats.ttest_ind(a, b, equal_var=False).pvalue
    out.write(",".join(repr(float(x)) for x in a) + ";" + ",".join(repr(float(x)) for x in b) + ";" + repr(float(p)) + "\n")
