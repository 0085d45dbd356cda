"""
The true CLT rate against the measured one
==========================================

With Rademacher noise the normalised partial sum S_k has independent
coordinates, each a scaled centred binomial. Its W2 distance to N(0, I) is
therefore an exact one-dimensional quantile integral. Set beside the
ensemble estimates, it shows two separate effects.
"""

import numpy as np
from scipy import stats

from langevin_w2 import ExperimentConfig, run_clt


def exact_w2(k, d):
    # sum over binomial atoms of int (atom - Phi^{-1}(u))^2 du
    i = np.arange(k + 1)
    atoms = (2 * i - k) / np.sqrt(k)
    hi = np.minimum(np.cumsum(stats.binom.pmf(i, k, 0.5)), 1.0)
    hi[-1] = 1.0
    lo = np.concatenate([[0.0], hi[:-1]])
    z = [stats.norm.ppf(u) for u in (lo, hi)]
    z = [np.where(np.isfinite(t), t, 0.0) for t in z]  # the end atoms reach u = 0 and 1, where z phi(z) = 0
    phi = [np.where((u > 0) & (u < 1), stats.norm.pdf(t), 0.0) for u, t in zip((lo, hi), z)]
    sq = [u - t * p for u, t, p in zip((lo, hi), z, phi)]
    per_atom = atoms**2 * (hi - lo) - 2 * atoms * (phi[0] - phi[1]) + (sq[1] - sq[0])
    return np.sqrt(d * per_atom.sum())


checkpoints = [1, 4, 16, 64, 256, 1024, 4096]
report = run_clt(ExperimentConfig.from_dict({
    "experiment": "clt", "seed": 11, "n_chains": 20000,
    "model": {"potential": {"kind": "quadratic", "matrix": [[1.0, 0.0], [0.0, 1.0]]},
              "noise": {"family": "rademacher"}},
    "grid": {"checkpoints": checkpoints},
}))
measured = {r["k"]: r["w2"] for r in report.rows if r["experiment"] == "clt:partial_sums"}

print("     k    exact  measured")
for k in checkpoints:
    print(f"{k:6d}  {exact_w2(k, 2):.4f}    {measured[k]:.4f}")

# The exact column halves every time k grows fourfold: slope -1/2.
# With 20000 chains the estimate is sliced, and slicing only bounds W2 from
# below. Projected onto a generic direction, the lattice of S_k looks nearly
# continuous, so the measured column starts at half the exact value and
# falls faster than k^(-1/2). From k = 64 on it sits at the estimator floor
# shown in estimator_floor.py, about 0.02, and stops falling.
