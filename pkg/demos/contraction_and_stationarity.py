"""
Contraction of coupled chains and a stationary density
======================================================

Two chains driven by the same noise draws approach each other at a
geometric rate fixed by the strong convexity constant. Separately, the Gibbs
density exp(-U) is left unchanged by the limiting diffusion when the noise
has identity covariance.
"""

import numpy as np

from langevin_w2 import (LogCoshPotential, QuadraticPotential, RademacherNoise, SdeSystem, check_contraction,
                         fokker_planck_residual)

# A log-cosh potential is strongly convex with m = alpha and smooth with L = 1.
potential = LogCoshPotential(2, 0.5)
noise = RademacherNoise(2)
for delta in (0.2, 0.1, 0.05):
    rep = check_contraction(potential, noise, delta, n_pairs=200, steps=200, seed=0)
    print(f"delta={delta:<5} worst ratio={rep.details['ratio_max']:.5f}  bound={1 - 0.5 * delta / 2:.5f}")

# The residual of the stationary Fokker-Planck equation at a few points
# is zero to rounding for exp(-U), and clearly nonzero for exp(-2U).
A = np.array([[2.0, 0.5], [0.5, 1.0]])
quad = QuadraticPotential(A)
system = SdeSystem(quad, noise)
for x in np.random.default_rng(1).standard_normal((3, 2)):
    right = fokker_planck_residual(system, lambda y: -float(quad.value(y)), x)
    wrong = fokker_planck_residual(system, lambda y: -2 * float(quad.value(y)), x)
    print(f"x={np.round(x, 3)}  exp(-U): {right:+.1e}  exp(-2U): {wrong:+.1e}")
