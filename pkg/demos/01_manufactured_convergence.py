"""Convergence of the Q1 Galerkin solver against a known solution.

We solve -div(grad u) = 3 pi^2 sin(pi x) sin(pi y) sin(pi z) on the unit
cube with zero boundary values.  The exact solution is the product of
sines, so the L2 error on a grid ladder shows the h^2 rate directly.
"""

import math

import numpy as np

from divelliptic import (GridSpec, build_space, build_problem, direct_solve,
                         identity_matrix, norm_against, trig_scalar)

exact = lambda x: np.prod(np.sin(np.pi * x), axis=1)
load = trig_scalar(((0.0, 1.0),) * 3, (1, 1, 1), amplitude=3 * math.pi ** 2)
ident = identity_matrix(3)

print(f"{'cells':>6} {'h':>10} {'L2 error':>12} {'order':>7}")
prev = None
for n in (4, 8, 16, 32):
    space = build_space(GridSpec.unit_cube(n))
    report = direct_solve(build_problem(space, A=ident, f=load))
    err = norm_against(report.solution, exact, "L2")
    order = f"{math.log2(prev / err):7.3f}" if prev else "      -"
    print(f"{n:>6} {1.0 / n:>10.4f} {err:>12.4e} {order}")
    prev = err

print("\nThe observed order settles at 2, the expected rate for multilinear"
      "\nelements in the L2 norm.")
