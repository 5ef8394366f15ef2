"""
Solving the elliptic problems
=============================

Two equations sit under the flow. The fixed right-hand side one,
``det g_psi = c f``, and the self-consistent one,
``log det g_phi + F(phi, z) = 0``, whose solutions are the stationary
points of the flow.
"""

import numpy as np

from cmaflow import NonlinearityF, ScalarField, TorusGeometry, metric_from_potential, trig_field
from cmaflow.elliptic import solve_fixed_rhs, solve_self_consistent

# %%
# Manufactured density on the circle torus: for psi = 0.05 cos(2 pi x) the
# metric is g = 1 + psi_{z zbar} = 1 - 0.05 pi^2 cos(2 pi x), so feeding that
# density back must recover psi with c = 1.
g = TorusGeometry(1, 64)
x = g.coords()[0]
f = ScalarField(g, np.broadcast_to(1 - 0.05 * np.pi ** 2 * np.cos(2 * np.pi * x), g.shape))
rep = solve_fixed_rhs(f)
exact = 0.05 * np.cos(2 * np.pi * x)
print("Newton iterations:", rep.newton_iters)
print("residual history:", ["%.1e" % r for r in rep.residual_history])
print("sup |psi - exact| = %.2e, c = %.15f" % (np.abs(rep.solution.values - exact).max(), rep.c))

# %%
# Scaling the density by 3 only changes the compatibility constant.
rep3 = solve_fixed_rhs(f * 3.0)
print("c for 3 f: %.6f (expect 1/3)" % rep3.c)

# %%
# Self-consistent problem with F(s, z) = s - 0.01 cos(2 pi x). Linearising,
# phi_{z zbar} + phi = 0.01 cos(2 pi x), so a small cosine of amplitude
# 0.01 / (1 - pi^2) comes back; Newton satisfies the equation to round-off.
F = NonlinearityF(a=1.0, modes=((-0.01, (1, 0)),))
sc = solve_self_consistent(F, g)
m = metric_from_potential(sc.solution)
res = np.log(m.det) + F.base(sc.solution.values) + F.h(g)
print("self-consistent: %d iterations, sup residual %.1e" % (sc.newton_iters, np.abs(res).max()))
print("solution range [%.3e, %.3e]" % (sc.solution.inf(), sc.solution.sup()))

# %%
# In two complex dimensions the same solver works unchanged.
g2 = TorusGeometry(2, 8)
psi2 = trig_field(g2, [(0.01, (1, 0, 0, 1)), (0.005, (0, 1, 1, 1), 0.4)])
psi2 = psi2 - psi2.mean()
rep2 = solve_fixed_rhs(ScalarField(g2, metric_from_potential(psi2).det))
print("n = 2 recovery error %.1e" % np.abs(rep2.solution.values - psi2.values).max())
