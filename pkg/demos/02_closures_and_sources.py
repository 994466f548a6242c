"""Closure laws and manufactured sources.

Shows the relative permeabilities, mobilities and capillary pressures over
the saturation range, the effect of the safety clamp, and evaluates the
manufactured source terms that make the exact fields solve the PDE system.
"""

import numpy as np

from dgflow.manufactured import constant_densities_case, gravity_case
from dgflow.physics import (FluidProperties, capillary_pressure_a,
                            capillary_pressure_v, clamp, mobilities,
                            relative_permeabilities)

fluids = FluidProperties()
print("fluid data:", fluids)

print("\nsaturation sweep (s_a = s_v = s):")
print(f"{'s':>6} {'k_rl':>9} {'k_rv':>9} {'k_ra':>9} {'lam_t':>9} "
      f"{'p_cv':>9} {'p_ca':>9}")
for s in (0.1, 0.25, 0.4):
    pair = clamp(s, s)
    k_rl, k_rv, k_ra = relative_permeabilities(pair)
    mob = mobilities(pair, fluids)
    pcv, _ = capillary_pressure_v(pair.s_v)
    pca, _, _ = capillary_pressure_a(pair.s_a)
    print(f"{s:>6} {k_rl:>9.4f} {k_rv:>9.4f} {k_ra:>9.4f} {mob.lam_t:>9.4f} "
          f"{pcv:>9.4f} {pca:>9.4f}")

print("\nthe clamp guards the closures against unphysical inputs:")
wild = clamp(np.array([-0.2, 1.5]), np.array([0.5, 0.3]))
print(f"  raw (-0.2, 0.5) and (1.5, 0.3) -> s_a={wild.s_a}, s_v={wild.s_v}")

case = constant_densities_case()
print(f"\nexact fields of {case} at (t, x, y) = (0.5, 0.5, 0.5):")
ex = case.exact_solution(0.5, 0.5, 0.5)
print(f"  p={ex.p:.5f}  s_a={ex.s_a:.5f}  s_v={ex.s_v:.5f}  "
      f"(s_l={1 - ex.s_a - ex.s_v:.5f})")

q_l, q_v, q_a = case.source_terms(0.5, 0.5, 0.5)
print(f"  matching sources: q_l={q_l:+.5f}  q_v={q_v:+.5f}  q_a={q_a:+.5f}")
print(f"  q_t = {case.source_total(0.5, 0.5, 0.5):+.5f} "
      f"(= q_l + q_v + q_a: {q_l + q_v + q_a:+.5f})")

grav = gravity_case()
print(f"\ngravity scenario g = {grav.fluids.gravity}: "
      f"q_a shifts to {grav.source_terms(0.5, 0.5, 0.5)[2]:+.5f}")
