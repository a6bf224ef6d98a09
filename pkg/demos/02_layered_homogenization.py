"""Closed-form effective coefficients for a two-phase laminate and a small
oscillation series that compares d(n x) against its homogenised limit.

Run:  python3 demos/02_layered_homogenization.py [N]
"""

import sys

import numpy as np

from cdhom.coefficients import two_phase
from cdhom.grid import BoxGrid
from cdhom.homogenization import effective_curldiv_coefficients, layered_hom_matrix, run_homogenization_series

d = two_phase(1.0, 4.0)
np.set_printoptions(precision=4, suppress=True)
print("layered H-limit of d I:\n", layered_hom_matrix(d).real)
e_hom, b_hom = effective_curldiv_coefficients(d)
print("e_hom:\n", e_hom.real)
print("b_hom:", b_hom)

# the series: deviations of probe functionals between d(n x) and the limit
N = int(sys.argv[1]) if len(sys.argv) > 1 else 16
ns = [n for n in (1, 2, 4, 8) if N % n == 0 and N // n >= 2]
S = run_homogenization_series(BoxGrid(N), d, ns, seed=0)
print(f"\nseries on N={N}, n in {ns}; manufactured error of the limit solve "
      f"{S.limit_summary['manufactured_error']:.1e}")
for kind in S.report.kinds:
    print(f"\n{kind} (scale {S.report.scales[kind]:.3g})")
    for pid, row in S.table(kind).items():
        print(f"  {pid:>8}: " + "  ".join(f"{v:.2e}" for v in row))
