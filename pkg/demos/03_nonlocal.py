"""Nonlocal coefficients a_n = b_n = (1 - K_n)^-1 from a convolution kernel
k(n(x - y)).  A constant kernel is a fixed point of the series; a zero-mean
kernel averages out and the deviations shrink.

Run:  python3 demos/03_nonlocal.py [N]
"""

import sys

from cdhom.coefficients import ConstantProfile, SmallnessError, TrigProfile, assemble_convolution
from cdhom.grid import BoxGrid
from cdhom.homogenization import run_nonlocal_series

N = int(sys.argv[1]) if len(sys.argv) > 1 else 8
g = BoxGrid(N)

K = assemble_convolution(TrigProfile(0.5), 1, g, "cell")
print(f"certified norm of the zero-mean kernel operator: {K.certified_norm():.3f}")
try:
    assemble_convolution(ConstantProfile(1.5), 1, g, "cell")
except SmallnessError as exc:
    print(f"a constant kernel 1.5 is rejected: measured norm {exc.norm:.3f}")

const = run_nonlocal_series(g, ConstantProfile(0.5), [1, 2])
print(f"\nconstant kernel 0.5: max deviation {const.report.max_deviation():.1e}")

ns = [n for n in (1, 2, 4) if N % n == 0]
S = run_nonlocal_series(g, TrigProfile(0.5), ns)
print(f"zero-mean kernel, n in {ns}: limit kernel mean {S.effective['mean_kernel']}")
for kind in S.report.kinds:
    d = S.decay(kind, factor=0.7)
    worst = max((b / a for a, b, _ in d.values() if a > 1e-8 * S.report.scales[kind]), default=0.0)
    print(f"  {kind:>10}: worst last/first ratio {worst:.3f}")
