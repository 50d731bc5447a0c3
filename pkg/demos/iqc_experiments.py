"""Empirically stress the hard IQC behind each multiplier family.

Samples random members of every family, drives them with random
admissible signals (nonlinearities that respect the declared sector and
slope bounds), and reports the smallest normalized partial sum seen: it
must never drop below zero beyond numerical noise.  The last column
repeats the experiment with signals that deliberately break the sector,
which must produce violations, otherwise the test proves nothing.

Run:  python demos/iqc_experiments.py
"""

import numpy as np

import nncert
from nncert.multipliers import MultiplierSpec, sample_valuation

WIDTHS = (2, 1)
N = sum(WIDTHS)
BOUNDS = nncert.SectorSlopeBounds(
    alpha=0.1 * np.ones(N), beta=0.9 * np.ones(N),
    mu=0.05 * np.ones(N), nu=1.0 * np.ones(N),
)

FAMILIES = [
    ("circle, diagonal", MultiplierSpec(kind="diag-c")),
    ("circle, full block", MultiplierSpec(kind="fb-c")),
    ("circle/Yakubovich", MultiplierSpec(kind="cy")),
    ("FIR taps (1,1)", MultiplierSpec(kind="zf", zf_order=(1, 1))),
    ("FIR taps, odd", MultiplierSpec(kind="zf", zf_order=(1, 1), odd=True)),
    ("FIR + diag circle", MultiplierSpec(kind="combined", zf_order=(1, 1),
                                         circle_part="diag")),
]

print(f"20 members x 200 signals x 60 steps per family "
      f"(sector [{BOUNDS.alpha[0]}, {BOUNDS.beta[0]}], "
      f"slopes [{BOUNDS.mu[0]}, {BOUNDS.nu[0]}])\n")
print(f"{'family':20s} {'mode':8s} {'min partial sum':>16s} "
      f"{'violating signals':>18s}")

for label, spec in FAMILIES:
    lo = np.inf
    mode = None
    for s in range(20):
        val = sample_valuation(spec, BOUNDS, WIDTHS, rng=s)
        res = nncert.empirical_hard_iqc(val, BOUNDS, n_signals=200,
                                        horizon=60, seed=s)
        lo = min(lo, res.min_normalized)
        mode = res.mode
    val = sample_valuation(spec, BOUNDS, WIDTHS, rng=0)
    neg = nncert.empirical_hard_iqc(val, BOUNDS, n_signals=200, horizon=60,
                                    seed=0, mode="violate")
    print(f"{label:20s} {mode:8s} {lo:16.3e} {neg.min_normalized:18.3e}")

print("\nadmissible columns stay >= -1e-8; the violate column must go "
      "negative")
