"""Compare multiplier families on the pendulum fixture.

Solves the certification SDP at one shared delta for each family and
prints the resulting ellipsoid sizes side by side.  Richer families pay
with more decision variables and solve time but certify smaller trace
(larger regions).  For the full trace-over-delta search use

    nncert search src/nncert/fixtures/pendulum.json --multiplier zf

Run:  python demos/compare_multipliers.py
"""

import time

import nncert
from nncert.multipliers import MultiplierSpec

DELTA = 0.59

CONFIGS = [
    ("circle, diagonal", MultiplierSpec(kind="diag-c")),
    ("circle, full block", MultiplierSpec(kind="fb-c")),
    ("circle/Yakubovich", MultiplierSpec(kind="cy")),
    ("FIR taps, diagonal", MultiplierSpec(kind="zf", zf_order=(1, 1))),
    ("FIR taps, per layer", MultiplierSpec(kind="zf", zf_order=(1, 1),
                                           zf_structure="layer")),
    ("FIR taps, full", MultiplierSpec(kind="zf", zf_order=(1, 1),
                                      zf_structure="full")),
    ("FIR + full circle", MultiplierSpec(kind="combined", zf_order=(1, 1),
                                         circle_part="full")),
]

plant, nn = nncert.load_model(nncert.fixture_path("pendulum.json"))
print(f"certifying at delta = {DELTA}\n")
print(f"{'family':24s} {'vars':>6s} {'trace(X_x)':>12s} {'time':>8s}")

for label, spec in CONFIGS:
    t0 = time.perf_counter()
    try:
        cert = nncert.certify_at(plant, nn, spec, DELTA)
    except nncert.InfeasibleError:
        print(f"{label:24s} {'-':>6s} {'infeasible':>12s}")
        continue
    except nncert.VertexCapError:
        # box vertex enumeration blows up exponentially in n
        print(f"{label:24s} {'-':>6s} {'vertex cap':>12s}")
        continue
    dt = time.perf_counter() - t0
    print(f"{label:24s} {cert.provenance['var_count']:6d} "
          f"{cert.trace_Xx:12.5f} {dt:7.1f}s")

print("\nsmaller trace = larger certified ellipsoid")
