"""Search for the best certifiable ellipsoid on the biased fixture.

First finds the largest certifiable box half-width delta_max by
bisection, then golden-sections trace(X_x) over (0, delta_max]: small
boxes force tight sectors but also tiny peak bounds, large boxes relax
the peak constraint but loosen the sectors, and the best ellipsoid sits
in between.  The sweep record shows that trade-off.

Run:  python demos/search_roa.py
"""

import numpy as np

import nncert
from nncert.multipliers import MultiplierSpec

plant, nn = nncert.load_model(nncert.fixture_path("biased.json"))
spec = MultiplierSpec(kind="zf", zf_order=(1, 1))

delta_max = nncert.find_delta_max(plant, nn, spec)
print(f"delta_max = {delta_max:.5f}")

delta_star, cert, sweep = nncert.minimize_trace_over_delta(
    plant, nn, spec, delta_max=delta_max)
print(f"delta*    = {delta_star:.5f} with trace(X_x) = {cert.trace_Xx:.5f}")

print("\n delta     status      trace(X_x)")
for p in sweep.points:
    shown = f"{p.trace:12.5f}" if np.isfinite(p.trace) else "           -"
    print(f" {p.delta:.5f}  {p.status:10s} {shown}")

sweep.to_csv("biased_sweep.csv")
cert.to_json("biased_cert.json")
print("\nwrote biased_sweep.csv and biased_cert.json")

report = nncert.validate_certificate(plant, nn, cert,
                                     n_samples=500, steps=2000)
print(report.summary())
