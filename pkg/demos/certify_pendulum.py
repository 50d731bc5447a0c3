"""Certify the inverted-pendulum fixture at a fixed box size.

Walks the full pipeline once: load the model, pick a preactivation box
half-width delta, solve the certification SDP with the diagonal circle
multiplier, and stress the resulting ellipsoid in simulation.

Run:  python demos/certify_pendulum.py
"""

import numpy as np

import nncert

DELTA = 0.6

plant, nn = nncert.load_model(nncert.fixture_path("pendulum.json"))
print(f"plant: {plant.n_x} states, NN widths {list(nn.widths)}")

steady = nncert.find_steady_state(plant, nn)
print(f"steady state x* = {np.array2string(steady.x_star, precision=6)}")

# what the interval propagation sees at this delta
loop = nncert.shift_loop(plant, nn, steady)
boxes = nncert.propagate_boxes(loop, DELTA * np.ones(nn.widths[0]))
bounds = nncert.local_bounds(loop, boxes)
print(f"delta = {DELTA}: preactivation boxes up to "
      f"+-{np.abs(np.c_[boxes.lo, boxes.hi]).max():.4f}, "
      f"slopes in [{bounds.mu.min():.4f}, {bounds.nu.max():.4f}]")

spec = nncert.MultiplierSpec(kind="diag-c")
cert = nncert.certify_at(plant, nn, spec, DELTA)
print(f"certified: trace(X_x) = {cert.trace_Xx:.5f}, "
      f"{cert.provenance['var_count']} multiplier variables, "
      f"solver residual {cert.provenance['max_violation']:.2e}")

report = nncert.validate_certificate(plant, nn, cert,
                                     n_samples=500, steps=2000)
print(report.summary())

out = "pendulum_cert.json"
cert.to_json(out)
print(f"certificate written to {out}")
