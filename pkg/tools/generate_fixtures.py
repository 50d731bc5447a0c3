"""Regenerate the model fixtures shipped in src/nncert/fixtures/.

The fixtures are constructed, not trained: hidden weights are drawn from
seeded generators and the output layer is chosen so the loop linearizes to
the discrete LQR feedback, which makes the closed loop locally stable by
construction.  Scales are calibrated so the certifiable delta range is
finite and the multiplier families separate cleanly.

Running this script rewrites the JSON files in place; the frozen copies in
the repository are authoritative for tests.
"""

import json
from pathlib import Path

import numpy as np
import scipy.linalg

FIXTURE_DIR = Path(__file__).resolve().parents[1] / "src" / "nncert" / "fixtures"

# inverted pendulum, forward-Euler at dt = 0.02:
# theta'' = (g/l) sin(theta) - (mu/(m l^2)) theta' + u/(m l^2)
# with g = 9.81, l = 0.5, m = 0.15, mu = 0.5
A_PEND = [[1.0, 0.02], [0.3924, 0.73333]]
B_PEND = [[0.0], [0.53333]]


def lqr_gain(A, B, R=0.1):
    P = scipy.linalg.solve_discrete_are(A, B, np.eye(A.shape[0]),
                                        R * np.eye(B.shape[1]))
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def model_payload(A, B, C, layers, W_out, b_out):
    return {
        "lti": {"A": np.asarray(A).tolist(), "B": np.asarray(B).tolist(),
                "C": np.asarray(C).tolist()},
        "nn": {
            "layers": [
                {"W": W.tolist(), "b": b.tolist(), "activation": act}
                for (W, b, act) in layers
            ],
            "W_out": np.asarray(W_out).tolist(),
            "b_out": np.asarray(b_out).tolist(),
        },
    }


def pendulum_fixture():
    """Bias-free two-hidden-layer tanh controller; equilibrium at the origin."""
    A = np.array(A_PEND)
    B = np.array(B_PEND)
    K = lqr_gain(A, B)
    rng = np.random.default_rng(42)
    W0 = rng.standard_normal((5, 2))
    W1 = rng.standard_normal((5, 5)) / np.sqrt(5)
    # output layer inverts the hidden linearization, so the loop
    # linearizes to A - B K exactly
    W_out = -K @ np.linalg.pinv(W1 @ W0)
    layers = [(W0, np.zeros(5), "tanh"), (W1, np.zeros(5), "tanh")]
    return model_payload(A, B, np.eye(2), layers, W_out, np.zeros(1))


def biased_fixture():
    """Two-hidden-layer tanh controller with biases; equilibrium off origin."""
    A = np.array(A_PEND)
    B = np.array(B_PEND)
    K = lqr_gain(A, B)
    rng = np.random.default_rng(7)
    W0 = rng.standard_normal((4, 2))
    W1 = rng.standard_normal((4, 4)) / 2.0
    b0 = rng.uniform(-0.2, 0.2, 4)
    b1 = rng.uniform(-0.2, 0.2, 4)
    W_out = -K @ np.linalg.pinv(W1 @ W0)
    layers = [(W0, b0, "tanh"), (W1, b1, "tanh")]
    return model_payload(A, B, np.eye(2), layers, W_out, np.zeros(1))


def main():
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    for name, payload in [("pendulum.json", pendulum_fixture()),
                          ("biased.json", biased_fixture())]:
        path = FIXTURE_DIR / name
        path.write_text(json.dumps(payload, indent=2) + "\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
