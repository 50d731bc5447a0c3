"""Plant and network containers, steady-state solving, and loop shifting.

The closed loop under study is a discrete-time LTI plant ``x+ = A x + B u``,
``y = C x`` in feedback with a feed-forward network ``u = NN(y)``.  Analysis
happens in coordinates centered at a steady state ``x*``: after the shift the
bias terms cancel and every activation channel maps zero to zero, which is
what the multiplier machinery downstream assumes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit


class ModelError(ValueError):
    """Malformed model data or inconsistent dimensions."""


class SteadyStateError(RuntimeError):
    """The steady-state solver did not reach the requested residual."""


ACTIVATIONS = ("relu", "tanh", "sigmoid")


def activation_fn(name: str, t: np.ndarray) -> np.ndarray:
    """Evaluate a named scalar activation elementwise."""
    if name == "relu":
        return np.maximum(t, 0.0)
    if name == "tanh":
        return np.tanh(t)
    if name == "sigmoid":
        return expit(t)
    raise ModelError(f"unknown activation '{name}'")


def activation_deriv(name: str, t: np.ndarray) -> np.ndarray:
    """Elementwise derivative of a named activation (relu uses 0 at the kink)."""
    if name == "relu":
        return (np.asarray(t, dtype=float) > 0.0).astype(float)
    if name == "tanh":
        return 1.0 - np.tanh(t) ** 2
    if name == "sigmoid":
        s = expit(t)
        return s * (1.0 - s)
    raise ModelError(f"unknown activation '{name}'")


def _as_matrix(name: str, value) -> np.ndarray:
    try:
        m = np.asarray(value, dtype=float)
    except (ValueError, TypeError) as e:
        raise ModelError(f"{name} is not a numeric matrix: {e}") from e
    if m.ndim != 2:
        raise ModelError(f"{name} must be a 2-d matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ModelError(f"{name} has non-finite entries")
    return m


@dataclass(frozen=True)
class PlantModel:
    """Discrete-time LTI plant ``x+ = A x + B u``, ``y = C x``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _as_matrix("A", self.A))
        object.__setattr__(self, "B", _as_matrix("B", self.B))
        object.__setattr__(self, "C", _as_matrix("C", self.C))
        if self.A.shape[0] != self.A.shape[1]:
            raise ModelError(f"A must be square, got shape {self.A.shape}")
        if self.B.shape[0] != self.A.shape[0]:
            raise ModelError(
                f"B has {self.B.shape[0]} rows, expected {self.A.shape[0]}"
            )
        if self.C.shape[1] != self.A.shape[0]:
            raise ModelError(
                f"C has {self.C.shape[1]} columns, expected {self.A.shape[0]}"
            )

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class Layer:
    """One hidden layer: ``w = phi(W z + b)`` with a named activation."""

    W: np.ndarray
    b: np.ndarray
    activation: str

    def __post_init__(self):
        object.__setattr__(self, "W", _as_matrix("W", self.W))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if b.shape[0] != self.W.shape[0]:
            raise ModelError(
                f"bias has length {b.shape[0]}, expected {self.W.shape[0]}"
            )
        if not np.all(np.isfinite(b)):
            raise ModelError("bias has non-finite entries")
        object.__setattr__(self, "b", b)
        if self.activation not in ACTIVATIONS:
            raise ModelError(f"unknown activation '{self.activation}'")

    @property
    def width(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True)
class NeuralNetwork:
    """Feed-forward network with hidden activation layers and a linear output map."""

    layers: tuple
    W_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ModelError("network needs at least one hidden layer")
        object.__setattr__(self, "layers", layers)
        for i in range(1, len(layers)):
            got = layers[i].W.shape[1]
            want = layers[i - 1].width
            if got != want:
                raise ModelError(
                    f"layer {i}: W has {got} columns, expected {want}"
                )
        object.__setattr__(self, "W_out", _as_matrix("W_out", self.W_out))
        if self.W_out.shape[1] != layers[-1].width:
            raise ModelError(
                f"W_out has {self.W_out.shape[1]} columns, "
                f"expected {layers[-1].width}"
            )
        b_out = np.asarray(self.b_out, dtype=float).reshape(-1)
        if b_out.shape[0] != self.W_out.shape[0]:
            raise ModelError(
                f"b_out has length {b_out.shape[0]}, expected {self.W_out.shape[0]}"
            )
        object.__setattr__(self, "b_out", b_out)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def widths(self) -> tuple:
        return tuple(layer.width for layer in self.layers)

    @property
    def n_total(self) -> int:
        return sum(self.widths)

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def output_dim(self) -> int:
        return self.W_out.shape[0]

    @property
    def bias_free(self) -> bool:
        return all(np.all(layer.b == 0.0) for layer in self.layers) and np.all(
            self.b_out == 0.0
        )

    def forward(self, y: np.ndarray):
        """Evaluate the network.

        Parameters
        ----------
        y : (..., input_dim) array; leading axes are treated as a batch.

        Returns
        -------
        u : (..., output_dim) array
        v : (..., n_total) array
            Stacked pre-activations of every hidden layer.
        w : (..., n_total) array
            Stacked post-activations.
        """
        y = np.asarray(y, dtype=float)
        if y.ndim == 0 or y.shape[-1] != self.input_dim:
            raise ModelError(
                f"input has length {y.shape[-1] if y.ndim else 0}, "
                f"expected {self.input_dim}"
            )
        vs, ws = [], []
        z = y
        for layer in self.layers:
            v = z @ layer.W.T + layer.b
            z = activation_fn(layer.activation, v)
            vs.append(v)
            ws.append(z)
        u = z @ self.W_out.T + self.b_out
        return (
            u,
            np.concatenate(vs, axis=-1),
            np.concatenate(ws, axis=-1),
        )

    def jacobian(self, y: np.ndarray) -> np.ndarray:
        """Jacobian of ``y -> NN(y)`` (relu uses the right derivative 0 at 0)."""
        y = np.asarray(y, dtype=float).reshape(-1)
        J = np.eye(self.input_dim)
        z = y
        for layer in self.layers:
            v = layer.W @ z + layer.b
            J = activation_deriv(layer.activation, v)[:, None] * (layer.W @ J)
            z = activation_fn(layer.activation, v)
        return self.W_out @ J


@dataclass(frozen=True)
class SteadyState:
    """Equilibrium of the closed loop together with the internal network signals."""

    x_star: np.ndarray
    u_star: np.ndarray
    y_star: np.ndarray
    v_star: np.ndarray
    w_star: np.ndarray
    residual: float


def load_model(path) -> tuple:
    """Load a plant/network pair from a JSON model file.

    The file holds ``{"lti": {"A", "B", "C"}, "nn": {"layers": [...],
    "W_out", "b_out"}}`` where each layer is ``{"W", "b", "activation"}``
    and the biases are optional (defaulting to zero).

    Returns
    -------
    (PlantModel, NeuralNetwork)
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ModelError(f"{path}: not valid JSON ({e})") from e
    try:
        lti = raw["lti"]
        nn_raw = raw["nn"]
        plant = PlantModel(A=lti["A"], B=lti["B"], C=lti["C"])
        layers = []
        for i, layer_raw in enumerate(nn_raw["layers"]):
            W = _as_matrix(f"layer {i} W", layer_raw["W"])
            b = layer_raw.get("b")
            if b is None:
                b = np.zeros(W.shape[0])
            try:
                layers.append(
                    Layer(W=W, b=b, activation=layer_raw["activation"])
                )
            except ModelError as e:
                raise ModelError(f"layer {i}: {e}") from e
        W_out = _as_matrix("W_out", nn_raw["W_out"])
        b_out = nn_raw.get("b_out")
        if b_out is None:
            b_out = np.zeros(W_out.shape[0])
        nn = NeuralNetwork(layers=tuple(layers), W_out=W_out, b_out=b_out)
    except KeyError as e:
        raise ModelError(f"{path}: missing key {e}") from e
    if nn.input_dim != plant.n_y:
        raise ModelError(
            f"layer 0: W has {nn.input_dim} columns, expected n_y = {plant.n_y}"
        )
    if nn.output_dim != plant.n_u:
        raise ModelError(
            f"W_out has {nn.output_dim} rows, expected n_u = {plant.n_u}"
        )
    return plant, nn


def _build_steady_state(
    plant: PlantModel, nn: NeuralNetwork, x: np.ndarray, tol: float
) -> SteadyState:
    y = plant.C @ x
    u, v, w = nn.forward(y)
    res = float(
        np.linalg.norm(plant.A @ x + plant.B @ u - x, ord=np.inf)
    )
    if res > tol * (1.0 + float(np.linalg.norm(x, ord=np.inf))):
        raise SteadyStateError(
            f"steady-state residual {res:.3e} exceeds tolerance"
        )
    return SteadyState(
        x_star=x, u_star=u, y_star=y, v_star=v, w_star=w, residual=res
    )


def find_steady_state(
    plant: PlantModel,
    nn: NeuralNetwork,
    guess: Optional[np.ndarray] = None,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> SteadyState:
    """Solve ``x = A x + B NN(C x)`` by damped Newton iteration.

    With no ``guess`` the origin is tried first, which settles the common
    bias-free case immediately.  Falls back to a damped fixed-point sweep if
    the Newton Jacobian goes singular.  Raises SteadyStateError when the
    residual ``max-norm <= tol * (1 + |x*|)`` cannot be met.
    """
    n_x = plant.n_x
    I = np.eye(n_x)

    def residual(x):
        u, _, _ = nn.forward(plant.C @ x)
        return (plant.A - I) @ x + plant.B @ u

    def converged(x, r):
        return np.linalg.norm(r, ord=np.inf) <= tol * (
            1.0 + np.linalg.norm(x, ord=np.inf)
        )

    x = np.zeros(n_x) if guess is None else np.asarray(guess, dtype=float).reshape(n_x)
    r = residual(x)
    best_x, best_res = x, float(np.linalg.norm(r, ord=np.inf))
    for _ in range(max_iter):
        if converged(x, r):
            return _build_steady_state(plant, nn, x, tol)
        J = (plant.A - I) + plant.B @ nn.jacobian(plant.C @ x) @ plant.C
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            break
        # backtrack until the residual actually shrinks
        t = 1.0
        accepted = False
        r_norm = np.linalg.norm(r, ord=np.inf)
        while t >= 2.0**-30:
            x_new = x + t * step
            r_new = residual(x_new)
            if np.linalg.norm(r_new, ord=np.inf) < r_norm:
                x, r = x_new, r_new
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        if np.linalg.norm(r, ord=np.inf) < best_res:
            best_x, best_res = x, float(np.linalg.norm(r, ord=np.inf))

    # damped fixed-point fallback for singular or stalled Newton steps
    x = best_x
    for _ in range(50_000):
        r = residual(x)
        if converged(x, r):
            return _build_steady_state(plant, nn, x, tol)
        x = x + 0.5 * r
        if not np.all(np.isfinite(x)):
            break
    raise SteadyStateError(
        f"no steady state found: best residual {best_res:.3e} (tol {tol:.1e})"
    )


@dataclass(frozen=True)
class ShiftedLoop:
    """Loop description centered at a steady state.

    Holds the interconnection matrices that express the stacked layer
    signals in terms of the shifted plant state and the shifted
    post-activations: ``[v; w] = [R_x | R_w] [x; w]`` with ``v``, ``w`` the
    stacked pre-/post-activation deviations of all hidden layers, plus the
    input read-out ``u = R_u w`` and the first-layer map ``Q = W0 C``.
    """

    plant: PlantModel
    nn: NeuralNetwork
    steady: SteadyState
    N0: np.ndarray
    N_hidden: np.ndarray
    R_x: np.ndarray
    R_w: np.ndarray
    R_u: np.ndarray
    Q: np.ndarray

    @property
    def n(self) -> int:
        return self.nn.n_total

    @property
    def layer_slices(self) -> tuple:
        slices = []
        start = 0
        for width in self.nn.widths:
            slices.append(slice(start, start + width))
            start += width
        return tuple(slices)

    def phi(self, v_t: np.ndarray) -> np.ndarray:
        """Shifted stacked nonlinearity: ``phi_t(v) = phi(v + v*) - phi(v*)``.

        Accepts a trailing axis of length ``n`` and broadcasts over leading
        axes.  Each coordinate uses the activation of its own layer.
        """
        v_t = np.asarray(v_t, dtype=float)
        out = np.empty_like(v_t)
        v_star = self.steady.v_star
        w_star = self.steady.w_star
        for slc, layer in zip(self.layer_slices, self.nn.layers):
            out[..., slc] = (
                activation_fn(layer.activation, v_t[..., slc] + v_star[slc])
                - w_star[slc]
            )
        return out

    def phi_deriv(self, v_t: np.ndarray) -> np.ndarray:
        """Derivative of the shifted stacked nonlinearity at ``v_t``."""
        v_t = np.asarray(v_t, dtype=float)
        out = np.empty_like(v_t)
        v_star = self.steady.v_star
        for slc, layer in zip(self.layer_slices, self.nn.layers):
            out[..., slc] = activation_deriv(
                layer.activation, v_t[..., slc] + v_star[slc]
            )
        return out

    def forward_shifted(self, x_t: np.ndarray):
        """Layer recursion in shifted coordinates.

        Parameters
        ----------
        x_t : (..., n_x) array of state deviations from ``x_star``.

        Returns
        -------
        (u_t, v_t, w_t) : deviations of input and stacked layer signals.
        """
        x_t = np.asarray(x_t, dtype=float)
        v_t = np.empty(x_t.shape[:-1] + (self.n,))
        w_t = np.empty_like(v_t)
        v_star, w_star = self.steady.v_star, self.steady.w_star
        z = x_t @ self.plant.C.T
        for slc, layer in zip(self.layer_slices, self.nn.layers):
            v_t[..., slc] = z @ layer.W.T
            w_t[..., slc] = (
                activation_fn(
                    layer.activation, v_t[..., slc] + v_star[slc]
                )
                - w_star[slc]
            )
            z = w_t[..., slc]
        u_t = w_t[..., self.layer_slices[-1]] @ self.nn.W_out.T
        return u_t, v_t, w_t


def shift_loop(
    plant: PlantModel, nn: NeuralNetwork, steady: SteadyState
) -> ShiftedLoop:
    """Build the interconnection matrices of the loop shifted to ``steady``."""
    n = nn.n_total
    n_x = plant.n_x
    widths = nn.widths
    offsets = np.concatenate([[0], np.cumsum(widths)])

    Q = nn.layers[0].W @ plant.C
    N0 = np.zeros((n, n_x))
    N0[: widths[0], :] = Q

    N_hidden = np.zeros((n, n))
    for i in range(1, nn.n_layers):
        rows = slice(offsets[i], offsets[i + 1])
        cols = slice(offsets[i - 1], offsets[i])
        N_hidden[rows, cols] = nn.layers[i].W

    R_x = np.vstack([N0, np.zeros((n, n_x))])
    R_w = np.vstack([N_hidden, np.eye(n)])
    R_u = np.zeros((plant.n_u, n))
    R_u[:, offsets[-2] :] = nn.W_out

    return ShiftedLoop(
        plant=plant,
        nn=nn,
        steady=steady,
        N0=N0,
        N_hidden=N_hidden,
        R_x=R_x,
        R_w=R_w,
        R_u=R_u,
        Q=Q,
    )
