"""Simulation, ellipsoid sampling, and empirical falsification checks.

Two layers of empirical evidence back a certificate.  ``validate_certificate``
draws initial states from the certified ellipsoid, rolls the closed loop
forward, and checks convergence, the per-channel peak bound, and the
dissipation inequality along every trajectory.  ``empirical_hard_iqc``
stresses a multiplier valuation directly: it synthesizes signal pairs
consistent with the declared nonlinearity class and checks that every
finite-horizon partial sum of the filtered quadratic form stays nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .bounds import SectorSlopeBounds
from .filters import FilterRealization, realize_filter
from .model import NeuralNetwork, PlantModel, find_steady_state, shift_loop
from .multipliers import MultiplierValuation

DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class Trajectory:
    """Closed-loop rollout in original coordinates.

    ``x`` has shape (..., steps + 1, n_x) and ``u`` (..., steps, n_u).
    ``diverged`` flags rollouts whose state norm crossed 1e12; their
    states are frozen from that point on.
    """

    x: np.ndarray
    u: np.ndarray
    diverged: np.ndarray


def simulate(
    plant: PlantModel,
    nn: NeuralNetwork,
    x0: np.ndarray,
    steps: int,
) -> Trajectory:
    """Roll the closed loop ``x+ = A x + B nn(C x)`` for ``steps`` steps."""
    x0 = np.asarray(x0, dtype=float)
    batch = x0.shape[:-1]
    if x0.shape[-1] != plant.n_x:
        raise ValueError(f"x0 must have trailing size {plant.n_x}")
    xs = np.empty(batch + (steps + 1, plant.n_x))
    us = np.empty(batch + (steps, plant.n_u))
    x = x0.copy()
    dead = np.zeros(batch, dtype=bool)
    xs[..., 0, :] = x
    for k in range(steps):
        y = x @ plant.C.T
        u, _, _ = nn.forward(y)
        x_next = x @ plant.A.T + u @ plant.B.T
        blown = np.linalg.norm(x_next, ord=np.inf, axis=-1) > DIVERGENCE_LIMIT
        dead = dead | blown
        if dead.any():
            x_next = np.where(dead[..., None], x, x_next)
            u = np.where(dead[..., None], 0.0, u)
        us[..., k, :] = u
        xs[..., k + 1, :] = x_next
        x = x_next
    return Trajectory(x=xs, u=us, diverged=dead)


def simulate_extended(
    loop,
    psi: FilterRealization,
    x_tilde0: np.ndarray,
    steps: int,
):
    """Roll the shifted loop together with the multiplier's filter.

    ``x_tilde0`` is in shifted coordinates (deviation from the steady
    state); the filter starts at rest.  Returns ``(eta, r)`` where ``eta``
    stacks plant deviation and filter state with shape
    (..., steps + 1, n_x + n_xi) and ``r`` collects the filter outputs
    with shape (..., steps, n_r).
    """
    x = np.asarray(x_tilde0, dtype=float)
    batch = x.shape[:-1]
    n_x = loop.plant.n_x
    if x.shape[-1] != n_x:
        raise ValueError(f"x_tilde0 must have trailing size {n_x}")
    xi = np.zeros(batch + (psi.n_xi,))
    etas = np.empty(batch + (steps + 1, n_x + psi.n_xi))
    rs = np.empty(batch + (steps, psi.n_r))
    etas[..., 0, :] = np.concatenate([x, xi], axis=-1)
    A, B = loop.plant.A, loop.plant.B
    for k in range(steps):
        u_t, v_t, w_t = loop.forward_shifted(x)
        z = np.concatenate([v_t, w_t], axis=-1)
        rs[..., k, :] = xi @ psi.C.T + z @ psi.D.T
        xi = xi @ psi.A.T + z @ psi.B.T
        x = x @ A.T + u_t @ B.T
        etas[..., k + 1, :] = np.concatenate([x, xi], axis=-1)
    return etas, rs


def sample_ellipsoid(
    X_x: np.ndarray,
    x_star: np.ndarray,
    n_samples: int,
    *,
    rng=None,
    boundary: bool = False,
) -> np.ndarray:
    """Sample points of the ellipsoid ``(x - x*)' X_x (x - x*) <= 1``.

    Uniform in volume by default; with ``boundary`` the points sit exactly
    on the shell.  ``rng`` is a seed or a numpy Generator.
    """
    rng = np.random.default_rng(rng)
    X_x = np.asarray(X_x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    n = x_star.shape[0]
    L = scipy.linalg.cholesky(0.5 * (X_x + X_x.T), lower=True)
    s = rng.standard_normal((n_samples, n))
    s /= np.linalg.norm(s, axis=1, keepdims=True)
    if not boundary:
        s *= rng.uniform(0.0, 1.0, size=(n_samples, 1)) ** (1.0 / n)
    # (x - x*) = L^{-T} s puts s' s = (x - x*)' X_x (x - x*)
    offs = scipy.linalg.solve_triangular(L.T, s.T, lower=False).T
    return x_star[None, :] + offs


@dataclass
class ValidationReport:
    """Outcome of the Monte-Carlo certificate check."""

    passed: bool
    n_samples: int
    n_steps: int
    n_diverged: int
    n_not_converged: int
    max_final_norm: float
    max_peak_ratio: float
    max_dissipation: float
    violations: list = field(default_factory=list)

    def summary(self) -> str:
        head = "PASS" if self.passed else "FAIL"
        lines = [
            f"{head}: {self.n_samples} initial states, {self.n_steps} steps",
            f"  diverged: {self.n_diverged}, not converged: {self.n_not_converged}",
            f"  max final |x~|_inf: {self.max_final_norm:.3e}",
            f"  max peak ratio |Q x~|_j / d_j: {self.max_peak_ratio:.6f}",
            f"  max normalized dissipation residual: {self.max_dissipation:.3e}",
        ]
        lines.extend("  violation: " + v for v in self.violations)
        return "\n".join(lines)


def validate_certificate(
    plant: PlantModel,
    nn: NeuralNetwork,
    cert,
    *,
    n_samples: int = 1000,
    steps: int = 2000,
    seed: int = 0,
    conv_tol: float = 1e-6,
    dissipation_tol: float = 1e-7,
    boundary: bool = False,
) -> ValidationReport:
    """Monte-Carlo check of a certificate against the true closed loop.

    Draws ``n_samples`` initial states from the certified ellipsoid and
    simulates the shifted loop with the certificate's filter attached.
    Checks, per trajectory: convergence of the deviation to ``conv_tol``
    in the sup norm, the peak bound ``|Q x~|_j <= d_j`` with a relative
    slack of 1e-9, and the dissipation inequality
    ``V(k+1) - V(k) + r' P r <= dissipation_tol * (1 + |eta|^2)``.
    """
    steady = find_steady_state(plant, nn)
    loop = shift_loop(plant, nn, steady)
    spec = cert.multiplier.spec
    psi = realize_filter(spec, loop.n)
    X = cert.X
    P = cert.multiplier.P
    d1 = np.asarray(cert.d1, dtype=float)
    Q = loop.Q

    x0 = sample_ellipsoid(cert.X_x, cert.x_star, n_samples, rng=seed,
                          boundary=boundary)
    x = x0 - steady.x_star[None, :]
    xi = np.zeros((n_samples, psi.n_xi))
    A, B = plant.A, plant.B

    peak_limit = d1 * (1.0 + 1e-9) + 1e-12
    max_peak_ratio = 0.0
    max_diss = -np.inf
    dead = np.zeros(n_samples, dtype=bool)
    for _ in range(steps):
        eta = np.concatenate([x, xi], axis=1)
        V = np.einsum("si,ij,sj->s", eta, X, eta)
        u_t, v_t, w_t = loop.forward_shifted(x)
        z = np.concatenate([v_t, w_t], axis=1)
        r = xi @ psi.C.T + z @ psi.D.T
        quad = np.einsum("si,ij,sj->s", r, P, r)
        peak = np.abs(x @ Q.T)
        max_peak_ratio = max(max_peak_ratio, float((peak / d1).max()))
        if np.any(peak > peak_limit[None, :]):
            dead_now = np.any(peak > peak_limit[None, :], axis=1)
            dead = dead | dead_now
        xi = xi @ psi.A.T + z @ psi.B.T
        x = x @ A.T + u_t @ B.T
        eta_next = np.concatenate([x, xi], axis=1)
        V_next = np.einsum("si,ij,sj->s", eta_next, X, eta_next)
        diss = (V_next - V + quad) / (1.0 + np.einsum("si,si->s", eta, eta))
        max_diss = max(max_diss, float(diss.max()))
        if np.linalg.norm(x, ord=np.inf) > DIVERGENCE_LIMIT:
            break

    final_norm = np.linalg.norm(x, ord=np.inf, axis=1)
    diverged = final_norm > DIVERGENCE_LIMIT
    not_converged = (final_norm > conv_tol) & ~diverged

    violations = []
    if diverged.any():
        violations.append(f"{int(diverged.sum())} trajectories diverged")
    if not_converged.any():
        violations.append(
            f"{int(not_converged.sum())} trajectories did not reach "
            f"|x~|_inf <= {conv_tol:.1e} after {steps} steps"
        )
    if dead.any():
        violations.append(
            f"{int(dead.sum())} trajectories exceeded the peak bound d_1"
        )
    if max_diss > dissipation_tol:
        violations.append(
            f"dissipation inequality violated by {max_diss:.3e} "
            f"(tolerance {dissipation_tol:.1e})"
        )
    return ValidationReport(
        passed=not violations,
        n_samples=n_samples,
        n_steps=steps,
        n_diverged=int(diverged.sum()),
        n_not_converged=int(not_converged.sum()),
        max_final_norm=float(final_norm.max()),
        max_peak_ratio=max_peak_ratio,
        max_dissipation=float(max_diss),
        violations=violations,
    )


# ---------------------------------------------------------------------------
# empirical hard-IQC stress tests


@dataclass
class EmpiricalIqcResult:
    """Worst finite-horizon partial sums over a batch of synthetic signals."""

    mode: str
    n_signals: int
    horizon: int
    min_partial_sum: float
    min_normalized: float
    worst_signal: int

    def passed(self, tol: float = 1e-8) -> bool:
        return self.min_normalized >= -tol


def _static_nonlinearities(rng, bounds: SectorSlopeBounds, n_signals: int,
                           odd: bool, span: float = 6.0, segments: int = 17):
    """Random piecewise-linear maps with slopes inside [mu_j, nu_j].

    Returns grid points ``t`` (shared) and values ``phi`` of shape
    (n_signals, n, grid).  Each map fixes phi(0) = 0; odd maps mirror the
    positive half.
    """
    n = bounds.mu.shape[0]
    edges = np.linspace(0.0, span, segments + 1)
    widths = np.diff(edges)
    mu = bounds.mu[None, :, None]
    nu = bounds.nu[None, :, None]
    pos = rng.uniform(size=(n_signals, n, segments)) * (nu - mu) + mu
    val_pos = np.concatenate(
        [np.zeros((n_signals, n, 1)), np.cumsum(pos * widths, axis=2)], axis=2
    )
    if odd:
        val_neg = -val_pos[:, :, :0:-1]
    else:
        neg = rng.uniform(size=(n_signals, n, segments)) * (nu - mu) + mu
        val_neg = -np.cumsum(neg * widths, axis=2)[:, :, ::-1]
    t = np.concatenate([-edges[:0:-1], edges])
    phi = np.concatenate([val_neg, val_pos], axis=2)
    return t, phi


def _apply_static(t, phi, v):
    """Evaluate per-(signal, neuron) piecewise-linear maps at v."""
    n_signals, n, _ = phi.shape
    out = np.empty_like(v)
    for s in range(n_signals):
        for j in range(n):
            out[s, :, j] = np.interp(v[s, :, j], t, phi[s, j])
    return out


def _signals_for_mode(rng, mode: str, bounds: SectorSlopeBounds,
                      n_signals: int, horizon: int, odd: bool):
    n = bounds.alpha.shape[0]
    v = rng.standard_normal((n_signals, horizon, n))
    if mode == "sector":
        frac = rng.uniform(size=v.shape)
        delta = bounds.alpha + frac * (bounds.beta - bounds.alpha)
        return v, delta * v
    # static maps are defined on [-6, 6]; keep inputs strictly inside so
    # interpolation never flattens the slope at the ends
    v = np.clip(v, -5.0, 5.0)
    if mode == "slope":
        t, phi = _static_nonlinearities(rng, bounds, n_signals, odd)
        return v, _apply_static(t, phi, v)
    if mode == "blend":
        c0 = 0.5 * (bounds.alpha + bounds.beta)
        half = 0.5 * (bounds.beta - bounds.alpha)
        reach = np.maximum(bounds.nu - c0, c0 - bounds.mu)
        with np.errstate(divide="ignore", invalid="ignore"):
            gamma = np.where(reach > 0, np.minimum(1.0, half / reach), 0.0)
        t, phi = _static_nonlinearities(rng, bounds, n_signals, odd)
        w_rand = _apply_static(t, phi, v)
        return v, (1.0 - gamma) * c0 * v + gamma * w_rand
    if mode == "violate":
        return v, (bounds.beta + 1.0) * v
    raise ValueError(f"unknown signal mode '{mode}'")


def empirical_hard_iqc(
    valuation: MultiplierValuation,
    bounds: SectorSlopeBounds,
    *,
    n_signals: int = 200,
    horizon: int = 60,
    seed: int = 0,
    mode: str = "auto",
) -> EmpiricalIqcResult:
    """Stress a multiplier valuation with class-consistent signal pairs.

    Signals are generated to satisfy the nonlinearity class the valuation's
    family is sound for: pointwise gains in the sector for circle
    multipliers, static slope-restricted maps for the slope-based families,
    and a blend that additionally respects the sector for the combined
    classes.  ``mode='violate'`` deliberately breaks the class so the
    partial sums should go negative.  For every signal and every horizon
    prefix, the sum of ``r' P r`` over the filtered outputs is accumulated;
    the family's defining property is that the minimum is nonnegative.
    """
    spec = valuation.spec
    if mode == "auto":
        mode = {
            "diag-c": "sector",
            "fb-c": "sector",
            "cy": "blend",
            "zf": "slope",
            "combined": "blend",
        }[spec.kind]
    rng = np.random.default_rng(seed)
    odd = spec.kind in ("zf", "combined") and spec.odd
    v, w = _signals_for_mode(rng, mode, bounds, n_signals, horizon, odd)
    psi = realize_filter(spec, valuation.n)
    r = psi.simulate(v, w)
    quad = np.einsum("skr,rq,skq->sk", r, valuation.P, r)
    partial = np.cumsum(quad, axis=1)
    per_signal_min = partial.min(axis=1)
    energy = np.sum(v * v + w * w, axis=(1, 2))
    normalized = per_signal_min / (1.0 + energy)
    worst = int(np.argmin(normalized))
    return EmpiricalIqcResult(
        mode=mode,
        n_signals=n_signals,
        horizon=horizon,
        min_partial_sum=float(per_signal_min.min()),
        min_normalized=float(normalized.min()),
        worst_signal=worst,
    )
