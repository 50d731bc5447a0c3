"""Interval propagation through the network and local sector/slope bounds.

Starting from a box ``|v1| <= d1`` on the first layer's pre-activation
deviation, intervals are pushed through the remaining layers.  On each
neuron's reachable interval the shifted activation is then bracketed two
ways: a sector ``alpha v^2 <= v phi(v) <= beta v^2`` and a slope range
``mu <= (phi(a) - phi(b)) / (a - b) <= nu``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelError, ShiftedLoop, activation_deriv, activation_fn


@dataclass(frozen=True)
class BoxBounds:
    """Per-neuron reachable intervals ``[lo, hi]`` for the shifted pre-activations."""

    d1: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


@dataclass(frozen=True)
class SectorSlopeBounds:
    """Per-neuron sector ``[alpha, beta]`` and slope range ``[mu, nu]``."""

    alpha: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    nu: np.ndarray


def propagate_boxes(loop: ShiftedLoop, d1: np.ndarray) -> BoxBounds:
    """Propagate the first-layer box ``[-d1, d1]`` through the hidden layers.

    Uses interval arithmetic: the activation image of an interval follows
    from monotonicity, and an affine layer splits its weight into positive
    and negative parts.

    Parameters
    ----------
    loop : ShiftedLoop
    d1 : (n_1,) array of positive first-layer half-widths.

    Returns
    -------
    BoxBounds with ``lo <= 0 <= hi`` per neuron.
    """
    widths = loop.nn.widths
    d1 = np.asarray(d1, dtype=float).reshape(-1)
    if d1.shape[0] != widths[0]:
        raise ModelError(
            f"d1 has length {d1.shape[0]}, expected first-layer width {widths[0]}"
        )
    if np.any(d1 <= 0.0) or not np.all(np.isfinite(d1)):
        raise ModelError("d1 must be strictly positive and finite")

    n = loop.n
    lo = np.empty(n)
    hi = np.empty(n)
    slices = loop.layer_slices
    lo[slices[0]] = -d1
    hi[slices[0]] = d1
    v_star = loop.steady.v_star
    w_star = loop.steady.w_star
    for i in range(1, loop.nn.n_layers):
        prev, cur = slices[i - 1], slices[i]
        layer_prev = loop.nn.layers[i - 1]
        # activation image of the previous box, exact by monotonicity
        w_lo = (
            activation_fn(layer_prev.activation, lo[prev] + v_star[prev])
            - w_star[prev]
        )
        w_hi = (
            activation_fn(layer_prev.activation, hi[prev] + v_star[prev])
            - w_star[prev]
        )
        W = loop.nn.layers[i].W
        W_pos = np.maximum(W, 0.0)
        W_neg = np.minimum(W, 0.0)
        lo[cur] = W_pos @ w_lo + W_neg @ w_hi
        hi[cur] = W_pos @ w_hi + W_neg @ w_lo
    return BoxBounds(d1=d1, lo=lo, hi=hi)


def _relu_bounds(v_star, lo, hi):
    """Tight sector/slope bounds of the shifted relu on ``[lo, hi]``.

    Works on the unshifted interval ``[L, U] = [v* + lo, v* + hi]``: the
    minimal/maximal secant slopes depend only on where that interval sits
    relative to the kink, and the sector chords are ``phi(lo)/lo`` and
    ``phi(hi)/hi`` extended by continuity when an endpoint touches zero.
    """
    L = v_star + lo
    U = v_star + hi
    m = lo.shape[0]
    alpha = np.empty(m)
    beta = np.empty(m)
    mu = np.empty(m)
    nu = np.empty(m)
    phi_lo = np.maximum(L, 0.0) - np.maximum(v_star, 0.0)
    phi_hi = np.maximum(U, 0.0) - np.maximum(v_star, 0.0)
    for j in range(m):
        if lo[j] == hi[j]:
            # degenerate interval: everything collapses to a pointwise slope
            d = 1.0 if v_star[j] > 0.0 else 0.0
            if v_star[j] == 0.0:
                alpha[j], beta[j], mu[j], nu[j] = 0.0, 1.0, 0.0, 1.0
            else:
                alpha[j] = beta[j] = mu[j] = nu[j] = d
            continue
        mu[j] = 1.0 if L[j] >= 0.0 else 0.0
        nu[j] = 0.0 if U[j] <= 0.0 else 1.0
        if lo[j] < 0.0:
            alpha[j] = phi_lo[j] / lo[j]
        else:
            # lo == 0: secant from the right of the shift point
            alpha[j] = 1.0 if v_star[j] >= 0.0 else 0.0
        if hi[j] > 0.0:
            beta[j] = phi_hi[j] / hi[j]
        else:
            # hi == 0: secant from the left of the shift point
            beta[j] = 1.0 if v_star[j] > 0.0 else 0.0
    return alpha, beta, mu, nu


def _smooth_bounds(name, v_star, lo, hi):
    """Sector/slope bounds for tanh/sigmoid from derivative extremes.

    Both activations have a derivative that increases toward 0 and decays
    away from it, so on ``[L, U]`` the largest slope sits at the point
    closest to the origin and the smallest at the farther endpoint.  By the
    mean value theorem every secant slope of the shifted activation lies
    between those extremes, so the sector equals the slope range.
    """
    L = v_star + lo
    U = v_star + hi
    d_lo = activation_deriv(name, L)
    d_hi = activation_deriv(name, U)
    nu = activation_deriv(name, np.clip(0.0, L, U))
    mu = np.minimum(d_lo, d_hi)
    return mu.copy(), nu.copy(), mu, nu


def local_bounds(loop: ShiftedLoop, boxes: BoxBounds) -> SectorSlopeBounds:
    """Per-neuron sector and slope bounds of the shifted activations on ``boxes``.

    Returns
    -------
    SectorSlopeBounds with ``0 <= mu <= alpha <= beta <= nu <= 1`` per
    neuron (sector chords are averages of slopes, hence nested).
    """
    n = loop.n
    alpha = np.empty(n)
    beta = np.empty(n)
    mu = np.empty(n)
    nu = np.empty(n)
    v_star = loop.steady.v_star
    for slc, layer in zip(loop.layer_slices, loop.nn.layers):
        if layer.activation == "relu":
            a, b, m_, n_ = _relu_bounds(
                v_star[slc], boxes.lo[slc], boxes.hi[slc]
            )
        else:
            a, b, m_, n_ = _smooth_bounds(
                layer.activation, v_star[slc], boxes.lo[slc], boxes.hi[slc]
            )
        alpha[slc], beta[slc], mu[slc], nu[slc] = a, b, m_, n_
    return SectorSlopeBounds(alpha=alpha, beta=beta, mu=mu, nu=nu)
