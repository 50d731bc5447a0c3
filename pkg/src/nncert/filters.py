"""FIR filter realizations feeding the multiplier weights.

Every family weights a static function of the current loop signals (v, w)
and finitely many of their past values.  That history is realized as a
shared delay line: state ``xi = (v_{k-1..k-d}, w_{k-1..k-d})`` with
``r_k = C xi_k + D [v_k; w_k]``.  The state matrix is a pure shift, hence
nilpotent, so the filter adds no dynamics of its own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelError, ShiftedLoop
from .multipliers import MultiplierSpec, n_r_for


@dataclass(frozen=True)
class FilterRealization:
    """State-space data (A, B, C, D) of a stacked signal filter."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A, B, C, D = (np.asarray(m, dtype=float) for m in (self.A, self.B, self.C, self.D))
        if A.shape[0] != A.shape[1]:
            raise ModelError(f"filter A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ModelError("filter B row count does not match A")
        if C.shape[1] != A.shape[0]:
            raise ModelError("filter C column count does not match A")
        if D.shape != (C.shape[0], B.shape[1]):
            raise ModelError("filter D shape does not match B and C")
        for name, m in zip("ABCD", (A, B, C, D)):
            object.__setattr__(self, name, m)

    @property
    def n_xi(self) -> int:
        return self.A.shape[0]

    @property
    def n_r(self) -> int:
        return self.C.shape[0]

    @property
    def n_in(self) -> int:
        return self.B.shape[1]

    def simulate(self, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Run the filter from zero state over stacked input sequences.

        ``v`` and ``w`` have shape (..., K, n); the output has shape
        (..., K, n_r).
        """
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        if v.shape != w.shape:
            raise ModelError("v and w sequences must have matching shapes")
        steps = v.shape[-2]
        lead = v.shape[:-2]
        r = np.empty(lead + (steps, self.n_r))
        xi = np.zeros(lead + (self.n_xi,))
        for k in range(steps):
            inp = np.concatenate([v[..., k, :], w[..., k, :]], axis=-1)
            r[..., k, :] = xi @ self.C.T + inp @ self.D.T
            xi = xi @ self.A.T + inp @ self.B.T
        return r


def _delay_line(n: int, depth: int):
    """Shift-register realization storing the last ``depth`` values of v and w."""
    n_xi = 2 * depth * n
    A = np.zeros((n_xi, n_xi))
    B = np.zeros((n_xi, 2 * n))
    if depth > 0:
        shift = np.eye(depth, k=-1)
        block = np.kron(shift, np.eye(n))
        half = depth * n
        A[:half, :half] = block
        A[half:, half:] = block
        B[:n, :n] = np.eye(n)
        B[half : half + n, n:] = np.eye(n)
    return A, B


def _reader(n: int, depth: int, channel: int, lag: int):
    """(C, D) row blocks that output v (channel 0) or w (channel 1) at ``lag``."""
    C = np.zeros((n, 2 * depth * n))
    D = np.zeros((n, 2 * n))
    if lag == 0:
        D[:, channel * n : (channel + 1) * n] = np.eye(n)
    else:
        offset = channel * depth * n + (lag - 1) * n
        C[:, offset : offset + n] = np.eye(n)
    return C, D


def _cy_rows(n: int, depth: int):
    """Rows (v, v - v^-, w, w - w^-) for the sector/increment family."""
    rows = []
    for channel in (0, 1):
        cur = _reader(n, depth, channel, 0)
        prev = _reader(n, depth, channel, 1)
        rows.append(cur)
        rows.append((cur[0] - prev[0], cur[1] - prev[1]))
    return rows


def realize_filter(spec: MultiplierSpec, n: int) -> FilterRealization:
    """Build the filter whose output the family's weight acts on.

    Row layout matches the weight built by ``build_multiplier``: ZF window
    rows (v at lags 0..ell, then w at lags 0..ell) come first, circle rows
    after them.  Families sharing the delay line share the state.
    """
    depth = 0
    if spec.has_zf:
        depth = max(depth, spec.ell)
    uses_cy = spec.kind == "cy" or (
        spec.kind == "combined" and spec.circle_part == "cy"
    )
    if uses_cy:
        depth = max(depth, 1)

    A, B = _delay_line(n, depth)
    rows = []
    if spec.has_zf:
        for channel in (0, 1):
            for lag in range(spec.ell + 1):
                rows.append(_reader(n, depth, channel, lag))
    if spec.kind in ("diag-c", "fb-c") or (
        spec.kind == "combined" and spec.circle_part in ("diag", "full")
    ):
        rows.append(_reader(n, depth, 0, 0))
        rows.append(_reader(n, depth, 1, 0))
    if uses_cy:
        rows.extend(_cy_rows(n, depth))

    C = np.vstack([r[0] for r in rows])
    D = np.vstack([r[1] for r in rows])
    psi = FilterRealization(A=A, B=B, C=C, D=D)
    expected = n_r_for(spec, n)
    if psi.n_r != expected:
        raise ModelError(
            f"filter produced {psi.n_r} rows, weight expects {expected}"
        )
    return psi


@dataclass(frozen=True)
class ExtendedSystem:
    """Plant state stacked with the filter state.

    Dynamics ``eta+ = A_tot eta + B_tot w`` and output ``r = C_tot eta +
    D_tot w``, where w is the stacked post-activation deviation.
    """

    A_tot: np.ndarray
    B_tot: np.ndarray
    C_tot: np.ndarray
    D_tot: np.ndarray
    n_x: int
    n_xi: int
    n: int

    @property
    def n_eta(self) -> int:
        return self.n_x + self.n_xi

    @property
    def n_r(self) -> int:
        return self.C_tot.shape[0]


def extend_plant(loop: ShiftedLoop, psi: FilterRealization) -> ExtendedSystem:
    """Close the filter over the shifted loop's signal map.

    The filter input ``[v; w] = R_x x + R_w w`` is substituted into the
    delay-line dynamics, leaving w as the only exogenous channel.
    """
    n = loop.n
    if psi.n_in != 2 * n:
        raise ModelError(
            f"filter expects input dimension {psi.n_in}, loop provides {2 * n}"
        )
    plant = loop.plant
    n_x = plant.n_x
    n_xi = psi.n_xi
    A_tot = np.block(
        [
            [plant.A, np.zeros((n_x, n_xi))],
            [psi.B @ loop.R_x, psi.A],
        ]
    )
    B_tot = np.vstack([plant.B @ loop.R_u, psi.B @ loop.R_w])
    C_tot = np.hstack([psi.D @ loop.R_x, psi.C])
    D_tot = psi.D @ loop.R_w
    return ExtendedSystem(
        A_tot=A_tot, B_tot=B_tot, C_tot=C_tot, D_tot=D_tot,
        n_x=n_x, n_xi=n_xi, n=n,
    )
