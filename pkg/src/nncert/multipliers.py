"""Multiplier families for sector-bounded, slope-restricted diagonal nonlinearities.

Each family is a convex cone of symmetric weight matrices P with the hard
summation property: for every admissible loop signal the filtered output r
satisfies ``sum_{k<=N} r_k' P r_k >= 0`` at every horizon N.  The families
are built as cvxpy variable/constraint sets for the certification SDP, and
each has a numeric twin used to sample members and to re-check membership
of a solved valuation independently of the solver.

Families:

- ``diag-c``   diagonal circle weight from per-neuron sectors [alpha, beta]
- ``fb-c``     full-block circle weight, enumerated over sector-box vertices
- ``cy``       full block over both the sector and the one-step slope
               relation (4n filter channels)
- ``zf``       Zames-Falb FIR weight of order (l-, l+) built from hyper-
               dominance constraints and a sector transform of the slope
               bounds [mu, nu]
- ``combined`` block-diagonal stack of a ``zf`` weight and a circle weight
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import cvxpy as cp
import numpy as np

from .bounds import SectorSlopeBounds
from .model import NeuralNetwork, SteadyState


class MultiplierError(ValueError):
    """Invalid multiplier specification or valuation."""


class VertexCapError(MultiplierError):
    """Vertex enumeration would exceed the configured cap."""


KINDS = ("diag-c", "fb-c", "cy", "zf", "combined")
ZF_STRUCTURES = ("diag", "layer", "full")
CIRCLE_PARTS = ("diag", "full", "cy")


@dataclass(frozen=True)
class MultiplierSpec:
    """Choice of multiplier family and its structural options.

    ``zf_order = (l_minus, l_plus)`` counts the anticausal/causal FIR taps;
    ``zf_structure`` picks diagonal, per-layer block, or full matrices for
    the taps; ``odd`` switches the tap constraints from hyperdominance of
    sign-constrained matrices to double dominance of sign-free ones, which
    is only sound for odd repeated nonlinearities.  ``circle_part`` selects
    the circle family stacked next to the ZF weight when ``kind`` is
    ``"combined"``.
    """

    kind: str = "diag-c"
    zf_order: tuple = (1, 1)
    zf_structure: str = "diag"
    odd: bool = False
    circle_part: Optional[str] = "diag"
    vertex_cap: int = 4096

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MultiplierError(
                f"unknown multiplier kind '{self.kind}', expected one of {KINDS}"
            )
        order = tuple(int(j) for j in self.zf_order)
        if len(order) != 2 or order[0] < 0 or order[1] < 0:
            raise MultiplierError(
                f"zf_order must be a pair of nonnegative integers, got {self.zf_order}"
            )
        object.__setattr__(self, "zf_order", order)
        if self.zf_structure not in ZF_STRUCTURES:
            raise MultiplierError(
                f"unknown zf_structure '{self.zf_structure}', "
                f"expected one of {ZF_STRUCTURES}"
            )
        if self.kind == "combined":
            if self.circle_part is not None and self.circle_part not in CIRCLE_PARTS:
                raise MultiplierError(
                    f"unknown circle_part '{self.circle_part}', "
                    f"expected one of {CIRCLE_PARTS} or None"
                )
        if self.vertex_cap < 1:
            raise MultiplierError("vertex_cap must be at least 1")

    @property
    def has_zf(self) -> bool:
        return self.kind in ("zf", "combined")

    @property
    def has_circle(self) -> bool:
        return self.kind in ("diag-c", "fb-c", "cy") or (
            self.kind == "combined" and self.circle_part is not None
        )

    @property
    def ell(self) -> int:
        """FIR window length of the ZF part (max of the two orders)."""
        return max(self.zf_order)

    def describe(self) -> str:
        if self.kind == "combined":
            lm, lp = self.zf_order
            tag = f"zf({lm},{lp},{self.zf_structure})"
            if self.odd:
                tag += ",odd"
            return f"combined[{tag}+{self.circle_part or 'none'}]"
        if self.kind == "zf":
            lm, lp = self.zf_order
            tag = f"zf({lm},{lp},{self.zf_structure})"
            return tag + (",odd" if self.odd else "")
        return self.kind


def n_r_for(spec: MultiplierSpec, n: int) -> int:
    """Number of filter output channels the family's weight acts on."""
    if spec.kind == "diag-c" or spec.kind == "fb-c":
        return 2 * n
    if spec.kind == "cy":
        return 4 * n
    if spec.kind == "zf":
        return 2 * n * (spec.ell + 1)
    rows = 2 * n * (spec.ell + 1)
    if spec.circle_part in ("diag", "full"):
        rows += 2 * n
    elif spec.circle_part == "cy":
        rows += 4 * n
    return rows


def multiplier_var_count(spec: MultiplierSpec, widths) -> int:
    """Number of scalar decision variables parameterizing the family.

    diag-c: n.  fb-c: n(2n+1).  cy: 2n(4n+1).  zf: (l- + l+ + 1) blocks of
    size n (diag), sum of n_i^2 (layer), or n^2 (full).  combined: sum of
    its parts.
    """
    widths = tuple(int(w) for w in widths)
    n = sum(widths)
    if spec.kind == "diag-c":
        return n
    if spec.kind == "fb-c":
        return n * (2 * n + 1)
    if spec.kind == "cy":
        return 2 * n * (4 * n + 1)
    n_taps = spec.zf_order[0] + spec.zf_order[1] + 1
    if spec.zf_structure == "diag":
        per_tap = n
    elif spec.zf_structure == "layer":
        per_tap = sum(w * w for w in widths)
    else:
        per_tap = n * n
    count = n_taps * per_tap
    if spec.kind == "combined" and spec.circle_part is not None:
        count += multiplier_var_count(
            replace(spec, kind={"diag": "diag-c", "full": "fb-c", "cy": "cy"}[
                spec.circle_part
            ]),
            widths,
        )
    return count


def validate_spec(
    spec: MultiplierSpec, nn: NeuralNetwork, steady: SteadyState, tol: float = 1e-9
) -> None:
    """Check the structural preconditions a family places on the loop.

    Layer-block and full ZF taps couple different neurons through shared
    off-diagonal entries, which is only sound when every channel carries
    one and the same scalar nonlinearity: identical activations, no biases,
    and a centered steady state.  The odd option additionally needs an odd
    activation.
    """
    if not spec.has_zf:
        return
    needs_repeated = spec.zf_structure in ("layer", "full") or spec.odd
    if not needs_repeated:
        return
    reason = "odd tap constraints" if spec.odd else f"'{spec.zf_structure}' tap structure"
    acts = {layer.activation for layer in nn.layers}
    if len(acts) > 1:
        raise MultiplierError(
            f"{reason} requires identical activations on every layer, got {sorted(acts)}"
        )
    if not nn.bias_free:
        raise MultiplierError(f"{reason} requires a bias-free network")
    if np.linalg.norm(steady.v_star, ord=np.inf) > tol:
        raise MultiplierError(
            f"{reason} requires a centered steady state (max |v*| = "
            f"{np.linalg.norm(steady.v_star, ord=np.inf):.2e})"
        )
    if spec.odd and acts != {"tanh"}:
        raise MultiplierError(
            f"odd tap constraints require an odd activation, got {sorted(acts)}"
        )


@dataclass
class MultiplierSet:
    """A multiplier family rendered as cvxpy expressions.

    ``P`` is the affine weight expression, ``constraints`` the family's
    membership constraints, ``param_vars`` the variables that parameterize
    the family (counted by ``var_count``), and ``aux_vars`` any helper
    variables (absolute-value majorants) that carry no degrees of freedom
    of their own.
    """

    spec: MultiplierSpec
    n: int
    n_r: int
    P: object
    constraints: list
    param_vars: list
    aux_vars: list
    components: dict

    @property
    def var_count(self) -> int:
        return sum(_dof(v) for v in self.param_vars)


@dataclass
class MultiplierValuation:
    """Numeric snapshot of a solved multiplier: the weight and its parameters."""

    spec: MultiplierSpec
    n: int
    P: np.ndarray
    components: dict

    @classmethod
    def from_set(cls, ms: MultiplierSet) -> "MultiplierValuation":
        comps = {}
        for name, expr in ms.components.items():
            value = expr.value
            if value is None:
                raise MultiplierError(f"component '{name}' has no value (unsolved?)")
            comps[name] = np.atleast_1d(np.asarray(value, dtype=float))
        P = np.asarray(ms.P.value, dtype=float)
        return cls(spec=ms.spec, n=ms.n, P=0.5 * (P + P.T), components=comps)


def _dof(var) -> int:
    if var.attributes.get("symmetric") or var.attributes.get("PSD"):
        k = var.shape[0]
        return k * (k + 1) // 2
    return int(np.prod(var.shape))


def _vertex_diagonals(lo: np.ndarray, hi: np.ndarray, cap: int, label: str):
    """All vertices of the box [lo, hi] as diagonal vectors (deduplicated)."""
    per = [(l,) if l == h else (l, h) for l, h in zip(lo, hi)]
    total = 1
    for vals in per:
        total *= len(vals)
    if total > cap:
        raise VertexCapError(
            f"{label}: {total} sector-box vertices exceed vertex_cap={cap}; "
            "use the diagonal circle family or raise the cap"
        )
    return [np.array(v) for v in itertools.product(*per)]


# ---------------------------------------------------------------------------
# circle families


def diag_circle_weight(alpha: np.ndarray, beta: np.ndarray, lam) -> object:
    """Weight of the diagonal circle family for multiplier vector ``lam``.

    Acts on r = [v; w]; the quadratic form is
    ``-2 sum_j lam_j (w_j - alpha_j v_j)(w_j - beta_j v_j)``, nonnegative
    whenever each channel sits in its sector.
    """
    if isinstance(lam, np.ndarray):
        return np.block(
            [
                [np.diag(-2.0 * alpha * beta * lam), np.diag((alpha + beta) * lam)],
                [np.diag((alpha + beta) * lam), np.diag(-2.0 * lam)],
            ]
        )
    P11 = cp.diag(cp.multiply(-2.0 * alpha * beta, lam))
    P12 = cp.diag(cp.multiply(alpha + beta, lam))
    P22 = cp.diag(-2.0 * lam)
    return cp.bmat([[P11, P12], [P12, P22]])


def _build_diag_circle(bounds: SectorSlopeBounds, prefix: str = "") -> dict:
    n = bounds.alpha.size
    lam = cp.Variable(n, nonneg=True, name=prefix + "lambda")
    P = diag_circle_weight(bounds.alpha, bounds.beta, lam)
    return dict(
        n_r=2 * n,
        P=P,
        constraints=[],
        param_vars=[lam],
        aux_vars=[],
        components={prefix + "lambda": lam},
    )


# strict-interior margin on the vertex forms: conic solvers satisfy PSD
# constraints only to their feasibility tolerance, and the independent
# membership re-check (1e-8, scale-relative) is stricter than the solve
# grade, so boundary members would verify only by luck.  The margin is
# absolute and far below the weights' working scale.
FB_VERTEX_MARGIN = 1e-5


def _full_block_constraints(Pi, lo, hi, cap, label):
    """Vertex PSD constraints plus partial concavity for a full-block weight.

    ``Pi`` is split in half; the lower-right block is forced negative
    semidefinite so the quadratic form is concave in the gain matrix, and
    nonnegativity on the box of diagonal gains then follows from the
    vertices alone.
    """
    m = Pi.shape[0] // 2
    cons = [Pi[m:, m:] << 0]
    for vert in _vertex_diagonals(lo, hi, cap, label):
        E = np.vstack([np.eye(m), np.diag(vert)])
        cons.append(E.T @ Pi @ E >> FB_VERTEX_MARGIN * np.eye(m))
    return cons


def _build_full_block_circle(
    bounds: SectorSlopeBounds, cap: int, prefix: str = ""
) -> dict:
    n = bounds.alpha.size
    Pi = cp.Variable((2 * n, 2 * n), symmetric=True, name=prefix + "Pi")
    cons = _full_block_constraints(
        Pi, bounds.alpha, bounds.beta, cap, "full-block circle"
    )
    return dict(
        n_r=2 * n,
        P=Pi,
        constraints=cons,
        param_vars=[Pi],
        aux_vars=[],
        components={prefix + "Pi": Pi},
    )


def _build_circle_yakubovich(
    bounds: SectorSlopeBounds, cap: int, prefix: str = ""
) -> dict:
    n = bounds.alpha.size
    lo = np.concatenate([bounds.alpha, bounds.mu])
    hi = np.concatenate([bounds.beta, bounds.nu])
    Pi = cp.Variable((4 * n, 4 * n), symmetric=True, name=prefix + "Pi")
    cons = _full_block_constraints(Pi, lo, hi, cap, "circle/increment family")
    return dict(
        n_r=4 * n,
        P=Pi,
        constraints=cons,
        param_vars=[Pi],
        aux_vars=[],
        components={prefix + "Pi": Pi},
    )


# ---------------------------------------------------------------------------
# Zames-Falb family


def zf_transform(mu: np.ndarray, nu: np.ndarray, ell: int) -> np.ndarray:
    """Sector transform mapping stacked (v, w) windows to slope coordinates.

    T [v; w] = [diag(mu) v - w; w - diag(nu) v] blockwise over the ell+1
    window positions; composing the raw weight with T turns the [mu, nu]
    slope restriction into a monotonicity constraint.
    """
    n = mu.size
    I_rep = np.eye((ell + 1) * n)
    return np.block(
        [
            [np.kron(np.eye(ell + 1), np.diag(mu)), -I_rep],
            [-np.kron(np.eye(ell + 1), np.diag(nu)), I_rep],
        ]
    )


def _p_tilde_rows(M: dict, ell: int, n: int) -> list:
    """Block rows of the raw FIR weight: first row holds the anticausal taps
    M_0, M_{-1}, ..., M_{-ell}; the first column below it the causal taps."""
    zero = np.zeros((n, n))
    rows = [[M.get(0, zero)] + [M.get(-b, zero) for b in range(1, ell + 1)]]
    for a in range(1, ell + 1):
        rows.append([M.get(a, zero)] + [zero] * ell)
    return rows


def zf_weight(M: dict, ell: int, mu: np.ndarray, nu: np.ndarray) -> object:
    """Assemble the ZF weight P = T' [[0, Pt'], [Pt, 0]] T from taps ``M``.

    Accepts numeric taps (returns an ndarray) or cvxpy expressions.
    """
    n = mu.size
    rows = _p_tilde_rows(M, ell, n)
    numeric = all(isinstance(blk, np.ndarray) for row in rows for blk in row)
    m = (ell + 1) * n
    Z = np.zeros((m, m))
    if numeric:
        Pt = np.block(rows)
        Pi = np.block([[Z, Pt.T], [Pt, Z]])
    else:
        Pt = cp.bmat(rows)
        Pi = cp.bmat([[Z, Pt.T], [Pt, Z]])
    T = zf_transform(mu, nu, ell)
    return T.T @ Pi @ T


def _tap_variable(structure: str, widths, name: str):
    """One FIR tap: (expression, parameter variables) per structure."""
    n = sum(widths)
    if structure == "diag":
        m = cp.Variable(n, name=name)
        return cp.diag(m), [m]
    if structure == "layer":
        blocks = [
            cp.Variable((w, w), name=f"{name}[{i}]") for i, w in enumerate(widths)
        ]
        rows = []
        for i, bi in enumerate(blocks):
            row = []
            for j, w in enumerate(widths):
                row.append(bi if i == j else np.zeros((widths[i], w)))
            rows.append(row)
        return cp.bmat(rows), blocks
    V = cp.Variable((n, n), name=name)
    return V, [V]


def _build_zames_falb(
    bounds: SectorSlopeBounds, widths, spec: MultiplierSpec, prefix: str = ""
) -> dict:
    widths = tuple(int(w) for w in widths)
    n = sum(widths)
    lm, lp = spec.zf_order
    ell = spec.ell
    taps = {}
    params = []
    for j in range(-lm, lp + 1):
        expr, pv = _tap_variable(spec.zf_structure, widths, f"{prefix}M_{j}")
        taps[j] = expr
        params.extend(pv)

    cons = []
    S = sum(taps.values())
    ones = np.ones(n)
    cons.append(S @ ones >= 0)
    cons.append(ones @ S >= 0)

    aux = []
    if not spec.odd:
        # every entry nonpositive except the diagonal of the center tap
        for j, Mj in taps.items():
            if j == 0:
                cons.append(Mj - cp.diag(cp.diag(Mj)) <= 0)
            else:
                cons.append(Mj <= 0)
    else:
        # sign-free taps, center diagonal dominates total absolute mass
        majorants = {}
        for j, Mj in taps.items():
            R = cp.Variable(Mj.shape, name=f"{prefix}|M_{j}|")
            cons.append(R >= Mj)
            cons.append(R >= -Mj)
            majorants[j] = R
            aux.append(R)
        row_tot = sum(cp.sum(R, axis=1) for R in majorants.values())
        col_tot = sum(cp.sum(R, axis=0) for R in majorants.values())
        center = cp.diag(taps[0])
        self_abs = cp.diag(majorants[0])
        cons.append(center >= row_tot - self_abs)
        cons.append(center >= col_tot - self_abs)

    P = zf_weight(taps, ell, bounds.mu, bounds.nu)
    components = {f"{prefix}M_{j}": taps[j] for j in taps}
    return dict(
        n_r=2 * n * (ell + 1),
        P=P,
        constraints=cons,
        param_vars=params,
        aux_vars=aux,
        components=components,
    )


# ---------------------------------------------------------------------------
# assembly


def _circle_part_builder(part: str, bounds: SectorSlopeBounds, cap: int, prefix: str):
    if part == "diag":
        return _build_diag_circle(bounds, prefix)
    if part == "full":
        return _build_full_block_circle(bounds, cap, prefix)
    if part == "cy":
        return _build_circle_yakubovich(bounds, cap, prefix)
    raise MultiplierError(f"unknown circle part '{part}'")


def build_multiplier(
    spec: MultiplierSpec, bounds: SectorSlopeBounds, widths
) -> MultiplierSet:
    """Render the chosen family as a cvxpy constraint set.

    Parameters
    ----------
    spec : MultiplierSpec
    bounds : SectorSlopeBounds
        Per-neuron sector and slope bounds the family is taken over.
    widths : layer widths (needed for the layer-block tap structure).

    Returns
    -------
    MultiplierSet whose P is affine in the parameter variables.
    """
    widths = tuple(int(w) for w in widths)
    n = sum(widths)
    if bounds.alpha.size != n:
        raise MultiplierError(
            f"bounds cover {bounds.alpha.size} neurons, widths sum to {n}"
        )
    if spec.kind == "diag-c":
        parts = _build_diag_circle(bounds)
    elif spec.kind == "fb-c":
        parts = _build_full_block_circle(bounds, spec.vertex_cap)
    elif spec.kind == "cy":
        parts = _build_circle_yakubovich(bounds, spec.vertex_cap)
    elif spec.kind == "zf":
        parts = _build_zames_falb(bounds, widths, spec)
    else:
        zf = _build_zames_falb(bounds, widths, spec, prefix="zf.")
        if spec.circle_part is None:
            parts = zf
            parts["components"] = zf["components"]
        else:
            circ = _circle_part_builder(
                spec.circle_part, bounds, spec.vertex_cap, "circle."
            )
            Z = np.zeros((zf["n_r"], circ["n_r"]))
            P = cp.bmat([[zf["P"], Z], [Z.T, circ["P"]]])
            parts = dict(
                n_r=zf["n_r"] + circ["n_r"],
                P=P,
                constraints=zf["constraints"] + circ["constraints"],
                param_vars=zf["param_vars"] + circ["param_vars"],
                aux_vars=zf["aux_vars"] + circ["aux_vars"],
                components={**zf["components"], **circ["components"]},
            )
    return MultiplierSet(spec=spec, n=n, **parts)


# ---------------------------------------------------------------------------
# numeric membership checks


def band_matrix(M: dict, horizon: int, n: int) -> np.ndarray:
    """Banded convolution matrix over a horizon: block (r, c) is tap M_{c-r}.

    This is the matrix through which the FIR weight acts on whole
    trajectories; its double hyperdominance is what makes the family hard.
    """
    big = np.zeros((horizon * n, horizon * n))
    for r in range(horizon):
        for c in range(horizon):
            tap = M.get(c - r)
            if tap is not None:
                big[r * n : (r + 1) * n, c * n : (c + 1) * n] = tap
    return big


def is_doubly_hyperdominant(M: np.ndarray, tol: float = 1e-12) -> bool:
    """Off-diagonal entries <= tol, row and column sums >= -tol."""
    off = M - np.diag(np.diag(M))
    if off.max(initial=0.0) > tol:
        return False
    if M.sum(axis=1).min() < -tol:
        return False
    return M.sum(axis=0).min() >= -tol


def is_doubly_dominant(M: np.ndarray, tol: float = 1e-12) -> bool:
    """Each diagonal entry outweighs the absolute off-diagonal mass of its
    row and of its column (up to tol)."""
    d = np.diag(M)
    A = np.abs(M)
    row = A.sum(axis=1) - np.abs(d)
    col = A.sum(axis=0) - np.abs(d)
    return bool(np.all(d - row >= -tol) and np.all(d - col >= -tol))


def _check_tap_structure(name, tap, widths, structure, tol, violations):
    n = sum(widths)
    if structure == "diag":
        off = tap - np.diag(np.diag(tap))
        if np.abs(off).max(initial=0.0) > tol:
            violations.append(f"{name} is not diagonal")
    elif structure == "layer":
        mask = np.ones((n, n), dtype=bool)
        start = 0
        for w in widths:
            mask[start : start + w, start : start + w] = False
            start += w
        if np.abs(tap[mask]).max(initial=0.0) > tol:
            violations.append(f"{name} has entries outside its layer blocks")


def _check_zf_valuation(
    spec, comps, bounds, widths, P_stored, tol, violations, prefix=""
):
    n = sum(widths)
    lm, lp = spec.zf_order
    taps = {}
    for j in range(-lm, lp + 1):
        name = f"{prefix}M_{j}"
        if name not in comps:
            violations.append(f"missing component '{name}'")
            return
        tap = np.asarray(comps[name], dtype=float)
        if spec.zf_structure == "diag" and tap.ndim == 1:
            tap = np.diag(tap)
        if tap.shape != (n, n):
            violations.append(f"{name} has shape {tap.shape}, expected {(n, n)}")
            return
        _check_tap_structure(name, tap, widths, spec.zf_structure, tol, violations)
        taps[j] = tap

    S = sum(taps.values())
    tap_scale = 1.0 + max(np.abs(t).max(initial=0.0) for t in taps.values())
    if S.sum(axis=1).min() < -tol * tap_scale:
        violations.append(f"{prefix}taps: row sums of the tap total are negative")
    if S.sum(axis=0).min() < -tol * tap_scale:
        violations.append(f"{prefix}taps: column sums of the tap total are negative")

    if not spec.odd:
        worst = -np.inf
        for j, tap in taps.items():
            entries = tap.copy()
            if j == 0:
                np.fill_diagonal(entries, -np.inf)
            worst = max(worst, entries.max())
        if worst > tol * tap_scale:
            violations.append(
                f"{prefix}taps: positive off-center entry {worst:.3e} in a "
                "sign-constrained tap"
            )
    else:
        d0 = np.diag(taps[0])
        row = sum(np.abs(t).sum(axis=1) for t in taps.values()) - np.abs(d0)
        col = sum(np.abs(t).sum(axis=0) for t in taps.values()) - np.abs(d0)
        slack = min((d0 - row).min(), (d0 - col).min())
        if slack < -tol * tap_scale:
            violations.append(
                f"{prefix}taps: center diagonal fails double dominance by "
                f"{-slack:.3e}"
            )

    P_re = zf_weight(taps, spec.ell, bounds.mu, bounds.nu)
    scale = 1.0 + np.abs(P_stored).max(initial=0.0)
    err = np.abs(P_re - P_stored).max(initial=0.0)
    if err > tol * scale:
        violations.append(
            f"{prefix}weight does not match its taps (max error {err:.3e})"
        )


def _check_full_block_valuation(
    comps, lo, hi, cap, P_stored, tol, violations, prefix=""
):
    name = f"{prefix}Pi"
    if name not in comps:
        violations.append(f"missing component '{name}'")
        return
    Pi = np.asarray(comps[name], dtype=float)
    m = Pi.shape[0] // 2
    if np.abs(Pi - Pi.T).max(initial=0.0) > tol * (1 + np.abs(Pi).max(initial=0.0)):
        violations.append(f"{name} is not symmetric")
    Pi = 0.5 * (Pi + Pi.T)
    scale = 1.0 + np.abs(Pi).max(initial=0.0)
    tail = Pi[m:, m:]
    top_eig = float(np.linalg.eigvalsh(tail).max())
    if top_eig > tol * scale:
        violations.append(
            f"{name}: lower-right block not negative semidefinite "
            f"(max eig {top_eig:.3e})"
        )
    worst = np.inf
    for vert in _vertex_diagonals(lo, hi, cap, name):
        E = np.vstack([np.eye(m), np.diag(vert)])
        worst = min(worst, float(np.linalg.eigvalsh(E.T @ Pi @ E).min()))
    if worst < -tol * scale:
        violations.append(f"{name}: vertex form has min eig {worst:.3e}")
    err = np.abs(Pi - P_stored).max(initial=0.0)
    if err > tol * (1 + np.abs(P_stored).max(initial=0.0)):
        violations.append(f"{prefix}weight does not match {name}")


def _check_diag_circle_valuation(
    comps, bounds, P_stored, tol, violations, prefix=""
):
    name = f"{prefix}lambda"
    if name not in comps:
        violations.append(f"missing component '{name}'")
        return
    lam = np.asarray(comps[name], dtype=float).reshape(-1)
    if lam.min(initial=0.0) < -tol * (1.0 + np.abs(lam).max(initial=0.0)):
        violations.append(f"{name} has negative entries (min {lam.min():.3e})")
    P_re = diag_circle_weight(bounds.alpha, bounds.beta, lam)
    err = np.abs(P_re - P_stored).max(initial=0.0)
    if err > tol * (1 + np.abs(P_stored).max(initial=0.0)):
        violations.append(
            f"{prefix}weight does not match {name} (max error {err:.3e})"
        )


def check_valuation(
    val: MultiplierValuation,
    bounds: SectorSlopeBounds,
    widths,
    tol: float = 1e-8,
) -> list:
    """Re-derive the family's membership conditions on a numeric valuation.

    Returns a list of human-readable violations; empty means the valuation
    is a member of its family (to within ``tol``) and its stored weight
    matches its stored parameters.
    """
    spec = val.spec
    widths = tuple(int(w) for w in widths)
    n = sum(widths)
    violations: list = []
    if val.P.shape != (n_r_for(spec, n),) * 2:
        violations.append(
            f"weight has shape {val.P.shape}, expected {(n_r_for(spec, n),) * 2}"
        )
        return violations
    if spec.kind == "diag-c":
        _check_diag_circle_valuation(val.components, bounds, val.P, tol, violations)
    elif spec.kind == "fb-c":
        _check_full_block_valuation(
            val.components, bounds.alpha, bounds.beta, spec.vertex_cap,
            val.P, tol, violations,
        )
    elif spec.kind == "cy":
        lo = np.concatenate([bounds.alpha, bounds.mu])
        hi = np.concatenate([bounds.beta, bounds.nu])
        _check_full_block_valuation(
            val.components, lo, hi, spec.vertex_cap, val.P, tol, violations
        )
    elif spec.kind == "zf":
        _check_zf_valuation(
            spec, val.components, bounds, widths, val.P, tol, violations
        )
    else:
        m = 2 * n * (spec.ell + 1)
        P_zf = val.P[:m, :m]
        _check_zf_valuation(
            spec, val.components, bounds, widths, P_zf, tol, violations, prefix="zf."
        )
        if spec.circle_part is not None:
            P_c = val.P[m:, m:]
            if spec.circle_part == "diag":
                _check_diag_circle_valuation(
                    val.components, bounds, P_c, tol, violations, prefix="circle."
                )
            elif spec.circle_part == "full":
                _check_full_block_valuation(
                    val.components, bounds.alpha, bounds.beta, spec.vertex_cap,
                    P_c, tol, violations, prefix="circle.",
                )
            else:
                lo = np.concatenate([bounds.alpha, bounds.mu])
                hi = np.concatenate([bounds.beta, bounds.nu])
                _check_full_block_valuation(
                    val.components, lo, hi, spec.vertex_cap,
                    P_c, tol, violations, prefix="circle.",
                )
        off = val.P[:m, m:]
        if np.abs(off).max(initial=0.0) > tol * (1 + np.abs(val.P).max()):
            violations.append("combined weight has coupling between its blocks")
    return violations


# ---------------------------------------------------------------------------
# sampling


def _sample_zf_taps(spec, widths, rng) -> dict:
    """Draw random feasible FIR taps (strictly inside the constraint set)."""
    widths = tuple(int(w) for w in widths)
    n = sum(widths)
    lm, lp = spec.zf_order

    def block_mask():
        if spec.zf_structure == "diag":
            return np.eye(n, dtype=bool)
        if spec.zf_structure == "layer":
            mask = np.zeros((n, n), dtype=bool)
            start = 0
            for w in widths:
                mask[start : start + w, start : start + w] = True
                start += w
            return mask
        return np.ones((n, n), dtype=bool)

    mask = block_mask()
    taps = {}
    for j in range(-lm, lp + 1):
        M = np.zeros((n, n))
        if spec.odd:
            M[mask] = rng.uniform(-1.0, 1.0, mask.sum())
        else:
            M[mask] = -rng.uniform(0.0, 1.0, mask.sum())
        taps[j] = M
    # center the diagonal of tap 0 so the dominance margins are positive
    center = taps[0]
    np.fill_diagonal(center, 0.0)
    if spec.odd:
        row = sum(np.abs(t).sum(axis=1) for t in taps.values())
        col = sum(np.abs(t).sum(axis=0) for t in taps.values())
        np.fill_diagonal(center, np.maximum(row, col) + rng.uniform(0.0, 1.0, n))
    else:
        row = -sum(t.sum(axis=1) for t in taps.values())
        col = -sum(t.sum(axis=0) for t in taps.values())
        np.fill_diagonal(center, np.maximum(row, col) + rng.uniform(0.0, 1.0, n))
    return taps


def _sample_full_block(build_parts, rng, solver=None, attempts: int = 8):
    """Sample a nonzero member of a vertex-enumerated family by maximizing a
    random linear functional over the cone intersected with the unit ball."""
    from .sdp import default_solver_options

    for _ in range(attempts):
        parts = build_parts()
        Pi = parts["param_vars"][0]
        G = rng.standard_normal(Pi.shape)
        G = 0.5 * (G + G.T)
        prob = cp.Problem(
            cp.Maximize(cp.trace(G @ Pi)),
            parts["constraints"] + [cp.norm(Pi, "fro") <= 1.0],
        )
        name, opts = default_solver_options(solver)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                prob.solve(solver=name, **opts)
        except cp.error.SolverError:
            continue
        if prob.status not in ("optimal", "optimal_inaccurate"):
            continue
        val = np.asarray(Pi.value, dtype=float)
        val = 0.5 * (val + val.T)
        if np.abs(val).max() > 1e-6:
            return val
    raise MultiplierError("could not sample a nonzero full-block member")


def sample_valuation(
    spec: MultiplierSpec,
    bounds: SectorSlopeBounds,
    widths,
    rng=None,
    solver: Optional[str] = None,
) -> MultiplierValuation:
    """Draw a random member of the family, for empirical testing.

    Diagonal circle and ZF members are constructed directly; full-block
    members come from small SDPs with random objectives.  ``rng`` is a
    seed or a numpy Generator.
    """
    rng = np.random.default_rng(rng)
    widths = tuple(int(w) for w in widths)
    n = sum(widths)
    if spec.kind == "diag-c":
        lam = rng.uniform(0.05, 1.0, n)
        P = diag_circle_weight(bounds.alpha, bounds.beta, lam)
        return MultiplierValuation(spec, n, P, {"lambda": lam})
    if spec.kind == "fb-c":
        Pi = _sample_full_block(
            lambda: _build_full_block_circle(bounds, spec.vertex_cap), rng, solver
        )
        return MultiplierValuation(spec, n, Pi, {"Pi": Pi})
    if spec.kind == "cy":
        Pi = _sample_full_block(
            lambda: _build_circle_yakubovich(bounds, spec.vertex_cap), rng, solver
        )
        return MultiplierValuation(spec, n, Pi, {"Pi": Pi})
    if spec.kind == "zf":
        taps = _sample_zf_taps(spec, widths, rng)
        P = zf_weight(taps, spec.ell, bounds.mu, bounds.nu)
        comps = {f"M_{j}": taps[j] for j in taps}
        return MultiplierValuation(spec, n, P, comps)
    # combined
    zf_val = sample_valuation(
        replace(spec, kind="zf"), bounds, widths, rng, solver
    )
    comps = {f"zf.{k}": v for k, v in zf_val.components.items()}
    blocks = [zf_val.P]
    if spec.circle_part is not None:
        sub_kind = {"diag": "diag-c", "full": "fb-c", "cy": "cy"}[spec.circle_part]
        c_val = sample_valuation(
            replace(spec, kind=sub_kind), bounds, widths, rng, solver
        )
        comps.update({f"circle.{k}": v for k, v in c_val.components.items()})
        blocks.append(c_val.P)
    m = sum(b.shape[0] for b in blocks)
    P = np.zeros((m, m))
    at = 0
    for b in blocks:
        P[at : at + b.shape[0], at : at + b.shape[0]] = b
        at += b.shape[0]
    return MultiplierValuation(spec, n, P, comps)
