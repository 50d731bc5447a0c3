"""Certification LMIs: assembly, solving, independent verification, export.

Two matrix inequalities make up the certificate.  The stability inequality
couples the extended system with a multiplier weight P through a storage
matrix X; the peak inequalities bound each first-layer channel over the
sublevel set of the storage function, which ties the certified region to
the boxes the sector/slope bounds were computed on.
"""

from __future__ import annotations

import os
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from .filters import ExtendedSystem
from .multipliers import MultiplierSet

DEFAULT_EPS_LMI = 1e-9
DEFAULT_EPS_PD = 1e-8
RESIDUAL_RTOL = 1e-7

_SOLVER_OPTIONS = {
    "CLARABEL": dict(tol_gap_abs=1e-9, tol_gap_rel=1e-9, tol_feas=1e-9),
    "SCS": dict(eps=1e-9, max_iters=100_000),
    "CVXOPT": dict(),
}

# retry settings when a solve lands just outside the verification budget
_TIGHT_SOLVER_OPTIONS = {
    "CLARABEL": dict(tol_gap_abs=1e-11, tol_gap_rel=1e-11, tol_feas=1e-11,
                     max_iter=500),
    "SCS": dict(eps=1e-11, max_iters=400_000),
}


class SolverError(RuntimeError):
    """Backend failure or unusable solver selection."""


def default_solver_options(solver: Optional[str] = None):
    """Resolve the backend name (argument, NNCERT_SOLVER env var, default)
    and its tightened option set."""
    name = (solver or os.environ.get("NNCERT_SOLVER") or "CLARABEL").upper()
    if name not in cp.installed_solvers():
        raise SolverError(
            f"solver '{name}' is not installed; available: {cp.installed_solvers()}"
        )
    return name, dict(_SOLVER_OPTIONS.get(name, {}))


def tight_solver_options(solver: Optional[str] = None) -> dict:
    """Stricter per-solve overrides for a retry after a loose first solve."""
    name, _ = default_solver_options(solver)
    return dict(_TIGHT_SOLVER_OPTIONS.get(name, {}))


def _sym(F):
    return 0.5 * (F + F.T)


def stability_form(ext: ExtendedSystem, X, P):
    """Quadratic form of the stability inequality over (eta, w).

    Returns S' blkdiag(-X, X) S + [C D]' P [C D] with S = [I 0; A B]; the
    certificate requires it to be <= -eps_lmi * I.  Works on numpy arrays
    and cvxpy expressions alike.
    """
    n_eta, n = ext.n_eta, ext.n
    S = np.block(
        [
            [np.eye(n_eta), np.zeros((n_eta, n))],
            [ext.A_tot, ext.B_tot],
        ]
    )
    CD = np.hstack([ext.C_tot, ext.D_tot])
    numeric = isinstance(X, np.ndarray) and isinstance(P, np.ndarray)
    Z = np.zeros((n_eta, n_eta))
    if numeric:
        mid = np.block([[-X, Z], [Z, X]])
    else:
        mid = cp.bmat([[-X, Z], [Z, X]])
    return _sym(S.T @ mid @ S + CD.T @ P @ CD)


def peak_matrix(Q: np.ndarray, d1: np.ndarray, X, j: int, n_xi: int):
    """Matrix whose positive semidefiniteness bounds channel j over the
    storage sublevel set: [[d_j^2, Q_j, 0], [*, X]]."""
    head = np.array([[float(d1[j]) ** 2]])
    qrow = np.concatenate([Q[j], np.zeros(n_xi)])[None, :]
    if isinstance(X, np.ndarray):
        return _sym(np.block([[head, qrow], [qrow.T, X]]))
    return _sym(cp.bmat([[head, qrow], [qrow.T, X]]))


def assemble_stability_lmi(
    ext: ExtendedSystem, P, X, eps_lmi: float = DEFAULT_EPS_LMI
) -> list:
    """Stability inequality as a cvxpy constraint fragment."""
    F = stability_form(ext, X, P)
    return [F << -eps_lmi * np.eye(ext.n_eta + ext.n)]


def assemble_peak_lmi(Q: np.ndarray, d1: np.ndarray, X, n_xi: int) -> list:
    """Per-channel peak inequalities as cvxpy constraint fragments."""
    return [
        peak_matrix(Q, d1, X, j, n_xi) >> 0 for j in range(Q.shape[0])
    ]


@dataclass
class SdpProblem:
    """Assembled certification SDP: storage variable, multiplier set, data."""

    X: cp.Variable
    multiplier: MultiplierSet
    ext: ExtendedSystem
    Q: np.ndarray
    d1: np.ndarray
    constraints: list
    eps_lmi: float
    eps_pd: float

    @property
    def X_x(self):
        return self.X[: self.ext.n_x, : self.ext.n_x]

    def objective(self, mode: str = "minimize_trace"):
        if mode == "minimize_trace":
            return cp.Minimize(cp.trace(self.X_x))
        if mode == "feasibility":
            return cp.Minimize(cp.Constant(0.0))
        raise ValueError(f"unknown mode '{mode}'")


def build_certification_problem(
    ext: ExtendedSystem,
    multiplier: MultiplierSet,
    Q: np.ndarray,
    d1: np.ndarray,
    eps_lmi: float = DEFAULT_EPS_LMI,
    eps_pd: float = DEFAULT_EPS_PD,
) -> SdpProblem:
    """Stack multiplier membership, stability, peak, and X > 0 constraints."""
    if multiplier.n_r != ext.n_r:
        raise SolverError(
            f"multiplier expects {multiplier.n_r} filter rows, got {ext.n_r}"
        )
    n_eta = ext.n_eta
    X = cp.Variable((n_eta, n_eta), symmetric=True, name="X")
    constraints = list(multiplier.constraints)
    constraints += assemble_stability_lmi(ext, multiplier.P, X, eps_lmi)
    constraints += assemble_peak_lmi(Q, d1, X, ext.n_xi)
    constraints.append(X >> eps_pd * np.eye(n_eta))
    return SdpProblem(
        X=X,
        multiplier=multiplier,
        ext=ext,
        Q=Q,
        d1=np.asarray(d1, dtype=float).reshape(-1),
        constraints=constraints,
        eps_lmi=eps_lmi,
        eps_pd=eps_pd,
    )


@dataclass
class SolverReport:
    """Outcome of one SDP solve, with an independent residual measurement."""

    status: str
    objective: Optional[float]
    max_violation: float
    solver: str
    raw_status: str
    solve_time: float


def _max_violation(constraints) -> float:
    worst = 0.0
    for c in constraints:
        try:
            v = c.violation()
        except Exception:
            return float("inf")
        worst = max(worst, float(np.max(np.atleast_1d(v), initial=0.0)))
    return worst


def _variable_scale(problem: cp.Problem) -> float:
    scale = 0.0
    for v in problem.variables():
        if v.value is not None:
            scale = max(scale, float(np.abs(v.value).max(initial=0.0)))
    return scale


def solve_problem(
    problem: SdpProblem,
    mode: str = "minimize_trace",
    solver: Optional[str] = None,
    verbose: bool = False,
    **solver_opts,
) -> SolverReport:
    """Solve the assembled SDP and grade the outcome.

    A solve only counts as ``optimal`` when the solver reports success and
    the primal constraint violation, re-measured from the returned values,
    stays below ``1e-7 * (1 + max |variable|)``.  Infeasibility reports map
    to ``infeasible``; anything else is a numerical failure.
    """
    name, opts = default_solver_options(solver)
    opts.update(solver_opts)
    prob = cp.Problem(problem.objective(mode), problem.constraints)
    start = time.perf_counter()
    try:
        with warnings.catch_warnings():
            # inaccurate solves are regraded from measured residuals below
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(solver=name, verbose=verbose, **opts)
    except cp.error.SolverError as e:
        return SolverReport(
            status="solver_error",
            objective=None,
            max_violation=float("inf"),
            solver=name,
            raw_status=f"exception: {e}",
            solve_time=time.perf_counter() - start,
        )
    elapsed = time.perf_counter() - start
    raw = prob.status or "none"
    if raw in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return SolverReport(
            status="infeasible",
            objective=None,
            max_violation=0.0,
            solver=name,
            raw_status=raw,
            solve_time=elapsed,
        )
    if raw in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        violation = _max_violation(problem.constraints)
        scale = 1.0 + _variable_scale(prob)
        status = "optimal" if violation <= RESIDUAL_RTOL * scale else "numerical_failure"
        return SolverReport(
            status=status,
            objective=None if prob.value is None else float(prob.value),
            max_violation=violation,
            solver=name,
            raw_status=raw,
            solve_time=elapsed,
        )
    return SolverReport(
        status="numerical_failure",
        objective=None,
        max_violation=float("inf"),
        solver=name,
        raw_status=raw,
        solve_time=elapsed,
    )


@dataclass
class VerificationReport:
    """Independent numeric re-check of a certificate's inequalities."""

    valid: bool
    violations: list
    residuals: dict

    def summary(self) -> str:
        if self.valid:
            parts = ", ".join(
                f"{k} {v:.2e}" for k, v in sorted(self.residuals.items())
            )
            return "certificate verified" + (f" ({parts})" if parts else "")
        return "certificate INVALID: " + "; ".join(self.violations)


def verify_certificate_data(
    ext: ExtendedSystem,
    X: np.ndarray,
    P: np.ndarray,
    Q: np.ndarray,
    d1: np.ndarray,
    eps_lmi: float = DEFAULT_EPS_LMI,
    eps_pd: float = DEFAULT_EPS_PD,
    tol: float = 1e-8,
) -> VerificationReport:
    """Re-check the certificate inequalities by eigenvalue computations.

    Everything is evaluated from scratch in numpy; no solver state is
    trusted.  ``tol`` is the slack granted to each inequality, relative to
    the scale of the matrices entering it: an inequality with data of norm
    s may be violated by at most ``tol * (1 + s)``.
    """
    violations = []
    residuals = {}
    X = np.asarray(X, dtype=float)
    P = np.asarray(P, dtype=float)
    n_eta = ext.n_eta
    if X.shape != (n_eta, n_eta):
        return VerificationReport(
            valid=False,
            violations=[f"X has shape {X.shape}, expected {(n_eta, n_eta)}"],
            residuals={},
        )
    asym = float(np.abs(X - X.T).max(initial=0.0))
    residuals["X_asymmetry"] = asym
    if asym > tol * (1.0 + float(np.abs(X).max(initial=0.0))):
        violations.append(f"X is not symmetric (max asymmetry {asym:.3e})")
    Xs = _sym(X)
    scale_X = 1.0 + float(np.abs(Xs).max(initial=0.0))
    min_eig_X = float(np.linalg.eigvalsh(Xs).min())
    residuals["min_eig_X"] = min_eig_X
    if min_eig_X < eps_pd - tol * scale_X:
        violations.append(
            f"X fails positive definiteness (min eig {min_eig_X:.3e}, "
            f"needs >= {eps_pd:.1e})"
        )
    F = stability_form(ext, Xs, _sym(P))
    scale_F = 1.0 + float(np.abs(F).max(initial=0.0))
    max_eig_F = float(np.linalg.eigvalsh(F).max())
    residuals["stability_max_eig"] = max_eig_F
    if max_eig_F > -eps_lmi + tol * scale_F:
        violations.append(
            f"stability inequality violated (max eig {max_eig_F:.3e}, "
            f"needs <= {-eps_lmi:.1e} with slack {tol * scale_F:.1e})"
        )
    worst_peak = np.inf
    for j in range(Q.shape[0]):
        Mj = peak_matrix(Q, d1, Xs, j, ext.n_xi)
        scale_M = 1.0 + float(np.abs(Mj).max(initial=0.0))
        ev = float(np.linalg.eigvalsh(Mj).min())
        if ev < worst_peak:
            worst_peak = ev
        if ev < -tol * scale_M:
            violations.append(
                f"peak inequality violated on channel {j} (min eig {ev:.3e})"
            )
    residuals["peak_min_eig"] = float(worst_peak)
    return VerificationReport(
        valid=not violations, violations=violations, residuals=residuals
    )


# ---------------------------------------------------------------------------
# SDPA export


def _scs_cone_dims(dims):
    zero = getattr(dims, "zero", 0)
    nonneg = getattr(dims, "nonneg", 0)
    soc = list(getattr(dims, "soc", []) or [])
    psd = list(getattr(dims, "psd", []) or [])
    exp = getattr(dims, "exp", 0)
    return zero, nonneg, soc, psd, exp


def export_sdpa(problem: SdpProblem, path, mode: str = "minimize_trace") -> str:
    """Write the assembled SDP in sparse SDPA format (.dat-s).

    The conic form ``min c'y  s.t.  b - A y in K`` is rewritten as the SDPA
    pair ``min c'y  s.t.  sum_i y_i F_i - F_0 >= 0`` with ``F_i`` holding
    the negated columns of A and ``F_0`` the negated offset.  Equality rows
    become paired diagonal entries of opposite sign; semidefinite cones
    are de-vectorized from the scaled lower-triangular storage.

    Returns the path written.
    """
    prob = cp.Problem(problem.objective(mode), problem.constraints)
    data, _, _ = prob.get_problem_data(cp.SCS)
    A = sp.csc_matrix(data["A"])
    b = np.asarray(data["b"], dtype=float).reshape(-1)
    c = np.asarray(data["c"], dtype=float).reshape(-1)
    zero, nonneg, soc, psd, exp = _scs_cone_dims(data["dims"])
    if soc or exp:
        raise SolverError(
            "export supports only linear and semidefinite cones "
            f"(got soc={soc}, exp={exp})"
        )
    m = A.shape[1]

    # row -> (block index, i, j, unscale) maps, 1-based for SDPA
    blocks = []
    row_map = {}
    row = 0
    lin_size = 2 * zero + nonneg
    lin_block = None
    if lin_size > 0:
        lin_block = len(blocks) + 1
        blocks.append(-lin_size)
    slot = 1
    for r in range(zero):
        row_map[row] = [
            (lin_block, slot, slot, 1.0),
            (lin_block, slot + 1, slot + 1, -1.0),
        ]
        slot += 2
        row += 1
    for r in range(nonneg):
        row_map[row] = [(lin_block, slot, slot, 1.0)]
        slot += 1
        row += 1
    sqrt2 = float(np.sqrt(2.0))
    for s in psd:
        blk = len(blocks) + 1
        blocks.append(int(s))
        for j in range(s):
            for i in range(j, s):
                unscale = 1.0 if i == j else 1.0 / sqrt2
                # store as upper-triangle (j+1, i+1)
                row_map[row] = [(blk, j + 1, i + 1, unscale)]
                row += 1
    if row != A.shape[0]:
        raise SolverError(
            f"cone rows ({row}) do not cover the constraint matrix ({A.shape[0]})"
        )

    lines = [
        f'"exported certification SDP: {m} variables, {len(blocks)} blocks"',
        f"{m} = mDIM",
        f"{len(blocks)} = nBLOCK",
        " ".join(str(s) for s in blocks) + " = bLOCKsTRUCT",
        " ".join(f"{x:.17g}" for x in c),
    ]

    entries = []

    def emit(matno, rowno, coeff):
        for blk, i, j, unscale in row_map[rowno]:
            val = coeff * unscale
            if val != 0.0:
                entries.append(f"{matno} {blk} {i} {j} {val:.17g}")

    # F_0 = -mat(b)
    for rowno in np.nonzero(b)[0]:
        emit(0, int(rowno), -float(b[rowno]))
    # F_i = -mat(A[:, i])
    Ac = A.tocsc()
    for i in range(m):
        start, end = Ac.indptr[i], Ac.indptr[i + 1]
        for ptr in range(start, end):
            emit(i + 1, int(Ac.indices[ptr]), -float(Ac.data[ptr]))

    path = os.fspath(path)
    with open(path, "w") as fh:
        fh.write("\n".join(lines + entries) + "\n")
    return path
