"""End-to-end certification: pipeline, searches, certificates, verification.

``certify_at`` runs the full chain for one box half-width delta: steady
state, loop shift, interval propagation, sector/slope bounds, multiplier
family, filter, SDP.  On success the inner approximation of the region of
attraction is the ellipsoid ``(x - x*)' X_x (x - x*) <= 1``.

``find_delta_max`` locates the largest certifiable delta by geometric
growth plus bisection; ``minimize_trace_over_delta`` golden-sections the
storage trace over (0, delta_max] to squeeze the tightest ellipsoid.
"""

from __future__ import annotations

import dataclasses
import datetime
import hashlib
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .bounds import local_bounds, propagate_boxes
from .filters import extend_plant, realize_filter
from .model import (
    NeuralNetwork,
    PlantModel,
    SteadyState,
    SteadyStateError,
    find_steady_state,
    shift_loop,
)
from .multipliers import (
    MultiplierError,
    MultiplierSpec,
    MultiplierValuation,
    VertexCapError,
    build_multiplier,
    check_valuation,
    multiplier_var_count,
    validate_spec,
)
from .sdp import (
    DEFAULT_EPS_LMI,
    DEFAULT_EPS_PD,
    SolverError,
    VerificationReport,
    build_certification_problem,
    solve_problem,
    tight_solver_options,
    verify_certificate_data,
)

_PKG_VERSION = "0.1.0"


class CertificationError(RuntimeError):
    """Pipeline failure, labeled with the stage that raised it."""


class InfeasibleError(CertificationError):
    """The SDP is infeasible at the requested delta."""


class NotCertifiableError(CertificationError):
    """No delta in the probed range admits a certificate."""


def model_fingerprint(plant: PlantModel, nn: NeuralNetwork) -> str:
    """Stable hash of the model's dimensions and (rounded) weights."""
    h = hashlib.sha256()
    h.update(
        repr(
            (
                plant.n_x,
                plant.n_u,
                plant.n_y,
                nn.widths,
                tuple(layer.activation for layer in nn.layers),
            )
        ).encode()
    )
    for m in (plant.A, plant.B, plant.C):
        h.update(np.round(m, 12).tobytes())
    for layer in nn.layers:
        h.update(np.round(layer.W, 12).tobytes())
        h.update(np.round(layer.b, 12).tobytes())
    h.update(np.round(nn.W_out, 12).tobytes())
    h.update(np.round(nn.b_out, 12).tobytes())
    return h.hexdigest()[:16]


@dataclass
class Certificate:
    """Solved certificate: storage matrix, multiplier valuation, metadata.

    The certified region of attraction is the ellipsoid
    ``(x - x_star)' X_x (x - x_star) <= 1`` with ``X_x`` the plant block
    of ``X``.
    """

    delta: float
    d1: np.ndarray
    X: np.ndarray
    x_star: np.ndarray
    multiplier: MultiplierValuation
    provenance: dict

    @property
    def n_x(self) -> int:
        return self.x_star.shape[0]

    @property
    def X_x(self) -> np.ndarray:
        return self.X[: self.n_x, : self.n_x]

    @property
    def trace_Xx(self) -> float:
        return float(np.trace(self.X_x))

    def to_json(self, path=None) -> str:
        spec = self.multiplier.spec
        payload = {
            "delta": self.delta,
            "d1": self.d1.tolist(),
            "trace_Xx": self.trace_Xx,
            "X": self.X.tolist(),
            "x_star": self.x_star.tolist(),
            "multiplier": {
                "kind": spec.kind,
                "zf_order": list(spec.zf_order),
                "zf_structure": spec.zf_structure,
                "odd": spec.odd,
                "circle_part": spec.circle_part,
                "vertex_cap": spec.vertex_cap,
                "n": self.multiplier.n,
                "n_r": self.multiplier.P.shape[0],
                "var_count": self.provenance.get("var_count"),
            },
            "P": {
                "P": self.multiplier.P.tolist(),
                **{
                    name: np.asarray(val).tolist()
                    for name, val in self.multiplier.components.items()
                },
            },
            "provenance": self.provenance,
        }
        text = json.dumps(payload, indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, source) -> "Certificate":
        if isinstance(source, (str, Path)) and "\n" not in str(source):
            text = Path(source).read_text()
        else:
            text = str(source)
        raw = json.loads(text)
        m = raw["multiplier"]
        spec = MultiplierSpec(
            kind=m["kind"],
            zf_order=tuple(m["zf_order"]),
            zf_structure=m["zf_structure"],
            odd=m["odd"],
            circle_part=m["circle_part"],
            vertex_cap=m["vertex_cap"],
        )
        comps = {
            name: np.asarray(val, dtype=float)
            for name, val in raw["P"].items()
            if name != "P"
        }
        val = MultiplierValuation(
            spec=spec,
            n=int(m["n"]),
            P=np.asarray(raw["P"]["P"], dtype=float),
            components=comps,
        )
        return cls(
            delta=float(raw["delta"]),
            d1=np.asarray(raw["d1"], dtype=float),
            X=np.asarray(raw["X"], dtype=float),
            x_star=np.asarray(raw["x_star"], dtype=float),
            multiplier=val,
            provenance=dict(raw.get("provenance", {})),
        )


@dataclass
class _Pipeline:
    steady: SteadyState
    loop: object
    boxes: object
    bounds: object
    mult: object
    psi: object
    ext: object
    problem: object


def _build_pipeline(
    plant: PlantModel,
    nn: NeuralNetwork,
    spec: MultiplierSpec,
    delta: float,
    eps_lmi: float,
    eps_pd: float,
    steady: Optional[SteadyState] = None,
) -> _Pipeline:
    if not (math.isfinite(delta) and delta > 0.0):
        raise CertificationError(f"stage 'input': delta must be positive, got {delta}")
    if steady is None:
        try:
            steady = find_steady_state(plant, nn)
        except SteadyStateError as e:
            raise CertificationError(f"stage 'steady_state': {e}") from e
    try:
        loop = shift_loop(plant, nn, steady)
    except Exception as e:
        raise CertificationError(f"stage 'shift': {e}") from e
    try:
        validate_spec(spec, nn, steady)
    except VertexCapError:
        raise  # a user-set size limit, not a pipeline failure
    except MultiplierError as e:
        raise CertificationError(f"stage 'multiplier_spec': {e}") from e
    d1 = delta * np.ones(nn.widths[0])
    try:
        boxes = propagate_boxes(loop, d1)
        bnds = local_bounds(loop, boxes)
    except Exception as e:
        raise CertificationError(f"stage 'bounds': {e}") from e
    try:
        mult = build_multiplier(spec, bnds, nn.widths)
    except VertexCapError:
        raise
    except MultiplierError as e:
        raise CertificationError(f"stage 'multiplier': {e}") from e
    try:
        psi = realize_filter(spec, loop.n)
        ext = extend_plant(loop, psi)
    except Exception as e:
        raise CertificationError(f"stage 'filter': {e}") from e
    try:
        problem = build_certification_problem(
            ext, mult, loop.Q, d1, eps_lmi=eps_lmi, eps_pd=eps_pd
        )
    except Exception as e:
        raise CertificationError(f"stage 'assemble': {e}") from e
    return _Pipeline(
        steady=steady, loop=loop, boxes=boxes, bounds=bnds,
        mult=mult, psi=psi, ext=ext, problem=problem,
    )


def certify_at(
    plant: PlantModel,
    nn: NeuralNetwork,
    spec: MultiplierSpec,
    delta: float,
    *,
    mode: str = "minimize_trace",
    solver: Optional[str] = None,
    eps_lmi: float = DEFAULT_EPS_LMI,
    eps_pd: float = DEFAULT_EPS_PD,
    verify: bool = True,
    verify_tol: float = 1e-8,
    steady: Optional[SteadyState] = None,
) -> Certificate:
    """Certify the loop at one box half-width delta.

    Raises InfeasibleError when the SDP has no solution at this delta and
    CertificationError for any other pipeline failure.  With ``verify`` the
    solved inequalities and the multiplier membership are re-checked
    numerically before the certificate is returned; if the joint solve's
    accuracy falls short, the multiplier is frozen at its solved value and
    the storage matrix is re-solved alone, which is small and tightly
    conditioned.
    """
    parts = _build_pipeline(plant, nn, spec, delta, eps_lmi, eps_pd, steady)
    report = solve_problem(parts.problem, mode=mode, solver=solver)
    if report.status == "infeasible":
        raise InfeasibleError(
            f"stage 'solve': SDP infeasible at delta = {delta:.6g}"
        )
    if report.status != "optimal":
        raise CertificationError(
            f"stage 'solve': {report.status} "
            f"(raw status '{report.raw_status}', "
            f"max violation {report.max_violation:.3e})"
        )
    X = np.asarray(parts.problem.X.value, dtype=float)
    X = 0.5 * (X + X.T)
    valuation = MultiplierValuation.from_set(parts.mult)
    widths = nn.widths
    provenance = {
        "package": f"nncert {_PKG_VERSION}",
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "solver": report.solver,
        "raw_status": report.raw_status,
        "mode": mode,
        "objective": report.objective,
        "max_violation": report.max_violation,
        "solve_time": report.solve_time,
        "eps_lmi": eps_lmi,
        "eps_pd": eps_pd,
        "model_fingerprint": model_fingerprint(plant, nn),
        "widths": list(widths),
        "activations": [layer.activation for layer in nn.layers],
        "var_count": parts.mult.var_count,
    }
    cert = Certificate(
        delta=float(delta),
        d1=parts.problem.d1.copy(),
        X=X,
        x_star=parts.steady.x_star.copy(),
        multiplier=valuation,
        provenance=provenance,
    )
    if verify:
        rep = verify_certificate(plant, nn, cert, tol=verify_tol)
        if not rep.valid:
            polished = _polish_storage(parts, valuation, mode, solver)
            if polished is not None:
                cert.X = polished
                provenance["polished"] = True
                rep = verify_certificate(plant, nn, cert, tol=verify_tol)
        if not rep.valid:
            # polishing only repairs X; a loose multiplier needs the whole
            # problem re-solved at tighter solver tolerances
            retry = solve_problem(parts.problem, mode=mode, solver=solver,
                                  **tight_solver_options(solver))
            if retry.status == "optimal":
                X = np.asarray(parts.problem.X.value, dtype=float)
                cert.X = 0.5 * (X + X.T)
                cert.multiplier = MultiplierValuation.from_set(parts.mult)
                provenance.update(
                    raw_status=retry.raw_status,
                    objective=retry.objective,
                    max_violation=retry.max_violation,
                    solve_time=provenance["solve_time"] + retry.solve_time,
                    retightened=True,
                )
                provenance.pop("polished", None)
                rep = verify_certificate(plant, nn, cert, tol=verify_tol)
                if not rep.valid:
                    polished = _polish_storage(
                        parts, cert.multiplier, mode, solver
                    )
                    if polished is not None:
                        cert.X = polished
                        provenance["polished"] = True
                        rep = verify_certificate(plant, nn, cert,
                                                 tol=verify_tol)
        if not rep.valid:
            raise CertificationError(
                "stage 'verify': solved certificate failed independent "
                "re-checking: " + "; ".join(rep.violations)
            )
        provenance["verified"] = True
        provenance["verify_residuals"] = {
            k: float(v) for k, v in rep.residuals.items()
        }
    return cert


def _polish_storage(parts: _Pipeline, valuation: MultiplierValuation,
                    mode: str, solver: Optional[str]):
    """Re-solve for the storage matrix with the multiplier held constant.

    The joint solve can terminate with residuals just above the
    verification budget; fixing the multiplier at its (membership-checked)
    value leaves a small SDP in X that solvers satisfy tightly.  Returns
    the new X, or None when the frozen-multiplier problem cannot be solved.
    """
    frozen = dataclasses.replace(
        parts.mult, P=valuation.P, constraints=[], param_vars=(), aux_vars=()
    )
    try:
        prob = build_certification_problem(
            parts.ext, frozen, parts.loop.Q, parts.problem.d1,
            eps_lmi=parts.problem.eps_lmi, eps_pd=parts.problem.eps_pd,
        )
        rep = solve_problem(prob, mode=mode, solver=solver)
    except Exception:
        return None
    if rep.status != "optimal":
        return None
    X = np.asarray(prob.X.value, dtype=float)
    return 0.5 * (X + X.T)


def verify_certificate(
    plant: PlantModel,
    nn: NeuralNetwork,
    cert: Certificate,
    tol: float = 1e-8,
) -> VerificationReport:
    """Re-derive everything a certificate claims, trusting only the model.

    Rebuilds the steady state, bounds, filter, and extended system from the
    model, re-checks both LMIs by eigenvalue computations, re-checks the
    multiplier's membership in its family, and recomputes the variable
    count.  Any discrepancy is reported as a named violation.
    """
    violations = []
    residuals = {}
    fp = cert.provenance.get("model_fingerprint")
    if fp is not None and fp != model_fingerprint(plant, nn):
        violations.append("certificate/model mismatch (model fingerprint differs)")
    try:
        steady = find_steady_state(plant, nn)
    except SteadyStateError as e:
        return VerificationReport(
            valid=False,
            violations=violations + [f"steady state irreproducible: {e}"],
            residuals=residuals,
        )
    drift = float(
        np.linalg.norm(steady.x_star - cert.x_star, ord=np.inf)
    )
    residuals["x_star_drift"] = drift
    if drift > 1e-7 * (1.0 + np.linalg.norm(steady.x_star, ord=np.inf)):
        violations.append(
            f"stored x_star differs from the recomputed one by {drift:.3e}"
        )
    spec = cert.multiplier.spec
    widths = nn.widths
    stored_widths = cert.provenance.get("widths")
    if stored_widths is not None and tuple(stored_widths) != widths:
        violations.append(
            f"certificate/model mismatch (widths {stored_widths} vs {list(widths)})"
        )
        return VerificationReport(False, violations, residuals)
    n1 = widths[0]
    d1 = np.asarray(cert.d1, dtype=float).reshape(-1)
    if d1.shape[0] != n1 or np.any(d1 <= 0):
        violations.append("d1 is not a positive vector of first-layer width")
        return VerificationReport(False, violations, residuals)
    ray_err = float(np.abs(d1 - cert.delta * np.ones(n1)).max())
    if ray_err > 1e-9 * (1.0 + cert.delta):
        violations.append(
            f"d1 is not delta times the all-ones vector (max error {ray_err:.3e})"
        )
    loop = shift_loop(plant, nn, steady)
    try:
        validate_spec(spec, nn, steady)
    except MultiplierError as e:
        violations.append(f"multiplier preconditions fail: {e}")
        return VerificationReport(False, violations, residuals)
    boxes = propagate_boxes(loop, d1)
    bnds = local_bounds(loop, boxes)
    psi = realize_filter(spec, loop.n)
    ext = extend_plant(loop, psi)
    expected_vars = multiplier_var_count(spec, widths)
    stored_vars = cert.provenance.get("var_count")
    if stored_vars is not None and int(stored_vars) != expected_vars:
        violations.append(
            f"multiplier variable count {stored_vars} does not match the "
            f"family's formula {expected_vars}"
        )
    violations.extend(check_valuation(cert.multiplier, bnds, widths, tol=tol))
    eps_lmi = float(cert.provenance.get("eps_lmi", DEFAULT_EPS_LMI))
    eps_pd = float(cert.provenance.get("eps_pd", DEFAULT_EPS_PD))
    base = verify_certificate_data(
        ext, cert.X, cert.multiplier.P, loop.Q, d1,
        eps_lmi=eps_lmi, eps_pd=eps_pd, tol=tol,
    )
    violations.extend(base.violations)
    residuals.update(base.residuals)
    return VerificationReport(
        valid=not violations, violations=violations, residuals=residuals
    )


# ---------------------------------------------------------------------------
# searches


def bisect_feasibility(
    feasible: Callable[[float], bool],
    lo: float,
    *,
    tol_rel: float = 1e-3,
    growth: float = 2.0,
    cap: float = 1e6,
) -> float:
    """Largest feasible point of a monotone predicate, by growth + bisection.

    ``lo`` must be feasible.  The bracket grows geometrically until the
    predicate fails (or ``cap`` is reached, which is then returned), and
    bisection tightens it until ``hi <= lo * (1 + tol_rel)``.  Returns the
    last point actually tested feasible.
    """
    if lo <= 0:
        raise ValueError("lo must be positive")
    hi = lo
    while True:
        nxt = hi * growth
        if nxt >= cap:
            if feasible(cap):
                return cap
            nxt = cap
            if nxt <= hi:
                return hi
            hi_infeasible = nxt
            break
        if feasible(nxt):
            hi = nxt
        else:
            hi_infeasible = nxt
            break
    lo_b, hi_b = hi, hi_infeasible
    while hi_b > lo_b * (1.0 + tol_rel):
        mid = 0.5 * (lo_b + hi_b)
        if feasible(mid):
            lo_b = mid
        else:
            hi_b = mid
    return lo_b


def golden_section(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol_abs: float = 1e-3,
    max_iter: int = 200,
):
    """Golden-section minimization of a unimodal function on [lo, hi].

    Infeasible evaluations may return +inf.  Returns ``(x_best, f_best,
    history)`` where ``x_best`` is the best point actually evaluated and
    ``history`` the list of (x, f(x)) pairs in evaluation order.
    """
    if hi <= lo:
        raise ValueError("need lo < hi")
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    history = []

    def eval_at(x):
        fx = float(f(x))
        history.append((x, fx))
        return fx

    a, b = float(lo), float(hi)
    eval_at(b)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = eval_at(c)
    fd = eval_at(d)
    for _ in range(max_iter):
        if b - a <= tol_abs:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = eval_at(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = eval_at(d)
    x_best, f_best = min(history, key=lambda t: (t[1], t[0]))
    return x_best, f_best, history


@dataclass
class SweepPoint:
    delta: float
    status: str
    trace: float


@dataclass
class SweepRecord:
    """Evaluations collected during a delta sweep, sorted by delta."""

    points: list

    def __post_init__(self):
        pts = sorted(self.points, key=lambda p: p.delta)
        unique = []
        for p in pts:
            if unique and p.delta == unique[-1].delta:
                continue
            unique.append(p)
        self.points = unique

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("delta,status,trace\n")
        for p in self.points:
            trace = "inf" if math.isinf(p.trace) else f"{p.trace:.12g}"
            buf.write(f"{p.delta:.12g},{p.status},{trace}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def find_delta_max(
    plant: PlantModel,
    nn: NeuralNetwork,
    spec: MultiplierSpec,
    *,
    tol_rel: float = 1e-3,
    probes=(1e-3, 1e-4, 1e-5, 1e-6),
    cap: float = 1e6,
    solver: Optional[str] = None,
    eps_lmi: float = DEFAULT_EPS_LMI,
    eps_pd: float = DEFAULT_EPS_PD,
) -> float:
    """Largest certifiable box half-width, to relative tolerance ``tol_rel``.

    Probes a descending list of small deltas for an initial feasible point
    and raises NotCertifiableError when even the smallest fails.  Solves
    are feasibility-mode (no objective).
    """
    steady = find_steady_state(plant, nn)

    def feasible(delta: float) -> bool:
        try:
            parts = _build_pipeline(
                plant, nn, spec, delta, eps_lmi, eps_pd, steady=steady
            )
        except CertificationError:
            return False
        report = solve_problem(parts.problem, mode="feasibility", solver=solver)
        return report.status == "optimal"

    lo = None
    for probe in probes:
        if feasible(probe):
            lo = probe
            break
    if lo is None:
        raise NotCertifiableError(
            f"stage 'search': not certifiable at any probe down to {min(probes):.1e}"
        )
    return bisect_feasibility(feasible, lo, tol_rel=tol_rel, cap=cap)


def minimize_trace_over_delta(
    plant: PlantModel,
    nn: NeuralNetwork,
    spec: MultiplierSpec,
    *,
    delta_max: Optional[float] = None,
    tol_abs: Optional[float] = None,
    solver: Optional[str] = None,
    eps_lmi: float = DEFAULT_EPS_LMI,
    eps_pd: float = DEFAULT_EPS_PD,
):
    """Minimize trace(X_x) over delta in (0, delta_max] by golden section.

    Returns ``(delta_star, certificate, sweep)`` with the certificate fully
    verified at the winning delta.  Infeasible evaluations enter the sweep
    with trace +inf.
    """
    if delta_max is None:
        delta_max = find_delta_max(
            plant, nn, spec, solver=solver, eps_lmi=eps_lmi, eps_pd=eps_pd
        )
    if tol_abs is None:
        tol_abs = 1e-3 * delta_max
    steady = find_steady_state(plant, nn)
    evaluations = []

    def trace_at(delta: float) -> float:
        try:
            cert = certify_at(
                plant, nn, spec, delta,
                mode="minimize_trace", solver=solver,
                eps_lmi=eps_lmi, eps_pd=eps_pd,
                verify=False, steady=steady,
            )
        except InfeasibleError:
            evaluations.append(SweepPoint(delta, "infeasible", float("inf")))
            return float("inf")
        except CertificationError:
            evaluations.append(SweepPoint(delta, "failed", float("inf")))
            return float("inf")
        evaluations.append(SweepPoint(delta, "optimal", cert.trace_Xx))
        return cert.trace_Xx

    lo = 1e-6 * delta_max
    delta_star, _, _ = golden_section(trace_at, lo, delta_max, tol_abs=tol_abs)
    cert = certify_at(
        plant, nn, spec, delta_star,
        mode="minimize_trace", solver=solver,
        eps_lmi=eps_lmi, eps_pd=eps_pd, verify=True, steady=steady,
    )
    return delta_star, cert, SweepRecord(evaluations)
