"""Stability certificates and region-of-attraction ellipsoids for
discrete-time linear plants in feedback with feed-forward networks."""

from .model import (
    ModelError,
    SteadyStateError,
    PlantModel,
    Layer,
    NeuralNetwork,
    SteadyState,
    ShiftedLoop,
    load_model,
    find_steady_state,
    shift_loop,
)
from .bounds import BoxBounds, SectorSlopeBounds, propagate_boxes, local_bounds
from .multipliers import (
    MultiplierError,
    VertexCapError,
    MultiplierSpec,
    MultiplierSet,
    MultiplierValuation,
    multiplier_var_count,
    build_multiplier,
    sample_valuation,
    check_valuation,
)
from .filters import FilterRealization, ExtendedSystem, realize_filter, extend_plant
from .sdp import (
    SolverError,
    SdpProblem,
    SolverReport,
    VerificationReport,
    build_certification_problem,
    solve_problem,
    verify_certificate_data,
    export_sdpa,
)
from .roa import (
    CertificationError,
    InfeasibleError,
    NotCertifiableError,
    Certificate,
    SweepRecord,
    certify_at,
    find_delta_max,
    minimize_trace_over_delta,
    golden_section,
    bisect_feasibility,
    verify_certificate,
)
from .sim import (
    Trajectory,
    ValidationReport,
    EmpiricalIqcResult,
    simulate,
    simulate_extended,
    sample_ellipsoid,
    validate_certificate,
    empirical_hard_iqc,
)

__version__ = "0.1.0"


def fixture_path(name: str):
    """Path to one of the model files shipped with the package."""
    from pathlib import Path

    p = Path(__file__).parent / "fixtures" / name
    if not p.exists():
        have = sorted(q.name for q in p.parent.glob("*.json"))
        raise FileNotFoundError(f"no fixture '{name}'; available: {have}")
    return p


__all__ = [
    "fixture_path",
    "ModelError",
    "SteadyStateError",
    "PlantModel",
    "Layer",
    "NeuralNetwork",
    "SteadyState",
    "ShiftedLoop",
    "load_model",
    "find_steady_state",
    "shift_loop",
    "BoxBounds",
    "SectorSlopeBounds",
    "propagate_boxes",
    "local_bounds",
    "MultiplierError",
    "VertexCapError",
    "MultiplierSpec",
    "MultiplierSet",
    "MultiplierValuation",
    "multiplier_var_count",
    "build_multiplier",
    "sample_valuation",
    "check_valuation",
    "FilterRealization",
    "ExtendedSystem",
    "realize_filter",
    "extend_plant",
    "SolverError",
    "SdpProblem",
    "SolverReport",
    "VerificationReport",
    "build_certification_problem",
    "solve_problem",
    "verify_certificate_data",
    "export_sdpa",
    "CertificationError",
    "InfeasibleError",
    "NotCertifiableError",
    "Certificate",
    "SweepRecord",
    "certify_at",
    "find_delta_max",
    "minimize_trace_over_delta",
    "golden_section",
    "bisect_feasibility",
    "verify_certificate",
    "Trajectory",
    "ValidationReport",
    "EmpiricalIqcResult",
    "simulate",
    "simulate_extended",
    "sample_ellipsoid",
    "validate_certificate",
    "empirical_hard_iqc",
]
