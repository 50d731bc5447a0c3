"""Command-line interface.

Subcommands::

    nncert certify MODEL --delta 0.1 --multiplier combined --zf-order 1,1
    nncert search MODEL --multiplier diag-c --sweep-csv sweep.csv
    nncert validate MODEL CERT --samples 1000 --steps 2000
    nncert simulate MODEL --x0 0.3,-0.2 --steps 500
    nncert bounds MODEL --delta 0.1

Exit codes: 0 success, 1 not certifiable / validation failed, 2 bad
input, 3 solver or internal failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bounds import local_bounds, propagate_boxes
from .model import ModelError, SteadyStateError, find_steady_state, load_model, shift_loop
from .multipliers import (
    CIRCLE_PARTS,
    KINDS,
    MultiplierError,
    MultiplierSpec,
    VertexCapError,
    ZF_STRUCTURES,
    multiplier_var_count,
)
from .roa import (
    Certificate,
    CertificationError,
    InfeasibleError,
    NotCertifiableError,
    _build_pipeline,
    certify_at,
    find_delta_max,
    minimize_trace_over_delta,
    verify_certificate,
)
from .sdp import DEFAULT_EPS_LMI, DEFAULT_EPS_PD, SolverError, export_sdpa
from .sim import simulate, validate_certificate

EXIT_OK = 0
EXIT_NOT_CERTIFIED = 1
EXIT_BAD_INPUT = 2
EXIT_SOLVER = 3


def _add_multiplier_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("multiplier")
    g.add_argument("--multiplier", choices=KINDS, default="diag-c",
                   help="multiplier family (default diag-c)")
    g.add_argument("--zf-order", default="1,1", metavar="L-,L+",
                   help="anticausal,causal tap counts for zf/combined "
                        "(default 1,1)")
    g.add_argument("--zf-structure", choices=ZF_STRUCTURES, default="diag",
                   help="tap structure for zf/combined (default diag)")
    g.add_argument("--odd", action="store_true",
                   help="restrict to odd nonlinearities (zf/combined)")
    g.add_argument("--circle-part", choices=CIRCLE_PARTS, default="diag",
                   help="circle block of the combined family (default diag)")
    g.add_argument("--vertex-cap", type=int, default=4096,
                   help="abort if a vertex enumeration would exceed this")


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--solver", default=None,
                   help="cvxpy solver name (default CLARABEL, or "
                        "NNCERT_SOLVER)")
    p.add_argument("--eps-lmi", type=float, default=DEFAULT_EPS_LMI)
    p.add_argument("--eps-pd", type=float, default=DEFAULT_EPS_PD)


def _spec_from_args(args) -> MultiplierSpec:
    try:
        lm, lp = (int(s) for s in args.zf_order.split(","))
    except ValueError:
        raise SystemExit2(f"--zf-order must be 'L-,L+', got '{args.zf_order}'")
    try:
        return MultiplierSpec(
            kind=args.multiplier,
            zf_order=(lm, lp),
            zf_structure=args.zf_structure,
            odd=args.odd,
            circle_part=args.circle_part,
            vertex_cap=args.vertex_cap,
        )
    except (ValueError, MultiplierError) as e:
        raise SystemExit2(str(e))


class SystemExit2(Exception):
    """Bad user input; maps to exit code 2."""


def _load(path: str):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise SystemExit2(f"model file not found: {path}")
    except (ModelError, json.JSONDecodeError) as e:
        raise SystemExit2(f"cannot load model '{path}': {e}")


def _print_certificate(cert: Certificate) -> None:
    spec = cert.multiplier.spec
    print(f"certified: delta = {cert.delta:.6g}")
    print(f"  multiplier: {spec.describe()}")
    print(f"  decision variables in multiplier: "
          f"{cert.provenance.get('var_count')}")
    print(f"  trace(X_x) = {cert.trace_Xx:.6g}")
    print(f"  solver: {cert.provenance.get('solver')} "
          f"({cert.provenance.get('raw_status')}), "
          f"max residual {cert.provenance.get('max_violation'):.2e}")
    if cert.provenance.get("verified"):
        print("  independently re-verified: yes")


def _cmd_certify(args) -> int:
    plant, nn = _load(args.model)
    spec = _spec_from_args(args)
    if args.export_sdpa:
        parts = _build_pipeline(plant, nn, spec, args.delta,
                                args.eps_lmi, args.eps_pd)
        export_sdpa(parts.problem, args.export_sdpa,
                    mode="minimize_trace")
        print(f"wrote SDPA-sparse problem to {args.export_sdpa}")
    try:
        cert = certify_at(
            plant, nn, spec, args.delta,
            solver=args.solver, eps_lmi=args.eps_lmi, eps_pd=args.eps_pd,
        )
    except InfeasibleError as e:
        print(f"not certified: {e}", file=sys.stderr)
        return EXIT_NOT_CERTIFIED
    _print_certificate(cert)
    if args.output:
        cert.to_json(args.output)
        print(f"wrote certificate to {args.output}")
    return EXIT_OK


def _cmd_search(args) -> int:
    plant, nn = _load(args.model)
    spec = _spec_from_args(args)
    try:
        delta_max = find_delta_max(
            plant, nn, spec,
            solver=args.solver, eps_lmi=args.eps_lmi, eps_pd=args.eps_pd,
        )
    except NotCertifiableError as e:
        print(f"not certified: {e}", file=sys.stderr)
        return EXIT_NOT_CERTIFIED
    print(f"delta_max = {delta_max:.6g}")
    if args.objective == "delta":
        try:
            cert = certify_at(
                plant, nn, spec, delta_max,
                solver=args.solver, eps_lmi=args.eps_lmi, eps_pd=args.eps_pd,
            )
        except InfeasibleError:
            raise
        except CertificationError:
            # trace minimization can be badly scaled at the very edge;
            # fall back to a plain feasible point
            cert = certify_at(
                plant, nn, spec, delta_max, mode="feasibility",
                solver=args.solver, eps_lmi=args.eps_lmi, eps_pd=args.eps_pd,
            )
        sweep = None
    else:
        delta_star, cert, sweep = minimize_trace_over_delta(
            plant, nn, spec, delta_max=delta_max,
            solver=args.solver, eps_lmi=args.eps_lmi, eps_pd=args.eps_pd,
        )
        print(f"delta* = {delta_star:.6g} (minimum trace)")
    _print_certificate(cert)
    if args.sweep_csv and sweep is not None:
        sweep.to_csv(args.sweep_csv)
        print(f"wrote sweep to {args.sweep_csv}")
    if args.output:
        cert.to_json(args.output)
        print(f"wrote certificate to {args.output}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    plant, nn = _load(args.model)
    try:
        cert = Certificate.from_json(Path(args.certificate))
    except FileNotFoundError:
        raise SystemExit2(f"certificate file not found: {args.certificate}")
    except (KeyError, ValueError, json.JSONDecodeError) as e:
        raise SystemExit2(f"cannot parse certificate: {e}")
    rep_cert = verify_certificate(plant, nn, cert)
    print(rep_cert.summary())
    if not rep_cert.valid:
        return EXIT_NOT_CERTIFIED
    rep_sim = validate_certificate(
        plant, nn, cert,
        n_samples=args.samples, steps=args.steps, seed=args.seed,
    )
    print(rep_sim.summary())
    return EXIT_OK if rep_sim.passed else EXIT_NOT_CERTIFIED


def _cmd_simulate(args) -> int:
    plant, nn = _load(args.model)
    try:
        x0 = np.array([float(s) for s in args.x0.split(",")])
    except ValueError:
        raise SystemExit2(f"--x0 must be comma-separated floats, got '{args.x0}'")
    if x0.shape[0] != plant.n_x:
        raise SystemExit2(
            f"--x0 has {x0.shape[0]} entries, plant has {plant.n_x} states"
        )
    traj = simulate(plant, nn, x0, args.steps)
    final = traj.x[-1]
    print(f"simulated {args.steps} steps")
    print(f"  final state: {np.array2string(final, precision=6)}")
    if bool(traj.diverged):
        print("  trajectory diverged (state norm exceeded 1e12)")
    if args.output:
        cols = (["k"] + [f"x{i + 1}" for i in range(plant.n_x)]
                + [f"u{i + 1}" for i in range(plant.n_u)])
        with open(args.output, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for k in range(args.steps):
                row = [str(k)] + [f"{v:.12g}" for v in traj.x[k]]
                row += [f"{v:.12g}" for v in traj.u[k]]
                fh.write(",".join(row) + "\n")
            row = [str(args.steps)] + [f"{v:.12g}" for v in traj.x[args.steps]]
            row += [""] * plant.n_u
            fh.write(",".join(row) + "\n")
        print(f"wrote trajectory to {args.output}")
    return EXIT_OK


def _cmd_bounds(args) -> int:
    plant, nn = _load(args.model)
    try:
        steady = find_steady_state(plant, nn)
    except SteadyStateError as e:
        print(f"steady state not found: {e}", file=sys.stderr)
        return EXIT_SOLVER
    loop = shift_loop(plant, nn, steady)
    d1 = args.delta * np.ones(nn.widths[0])
    boxes = propagate_boxes(loop, d1)
    bnds = local_bounds(loop, boxes)
    header = "layer,neuron,lo,hi,alpha,beta,mu,nu"
    rows = [header]
    offset = 0
    for i, width in enumerate(nn.widths):
        for j in range(width):
            k = offset + j
            rows.append(
                f"{i + 1},{j + 1},{boxes.lo[k]:.9g},{boxes.hi[k]:.9g},"
                f"{bnds.alpha[k]:.9g},{bnds.beta[k]:.9g},"
                f"{bnds.mu[k]:.9g},{bnds.nu[k]:.9g}"
            )
        offset += width
    text = "\n".join(rows) + "\n"
    if args.output:
        Path(args.output).write_text(text)
        print(f"wrote bounds to {args.output}")
    else:
        print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nncert",
        description="Certify local stability of an LTI plant in feedback "
                    "with a feed-forward neural network and bound its "
                    "region of attraction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="solve the certification SDP at one delta")
    p.add_argument("model", help="model JSON file")
    p.add_argument("--delta", type=float, required=True,
                   help="half-width of the first-layer preactivation box")
    p.add_argument("--output", help="write the certificate JSON here")
    p.add_argument("--export-sdpa",
                   help="also write the SDP in SDPA sparse format")
    _add_multiplier_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=_cmd_certify)

    p = sub.add_parser("search", help="maximize delta, then minimize trace(X_x)")
    p.add_argument("model", help="model JSON file")
    p.add_argument("--objective", choices=("trace", "delta"), default="trace",
                   help="stop after delta_max, or golden-section the trace "
                        "(default trace)")
    p.add_argument("--output", help="write the certificate JSON here")
    p.add_argument("--sweep-csv", help="write the delta sweep as CSV")
    _add_multiplier_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("validate",
                       help="re-verify a certificate and stress it in simulation")
    p.add_argument("model", help="model JSON file")
    p.add_argument("certificate", help="certificate JSON file")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("simulate", help="roll out the closed loop")
    p.add_argument("model", help="model JSON file")
    p.add_argument("--x0", required=True,
                   help="initial state, comma-separated floats")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--output", help="write the trajectory as CSV")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("bounds",
                       help="print per-neuron boxes and sector/slope bounds")
    p.add_argument("model", help="model JSON file")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--output", help="write the table as CSV")
    p.set_defaults(func=_cmd_bounds)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit2 as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (VertexCapError, MultiplierError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (NotCertifiableError, InfeasibleError) as e:
        print(f"not certified: {e}", file=sys.stderr)
        return EXIT_NOT_CERTIFIED
    except (SolverError, CertificationError) as e:
        print(f"failure: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
