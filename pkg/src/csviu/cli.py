"""Command line front end.

Subcommands cover the solver pipeline end to end: riccati, stability,
detect, control, simulate, norms, overtake, region.  Results are written as
JSON (plus CSV tables where tabular), with a run manifest next to every
output directory so a run can be reproduced bit-exactly from its recorded
arguments.

Exit codes: 0 success, 1 validation problem (bad flags, bad model file,
violated model assumptions), 2 solver nonconvergence or divergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import re
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .control import inaction_test, optimal_control
from .errors import (
    AssumptionViolated,
    MaxIterations,
    ModelError,
    MonotonicityViolation,
    SeriesDivergent,
    SingularLambda,
)
from .model import CriterionConfig, load_model
from .mu import mu_bound
from .region import scan_region
from .riccati import solve_riccati
from .simulator import (
    Policy,
    estimate_energy,
    estimate_power,
    optimal_norms,
    overtaking_compare,
    simulate,
)
from .stability import check_alpha_stability, check_detectability, detectability_search

SCHEMA = "csviu/1"

_VALIDATION_ERRORS = (ModelError, AssumptionViolated, SingularLambda, ValueError)
_SOLVER_ERRORS = (MaxIterations, MonotonicityViolation, SeriesDivergent)

# let bare negative tokens like -2,2 pass through as values of --range / --x
_NEGATIVE_TOKEN = re.compile(r"^-\d")


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._negative_number_matcher = _NEGATIVE_TOKEN

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok != ""]
    except ValueError as exc:
        raise ModelError(f"cannot parse {text!r} as a comma-separated float list") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok != ""]
    except ValueError as exc:
        raise ModelError(f"cannot parse {text!r} as a comma-separated integer list") from exc


def _matrix(text: str) -> np.ndarray:
    return np.array([_floats(row) for row in text.split(";")])


def build_parser() -> _Parser:
    parser = _Parser(prog="csviu", description=__doc__)
    parser.add_argument("--version", action="version", version=f"csviu {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--model", required=True, help="path to the model JSON file")
        p.add_argument("--alpha", type=float, default=None, help="discount override")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory (default: print JSON)")
        p.add_argument("--mu", default=None, choices=["zero", "asymptotic", "rollout"],
                       help="slope estimator for the stage problems")
        p.add_argument("--omega", type=float, default=None, help="relaxation factor")
        p.add_argument("--paths", type=int, default=None)
        p.add_argument("--kappa", type=int, default=None)
        return p

    p = common(sub.add_parser("riccati", help="stationary cost matrix and gain"))
    p.set_defaults(handler=_cmd_riccati)

    p = common(sub.add_parser("stability", help="second-moment stability report"))
    p.set_defaults(handler=_cmd_stability)

    p = common(sub.add_parser("detect", help="detectability search or check"))
    p.add_argument("--attempts", type=int, default=30)
    p.add_argument("--injection", default=None,
                   help="output injection matrix to check, rows ; separated: 'a,b;c,d'")
    p.set_defaults(handler=_cmd_detect)

    p = common(sub.add_parser("control", help="optimal control at one state"))
    p.add_argument("--x", required=True, help="state, comma separated")
    p.set_defaults(handler=_cmd_control)

    p = common(sub.add_parser("simulate", help="roll out trajectories under a policy"))
    p.add_argument("--x0", default=None, help="initial state, comma separated (default 0)")
    p.add_argument("--policy", default="optimal", choices=["zero", "gain", "optimal"])
    p.set_defaults(handler=_cmd_simulate)

    p = common(sub.add_parser("norms", help="energy / power criteria under the optimal policy"))
    p.set_defaults(handler=_cmd_norms)

    p = common(sub.add_parser("overtake", help="finite-horizon cost comparison of two policies"))
    p.add_argument("--kappa-grid", required=True, help="horizons, comma separated")
    p.add_argument("--policy-a", default="optimal", choices=["zero", "gain", "optimal"])
    p.add_argument("--policy-b", default="zero", choices=["zero", "gain", "optimal"])
    p.add_argument("--x0", default=None)
    p.set_defaults(handler=_cmd_overtake)

    p = common(sub.add_parser("region", help="map the control action regions over a state slice"))
    p.add_argument("--axes", default="0,1", help="one or two state indices, e.g. 0,1")
    p.add_argument("--range", dest="ranges", action="append", default=None,
                   help="lo,hi for the scanned axes (repeat for distinct per-axis ranges)")
    p.add_argument("--res", type=int, default=41)
    p.set_defaults(handler=_cmd_region)

    return parser


@dataclasses.dataclass
class _Run:
    model: object
    alpha: float
    seed: int
    paths: int
    kappa: int | None
    omega: float
    mu_kind: str
    config: CriterionConfig


def _resolve(args) -> _Run:
    model = load_model(args.model)
    base = model.criterion or CriterionConfig()
    alpha = args.alpha if args.alpha is not None else base.alpha
    seed = args.seed if args.seed is not None else base.seed
    paths = args.paths if args.paths is not None else base.paths
    kappa = args.kappa if args.kappa is not None else base.kappa
    omega = args.omega if args.omega is not None else base.sor_omega
    mu_kind = args.mu if args.mu is not None else "zero"
    config = CriterionConfig(
        alpha=alpha, kappa=kappa, paths=paths, seed=seed,
        tol_fixed_point=base.tol_fixed_point, tol_sor=base.tol_sor,
        max_iters=base.max_iters, sor_omega=omega,
    )
    return _Run(model=model, alpha=alpha, seed=seed, paths=paths, kappa=kappa,
                omega=omega, mu_kind=mu_kind, config=config)


def _solution(run: _Run):
    return solve_riccati(run.model, run.alpha, config=run.config)


def _policy(name: str, run: _Run, sol=None):
    if name == "zero":
        return Policy.zero(run.model.m)
    sol = sol if sol is not None else _solution(run)
    if name == "gain":
        return Policy.linear(sol.G)
    return Policy.optimal(sol, mu_kind=run.mu_kind, omega=run.omega, tol=run.config.tol_sor)


def _solution_payload(sol) -> dict:
    return {
        "alpha": sol.alpha,
        "L": _jsonable(sol.L),
        "G": _jsonable(sol.G),
        "Acl": _jsonable(sol.Acl),
        "iterations": sol.iterations,
        "residual": sol.residual,
        "closed_loop_radius": sol.closed_loop_radius,
        "alpha_condition_ok": sol.alpha_condition_ok,
        "deadzone_weights": _jsonable(sol.forms.Wud),
        "slope_drive": _jsonable(sol.forms.Wxd),
        "noise_floor": sol.forms.varpi1,
    }


def _cmd_riccati(args, run: _Run):
    sol = _solution(run)
    payload = _solution_payload(sol)
    try:
        payload["slope_bound"] = _jsonable(mu_bound(sol))
    except SeriesDivergent:
        payload["slope_bound"] = None
    return payload, []


def _cmd_stability(args, run: _Run):
    report = check_alpha_stability(run.model, run.alpha, seed=run.seed)
    payload = _jsonable(report)
    payload["conditions"] = _jsonable(report.conditions)
    return payload, []


def _cmd_detect(args, run: _Run):
    if args.injection is not None:
        H = _matrix(args.injection)
        check = check_detectability(run.model, run.alpha, H)
        return {"mode": "check", "ok": check.ok, "radius": check.radius,
                "injection": _jsonable(H)}, []
    H = detectability_search(run.model, run.alpha, attempts=args.attempts, seed=run.seed)
    payload = {"mode": "search", "found": H is not None, "attempts": args.attempts}
    if H is not None:
        check = check_detectability(run.model, run.alpha, H)
        payload.update(injection=_jsonable(H), radius=check.radius)
    return payload, []


def _cmd_control(args, run: _Run):
    sol = _solution(run)
    x = np.array(_floats(args.x))
    result = optimal_control(sol, x, mu_kind=run.mu_kind, omega=run.omega,
                             tol=run.config.tol_sor)
    inactive, margins = inaction_test(sol, x, result.mu)
    return {
        "x": _jsonable(x),
        "mu_kind": run.mu_kind,
        "mu": _jsonable(result.mu),
        "u_star": _jsonable(result.u_star),
        "gamma": _jsonable(result.gamma),
        "inactive": _jsonable(inactive),
        "margins": _jsonable(margins),
        "theta": _jsonable(result.sor.theta),
        "sor_iterations": result.sor.iterations,
        "sor_residual": result.sor.residual,
    }, []


def _cmd_simulate(args, run: _Run):
    sol = None
    if args.policy in ("gain", "optimal"):
        sol = _solution(run)
    policy = _policy(args.policy, run, sol)
    x0 = np.zeros(run.model.n) if args.x0 is None else np.array(_floats(args.x0))
    kappa = run.kappa if run.kappa is not None else 100
    ens = simulate(run.model, policy, x0, kappa, run.paths, run.seed)
    sq_y = np.einsum("pkq,pkq->pk", ens.outputs, ens.outputs)
    sq_x = np.einsum("pkq,pkq->pk", ens.states, ens.states)
    sq_u = np.einsum("pkq,pkq->pk", ens.controls, ens.controls)
    energy = estimate_energy(run.model, policy, run.alpha, kappa, x0, run.paths, run.seed)
    payload = {
        "policy": policy.kind,
        "x0": _jsonable(x0),
        "kappa": kappa,
        "paths": run.paths,
        "energy_mean": energy.mean,
        "energy_stderr": energy.stderr,
        "final_mean_state_sq": float(sq_x[:, -1].mean()),
    }
    rows = [
        {"k": k, "mean_output_sq": float(sq_y[:, k].mean()),
         "mean_state_sq": float(sq_x[:, k].mean()),
         "mean_control_sq": float(sq_u[:, k].mean())}
        for k in range(kappa + 1)
    ]
    return payload, [("stages", rows)]


def _cmd_norms(args, run: _Run):
    sol = _solution(run)
    est = optimal_norms(sol, paths=run.paths, seed=run.seed, mu_kind=run.mu_kind,
                        kappa=run.kappa, omega=run.omega, sor_tol=run.config.tol_sor)
    return _jsonable(est), []


def _cmd_overtake(args, run: _Run):
    sol = _solution(run)
    grid = _ints(args.kappa_grid)
    pol_a = _policy(args.policy_a, run, sol)
    pol_b = _policy(args.policy_b, run, sol)
    x0 = np.zeros(run.model.n) if args.x0 is None else np.array(_floats(args.x0))
    rows = overtaking_compare(run.model, run.alpha, pol_a, pol_b, x0, grid,
                              paths=run.paths, seed=run.seed)
    payload = {
        "policy_a": pol_a.kind,
        "policy_b": pol_b.kind,
        "x0": _jsonable(x0),
        "rows": [_jsonable(r) for r in rows],
    }
    table = [{"kappa": r.kappa, "diff": r.diff, "stderr": r.stderr,
              "diff_scaled": r.diff_scaled, "stderr_scaled": r.stderr_scaled} for r in rows]
    return payload, [("overtake", table)]


def _cmd_region(args, run: _Run):
    sol = _solution(run)
    axes = tuple(_ints(args.axes))
    if args.ranges is None:
        ranges = [(-2.0, 2.0)] * len(axes)
    else:
        ranges = []
        for spec_text in args.ranges:
            vals = _floats(spec_text)
            if len(vals) != 2:
                raise ModelError(f"--range needs lo,hi, got {spec_text!r}")
            ranges.append((vals[0], vals[1]))
        if len(ranges) == 1 and len(axes) == 2:
            ranges = ranges * 2
    rmap = scan_region(sol, axes=axes, ranges=ranges, resolution=args.res,
                       mu_kind=run.mu_kind, omega=run.omega, tol=run.config.tol_sor)
    m = run.model.m
    rows = []
    if rmap.grid_y is None:
        for i, xv in enumerate(rmap.grid_x):
            row = {"x1": float(xv)}
            _region_row(row, rmap.u_star[i], rmap.labels[i], rmap.margins[i], m)
            rows.append(row)
    else:
        for i, xv in enumerate(rmap.grid_x):
            for j, yv in enumerate(rmap.grid_y):
                row = {"x1": float(xv), "x2": float(yv)}
                _region_row(row, rmap.u_star[i, j], rmap.labels[i, j], rmap.margins[i, j], m)
                rows.append(row)
    payload = {
        "axes": list(axes),
        "resolution": args.res,
        "ranges": [list(rg) for rg in ranges],
        "mu_kind": rmap.mu_kind,
        "cells": len(rows),
        "inactive_cells": int((rmap.labels == 0).all(axis=-1).sum()),
        "boundary_cells": int(rmap.boundary.any(axis=-1).sum()),
        "invalid_cells": int(rmap.invalid.sum()),
        "inconsistent_cells": int(rmap.inconsistent.any(axis=-1).sum()),
    }
    return payload, [("region", rows)]


def _region_row(row, u, labels, margins, m):
    for i in range(m):
        row[f"u_{i + 1}"] = float(u[i])
    for i in range(m):
        row[f"label_{i + 1}"] = int(labels[i])
    for i in range(m):
        row[f"margin_{i + 1}"] = float(margins[i])


def _model_sha256(model) -> str:
    canonical = json.dumps(model.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _write_outputs(args, run: _Run, payload: dict, tables, argv, elapsed: float) -> None:
    payload = {"schema": SCHEMA, "command": args.command, **payload}
    text = json.dumps(payload, indent=2, sort_keys=False)
    if args.out is None:
        print(text)
        return
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(text + "\n")
    for name, rows in tables:
        if not rows:
            continue
        header = {"schema": SCHEMA, "command": args.command, "table": name}
        with (out / f"{name}.csv").open("w", newline="") as fh:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    manifest = {
        "schema": SCHEMA,
        "command": args.command,
        "version": __version__,
        "argv": list(argv),
        "model_path": str(Path(args.model).resolve()),
        "model_sha256": _model_sha256(run.model),
        "settings": {
            "alpha": run.alpha, "seed": run.seed, "paths": run.paths,
            "kappa": run.kappa, "omega": run.omega, "mu": run.mu_kind,
        },
        "elapsed_s": elapsed,
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = time.perf_counter()
    try:
        run = _resolve(args)
        payload, tables = args.handler(args, run)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    elapsed = time.perf_counter() - started
    _write_outputs(args, run, payload, tables, argv, elapsed)
    return 0


if __name__ == "__main__":
    sys.exit(main())
