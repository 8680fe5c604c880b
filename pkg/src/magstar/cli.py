"""Batch front end: ``radial``, ``solve``, ``sweep`` and ``verify`` subcommands.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 Newton non-convergence, 5 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .diagnostics import (
    StarSolution,
    field_table,
    physical_mass,
    run_diagnostics,
    write_field_csv,
    write_json,
)
from .eos import EOSDomainError, EquationOfState, RadialSolveError, solve_radial_star
from .equilibrium import (
    DegeneracyError,
    EquilibriumProblem,
    MagneticCurrentFunction,
    ModelParams,
    NonConvergenceError,
    ParameterGuardError,
    continuation_sweep,
    newton_solve,
)
from .geometry import AxiGrid, FoldError

log = logging.getLogger("magstar")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_NONCONVERGED, EXIT_VERIFY = 0, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    gamma: float = 2.0
    allow_four_thirds: bool = False
    k_coeffs: list = field(default_factory=lambda: [1.0, 1.0])
    ns: int = 24
    nmu: int = 12
    eval_n: int = 32
    diag_h: float = 1 / 24
    radial_grid: int = 4000
    omega2: float = 0.0
    epsilon: float = 0.0
    sweep_omega2: list = field(default_factory=lambda: [0.0, 0.01, 0.02])
    sweep_epsilon: list = field(default_factory=lambda: [0.0, 0.025, 0.05])
    newton_tol: float = 1e-9
    max_iter: int = 20
    trust_radius: float = 0.15
    omega2_max: float = 0.05
    eps_max: float = 0.1
    tolerances: dict = field(default_factory=dict)
    verify_tolerance_scale: float = 1.0
    verify_criteria: list = field(default_factory=list)
    seed: int = 0
    workers: int = 1
    out: str = "out"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    def validate(self):
        for name in ("newton_tol", "trust_radius", "omega2_max", "eps_max", "diag_h",
                     "verify_tolerance_scale"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("ns", "nmu", "eval_n", "radial_grid", "max_iter", "workers"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if not self.sweep_omega2 or not self.sweep_epsilon:
            raise ConfigError("sweep lists must be nonempty")
        if self.sweep_omega2[0] != 0 or self.sweep_epsilon[0] != 0:
            raise ConfigError("sweep lists must start at 0")
        if len(self.k_coeffs) > 7:
            raise ConfigError("k polynomial degree must be <= 6")
        for v in self.tolerances.values():
            if not v > 0:
                raise ConfigError("tolerances must be positive")

    def hashed_dict(self) -> dict:
        """Everything that affects results (output location and worker count excluded)."""
        d = asdict(self)
        d.pop("out")
        d.pop("workers")
        return d

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.hashed_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # -- builders ----------------------------------------------------------------
    def eos(self):
        return EquationOfState(self.gamma, allow_four_thirds=self.allow_four_thirds)

    def grid(self):
        return AxiGrid(self.ns, self.nmu)

    def params(self, omega2=None, epsilon=None):
        return ModelParams(self.omega2 if omega2 is None else omega2,
                           self.epsilon if epsilon is None else epsilon,
                           MagneticCurrentFunction(tuple(self.k_coeffs)),
                           self.omega2_max, self.eps_max)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    d = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
    for k, v in (overrides or {}).items():
        if v is not None:
            d[k] = v
    return RunConfig.from_dict(d)


# --------------------------------------------------------------------------
# artifacts


def _sidecar(path: Path, cfg: RunConfig, extra: dict | None = None):
    meta = {"config_hash": cfg.config_hash, "artifact": path.name}
    meta.update(extra or {})
    write_json(meta, path.with_suffix(".json"))


def write_trace(trace, path: Path, cfg: RunConfig):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "residual_norm", "step_size", "condition_estimate"])
        for row in trace:
            w.writerow([row.iteration, f"{row.residual:.17g}", f"{row.step:.17g}", f"{row.condition:.17g}"])
    _sidecar(path, cfg)


def _field_coefficients(f, cfg):
    d = f.to_dict()
    d["config_hash"] = cfg.config_hash
    return d


def write_solution(sol: StarSolution, outdir: Path, cfg: RunConfig, diagnostics: dict | None = None,
                   fields_csv: bool = True):
    outdir.mkdir(parents=True, exist_ok=True)
    write_json(_field_coefficients(sol.zeta, cfg), outdir / "zeta_coefficients.json")
    write_json(_field_coefficients(sol.phi, cfg), outdir / "phi_coefficients.json")
    snap = {
        "config_hash": cfg.config_hash,
        "params": sol.params.to_dict(),
        "grid": sol.grid.to_dict(),
        "profile": sol.profile.metadata(),
        "zeta": sol.zeta.to_dict(),
        "phi": sol.phi.to_dict(),
        "mass_factor": sol.mass_factor,
        "residual_norm": sol.residual_norm,
        "oblateness": sol.oblateness,
        "r_eq": sol.r_eq,
        "r_pol": sol.r_pol,
    }
    if diagnostics is not None:
        snap["diagnostics"] = {k: (v.get("pass") if isinstance(v, dict) else v) for k, v in diagnostics.items()}
        write_json(dict(diagnostics, config_hash=cfg.config_hash), outdir / "diagnostics.json")
    write_json(snap, outdir / "solution.json")
    if fields_csv:
        path = write_field_csv(field_table(sol, cfg.eval_n), outdir / "fields.csv")
        _sidecar(path, cfg, {"columns": ["r", "z", "rho", "psi", "U", "Br", "Bz", "Jtheta"]})


# --------------------------------------------------------------------------
# commands


def cmd_radial(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    prof = solve_radial_star(cfg.eos(), grid_size=cfg.radial_grid)
    prof.write(out / "radial_profile.csv", out / "radial_profile.json",
               extra={"config_hash": cfg.config_hash})
    log.info("radial profile: xi1=%.12f M0=%.12f", prof.xi1, prof.M0)
    return EXIT_OK


def _problem(cfg):
    prof = solve_radial_star(cfg.eos(), grid_size=cfg.radial_grid)
    return EquilibriumProblem(prof, cfg.grid())


def cmd_solve(cfg: RunConfig) -> int:
    params = cfg.params()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = _problem(cfg)
    start = problem.predictor_state(params)
    try:
        state, trace = newton_solve(problem, params, start, tol=cfg.newton_tol,
                                    max_iter=cfg.max_iter, trust_radius=cfg.trust_radius)
    except NonConvergenceError as exc:
        write_trace(exc.trace, out / "trace.csv", cfg)
        log.error("%s", exc)
        return EXIT_NONCONVERGED
    write_trace(trace, out / "trace.csv", cfg)
    sol = StarSolution(problem, params, state, trace[-1].residual)
    diag = run_diagnostics(sol, cfg.tolerances, cfg.diag_h)
    write_solution(sol, out, cfg, diag)
    log.info("converged in %d iterations; diagnostics all_pass=%s", len(trace) - 1, diag["all_pass"])
    return EXIT_OK


SUMMARY_COLUMNS = ["omega2", "epsilon", "converged", "oblateness", "zeta_norm", "phi_norm",
                   "mass", "residual_norm", "iterations"]


def cmd_sweep(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = _problem(cfg)
    base = cfg.params(0.0, 0.0)
    points = continuation_sweep(problem, base, cfg.sweep_omega2, cfg.sweep_epsilon,
                                tol=cfg.newton_tol, max_iter=cfg.max_iter, workers=cfg.workers)
    rows = []
    origin_ok = False
    for pt in points:
        iw = cfg.sweep_omega2.index(pt.omega2)
        ie = cfg.sweep_epsilon.index(pt.epsilon)
        pdir = out / f"point_{iw:02d}_{ie:02d}"
        pdir.mkdir(parents=True, exist_ok=True)
        write_trace(pt.trace, pdir / "trace.csv", cfg)
        if pt.state is None:
            rows.append([pt.omega2, pt.epsilon, 0] + [float("nan")] * 5 + [len(pt.trace)])
            continue
        if pt.omega2 == 0 and pt.epsilon == 0:
            origin_ok = True
        params = base.with_values(pt.omega2, pt.epsilon)
        sol = StarSolution(problem, params, pt.state, pt.trace[-1].residual)
        write_solution(sol, pdir, cfg, fields_csv=False)
        zn, pn = sol.norms()
        rows.append([pt.omega2, pt.epsilon, 1, sol.oblateness, zn, pn, physical_mass(sol),
                     sol.residual_norm, len(pt.trace) - 1])
    path = out / "summary.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([v if isinstance(v, int) else f"{float(v):.17g}" for v in r])
    _sidecar(path, cfg, {"columns": SUMMARY_COLUMNS, "M0": problem.M0})
    return EXIT_OK if origin_ok else EXIT_SOLVER


def cmd_verify(cfg: RunConfig) -> int:
    from .acceptance import run_acceptance

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_acceptance(seed=cfg.seed, grid=cfg.grid(), tolerance_scale=cfg.verify_tolerance_scale,
                             echo=lambda line: print(line, flush=True),
                             only=set(cfg.verify_criteria) or None)
    report = {
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "criteria": [r.to_dict() for r in results],
        "all_pass": all(r.passed for r in results),
    }
    write_json(report, out / "verify_report.json")
    return EXIT_OK if report["all_pass"] else EXIT_VERIFY


COMMANDS = {"radial": cmd_radial, "solve": cmd_solve, "sweep": cmd_sweep, "verify": cmd_verify}


def build_parser():
    ap = argparse.ArgumentParser(prog="magstar", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--omega2", type=float, help="rotation speed squared")
    ap.add_argument("--eps", type=float, help="magnetic coupling")
    ap.add_argument("--workers", type=int, help="parallel sweep points")
    ap.add_argument("--seed", type=int, help="seed for randomized checks")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = {"out": args.out, "omega2": args.omega2, "epsilon": args.eps,
                 "workers": args.workers, "seed": args.seed}
    try:
        cfg = load_config(args.config, overrides)
        cfg.eos()
        if args.command == "solve":
            cfg.params()
        if args.command == "sweep":
            for w in cfg.sweep_omega2:
                cfg.params(w, 0.0)
            for e in cfg.sweep_epsilon:
                cfg.params(0.0, e)
    except (ConfigError, EOSDomainError, ParameterGuardError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg)
    except (RadialSolveError, FoldError, DegeneracyError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
