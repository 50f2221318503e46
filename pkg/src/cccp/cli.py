"""Command-line entry point.

``cccp COMMAND --config RUN.json [--out DIR] [--seed N] [--tol X] [--backend NAME]``

Commands: ``solve``, ``validate``, ``experiment-table``, ``experiment-gap``,
``experiment-estimation``, ``beamform``.  Exit status is 0 on success, 1 on a
reported error (JSON report on stderr, nothing written) and 2 on usage errors.
Every artifact carries the run config hash and seed.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass, fields
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

from . import beamforming as bf
from . import validation as vl
from .joint import JointApproxConfig, Mode, solve_joint
from .problem_io import (
    SchemaError,
    dumps,
    encode_complex,
    family_from_dict,
    load_problem,
    loads,
    spec_from_dict,
)
from .reform import solve_individual
from .solver import backends

COMMANDS = ("solve", "validate", "experiment-table", "experiment-gap", "experiment-estimation", "beamform")
NEEDS_SEED = {"validate", "experiment-table", "experiment-gap", "experiment-estimation", "beamform"}


@dataclass
class RunConfig:
    command: str
    raw: dict
    base: Path
    out: Path
    seed: int | None = None
    tol: float = 1e-8
    backend: str = "reference"
    problem_path: Path | None = None

    def canonical(self) -> dict:
        d = dict(self.raw)
        d.update(command=self.command, seed=self.seed, tol=self.tol, backend=self.backend)
        return d

    @property
    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cccp", description="Complex chance-constrained programs")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="run config (JSON)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--tol", type=float, help="solver tolerance")
        p.add_argument("--backend", help=f"SOCP backend ({', '.join(backends())})")
    return ap


def make_config(args) -> RunConfig:
    path = args.config
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise SchemaError(f"{path}: cannot read: {err.strerror}") from None
    raw = loads(text, str(path))
    if not isinstance(raw, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    seed = args.seed if args.seed is not None else raw.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64):
        raise SchemaError(f"{path}.seed: expected an unsigned 64-bit integer")
    if seed is None and args.command in NEEDS_SEED:
        raise SchemaError(f"{path}.seed: {args.command} needs an explicit seed (config or --seed)")
    tol = args.tol if args.tol is not None else raw.get("tol", 1e-8)
    if not (isinstance(tol, (int, float)) and 0 < tol < 1):
        raise SchemaError(f"{path}.tol: expected a number in (0, 1)")
    backend = args.backend or raw.get("backend", "reference")
    if backend not in backends():
        raise SchemaError(f"unknown backend {backend!r}; available: {backends()}")
    base = path.resolve().parent
    problem_path = None
    if "problem" in raw:
        problem_path = base / raw["problem"]
        if not problem_path.exists():
            raise SchemaError(f"{path}.problem: file {problem_path} does not exist")
    return RunConfig(args.command, raw, base, args.out, seed, float(tol), backend, problem_path)


def _header(cfg: RunConfig) -> dict:
    return {"command": cfg.command, "config_hash": cfg.config_hash, "seed": cfg.seed}


def _dataclass_from(cls, d: dict, path: str, **fixed):
    if not isinstance(d, dict):
        raise SchemaError(f"{path}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise SchemaError(f"{path}: unknown field(s) {unknown}; allowed: {sorted(names)}")
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
    kwargs.update(fixed)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise SchemaError(f"{path}: {err}") from None


def _joint_config(raw) -> JointApproxConfig | None:
    j = raw.get("joint")
    if j is None:
        return None
    try:
        mode = Mode(j.get("mode", "lower"))
        return JointApproxConfig.geometric(int(j.get("tangents", 20)), float(j.get("theta", 2.0)), mode,
                                           float(j.get("smallest", 1e-3)), j.get("lifting", "product"))
    except (TypeError, ValueError, AttributeError) as err:
        raise SchemaError(f"joint: {err}") from None


def _solve(cfg: RunConfig):
    if cfg.problem_path is None:
        raise SchemaError(f"{cfg.command}: config needs a 'problem' path")
    problem = load_problem(cfg.problem_path)
    spec = spec_from_dict(cfg.raw.get("spec", {"type": "ces"}), "spec", cfg.base)
    problem.check_levels(spec)
    jc = _joint_config(cfg.raw)
    if jc is None:
        res = solve_individual(problem, spec, tol=cfg.tol, backend=cfg.backend)
        out = {"mode": "individual", "status": res.solution.status.value,
               "objective": res.objective if res.ok else None,
               "z": encode_complex(res.z) if res.ok else None}
        return problem, spec, out, (res.z if res.ok else None)
    p = cfg.raw.get("joint_level")
    if p is None:
        raise SchemaError("joint_level: joint solves need the joint probability level")
    r = solve_joint(problem, spec, float(p), jc, tol=cfg.tol, backend=cfg.backend)
    out = {"mode": f"joint_{jc.mode.value}", "status": r.solution.status.value,
           "objective": r.objective if r.ok else None,
           "weights": [float(v) for v in r.y] if r.y is not None else None,
           "certified": r.certified,
           "feasible_objective": r.feasible_objective if math.isfinite(r.feasible_objective) else None,
           "z": encode_complex(r.feasible_z) if r.feasible_z is not None else None}
    return problem, spec, out, r.feasible_z


def cmd_solve(cfg: RunConfig) -> dict[str, str]:
    _, _, out, _ = _solve(cfg)
    return {"solution.json": dumps({**_header(cfg), **out})}


def cmd_validate(cfg: RunConfig) -> dict[str, str]:
    problem, spec, out, z = _solve(cfg)
    v = cfg.raw.get("validation", {})
    family = family_from_dict(v.get("family", "gaussian"), "validation.family")
    S = int(v.get("scenarios", 1000))
    if z is None:
        raise RuntimeError(f"no solution to validate (status {out['status']})")
    theta = v.get("theta")
    rep = vl.oos_violation(z, family, [vl.d_moments_of(r) for r in problem.rows], S, cfg.seed,
                           theta=None if theta is None else float(theta))
    report = {**_header(cfg), **out,
              "validation": {"family": v.get("family", "gaussian"), "scenarios": rep.scenario_count,
                             "joint_violation_rate": rep.joint_violation_rate,
                             "per_constraint_rates": [float(r) for r in rep.per_constraint_rates],
                             "binomial_halfwidth": rep.binomial_halfwidth, "seed": rep.seed}}
    return {"validation.json": dumps(report)}


def _experiment_config(cfg: RunConfig) -> vl.ExperimentConfig:
    return _dataclass_from(vl.ExperimentConfig, cfg.raw.get("experiment", {}), "experiment",
                           seed=cfg.seed, tol=cfg.tol, backend=cfg.backend)


def _csv(rows, columns, ecfg, kind, cfg: RunConfig) -> str:
    header = {"experiment": kind, "run_config_hash": cfg.config_hash, "config_hash": ecfg.config_hash,
              "seed": ecfg.seed, "config": ecfg.to_json()}
    return vl.csv_text(rows, columns, header)


def cmd_experiment_table(cfg: RunConfig) -> dict[str, str]:
    ecfg = _experiment_config(cfg)
    rows = vl.run_table_experiment(ecfg)
    summary = vl.monotonicity_summary(rows)
    return {"table.csv": _csv(rows, vl.TABLE_COLUMNS, ecfg, "table", cfg),
            "table_monotonicity.csv": _csv(summary, vl.MONOTONICITY_COLUMNS, ecfg, "table_monotonicity", cfg)}


def cmd_experiment_gap(cfg: RunConfig) -> dict[str, str]:
    ecfg = _experiment_config(cfg)
    g = cfg.raw.get("gap", {})
    rows = vl.run_gap_experiment(ecfg, m=g.get("m"), p=g.get("p"))
    return {"gap.csv": _csv(rows, vl.GAP_COLUMNS, ecfg, "gap", cfg)}


def cmd_experiment_estimation(cfg: RunConfig) -> dict[str, str]:
    ecfg = _experiment_config(cfg)
    rows = vl.run_estimation_experiment(ecfg, p=cfg.raw.get("estimation", {}).get("p"))
    return {"estimation.csv": _csv(rows, vl.EST_COLUMNS, ecfg, "estimation", cfg)}


def cmd_beamform(cfg: RunConfig) -> dict[str, str]:
    raw = dict(cfg.raw.get("sweep", {}))
    model = _dataclass_from(bf.ArrayModel, raw.pop("model", {}), "sweep.model")
    scfg = _dataclass_from(bf.SweepConfig, raw, "sweep", model=model, seed=cfg.seed,
                           tol=min(cfg.tol, 1e-9), backend=cfg.backend)
    rows = bf.snr_sweep(scfg)
    return {"sinr_sweep.csv": _csv(rows, bf.SWEEP_COLUMNS, scfg, "beamform", cfg)}


HANDLERS = {
    "solve": cmd_solve,
    "validate": cmd_validate,
    "experiment-table": cmd_experiment_table,
    "experiment-gap": cmd_experiment_gap,
    "experiment-estimation": cmd_experiment_estimation,
    "beamform": cmd_beamform,
}


def run(cfg: RunConfig) -> dict[str, Path]:
    """Run one command; artifacts are written only after it fully succeeds."""
    artifacts = HANDLERS[cfg.command](cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, text in artifacts.items():
        path = cfg.out / name
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(text.encode("utf-8"))
        tmp.replace(path)
        written[name] = path
    return written


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_config(args)
        written = run(cfg)
    except Exception as err:  # reported, never silent
        report = {"status": "error", "command": args.command, "error": type(err).__name__, "message": str(err)}
        print(json.dumps(report), file=sys.stderr)
        return 1
    for name, path in written.items():
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
