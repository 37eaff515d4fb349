"""Batch front door: ``freeshape {eigen,optimize,verify,continuity,report,run} CONFIG``.

Configs are JSON with the blocks ``grid``, ``problem``, ``solver``,
``experiment`` and ``output``. Every block is validated before any compute
starts. Exit codes: 0 pass, 1 diagnostic failure (or another package error),
2 invalid config or unreadable input, 3 solver nonconvergence.

The only environment input is ``FREESHAPE_THREADS``, which caps the BLAS and
OpenMP thread pools; it has to be applied before numpy loads, which is why
this module imports the numerical code lazily.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

GRID_KEYS = {"dim", "extents", "counts"}
PROBLEM_KEYS = {"p", "q", "c", "mu", "lambda_c"}
SOLVER_KEYS = {"max_iters", "tol", "seed", "diag_p2q2"}
OUTPUT_KEYS = {"dir"}
TOP_KEYS = {"grid", "problem", "solver", "experiment", "output"}


def _apply_threads() -> None:
    n = os.environ.get("FREESHAPE_THREADS")
    if n:
        for var in THREAD_VARS:
            os.environ[var] = n


@dataclass
class RunConfig:
    grid: object
    p: float
    q: float
    c: float | None
    mu: object  # None, a number or "auto"
    lambda_c: object
    opts: object
    experiment: dict
    out_dir: Path
    base_dir: Path

    def resolve(self, path) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.base_dir / path


def _require_keys(block: dict, allowed: set, name: str):
    from .errors import ConfigInvalid

    if not isinstance(block, dict):
        raise ConfigInvalid(name, "must be a JSON object")
    extra = sorted(set(block) - allowed)
    if extra:
        raise ConfigInvalid(f"{name}.{extra[0]}", "unknown key")


def _number_or_auto(value, key):
    from .errors import ConfigInvalid

    if value is None or value == "auto":
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value < 0:
        raise ConfigInvalid(key, f"must be a nonnegative number or \"auto\", got {value!r}")
    return float(value)


def load_config(path) -> RunConfig:
    """Parse and validate a run config; raises ConfigInvalid naming the bad key."""
    from .diagnostics import ALL
    from .eigensolver import SolverOptions
    from .errors import ConfigInvalid, FreeshapeError
    from .fields import check_exponents
    from .grid import make_grid

    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigInvalid("config", f"{path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigInvalid("config", f"{path} is not valid JSON ({exc.msg})") from None
    _require_keys(raw, TOP_KEYS, "config")
    for key in ("grid", "problem"):
        if key not in raw:
            raise ConfigInvalid(key, "missing block")

    g = raw["grid"]
    _require_keys(g, GRID_KEYS, "grid")
    try:
        grid = make_grid(g["dim"], g["extents"], g["counts"])
    except KeyError as exc:
        raise ConfigInvalid(f"grid.{exc.args[0]}", "missing") from None
    except (FreeshapeError, ValueError, TypeError) as exc:
        raise ConfigInvalid("grid", str(exc)) from None

    s = raw.get("solver", {})
    _require_keys(s, SOLVER_KEYS, "solver")
    try:
        opts = SolverOptions(**s)
    except TypeError as exc:
        raise ConfigInvalid("solver", str(exc)) from None
    if not isinstance(opts.seed, int) or isinstance(opts.seed, bool):
        raise ConfigInvalid("solver.seed", "must be an integer")
    if not (isinstance(opts.max_iters, int) and opts.max_iters > 0):
        raise ConfigInvalid("solver.max_iters", "must be a positive integer")
    if not (isinstance(opts.tol, (int, float)) and opts.tol > 0):
        raise ConfigInvalid("solver.tol", "must be positive")

    pr = raw["problem"]
    _require_keys(pr, PROBLEM_KEYS, "problem")
    for key in ("p", "q"):
        if not isinstance(pr.get(key), (int, float)) or isinstance(pr.get(key), bool):
            raise ConfigInvalid(f"problem.{key}", "must be a number")
    p, q = float(pr["p"]), float(pr["q"])
    try:
        check_exponents(p, q, opts.diag_p2q2)
    except FreeshapeError as exc:
        raise ConfigInvalid("problem.q", str(exc)) from None
    c = pr.get("c")
    if c is not None:
        if not isinstance(c, (int, float)) or isinstance(c, bool) or c <= 0:
            raise ConfigInvalid("problem.c", "must be a positive number")
        if c < grid.cell_volume:
            raise ConfigInvalid("problem.c", "budget is smaller than one cell")
        c = float(c)
    mu = _number_or_auto(pr.get("mu"), "problem.mu")
    lam = _number_or_auto(pr.get("lambda_c"), "problem.lambda_c")

    exp = raw.get("experiment", {})
    if not isinstance(exp, dict):
        raise ConfigInvalid("experiment", "must be a JSON object")
    diags = exp.get("diagnostics", [])
    if not isinstance(diags, list):
        raise ConfigInvalid("experiment.diagnostics", "must be a list")
    for name in diags:
        if name not in ALL:
            raise ConfigInvalid("experiment.diagnostics", f"unknown diagnostic {name!r}")

    out = raw.get("output", {})
    _require_keys(out, OUTPUT_KEYS, "output")
    base_dir = path.resolve().parent
    out_dir = Path(out.get("dir", "out"))
    out_dir = out_dir if out_dir.is_absolute() else base_dir / out_dir

    cfg = RunConfig(grid, p, q, c, mu, lam, opts, exp, out_dir, base_dir)
    _validate_experiment(cfg)
    return cfg


def _validate_experiment(cfg: RunConfig) -> None:
    from .diagnostics import ON_SOLUTION
    from .errors import ConfigInvalid

    exp = cfg.experiment
    needs_solution = any(d in ON_SOLUTION for d in exp.get("diagnostics", []))
    if needs_solution and cfg.c is None:
        raise ConfigInvalid("problem.c", "required by the requested diagnostics")
    if cfg.p == cfg.q and needs_solution:
        raise ConfigInvalid("problem.q", "diagnostic mode p = q = 2 only supports eigen solves")
    mode = exp.get("mode", "constrained")
    if mode not in ("constrained", "penalized"):
        raise ConfigInvalid("experiment.mode", f"must be constrained or penalized, got {mode!r}")
    if "mask" in exp and not cfg.resolve(exp["mask"]).exists():
        raise ConfigInvalid("experiment.mask", f"{exp['mask']} does not exist")
    if "shape" in exp:
        build_shape(cfg, exp["shape"])
    for key in ("radii_cells", "flux_eps_cells"):
        vals = exp.get(key)
        if vals is not None and (not isinstance(vals, list) or not vals
                                 or any(not isinstance(v, (int, float)) or v <= 0 for v in vals)):
            raise ConfigInvalid(f"experiment.{key}", "must be a nonempty list of positive numbers")


def build_shape(cfg: RunConfig, shape: dict):
    """Mask from an inline shape description: full, ball, rect, or a PGM file."""
    from .errors import ConfigInvalid, FreeshapeError
    from .geometry import full_mask, make_ball, make_rect
    from .io import read_mask_pgm

    if not isinstance(shape, dict) or "kind" not in shape:
        raise ConfigInvalid("experiment.shape", "needs a \"kind\"")
    kind = shape["kind"]
    try:
        if kind == "full":
            return full_mask(cfg.grid)
        if kind == "ball":
            return make_ball(cfg.grid, shape["center"], shape["radius"])
        if kind == "rect":
            return make_rect(cfg.grid, shape["lo"], shape["hi"])
        if kind == "file":
            p = cfg.resolve(shape["path"])
            if not p.exists():
                raise ConfigInvalid("experiment.shape.path", f"{p} does not exist")
            return read_mask_pgm(p, cfg.grid)
    except KeyError as exc:
        raise ConfigInvalid(f"experiment.shape.{exc.args[0]}", "missing") from None
    except ConfigInvalid:
        raise
    except (FreeshapeError, ValueError, TypeError) as exc:
        raise ConfigInvalid("experiment.shape", str(exc)) from None
    raise ConfigInvalid("experiment.shape.kind", f"unknown kind {kind!r}")


# -- subcommands ----------------------------------------------------------------------


def _problem_spec(cfg: RunConfig, lambda_c: float = 0.0, mu: float = 0.0):
    from .fbsolver import ProblemSpec

    return ProblemSpec(cfg.p, cfg.q, cfg.c, mu=mu, lambda_c=lambda_c)


def cmd_eigen(cfg: RunConfig, mask_path=None) -> int:
    from .eigensolver import solve_lambda1
    from .geometry import full_mask
    from .io import dumps_json, read_mask_pgm, write_field, write_json, write_mask_pgm

    if mask_path is not None:
        mask = read_mask_pgm(mask_path, cfg.grid)
    elif "shape" in cfg.experiment:
        mask = build_shape(cfg, cfg.experiment["shape"])
    else:
        mask = full_mask(cfg.grid)
    res = solve_lambda1(mask, cfg.p, cfg.q, cfg.opts)
    out = {"lambda": res.lam, "iterations": res.iterations, "degenerate": res.degenerate,
           "grad_norm": res.grad_norm, "amplitude": res.amplitude, "cells": mask.count}
    write_json(cfg.out_dir / "eigen.json", out)
    write_field(cfg.out_dir / "eigen_u", res.u, meta={"lambda": res.lam})
    write_mask_pgm(cfg.out_dir / "eigen_mask.pgm", mask)
    sys.stdout.write(dumps_json(out))
    return 0


def optimize(cfg: RunConfig):
    """Constrained (or penalized) solve per the config; returns (FbResult, record)."""
    from .fbsolver import (
        minimize_constrained,
        minimize_penalized,
        mu_star_selfconsistent,
    )

    mode = cfg.experiment.get("mode", "constrained")
    record = {"mode": mode, "p": cfg.p, "q": cfg.q, "c": cfg.c}
    if mode == "constrained":
        res = minimize_constrained(_problem_spec(cfg), cfg.grid, opts=cfg.opts)
    else:
        if cfg.lambda_c in (None, "auto"):
            cons = minimize_constrained(_problem_spec(cfg), cfg.grid, opts=cfg.opts)
            lam, init = cons.lambda_c, cons.u
        else:
            lam, init = cfg.lambda_c, None
        spec = _problem_spec(cfg, lambda_c=lam)
        if cfg.mu in (None, "auto"):
            if init is None:
                init = minimize_constrained(_problem_spec(cfg), cfg.grid, opts=cfg.opts).u
            run = mu_star_selfconsistent(spec, cfg.grid, init, cfg.opts)
            res = run.result
            record.update(mu_star=run.mu_star, mu=run.mu)
        else:
            res = minimize_penalized(spec.with_(mu=cfg.mu), cfg.grid, init=init, opts=cfg.opts)
            record.update(mu=cfg.mu)
        record["lambda_c_input"] = lam
    record.update(lambda_c=res.lambda_c, support_volume=res.support_volume, J_value=res.J_value,
                  outer_iterations=res.outer_iterations)
    return res, record


def _write_solution(cfg: RunConfig, res, record) -> None:
    from .fbsolver import SUPPORT_TAU
    from .geometry import support_mask
    from .io import (
        write_field,
        write_field_csv,
        write_json,
        write_mask_csv,
        write_mask_pgm,
    )

    out = cfg.out_dir
    write_field(out / "solution", res.u, meta={"lambda_c": res.lambda_c})
    mask = support_mask(res.u, SUPPORT_TAU)
    write_mask_pgm(out / "solution_mask.pgm", mask)
    write_mask_csv(out / "solution_mask.csv", mask)
    if cfg.experiment.get("field_csv", False):
        write_field_csv(out / "solution.csv", res.u)
    write_json(out / "optimize.json", record)


def cmd_optimize(cfg: RunConfig) -> int:
    from .io import dumps_json

    res, record = optimize(cfg)
    _write_solution(cfg, res, record)
    sys.stdout.write(dumps_json(record))
    return 0


def _load_solution(cfg: RunConfig, field_path):
    from .diagnostics import Solution
    from .errors import ConfigInvalid
    from .io import read_field, read_json

    base = Path(field_path) if field_path else cfg.out_dir / "solution"
    u = read_field(base)
    if u.grid != cfg.grid:
        raise ConfigInvalid("grid", f"stored field {base} lives on a different grid")
    side = read_json(Path(base).with_suffix(".json"))
    lam = side.get("meta", {}).get("lambda_c")
    if isinstance(cfg.lambda_c, float):
        lam = cfg.lambda_c
    if lam is None:
        raise ConfigInvalid("problem.lambda_c", "not given and not stored with the field")
    return Solution(u, float(lam))


def _run_diagnostics(cfg: RunConfig, names, solution) -> list[dict]:
    from .diagnostics import ALL, Battery
    from .io import write_curve, write_verdict

    battery = Battery(cfg.grid, cfg.p, cfg.q, cfg.c, cfg.opts, cfg.experiment, solution)
    verdicts = []
    for name in names:
        outcome = ALL[name](battery)
        write_verdict(cfg.out_dir / "verdicts", outcome.verdict)
        for fname, header, rows in outcome.curves:
            write_curve(cfg.out_dir / "curves" / fname, header, rows)
        status = "PASS" if outcome.verdict["pass"] else "FAIL"
        print(f"{status} {name}", file=sys.stderr)
        verdicts.append(outcome.verdict)
    return verdicts


def cmd_verify(cfg: RunConfig, field_path=None) -> int:
    from .diagnostics import ON_SOLUTION

    names = cfg.experiment.get("diagnostics", [])
    solution = None
    if any(n in ON_SOLUTION for n in names):
        solution = _load_solution(cfg, field_path)
    verdicts = _run_diagnostics(cfg, names, solution)
    return 0 if all(v["pass"] for v in verdicts) else 1


def cmd_continuity(cfg: RunConfig) -> int:
    verdicts = _run_diagnostics(cfg, ["continuity"], None)
    return 0 if verdicts[0]["pass"] else 1


def summarize(directory) -> dict:
    from .io import read_json

    directory = Path(directory)
    vdir = directory / "verdicts" if (directory / "verdicts").is_dir() else directory
    verdicts = {}
    for f in sorted(vdir.glob("*.json")) if vdir.is_dir() else []:
        try:
            v = read_json(f)
        except (OSError, json.JSONDecodeError):
            continue
        if isinstance(v, dict) and {"name", "theorem", "pass"} <= set(v):
            verdicts[v["name"]] = {"pass": bool(v["pass"]), "theorem": v["theorem"]}
    failed = sorted(n for n, v in verdicts.items() if not v["pass"])
    return {"count": len(verdicts), "passed": len(verdicts) - len(failed), "failed": failed,
            "verdicts": verdicts}


def cmd_report(directory) -> int:
    from .io import dumps_json, write_json

    summary = summarize(directory)
    write_json(Path(directory) / "summary.json", summary)
    sys.stdout.write(dumps_json(summary))
    return 0 if not summary["failed"] else 1


def cmd_run(cfg: RunConfig) -> int:
    from .diagnostics import ON_SOLUTION, Solution

    names = cfg.experiment.get("diagnostics", [])
    solution = None
    if cfg.c is not None and any(n in ON_SOLUTION for n in names):
        res, record = optimize(cfg)
        _write_solution(cfg, res, record)
        solution = Solution(res.u, res.lambda_c)
    verdicts = _run_diagnostics(cfg, names, solution)
    cmd_report(cfg.out_dir)
    return 0 if all(v["pass"] for v in verdicts) else 1


# -- entry point ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="freeshape", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    e = sub.add_parser("eigen", help="first eigenvalue on a mask")
    e.add_argument("config")
    e.add_argument("--mask", help="PGM mask file (default: experiment.shape, else all of D)")
    sub.add_parser("optimize", help="constrained or penalized shape solve").add_argument("config")
    v = sub.add_parser("verify", help="diagnostic battery on a stored solution")
    v.add_argument("config")
    v.add_argument("--field", help="field base path (default: <output>/solution)")
    sub.add_parser("continuity", help="spectral continuity experiment").add_argument("config")
    sub.add_parser("report", help="aggregate verdict JSON files").add_argument("directory")
    sub.add_parser("run", help="optimize, verify and report").add_argument("config")
    return ap


def main(argv=None) -> int:
    _apply_threads()
    args = build_parser().parse_args(argv)
    from .errors import ChecksumError, ConfigInvalid, FreeshapeError, NonConvergence

    try:
        if args.command == "report":
            return cmd_report(args.directory)
        cfg = load_config(args.config)
        if args.command == "eigen":
            return cmd_eigen(cfg, args.mask)
        if args.command == "optimize":
            return cmd_optimize(cfg)
        if args.command == "verify":
            return cmd_verify(cfg, args.field)
        if args.command == "continuity":
            return cmd_continuity(cfg)
        return cmd_run(cfg)
    except (ConfigInvalid, ChecksumError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except NonConvergence as exc:
        print(f"NonConvergence: {exc}", file=sys.stderr)
        return 3
    except FreeshapeError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
