"""Batch command-line front end.

Subcommands:
  solve <config.json>     run the inclusion solver, write convergence CSV
                          and a JSON summary report
  validate <suite>        run a fixed-seed invariant suite
                          (geometry | gamma | ito | representation)
  gamma-norm <op.json>    Gaussian-sum norm of a finite-rank operator

Exit codes: 0 success, 1 validation-suite failure, 2 input error,
3 numerical non-convergence.  Set BSEI_THREADS to pin the BLAS thread
count before any numerics load.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_INCLUSION_THRESHOLD = 1e-8
_EQUATION_THRESHOLD = 0.05


def _fmt(x) -> str:
    return f"{float(x):.17g}"


class _Schema:
    """Tiny strict-schema walker: unknown keys rejected, fields validated."""

    def __init__(self, data: dict, context: str = ""):
        if not isinstance(data, dict):
            from .errors import ConfigError
            raise ConfigError(f"expected an object at {context or 'top level'}",
                              field=context)
        self.data = dict(data)
        self.context = context

    def take(self, name: str, check=None, required: bool = True, default=None):
        from .errors import ConfigError
        field = f"{self.context}.{name}" if self.context else name
        if name not in self.data:
            if required:
                raise ConfigError(f"missing field {field!r}", field=field)
            return default
        value = self.data.pop(name)
        if check is not None:
            try:
                value = check(value)
            except ConfigError:
                raise
            except Exception as exc:
                raise ConfigError(f"invalid value for {field!r}: {exc}",
                                  field=field) from exc
        return value

    def finish(self):
        from .errors import ConfigError
        if self.data:
            stray = sorted(self.data)[0]
            field = f"{self.context}.{stray}" if self.context else stray
            raise ConfigError(f"unknown field {field!r}", field=field)


def _number(lo=None, hi=None, lo_open=False, integer=False):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValueError("not a number")
        x = float(v)
        if integer and x != int(x):
            raise ValueError("not an integer")
        if lo is not None and (x <= lo if lo_open else x < lo):
            raise ValueError(f"must be {'>' if lo_open else '>='} {lo}")
        if hi is not None and x > hi:
            raise ValueError(f"must be <= {hi}")
        return int(x) if integer else x
    return check


def _matrix(dim):
    import numpy as np

    def check(v):
        m = np.asarray(v, dtype=float)
        if m.shape != (dim, dim) or not np.all(np.isfinite(m)):
            raise ValueError(f"need a finite {dim}x{dim} matrix")
        return m
    return check


def _vector(dim=None):
    import numpy as np

    def check(v):
        a = np.asarray(v, dtype=float)
        if a.ndim != 1 or not np.all(np.isfinite(a)):
            raise ValueError("need a finite vector")
        if dim is not None and a.size != dim:
            raise ValueError(f"need length {dim}")
        return a
    return check


def load_config(path: str):
    """Parse and validate a run configuration; returns (problem, config, outputs)."""
    import numpy as np

    from .errors import ConfigError
    from .geometry import SetValuedSpec
    from .solver import BSEIProblem, SolverConfig, TerminalSpec

    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", field="config")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", field="config")

    top = _Schema(raw)
    if top.take("schema", _number(integer=True)) != 1:
        raise ConfigError("unsupported schema version (expected 1)", field="schema")

    prob = _Schema(top.take("problem", dict), "problem")
    dim = prob.take("dim", _number(lo=1, integer=True))
    horizon = prob.take("horizon", _number(lo=0, lo_open=True))
    p = prob.take("p", _number(lo=1, hi=8, lo_open=True))
    generator = prob.take("generator", _matrix(dim))

    term = _Schema(prob.take("terminal", dict), "problem.terminal")
    kind = term.take("kind", str)
    coeff = term.take("coeff", _vector(dim))
    term.finish()
    try:
        terminal = TerminalSpec(kind, coeff)
    except ValueError as exc:
        raise ConfigError(str(exc), field="problem.terminal.kind")

    gsch = _Schema(prob.take("g", dict), "problem.g")
    shape = gsch.take("shape", str)
    a_y = gsch.take("a_y", _matrix(dim))
    a_z = gsch.take("a_z", _matrix(dim))
    lip = gsch.take("lipschitz_k", _number(lo=0))
    c0 = gsch.take("c0", _vector(dim), required=False)
    radius = gsch.take("radius", _number(lo=0), required=False, default=0.0)
    offsets = gsch.take("offsets", None, required=False)
    gsch.finish()
    try:
        gspec = SetValuedSpec(
            dim=dim, shape=shape, a_y=a_y, a_z=a_z, lipschitz_k=lip, c0=c0,
            radius=radius,
            offsets=None if offsets is None else np.asarray(offsets, dtype=float))
    except ValueError as exc:
        raise ConfigError(str(exc), field="problem.g")
    prob.finish()
    try:
        problem = BSEIProblem(horizon=horizon, exponent=p, dim=dim,
                              generator=generator, terminal=terminal, gspec=gspec)
    except ValueError as exc:
        raise ConfigError(str(exc), field="problem")

    num = _Schema(top.take("numerics", dict), "numerics")
    config = SolverConfig(
        steps_per_window=num.take("steps_per_window", _number(4, 10_000, integer=True)),
        n_paths=num.take("paths", _number(100, 10_000_000, integer=True)),
        seed=num.take("seed", _number(integer=True)),
        basis_degree=num.take("basis_degree", _number(0, 8, integer=True),
                              required=False, default=2),
        c_pe=num.take("c_pe", _number(lo=0, lo_open=True), required=False, default=1.0),
        tol=num.take("tol", _number(lo=0, lo_open=True), required=False, default=1e-3),
        n_max=num.take("n_max", _number(1, 10_000, integer=True),
                       required=False, default=25),
        min_iter=num.take("min_iter", _number(1, 10_000, integer=True),
                          required=False, default=2),
        y_features=bool(num.take("y_features", None, required=False,
                                 default=False)),
    )
    num.finish()

    out = _Schema(top.take("outputs", dict), "outputs")
    outputs = {
        "report_path": out.take("report_path", str),
        "convergence_csv_path": out.take("convergence_csv_path", str),
        "emit_plot_data": bool(out.take("emit_plot_data", None,
                                        required=False, default=False)),
    }
    out.finish()
    top.finish()
    return problem, config, outputs


def write_convergence_csv(path: str, windows) -> None:
    lines = ["window_index,iteration,dY_norm,dZ_norm,dg_norm,ratio,eps_n"]
    for w in windows:
        for rec in w.iterations:
            ratio = _fmt(rec.ratio) if rec.ratio is not None else "nan"
            lines.append(",".join([
                str(w.index), str(rec.iteration), _fmt(rec.dy), _fmt(rec.dz),
                _fmt(rec.dg), ratio, _fmt(rec.eps)]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _summary(report, residuals=None, converged=None) -> dict:
    sched = report.schedule
    out = {
        "schedule": {
            "beta": sched.beta,
            "delta": sched.delta,
            "gamma_s": sched.gamma_s,
            "c_pe": sched.c_pe,
            "lipschitz": sched.lipschitz,
            "n_windows": sched.n_windows,
            "window_length": sched.window_length,
        },
        "converged": report.converged if converged is None else converged,
        "seed": report.seed,
        "paths": report.n_paths,
        "steps_total": report.n_steps_total,
        "basis_degree": report.basis_degree,
        "runtime_seconds": report.runtime_seconds,
        "ridge_events": report.ridge_events,
        "iterations_per_window": [len(w.iterations) for w in report.windows],
        "inclusion_residual": report.inclusion_residual,
        "equation_residual_max": report.equation_residual_max,
    }
    if residuals is not None:
        out["y_continuity_modulus"] = residuals.y_modulus
        out["z_check"] = [
            {"node": zc.node, "discrepancy": zc.discrepancy, "z_norm": zc.z_norm}
            for zc in (residuals.z_checks or [])]
    return out


def _write_plot_csv(path: str, sol, residuals) -> None:
    import numpy as np
    nodes = sol.y.grid.nodes
    y_mean = sol.y.values.mean(axis=1)
    z_mean = sol.z.values.mean(axis=1)
    d = y_mean.shape[1]
    header = (["t"] + [f"y_mean_{i}" for i in range(d)]
              + [f"z_mean_{i}" for i in range(d)] + ["equation_residual"])
    lines = [",".join(header)]
    for k in range(len(nodes)):
        row = ([_fmt(nodes[k])] + [_fmt(v) for v in y_mean[k]]
               + [_fmt(v) for v in z_mean[k]] + [_fmt(residuals.equation[k])])
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_solve(config_path: str) -> int:
    from .errors import ConfigError, NonConvergenceError
    from .paths import simulate_brownian
    from .semigroup import SemigroupCache
    from .solver import solve, verify_solution

    try:
        problem, config, outputs = load_config(config_path)
    except ConfigError as exc:
        print(f"config error [{exc.field}]: {exc}", file=sys.stderr)
        return 2

    try:
        solution, report = solve(problem, config)
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        if exc.report is not None and exc.report.windows:
            write_convergence_csv(outputs["convergence_csv_path"],
                                  exc.report.windows)
            with open(outputs["report_path"], "w", encoding="utf-8") as fh:
                json.dump(_summary(exc.report, converged=False), fh, indent=2)
                fh.write("\n")
        return 3

    grid = solution.y.grid
    bm = simulate_brownian(grid, config.n_paths, config.seed)
    cache = SemigroupCache.build(problem.generator, grid.dt, grid.n_steps)
    # the explicit-Z rebuild costs one regression chain per grid node and
    # source, quadratic in the step count; skip it on very fine grids
    z_nodes = min(17, grid.n_steps) if grid.n_steps <= 400 else 0
    residuals = verify_solution(solution, problem, cache, bm,
                                basis_degree=config.basis_degree,
                                z_check_nodes=z_nodes)
    write_convergence_csv(outputs["convergence_csv_path"], report.windows)
    summary = _summary(report, residuals)
    with open(outputs["report_path"], "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    if outputs["emit_plot_data"]:
        _write_plot_csv(outputs["report_path"] + ".plot.csv", solution, residuals)

    ok = (report.converged
          and report.inclusion_residual <= _INCLUSION_THRESHOLD
          and report.equation_residual_max <= _EQUATION_THRESHOLD)
    print(json.dumps({"converged": report.converged,
                      "inclusion_residual": report.inclusion_residual,
                      "equation_residual_max": report.equation_residual_max,
                      "ok": ok}))
    return 0 if ok else 3


def cmd_validate(suite: str, seed: int = 2024) -> int:
    from .suites import SUITE_NAMES, run_suite

    if suite not in SUITE_NAMES:
        print(f"unknown suite {suite!r}; choose from {', '.join(SUITE_NAMES)}",
              file=sys.stderr)
        return 2
    result = run_suite(suite, seed=seed)
    print(json.dumps(result, indent=2))
    return 0 if result["passed"] else 1


def cmd_gamma_norm(path: str) -> int:
    import numpy as np

    from .errors import ConfigError
    from .gamma import FiniteRankOperator, gamma_norm

    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error [operator]: {exc}", file=sys.stderr)
        return 2
    try:
        top = _Schema(raw)
        window = top.take("window", None)
        terms = top.take("terms", None)
        n_gauss = top.take("n_gauss", _number(1, integer=True),
                           required=False, default=100_000)
        seed = top.take("seed", _number(integer=True), required=False, default=0)
        top.finish()
        h = np.array([t["h"] for t in terms], dtype=float)
        e = np.array([t["e"] for t in terms], dtype=float)
        op = FiniteRankOperator((window[0], window[1]), h, e)
    except (ConfigError, KeyError, TypeError, ValueError, IndexError) as exc:
        print(f"config error [operator]: {exc}", file=sys.stderr)
        return 2
    est = gamma_norm(op, n_gauss, seed)
    print(json.dumps({"monte_carlo": est.monte_carlo, "exact": est.exact,
                      "standard_error": est.standard_error,
                      "dropped_terms": est.dropped_terms}))
    return 0


def main(argv=None) -> int:
    threads = os.environ.get("BSEI_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)

    parser = argparse.ArgumentParser(
        prog="bsei",
        description="Backward stochastic evolution inclusion solver and "
                    "validation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    p_solve = sub.add_parser("solve", help="run the solver on a JSON config")
    p_solve.add_argument("config", help="path to the run configuration")
    p_val = sub.add_parser("validate", help="run a fixed-seed invariant suite")
    p_val.add_argument("suite", help="geometry | gamma | ito | representation")
    p_val.add_argument("--seed", type=int, default=2024)
    p_gn = sub.add_parser("gamma-norm",
                          help="Gaussian-sum norm of a finite-rank operator")
    p_gn.add_argument("operator", help="path to the operator description")

    args = parser.parse_args(argv)
    if args.command == "solve":
        return cmd_solve(args.config)
    if args.command == "validate":
        return cmd_validate(args.suite, seed=args.seed)
    return cmd_gamma_norm(args.operator)


if __name__ == "__main__":
    sys.exit(main())
