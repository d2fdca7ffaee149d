"""Command line entry point: ``curlsteklov run <config.json> [--out DIR] [--quiet]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O
error. Every run writes ``manifest.json`` into the output directory; on a
numerical failure the manifest names the error type and the module raising it.
Set ``CURLSTEKLOV_NUM_THREADS`` to cap the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
import warnings
from pathlib import Path

import numpy as np

from . import io
from .assembly import (
    ProblemParams,
    TraceField,
    assemble_forms,
    build_constraint_basis,
    form_matrix,
    surface_rotated_gradient,
    tangential_trace,
)
from .calderon import (
    DualTraceData,
    calderon_apply,
    direct_solve,
    expand_trace,
    solve_dual,
    solve_neumann_spectral,
    solve_rotated_dirichlet,
    solve_tangential_dirichlet,
    trace_norm,
)
from .config import RunConfig, load_config
from .convergence import convergence_study
from .deflation import deflated_steklov_spectrum, dirichlet_modes_below, lift, verify_gap
from .errors import ConfigError, ConvergenceStudyError, GmshParseError, SteklovError
from .mesh import extract_boundary, generate_ball_mesh, generate_cube_mesh, mesh_stats
from .spectral import (
    aux_spectra,
    basis_diagnostics,
    select_eta,
    steklov_spectrum,
    zero_in_sigma_check,
)

log = logging.getLogger("curlsteklov")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
THREADS_ENV = "CURLSTEKLOV_NUM_THREADS"
N_VTK_MODES = 6
PAIRING_SEED = 12345


# ------------------------------------------------------------------- helpers


def _plain(obj):
    """Convert numpy scalars/arrays and tuples for ``json.dumps``."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def _write_json(path, data):
    io._atomic_write(path, json.dumps(_plain(data), indent=2, sort_keys=True) + "\n")


def build_mesh(domain: dict, base_dir: Path):
    kind = domain["kind"]
    if kind == "cube":
        return generate_cube_mesh(domain["n"], domain["side"])
    if kind == "ball":
        return generate_ball_mesh(domain["refinement"])
    path = Path(domain["path"])
    if not path.is_absolute():
        path = base_dir / path
    return io.load_gmsh(path)


class Problem:
    """Mesh, boundary, forms and constrained space for one run."""

    def __init__(self, cfg: RunConfig):
        self.mesh = build_mesh(cfg.domain, cfg.base_dir)
        self.boundary = extract_boundary(self.mesh)
        self.forms = assemble_forms(self.mesh, self.boundary)
        self.space = build_constraint_basis(self.mesh, self.boundary)
        self.params = ProblemParams(cfg.alpha, cfg.theta, cfg.eta)


def _trace_data(cfg: RunConfig, prob: Problem, basis=None) -> TraceField:
    d = cfg.data
    space = prob.space
    if "basis_index" in d:
        if basis is None:
            raise ConfigError("basis_index data needs a Steklov basis")
        n = d["basis_index"]
        if n > basis.size:
            raise ConfigError(f"basis_index {n} exceeds basis size {basis.size}")
        return basis.trace(n - 1)
    if "rotated_gradient" in d:
        psi = d["rotated_gradient"]["psi"]
        x = prob.mesh.vertices[prob.boundary.vertices]
        f, _ = surface_rotated_gradient(space, prob.forms, psi(x[:, 0], x[:, 1], x[:, 2]))
        return f
    if "csv" in d:
        path = Path(d["csv"])
        if not path.is_absolute():
            path = cfg.base_dir / path
        header, rows = io.read_csv(path)
        if header[:4] != ["vertex", "fx", "fy", "fz"]:
            raise ConfigError(f"{path}: expected columns vertex,fx,fy,fz")
        vals = {int(r[0]): [float(v) for v in r[1:4]] for r in rows}
        missing = [int(v) for v in prob.boundary.vertices if int(v) not in vals]
        if missing:
            raise ConfigError(f"{path}: no data for boundary vertices {missing[:5]}")
        amb = np.array([vals[int(v)] for v in prob.boundary.vertices])
        return TraceField.from_ambient(space, amb)
    raise ConfigError(f"task {cfg.task!r} needs trace data (basis_index, rotated_gradient or csv)")


def _field_rows(prob: Problem, u):
    amb = prob.space.to_ambient(u)
    return [[i, *amb[i]] for i in range(prob.mesh.n_vertices)]


def _trace_rows(prob: Problem, f: TraceField):
    amb = f.ambient()
    return [[int(v), *amb[j]] for j, v in enumerate(prob.boundary.vertices)]


def _spectrum_rows(basis):
    return [
        [n + 1, basis.lambdas[n], basis.mu[n], basis.residuals[n]] for n in range(basis.size)
    ]


def _basis_summary(basis) -> dict:
    diag = basis_diagnostics(basis)
    return {
        "eta": basis.eta,
        "n_eigenvalues": basis.size,
        "lambda_max": float(basis.lambdas[0]),
        "lambda_min": float(basis.lambdas[-1]),
        "all_negative": bool(np.all(basis.lambdas < 0)),
        "multiplicities": [[v, d] for v, d in basis.multiplicities()],
        **diag,
    }


# --------------------------------------------------------------------- tasks


def task_steklov(cfg, prob, out):
    basis = steklov_spectrum(prob.space, prob.forms, prob.params, cfg.k)
    out.csv("spectrum.csv", ["n", "lambda", "mu", "residual"], _spectrum_rows(basis))
    if "vtk" in cfg.formats:
        m = min(N_VTK_MODES, basis.size)
        out.vtk("modes.vtk", prob.mesh, {f"mode_{n + 1}": prob.space.to_ambient(basis.modes[:, n])
                                         for n in range(m)})
    return {"steklov": _basis_summary(basis)}


def task_aux(cfg, prob, out):
    tol = cfg.tolerances
    aux = aux_spectra(prob.space, prob.forms, cfg.theta, tol["aux_k"], tol["theta_pen"], tol["div_tol"])
    d, n, m = aux.dirichlet, aux.neumann_laplacian, aux.magnetic
    out.csv("dirichlet.csv", ["n", "value"], [[i + 1, v] for i, v in enumerate(d.values)])
    out.csv("neumann.csv", ["n", "value"], [[i + 1, v] for i, v in enumerate(n.values)])
    out.csv("magnetic.csv", ["n", "value", "div_norm"],
            [[i + 1, v, dv] for i, (v, dv) in enumerate(zip(m.values, m.div_norms))])
    return {
        "aux": {
            "dirichlet": {"values": d.values, "multiplicities": [[v, k] for v, k in d.multiplicities()]},
            "neumann_laplacian": {"values": n.values},
            "magnetic": {"values": m.values, "n_candidates": m.n_candidates,
                         "theta_pen": m.theta_pen, "div_tol": m.div_tol},
        }
    }


def _neumann_direct(prob, params, f):
    # the zero-shift problem; for alpha > 0 it is indefinite but solvable off Sigma
    return direct_solve(prob.space, prob.forms, params.with_eta(0.0), f,
                        allow_indefinite=params.alpha > 0)


def task_solve_neumann(cfg, prob, out):
    basis = steklov_spectrum(prob.space, prob.forms, prob.params)
    f = _trace_data(cfg, prob, basis)
    e = expand_trace(basis, f)
    u = solve_neumann_spectral(basis, e)
    ud = _neumann_direct(prob, basis.params, f)
    S = basis.S
    diff = u - ud
    rel = float(np.sqrt(diff @ (S @ diff)) / max(np.sqrt(ud @ (S @ ud)), np.finfo(float).tiny))
    out.csv("solution.csv", ["vertex", "ux", "uy", "uz"], _field_rows(prob, u))
    out.csv("expansion.csv", ["n", "lambda", "c"],
            [[i + 1, basis.lambdas[i], c] for i, c in enumerate(e.coefficients)])
    if "vtk" in cfg.formats:
        out.vtk("solution.vtk", prob.mesh, {"u": prob.space.to_ambient(u)})
    return {"solve_neumann": {
        "eta": basis.eta,
        "relative_difference_direct": rel,
        "trace_norm_0": trace_norm(basis, e, 0.0),
        "trace_norm_half": trace_norm(basis, e, 0.5),
        "trace_norm_minus_half": trace_norm(basis, e, -0.5),
    }}


def task_solve_dirichlet(cfg, prob, out):
    basis = steklov_spectrum(prob.space, prob.forms, prob.params)
    f = _trace_data(cfg, prob, basis)
    mode = cfg.data.get("mode", "tangential")
    if mode == "rotated":
        u = solve_rotated_dirichlet(basis, f)
        got = tangential_trace(prob.space, u).rotate()
    else:
        u = solve_tangential_dirichlet(basis, f)
        got = tangential_trace(prob.space, u)
    err = np.linalg.norm(got.flat - f.flat) / max(np.linalg.norm(f.flat), np.finfo(float).tiny)
    S0 = form_matrix(prob.space, prob.forms, basis.params.with_eta(0.0))
    interior = np.abs((S0 @ u)[prob.space.interior]).max() if prob.space.n_interior else 0.0
    out.csv("solution.csv", ["vertex", "ux", "uy", "uz"], _field_rows(prob, u))
    if "vtk" in cfg.formats:
        out.vtk("solution.vtk", prob.mesh, {"u": prob.space.to_ambient(u)})
    return {"solve_dirichlet": {
        "mode": mode, "eta": basis.eta, "trace_error": float(err),
        "interior_residual": float(interior),
    }}


def task_calderon(cfg, prob, out):
    basis = steklov_spectrum(prob.space, prob.forms, prob.params)
    f = _trace_data(cfg, prob, basis)
    e = expand_trace(basis, f)
    c = calderon_apply(basis, e)
    amb = c.ambient()
    normal_part = float(np.abs(np.einsum("ij,ij->i", amb, prob.boundary.normals)).max())
    out.csv("calderon.csv", ["vertex", "cx", "cy", "cz"], _trace_rows(prob, c))
    out.csv("expansion.csv", ["n", "lambda", "c"],
            [[i + 1, basis.lambdas[i], v] for i, v in enumerate(e.coefficients)])
    return {"calderon": {
        "eta": basis.eta,
        "max_normal_component": normal_part,
        "data_norm_0": trace_norm(basis, e, 0.0),
        "image_norm_0": trace_norm(basis, expand_trace(basis, c), 0.0),
        "image_norm_half": trace_norm(basis, expand_trace(basis, c), 0.5),
    }}


def task_dual_solve(cfg, prob, out):
    basis = steklov_spectrum(prob.space, prob.forms, prob.params)
    d = cfg.data
    if "coefficients" in d:
        c = np.asarray(d["coefficients"], dtype=float)
        if len(c) > basis.size:
            raise ConfigError(f"{len(c)} coefficients for a basis of size {basis.size}")
        c = np.pad(c, (0, basis.size - len(c)))
    elif "basis_index" in d:
        c = np.zeros(basis.size)
        if d["basis_index"] > basis.size:
            raise ConfigError(f"basis_index {d['basis_index']} exceeds basis size {basis.size}")
        c[d["basis_index"] - 1] = 1.0
    else:
        c = expand_trace(basis, _trace_data(cfg, prob, basis)).coefficients
    F = DualTraceData(c, basis)
    u = solve_dual(basis, F)
    # pairing identity <u, phi>^0 = -<F, phi> on deterministic random fields
    rng = np.random.default_rng(PAIRING_SEED)
    S0 = form_matrix(prob.space, prob.forms, basis.params.with_eta(0.0))
    worst = 0.0
    for _ in range(50):
        phi = rng.standard_normal(prob.space.n_dofs)
        lhs = float(u @ (S0 @ phi))
        rhs = -F.pair(tangential_trace(prob.space, phi))
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), abs(lhs), np.finfo(float).tiny))
    out.csv("solution.csv", ["vertex", "ux", "uy", "uz"], _field_rows(prob, u))
    return {"dual_solve": {
        "eta": basis.eta,
        "pairing_max_relative_error": worst,
        "dual_norm_minus_half": trace_norm(basis, c, -0.5),
    }}


def task_deflate(cfg, prob, out):
    space, forms = prob.space, prob.forms
    try:
        select_eta(space, forms, prob.params.with_eta(0.0))
        undeflated = True
    except SteklovError:
        undeflated = False
    dfl = dirichlet_modes_below(space, forms, cfg.alpha, cfg.theta, cfg.tolerances["k_max"])
    basis, sub = deflated_steklov_spectrum(space, forms, prob.params, dfl, cfg.k)
    gap = verify_gap(sub, forms, dfl, cfg.alpha, cfg.theta)
    out.csv("spectrum.csv", ["n", "lambda", "mu", "residual"], _spectrum_rows(basis))
    if "vtk" in cfg.formats:
        m = min(N_VTK_MODES, basis.size)
        out.vtk("modes.vtk", prob.mesh, {f"mode_{n + 1}": space.to_ambient(lift(sub, basis.modes[:, n]))
                                         for n in range(m)})
    return {"deflation": {
        "n": dfl.dim,
        "A_k": dfl.values,
        "eta": basis.eta,
        "gap_estimate": gap,
        "undeflated_coercive": undeflated,
        "dim_V": dfl.dim,
        "dim_V_perp": sub.n_dofs,
        "dim_total": space.n_dofs,
        "steklov": _basis_summary(basis),
    }}


def task_converge(cfg, prob, out):
    c = cfg.converge
    tables = convergence_study(cfg.domain, c["levels"], c["quantities"],
                               ProblemParams(cfg.alpha, cfg.theta, cfg.eta), c["exact"], c["psi"])
    rows = []
    summary = {}
    for t in tables:
        for r in t.levels:
            rows.append([t.quantity, r.level, r.h, r.value,
                         "" if r.error is None else r.error,
                         "" if r.order is None else r.order,
                         "" if r.richardson_order is None else r.richardson_order,
                         t.reliable])
        summary[t.quantity] = {
            "final_value": t.levels[-1].value,
            "final_relative_error": t.final_relative_error,
            "final_order": t.final_order,
            "richardson_order": t.levels[-1].richardson_order,
            "extrapolated": t.extrapolated,
            "reliable": t.reliable,
            "notes": t.notes,
        }
    out.csv("convergence.csv",
            ["quantity", "level", "h", "value", "error", "order", "richardson_order", "reliable"], rows)
    return {"convergence": summary}


def task_sigma_check(cfg, prob, out):
    tol = cfg.tolerances
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        aux = aux_spectra(prob.space, prob.forms, cfg.theta, tol["aux_k"], tol["theta_pen"], tol["div_tol"])
    res = zero_in_sigma_check(cfg.alpha, cfg.theta, aux, tol["sigma_tol"])
    res["n_magnetic"] = len(aux.magnetic.values)
    return {"sigma_check": res}


TASKS = {
    "steklov": task_steklov,
    "aux-spectra": task_aux,
    "solve-neumann": task_solve_neumann,
    "solve-dirichlet": task_solve_dirichlet,
    "calderon": task_calderon,
    "dual-solve": task_dual_solve,
    "deflate": task_deflate,
    "converge": task_converge,
    "sigma-check": task_sigma_check,
}


# ------------------------------------------------------------------- driver


class Output:
    def __init__(self, directory: Path, formats):
        self.dir = Path(directory)
        self.formats = formats
        self.artifacts = []

    def csv(self, name, header, rows):
        if "csv" in self.formats:
            io.write_csv(self.dir / name, header, rows)
            self.artifacts.append(name)

    def vtk(self, name, mesh, vectors):
        io.write_vtk(self.dir / name, mesh, point_vectors=vectors)
        self.artifacts.append(name)


def _origin(exc) -> str:
    tb = traceback.extract_tb(exc.__traceback__)
    return Path(tb[-1].filename).stem if tb else "?"


def execute(cfg: RunConfig, out_dir=None) -> tuple[int, dict]:
    """Run one configuration; returns the exit code and the manifest."""
    out = Output(Path(out_dir) if out_dir is not None else cfg.base_dir / cfg.out_dir, cfg.formats)
    manifest = {"task": cfg.task, "domain": cfg.domain,
                "params": {"alpha": cfg.alpha, "theta": cfg.theta,
                           "eta": "auto" if cfg.eta is None else cfg.eta}}
    code = EXIT_OK
    try:
        prob = Problem(cfg)
        manifest["mesh"] = mesh_stats(prob.mesh)
        manifest["dofs"] = {"interior": prob.space.n_interior, "boundary": prob.space.n_boundary}
        if cfg.dump_matrices:
            mats = dict(prob.forms.as_dict(), N=prob.space.N)
            io.dump_matrix_market(out.dir / "matrices", mats)
            out.artifacts += [f"matrices/{k}.mtx" for k in mats]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            manifest["results"] = TASKS[cfg.task](cfg, prob, out)
        if caught:
            manifest["warnings"] = sorted({str(w.message) for w in caught})
        manifest["status"] = "ok"
    except (ConfigError, ConvergenceStudyError) as exc:
        code = EXIT_CONFIG
        manifest["status"] = "error"
        manifest["error"] = {"type": type(exc).__name__, "module": _origin(exc), "message": str(exc)}
    except (GmshParseError, OSError) as exc:
        code = EXIT_IO
        manifest["status"] = "error"
        manifest["error"] = {"type": type(exc).__name__, "module": _origin(exc), "message": str(exc)}
    except (SteklovError, np.linalg.LinAlgError, ArithmeticError) as exc:
        code = EXIT_NUMERIC
        manifest["status"] = "error"
        manifest["error"] = {"type": type(exc).__name__, "module": _origin(exc), "message": str(exc)}
    manifest["artifacts"] = sorted(out.artifacts) + ["manifest.json"]
    if "json" in cfg.formats or code != EXIT_OK:
        try:
            _write_json(out.dir / "manifest.json", manifest)
        except OSError as exc:
            log.error("cannot write manifest: %s", exc)
            code = code or EXIT_IO
    return code, manifest


def run(config_path, out_dir=None, quiet=False) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    code, manifest = execute(cfg, out_dir)
    if code and "error" in manifest:
        err = manifest["error"]
        print(f"{err['type']} ({err['module']}): {err['message']}", file=sys.stderr)
    elif not quiet:
        print(json.dumps(_plain(manifest.get("results", {})), indent=2, sort_keys=True))
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="curlsteklov", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="execute a JSON run configuration")
    p.add_argument("config", help="path to the JSON config")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--quiet", action="store_true", help="do not print the result summary")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")

    threads = os.environ.get(THREADS_ENV)
    if threads:
        try:
            n = int(threads)
        except ValueError:
            print(f"{THREADS_ENV} must be an integer, got {threads!r}", file=sys.stderr)
            return EXIT_CONFIG
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=n):
            return run(args.config, args.out, args.quiet)
    return run(args.config, args.out, args.quiet)


if __name__ == "__main__":
    sys.exit(main())
