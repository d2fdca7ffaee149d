"""Mesh-convergence studies with observed-order estimates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .assembly import ProblemParams, assemble_forms, build_constraint_basis, surface_rotated_gradient
from .errors import ConvergenceStudyError
from .mesh import extract_boundary, generate_ball_mesh, generate_cube_mesh

log = logging.getLogger(__name__)

QUANTITIES = ("A1", "neumann2", "steklov1", "div")


@dataclass
class Level:
    level: int
    h: float
    value: float
    error: float | None = None
    order: float | None = None  # against the exact limit, from the previous level
    richardson_order: float | None = None  # from the last three levels


@dataclass
class QuantityTable:
    quantity: str
    levels: list[Level]
    exact: float | None
    reliable: bool
    extrapolated: float | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def final_order(self):
        last = self.levels[-1]
        return last.order if last.order is not None else last.richardson_order

    @property
    def final_relative_error(self):
        if self.exact is None:
            return None
        return abs(self.levels[-1].value - self.exact) / abs(self.exact)


def richardson_order(h, v):
    """Observed order ``p`` from three levels with arbitrary mesh ratios.

    Solves ``(v0 - v1) / (v1 - v2) = (h0^p - h1^p) / (h1^p - h2^p)``; returns
    None when the differences change sign or no root lies in (0.05, 20).
    """
    h = np.asarray(h, dtype=float)
    d1, d2 = v[0] - v[1], v[1] - v[2]
    if d2 == 0 or d1 / d2 <= 0:
        return None
    r = d1 / d2

    def g(p):
        return (h[0] ** p - h[1] ** p) / (h[1] ** p - h[2] ** p) - r

    try:
        return float(brentq(g, 0.05, 20.0, xtol=1e-12))
    except ValueError:
        return None


def richardson_limit(h, v, p):
    """Extrapolated limit from the last two levels at order ``p``."""
    h1, h2 = h[-2] ** p, h[-1] ** p
    return v[-1] + (v[-1] - v[-2]) * h2 / (h1 - h2)


def build_table(quantity, hs, values, exact=None) -> QuantityTable:
    if len(values) < 3:
        raise ConvergenceStudyError(f"need at least 3 refinement levels, got {len(values)}")
    hs = [float(h) for h in hs]
    values = [float(v) for v in values]
    rows = []
    for i, (h, v) in enumerate(zip(hs, values)):
        row = Level(level=i, h=h, value=v)
        if exact is not None:
            row.error = abs(v - exact)
            if i > 0 and rows[-1].error > 0 and row.error > 0:
                row.order = float(np.log(rows[-1].error / row.error) / np.log(hs[i - 1] / h))
        if i >= 2:
            row.richardson_order = richardson_order(hs[i - 2 : i + 1], values[i - 2 : i + 1])
        rows.append(row)

    notes = []
    diffs = np.diff(values)
    monotone = bool(np.all(diffs > 0) or np.all(diffs < 0))
    if not monotone:
        notes.append("sequence is not monotone")
    if exact is not None:
        errs = [r.error for r in rows]
        if any(b > a for a, b in zip(errs, errs[1:])):
            notes.append("error is not decreasing")
    p = rows[-1].richardson_order
    extrap = richardson_limit(hs, values, p) if p is not None and monotone else None
    return QuantityTable(
        quantity=quantity,
        levels=rows,
        exact=exact,
        reliable=not notes,
        extrapolated=extrap,
        notes=notes,
    )


def _mesh_for(domain: dict, level):
    kind = domain["kind"]
    if kind == "cube":
        side = float(domain.get("side", 1.0))
        return generate_cube_mesh(int(level), side), side / int(level)
    if kind == "ball":
        r = int(level)
        return generate_ball_mesh(r), 2.0 ** -(r + 1)
    raise ConvergenceStudyError(f"convergence study needs a generated domain, not {kind!r}")


def _evaluate(quantity, mesh, params: ProblemParams, psi=None):
    # local imports keep module import cheap and avoid cycles
    from .calderon import direct_solve
    from .spectral import dirichlet_spectrum, neumann_laplacian_spectrum, resolve_params, steklov_spectrum

    if quantity == "neumann2":
        return float(neumann_laplacian_spectrum(mesh, 2).values[1])
    bnd = extract_boundary(mesh)
    forms = assemble_forms(mesh, bnd)
    space = build_constraint_basis(mesh, bnd)
    if quantity == "A1":
        return float(dirichlet_spectrum(space, forms, params.theta, 1).values[0])
    if quantity == "steklov1":
        return float(steklov_spectrum(space, forms, params, k=1).lambdas[0])
    if quantity == "div":
        if psi is None:
            raise ConvergenceStudyError("quantity 'div' needs a psi expression")
        x = mesh.vertices[bnd.vertices]
        f, _ = surface_rotated_gradient(space, forms, psi(x[:, 0], x[:, 1], x[:, 2]))
        p = resolve_params(space, forms, params)
        u = direct_solve(space, forms, p, f)
        w = space.N @ u
        return float(np.sqrt(w @ (forms.D @ w)) / np.sqrt(w @ (forms.M @ w)))
    raise ConvergenceStudyError(f"unknown quantity {quantity!r}; expected one of {QUANTITIES}")


def convergence_study(domain: dict, levels, quantities, params: ProblemParams,
                      exact: dict | None = None, psi=None) -> list[QuantityTable]:
    """Evaluate each quantity on every level and build the rate tables.

    ``domain`` is ``{"kind": "cube", "side": s}`` (levels are subdivisions per
    axis) or ``{"kind": "ball"}`` (levels are refinement indices).
    """
    levels = list(levels)
    if len(levels) < 3:
        raise ConvergenceStudyError(f"need at least 3 refinement levels, got {len(levels)}")
    exact = exact or {}
    values = {q: [] for q in quantities}
    hs = []
    for lev in levels:
        mesh, h = _mesh_for(domain, lev)
        hs.append(h)
        for q in quantities:
            values[q].append(_evaluate(q, mesh, params, psi))
            log.info("level %s %s = %r", lev, q, values[q][-1])
    tables = []
    for q in quantities:
        t = build_table(q, hs, values[q], exact.get(q))
        for row, lev in zip(t.levels, levels):
            row.level = int(lev)
        tables.append(t)
    return tables
