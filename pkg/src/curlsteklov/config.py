"""JSON run configuration and the polynomial expression grammar for psi."""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

TASKS = (
    "steklov",
    "aux-spectra",
    "solve-neumann",
    "solve-dirichlet",
    "calderon",
    "dual-solve",
    "deflate",
    "converge",
    "sigma-check",
)
FORMATS = ("csv", "json", "vtk")
MAX_DEGREE = 3

DEFAULT_TOLERANCES = {
    "sigma_tol": 1e-6,
    "theta_pen": 100.0,
    "div_tol": 1e-3,
    "aux_k": 20,
    "k_max": None,
}


# ---------------------------------------------------------------- psi grammar


class Polynomial:
    """A polynomial in x, y, z of degree at most 3, parsed from text.

    Accepts numbers, the variables, ``+ - *``, parentheses and integer powers
    written as ``**`` or ``^``. Anything else is rejected.
    """

    _BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Pow)

    def __init__(self, text: str):
        self.text = str(text)
        try:
            tree = ast.parse(self.text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse psi expression {self.text!r}: {exc.msg}") from None
        self._tree = tree.body
        self.degree = self._degree(self._tree)
        if self.degree > MAX_DEGREE:
            raise ConfigError(
                f"psi expression {self.text!r} has degree {self.degree} > {MAX_DEGREE}"
            )

    def _degree(self, node) -> int:
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return 0
        if isinstance(node, ast.Name):
            if node.id not in ("x", "y", "z"):
                raise ConfigError(f"unknown variable {node.id!r} in psi expression")
            return 1
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
            return self._degree(node.operand)
        if isinstance(node, ast.BinOp) and isinstance(node.op, self._BINOPS):
            if isinstance(node.op, ast.Pow):
                e = node.right
                if not (isinstance(e, ast.Constant) and isinstance(e.value, int)
                        and not isinstance(e.value, bool) and e.value >= 0):
                    raise ConfigError("psi exponents must be non-negative integer literals")
                return self._degree(node.left) * e.value
            a, b = self._degree(node.left), self._degree(node.right)
            return a + b if isinstance(node.op, ast.Mult) else max(a, b)
        raise ConfigError(f"unsupported construct in psi expression: {ast.dump(node)[:60]}")

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id]
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        a = self._eval(node.left, env)
        if isinstance(node.op, ast.Pow):
            return a ** node.right.value
        b = self._eval(node.right, env)
        if isinstance(node.op, ast.Add):
            return a + b
        if isinstance(node.op, ast.Sub):
            return a - b
        return a * b

    def __call__(self, x, y, z):
        x = np.asarray(x, dtype=float)
        out = self._eval(self._tree, {"x": x, "y": np.asarray(y, float), "z": np.asarray(z, float)})
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape).copy()

    def __repr__(self):
        return f"Polynomial({self.text!r})"


# --------------------------------------------------------------------- config


@dataclass
class RunConfig:
    domain: dict
    alpha: float
    theta: float
    eta: float | None  # None = auto
    task: str
    data: dict = field(default_factory=dict)
    k: int | None = None
    out_dir: str = "out"
    formats: tuple = ("csv", "json")
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    converge: dict = field(default_factory=dict)
    dump_matrices: bool = False
    base_dir: Path = field(default_factory=Path.cwd)


def _num(d, key, default=None, kind=float):
    if key not in d:
        if default is None:
            raise ConfigError(f"missing required field {key!r}")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"field {key!r} must be a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(f"field {key!r} must be an integer, got {v!r}")
    return kind(v)


def _parse_domain(d) -> dict:
    if not isinstance(d, dict) or len(d) != 1:
        raise ConfigError("domain must hold exactly one of cube, ball, gmsh")
    (kind, spec), = d.items()
    if not isinstance(spec, dict):
        raise ConfigError(f"domain.{kind} must be an object")
    if kind == "cube":
        n = _num(spec, "n", kind=int)
        side = _num(spec, "side", 1.0)
        if n < 1 or side <= 0:
            raise ConfigError("cube needs n >= 1 and side > 0")
        return {"kind": "cube", "n": n, "side": side}
    if kind == "ball":
        r = _num(spec, "refinement", kind=int)
        if r < 0:
            raise ConfigError("ball refinement must be >= 0")
        return {"kind": "ball", "refinement": r}
    if kind == "gmsh":
        if not isinstance(spec.get("path"), str):
            raise ConfigError("gmsh domain needs a string path")
        return {"kind": "gmsh", "path": spec["path"]}
    raise ConfigError(f"unknown domain {kind!r}; expected cube, ball or gmsh")


_DATA_KEYS = {"basis_index", "rotated_gradient", "csv", "coefficients", "mode"}


def _parse_data(d) -> dict:
    if not isinstance(d, dict):
        raise ConfigError("data must be an object")
    unknown = set(d) - _DATA_KEYS
    if unknown:
        raise ConfigError(f"unknown data fields {sorted(unknown)}")
    sources = [k for k in ("basis_index", "rotated_gradient", "csv", "coefficients") if k in d]
    if len(sources) > 1:
        raise ConfigError(f"data must give one source, got {sources}")
    out = dict(d)
    if "basis_index" in d:
        out["basis_index"] = _num(d, "basis_index", kind=int)
        if out["basis_index"] < 1:
            raise ConfigError("basis_index is 1-based")
    if "rotated_gradient" in d:
        rg = d["rotated_gradient"]
        if not isinstance(rg, dict) or "psi" not in rg:
            raise ConfigError("rotated_gradient needs a psi expression")
        out["rotated_gradient"] = {"psi": Polynomial(rg["psi"])}
    if "coefficients" in d:
        c = d["coefficients"]
        if not isinstance(c, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in c
        ):
            raise ConfigError("coefficients must be a list of numbers")
    if d.get("mode", "tangential") not in ("tangential", "rotated"):
        raise ConfigError("data.mode must be 'tangential' or 'rotated'")
    return out


def parse_config(raw: dict, base_dir=None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {"domain", "params", "task", "data", "k", "output", "tolerances", "converge", "debug"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config fields {sorted(unknown)}")
    if "domain" not in raw:
        raise ConfigError("missing required field 'domain'")
    domain = _parse_domain(raw["domain"])

    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params must be an object")
    alpha = _num(params, "alpha")
    theta = _num(params, "theta", 1.0)
    if theta <= 0:
        raise ConfigError(f"theta must be positive, got {theta}")
    eta_raw = params.get("eta", "auto")
    if eta_raw == "auto":
        eta = None
    else:
        eta = _num(params, "eta")
        if eta < 0:
            raise ConfigError(f"eta must be nonnegative, got {eta}")

    task = raw.get("task")
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")

    k = raw.get("k")
    if k is not None:
        k = _num(raw, "k", kind=int)
        if k < 1:
            raise ConfigError("k must be >= 1")

    output = raw.get("output", {})
    if not isinstance(output, dict):
        raise ConfigError("output must be an object")
    formats = tuple(output.get("formats", ["csv", "json"]))
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ConfigError(f"unknown output formats {bad}")

    tol = dict(DEFAULT_TOLERANCES)
    user_tol = raw.get("tolerances", {})
    if not isinstance(user_tol, dict):
        raise ConfigError("tolerances must be an object")
    unknown = set(user_tol) - set(DEFAULT_TOLERANCES)
    if unknown:
        raise ConfigError(f"unknown tolerances {sorted(unknown)}")
    tol.update(user_tol)

    converge = raw.get("converge", {})
    if task == "converge":
        converge = _parse_converge(converge)

    debug = raw.get("debug", {})
    return RunConfig(
        domain=domain,
        alpha=alpha,
        theta=theta,
        eta=eta,
        task=task,
        data=_parse_data(raw.get("data", {})),
        k=k,
        out_dir=str(output.get("dir", "out")),
        formats=formats,
        tolerances=tol,
        converge=converge,
        dump_matrices=bool(debug.get("dump_matrices", False)) if isinstance(debug, dict) else False,
        base_dir=Path(base_dir) if base_dir is not None else Path.cwd(),
    )


def _parse_converge(c) -> dict:
    from .convergence import QUANTITIES

    if not isinstance(c, dict):
        raise ConfigError("converge must be an object")
    levels = c.get("levels")
    if not isinstance(levels, list) or not all(isinstance(v, int) for v in levels):
        raise ConfigError("converge.levels must be a list of integers")
    quantities = c.get("quantities", ["A1"])
    bad = [q for q in quantities if q not in QUANTITIES]
    if bad:
        raise ConfigError(f"unknown convergence quantities {bad}")
    exact = c.get("exact", {})
    if not isinstance(exact, dict):
        raise ConfigError("converge.exact must be an object")
    psi = c.get("psi")
    return {
        "levels": levels,
        "quantities": list(quantities),
        "exact": {k: float(v) for k, v in exact.items()},
        "psi": Polynomial(psi) if psi is not None else None,
    }


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return parse_config(raw, base_dir=path.parent)
