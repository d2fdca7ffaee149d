import json
import subprocess
import sys

import numpy as np
import pytest

from curlsteklov.cli import main
from curlsteklov.config import Polynomial, load_config, parse_config
from curlsteklov.errors import ConfigError
from curlsteklov.io import read_csv, write_gmsh
from curlsteklov.mesh import generate_cube_mesh

CUBE2 = {"cube": {"n": 2, "side": 1.0}}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def _run(tmp_path, cfg, out="out"):
    code = main(["run", str(_write(tmp_path, cfg)), "--out", str(tmp_path / out), "--quiet"])
    man = tmp_path / out / "manifest.json"
    return code, (json.loads(man.read_text()) if man.exists() else None)


def test_steklov_task(tmp_path):
    code, man = _run(tmp_path, {"domain": CUBE2, "params": {"alpha": -1, "theta": 1, "eta": 0},
                                "task": "steklov"})
    assert code == 0 and man["status"] == "ok"
    header, rows = read_csv(tmp_path / "out" / "spectrum.csv")
    assert header == ["n", "lambda", "mu", "residual"]
    assert len(rows) == 52
    assert all(float(r[1]) < 0 for r in rows)
    assert man["results"]["steklov"]["gram_error"] < 1e-8


def test_sigma_check_task(tmp_path):
    code, man = _run(tmp_path, {"domain": {"cube": {"n": 3}}, "params": {"alpha": -1, "theta": 1},
                                "task": "sigma-check"})
    assert code == 0
    r = man["results"]["sigma_check"]
    assert r["verdict"] == "safe" and r["distance"] >= 1


def test_converge_task(tmp_path):
    cfg = {"domain": {"cube": {"n": 2, "side": np.pi}}, "params": {"alpha": -1, "theta": 1},
           "task": "converge",
           "converge": {"levels": [2, 3, 4, 5], "quantities": ["A1"], "exact": {"A1": 3}}}
    code, man = _run(tmp_path, cfg)
    assert code == 0
    header, rows = read_csv(tmp_path / "out" / "convergence.csv")
    assert "order" in header and len(rows) == 4
    s = man["results"]["convergence"]["A1"]
    assert s["final_value"] == pytest.approx(3.5049896115298993, rel=1e-9)
    assert s["final_order"] >= 1.8


def test_converge_two_levels_is_config_error(tmp_path):
    cfg = {"domain": CUBE2, "params": {"alpha": -1}, "task": "converge",
           "converge": {"levels": [2, 3]}}
    code, man = _run(tmp_path, cfg)
    assert code == 2
    assert man["error"]["type"] == "ConvergenceStudyError"


@pytest.mark.parametrize("task,data", [
    ("aux-spectra", {}),
    ("solve-neumann", {"rotated_gradient": {"psi": "x^2 - y"}}),
    ("solve-dirichlet", {"basis_index": 2}),
    ("solve-dirichlet", {"basis_index": 2, "mode": "rotated"}),
    ("calderon", {"basis_index": 1}),
    ("dual-solve", {"coefficients": [1, 0.5, -2]}),
])
def test_solution_tasks(tmp_path, task, data):
    code, man = _run(tmp_path, {"domain": CUBE2, "params": {"alpha": -1, "eta": 0},
                                "task": task, "data": data})
    assert code == 0, man.get("error")
    res = man["results"]
    if task == "solve-neumann":
        assert res["solve_neumann"]["relative_difference_direct"] < 1e-7
    if task == "solve-dirichlet":
        assert res["solve_dirichlet"]["trace_error"] < 1e-8
    if task == "calderon":
        assert res["calderon"]["max_normal_component"] < 1e-12
    if task == "dual-solve":
        assert res["dual_solve"]["pairing_max_relative_error"] < 1e-8


def test_csv_trace_data(tmp_path):
    from curlsteklov.mesh import extract_boundary

    m = generate_cube_mesh(2)
    b = extract_boundary(m)
    rng = np.random.default_rng(3)
    lines = ["vertex,fx,fy,fz"] + [f"{v},{a},{c},{d}" for v, (a, c, d) in
                                   zip(b.vertices, rng.standard_normal((len(b.vertices), 3)))]
    (tmp_path / "f.csv").write_text("\n".join(lines) + "\n")
    code, man = _run(tmp_path, {"domain": CUBE2, "params": {"alpha": -1, "eta": 0},
                                "task": "solve-neumann", "data": {"csv": "f.csv"}})
    assert code == 0
    assert man["results"]["solve_neumann"]["relative_difference_direct"] < 1e-7


def test_deflate_task(tmp_path):
    cfg = {"domain": {"cube": {"n": 3, "side": np.pi}}, "params": {"alpha": 7.29, "eta": "auto"},
           "task": "deflate"}
    code, man = _run(tmp_path, cfg)
    assert code == 0
    d = man["results"]["deflation"]
    assert d["n"] == 3 and not d["undeflated_coercive"]
    assert d["gap_estimate"] > 7.29
    assert d["dim_V"] + d["dim_V_perp"] == d["dim_total"]


def test_numerical_failure_exit_3(tmp_path):
    cfg = {"domain": {"cube": {"n": 3, "side": np.pi}}, "params": {"alpha": 7.29, "eta": "auto"},
           "task": "steklov"}
    code, man = _run(tmp_path, cfg)
    assert code == 3
    assert man["status"] == "error"
    assert man["error"]["type"] == "CoercivityError"
    assert man["error"]["module"] == "spectral"


def test_config_error_exit_2(tmp_path):
    code, _ = _run(tmp_path, {"domain": CUBE2, "params": {"alpha": -1, "theta": -1}, "task": "steklov"})
    assert code == 2
    code, _ = _run(tmp_path, {"domain": CUBE2, "params": {"alpha": -1}, "task": "nope"})
    assert code == 2
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert main(["run", str(p), "--quiet"]) == 2


def test_io_error_exit_4(tmp_path):
    assert main(["run", str(tmp_path / "missing.json"), "--quiet"]) == 4
    (tmp_path / "bad.msh").write_text("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n")
    code, man = _run(tmp_path, {"domain": {"gmsh": {"path": "bad.msh"}}, "params": {"alpha": -1},
                                "task": "steklov"})
    assert code == 4 and man["error"]["type"] == "UnsupportedVersionError"


def test_gmsh_domain(tmp_path):
    write_gmsh(generate_cube_mesh(2), tmp_path / "c.msh")
    code, man = _run(tmp_path, {"domain": {"gmsh": {"path": "c.msh"}},
                                "params": {"alpha": -1, "eta": 0}, "task": "steklov"})
    assert code == 0 and man["results"]["steklov"]["n_eigenvalues"] == 52


def test_byte_identical_reruns(tmp_path):
    cfg = {"domain": CUBE2, "params": {"alpha": 0.5, "eta": "auto"}, "task": "steklov", "k": 6}
    _run(tmp_path, cfg, "a")
    _run(tmp_path, cfg, "b")
    for name in ("spectrum.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_vtk_opt_in_and_matrix_dump(tmp_path):
    base = {"domain": CUBE2, "params": {"alpha": -1, "eta": 0}, "task": "steklov"}
    _run(tmp_path, base, "plain")
    assert not list((tmp_path / "plain").glob("*.vtk"))
    cfg = dict(base, output={"formats": ["csv", "json", "vtk"]}, debug={"dump_matrices": True})
    code, man = _run(tmp_path, cfg, "rich")
    assert code == 0
    assert (tmp_path / "rich" / "modes.vtk").exists()
    assert (tmp_path / "rich" / "matrices" / "K.mtx").exists()


def test_console_entry_point(tmp_path):
    p = _write(tmp_path, {"domain": {"cube": {"n": 1}}, "params": {"alpha": -1, "eta": 0},
                          "task": "steklov"})
    proc = subprocess.run([sys.executable, "-m", "curlsteklov", "run", str(p), "--out",
                           str(tmp_path / "o")], capture_output=True, text=True,
                          env={"CURLSTEKLOV_NUM_THREADS": "1", "PATH": ""})
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["steklov"]["n_eigenvalues"] == 16


# ------------------------------------------------------------------ config


def test_exactly_one_domain():
    with pytest.raises(ConfigError):
        parse_config({"domain": {"cube": {"n": 1}, "ball": {"refinement": 0}},
                      "params": {"alpha": 0}, "task": "steklov"})


def test_eta_auto_and_number():
    c = parse_config({"domain": CUBE2, "params": {"alpha": 0, "eta": "auto"}, "task": "steklov"})
    assert c.eta is None
    c = parse_config({"domain": CUBE2, "params": {"alpha": 0, "eta": 2}, "task": "steklov"})
    assert c.eta == 2.0


def test_unknown_tolerance_rejected():
    with pytest.raises(ConfigError):
        parse_config({"domain": CUBE2, "params": {"alpha": 0}, "task": "steklov",
                      "tolerances": {"bogus": 1}})


def test_load_config_relative_base(tmp_path):
    p = _write(tmp_path, {"domain": CUBE2, "params": {"alpha": 0}, "task": "steklov"})
    assert load_config(p).base_dir == tmp_path


@pytest.mark.parametrize("text,expect", [
    ("x^2 - y", lambda x, y, z: x**2 - y),
    ("3*x*y*z + 2", lambda x, y, z: 3 * x * y * z + 2),
    ("-(x + z)**3", lambda x, y, z: -(x + z) ** 3),
    ("1.5", lambda x, y, z: 1.5 + 0 * x),
])
def test_polynomial_eval(text, expect):
    x, y, z = np.random.default_rng(0).standard_normal((3, 7))
    assert np.allclose(Polynomial(text)(x, y, z), expect(x, y, z), rtol=1e-14)


@pytest.mark.parametrize("text", ["x^4", "x*y*z*x", "sin(x)", "w + 1", "x**y", "__import__('os')",
                                  "x / 2", "(x^2"])
def test_polynomial_rejects(text):
    with pytest.raises(ConfigError):
        Polynomial(text)
