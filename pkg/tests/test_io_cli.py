import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from infharm.cli import DEFAULTS, main
from infharm.errors import ConfigError
from infharm.grid import build_domain, sample_analytic
from infharm.io import fmt, read_gridmap, to_jsonable, write_csv, write_gridmap, write_json

SQUARE = {"bounds": [[0, 1], [0, 1]], "resolution": 21}


def run(tmp_path, command, cfg, name="run"):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / f"out_{name}"
    return main([command, "--config", str(path), "--out", str(out)]), out


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# io

def test_gridmap_round_trip_bit_exact(tmp_path):
    d = build_domain([(0.1, 1.3), (-2, 2)], (13, 7))
    u = sample_analytic("exp_sine", d)
    write_gridmap(tmp_path / "u.csv", u)
    v = read_gridmap(tmp_path / "u.csv")
    assert v.domain == d
    assert np.array_equal(v.values, u.values)


def test_gridmap_vector_round_trip(tmp_path):
    d = build_domain([(0, 1), (0, 1)], 5)
    u = sample_analytic("complex_square", d)
    write_gridmap(tmp_path / "u.csv", u)
    assert np.array_equal(read_gridmap(tmp_path / "u.csv").values, u.values)
    assert read_csv(tmp_path / "u.csv")[1] == ["x", "y", "u0", "u1"]


def test_read_gridmap_errors(tmp_path):
    with pytest.raises(ConfigError):
        read_gridmap(tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text('{"bounds": [[0, 1]], "resolution": [3], "N": 1}\nx,u0\n0,1\n')
    with pytest.raises(ConfigError):
        read_gridmap(bad)


def test_formatting():
    assert fmt(0.1) == "0.10000000000000001"
    assert float(fmt(1 / 3)) == 1 / 3
    assert fmt(True) == "1" and fmt(np.int64(4)) == "4" and fmt(None) == ""
    assert to_jsonable({"a": np.float64(np.inf), "b": np.arange(2)}) == {"a": "inf", "b": [0, 1]}


def test_json_and_csv_layout(tmp_path):
    write_json(tmp_path / "a.json", {"b": 1, "a": [np.float64(0.5)]})
    assert (tmp_path / "a.json").read_text() == '{\n  "a": [\n    0.5\n  ],\n  "b": 1\n}\n'
    write_csv(tmp_path / "a.csv", ["t", "h"], [(0.0, 1e-20)])
    assert (tmp_path / "a.csv").read_text() == "t,h\n0,9.9999999999999995e-21\n"


# residual

def test_residual_linear_passes(tmp_path):
    cfg = {"input": {"corpus": "linear", "params": {"a": [[1.0, 2.0]]}}, "domain": SQUARE,
           "operator": "infinity_full"}
    code, out = run(tmp_path, "residual", cfg)
    assert code == 0
    s = json.loads((out / "residual_summary.json").read_text())
    assert s["max"] <= 1e-12 and s["passed"] and s["seed"] == 0
    assert s["config"]["tolerances"] == DEFAULTS["tolerances"]


def test_residual_half_square_fails(tmp_path):
    cfg = {"input": {"corpus": "quadratic"}, "domain": SQUARE, "operator": "infinity_tangential"}
    code, out = run(tmp_path, "residual", cfg)
    assert code == 1
    rows = read_csv(out / "residual.csv")
    assert rows[1] == ["x", "y", "residual", "valid"] and len(rows) == 2 + 21 * 21


def test_residual_missing_input_file(tmp_path):
    cfg = {"input": {"gridmap": "nowhere.csv"}}
    assert run(tmp_path, "residual", cfg)[0] == 2


def test_residual_gridmap_input(tmp_path):
    d = build_domain([(1, 2), (1, 2)], 33)
    write_gridmap(tmp_path / "a.csv", sample_analytic("aronsson", d))
    cfg = {"input": {"gridmap": "a.csv"}, "operator": "infinity_tangential",
           "tolerances": {"residual": 0.1}, "residual": {"band": 0.125}}
    assert run(tmp_path, "residual", cfg)[0] == 0


def test_residual_solver_input(tmp_path):
    cfg = {"input": {"solver": {"p": 3, "boundary": {"corpus": "linear", "params": {"a": [[1.0, -1.0]]}}}},
           "domain": SQUARE, "operator": "p_laplacian_expanded(3)", "tolerances": {"residual": 1e-6}}
    code, out = run(tmp_path, "residual", cfg)
    assert code == 0
    assert json.loads((out / "residual_summary.json").read_text())["solver"]["converged"]


@pytest.mark.parametrize("cfg", [
    {"domain": SQUARE},
    {"input": {"corpus": "linear"}},
    {"input": {"corpus": "no_such"}, "domain": SQUARE},
    {"input": {"corpus": "linear"}, "domain": SQUARE, "operator": "laplace"},
    {"input": {"corpus": "linear"}, "domain": SQUARE, "tolerances": {"residual": -1}},
    {"input": {"corpus": "linear"}, "domain": {"bounds": [[1, 0]], "resolution": 5}},
])
def test_config_errors(tmp_path, cfg):
    assert run(tmp_path, "residual", cfg)[0] == 2


def test_usage_errors(tmp_path):
    assert main([]) == 2
    assert main(["residual"]) == 2
    assert main(["residual", "--config", str(tmp_path / "none.json")]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["residual", "--config", str(tmp_path / "broken.json")]) == 2


# variational

def test_variational_linear_passes(tmp_path):
    cfg = {"input": {"corpus": "linear", "params": {"a": [[0.5, 1.0]]}},
           "domain": {"bounds": [[0, 1], [0, 1]], "resolution": 31},
           "variational": {"family": "A_plus_inf", "n_subdomains": 50}}
    code, out = run(tmp_path, "variational", cfg)
    assert code == 0
    v = json.loads((out / "verdict.json").read_text())
    assert v["consistent"] and v["min_slack"] == 0.0 and v["n_subdomains"] == 50


def test_variational_perturbed_fails_with_witness(tmp_path):
    cfg = {"input": {"corpus": "aronsson", "perturb": {"center": [1.5, 1.5], "radius": 0.15, "amplitude": 0.1}},
           "domain": {"bounds": [[1, 2], [1, 2]], "resolution": 101},
           "variational": {"family": ["A_plus_inf", "A_minus_inf"], "n_subdomains": 50}}
    code, out = run(tmp_path, "variational", cfg)
    assert code == 1
    v = json.loads((out / "verdict.json").read_text())
    w = v["witness"]
    assert w["report"]["slack"] == v["min_slack"] <= -1e-4
    assert {"subdomain", "member", "report"} <= set(w)
    header = read_csv(out / "reports.csv")[0]
    assert header[:3] == ["subdomain", "family", "member"] and "slack" in header


def test_variational_zero_subdomains(tmp_path):
    cfg = {"input": {"corpus": "linear"}, "domain": SQUARE, "variational": {"n_subdomains": 0}}
    assert run(tmp_path, "variational", cfg)[0] == 2


# diffuse

def test_diffuse_linear_passes(tmp_path):
    cfg = {"input": {"corpus": "linear", "params": {"a": [[1.0, 1.0]]}}, "domain": SQUARE}
    code, out = run(tmp_path, "diffuse", cfg)
    assert code == 0
    dump = json.loads((out / "supports.json").read_text())
    assert all(abs(sum(n["weights"]) + n["infinity_weight"] - 1) <= 1e-12 for n in dump["nodes"])


def test_diffuse_half_square_fails(tmp_path):
    cfg = {"input": {"corpus": "quadratic"}, "domain": SQUARE, "operator": "infinity_tangential"}
    assert run(tmp_path, "diffuse", cfg)[0] == 1


def test_diffuse_aronsson_axes_pass(tmp_path):
    cfg = {"input": {"corpus": "aronsson", "acknowledge_singular": True},
           "domain": {"bounds": [[-1, 1], [-1, 1]], "resolution": 101},
           "diffuse": {"schedule": (1e-7 * 2.0 ** -np.arange(7)).tolist()}}
    code, out = run(tmp_path, "diffuse", cfg)
    assert code == 0
    v = json.loads((out / "diffuse_verdict.json").read_text())
    assert v["trivial_nodes"] > 0


# profile

def test_profile_zero_variation(tmp_path):
    cfg = {"input": {"corpus": "exp_sine"}, "domain": SQUARE,
           "profile": {"affine": {"gradient": [[0.0, 0.0]]}}}
    code, out = run(tmp_path, "profile", cfg)
    assert code == 0
    rows = read_csv(out / "profile.csv")
    assert rows[0] == ["t", "h"] and all(float(r[1]) == 0.0 for r in rows[1:])


def test_profile_linear_closed_form(tmp_path):
    a, g = np.array([1.0, -2.0]), np.array([0.5, 3.0])
    cfg = {"input": {"corpus": "linear", "params": {"a": [a.tolist()]}}, "domain": SQUARE,
           "profile": {"affine": {"gradient": [g.tolist()]}, "t_grid": [0, 0.25, 0.5, 1]}}
    code, out = run(tmp_path, "profile", cfg)
    assert code == 0
    rows = np.array(read_csv(out / "profile.csv")[1:], dtype=float)
    t = rows[:, 0]
    np.testing.assert_allclose(rows[:, 1], 2 * t * (a @ g) + t**2 * (g @ g), atol=1e-12)
    s = json.loads((out / "profile_summary.json").read_text())
    assert s["dini_lower"] == pytest.approx(2 * (a @ g), rel=1e-12)


def test_profile_bad_t_grid(tmp_path):
    cfg = {"input": {"corpus": "linear"}, "domain": SQUARE,
           "profile": {"affine": {"gradient": [[1.0, 0.0]]}, "t_grid": [0, 0.5, 0.25]}}
    assert run(tmp_path, "profile", cfg)[0] == 2


# determinism

@pytest.mark.parametrize("command,cfg", [
    ("variational", {"seed": 7, "input": {"corpus": "aronsson"},
                     "domain": {"bounds": [[1, 2], [1, 2]], "resolution": 41},
                     "variational": {"family": ["A_plus_inf", "A_minus_inf"], "n_subdomains": 10}}),
    ("diffuse", {"input": {"corpus": "exp_sine"}, "domain": SQUARE}),
    ("residual", {"input": {"corpus": "radial"}, "domain": {"bounds": [[1, 2], [1, 2]], "resolution": 17},
                  "operator": "p_laplacian_expanded(4)", "tolerances": {"residual": 1}}),
])
def test_byte_identical_outputs(tmp_path, command, cfg):
    c1, o1 = run(tmp_path, command, cfg, "a")
    c2, o2 = run(tmp_path, command, cfg, "b")
    assert c1 == c2
    files = sorted(p.name for p in o1.iterdir())
    assert files == sorted(p.name for p in o2.iterdir()) and files
    for name in files:
        assert (o1 / name).read_bytes() == (o2 / name).read_bytes()
        if name.endswith(".json") and name != "supports.json":
            doc = json.loads((o1 / name).read_text())
            assert doc["seed"] == cfg.get("seed", 0) and "config" in doc


def test_console_entry_point(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"input": {"corpus": "linear"}, "domain": SQUARE}))
    proc = subprocess.run([sys.executable, "-m", "infharm.cli", "residual", "--config", str(path),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
