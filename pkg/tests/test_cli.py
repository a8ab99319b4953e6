import json
import math

import pytest

from walshembed.cli import main

from conftest import M1_SPEC

FAST = ["--paths", "300", "--dt", "1e-3", "--t-max", "100"]


@pytest.fixture
def spec(tmp_path):
    p = tmp_path / "m1.json"
    p.write_text(json.dumps(M1_SPEC))
    return str(p)


def _run(tmp_path, *argv):
    out = tmp_path / "out"
    code = main([*argv, "--out", str(out)])
    return code, out


def test_validate_m1(tmp_path, spec, capsys):
    code, out = _run(tmp_path, "validate", "--spec", spec)
    assert code == 0
    rep = json.loads((out / "validate.json").read_text())
    assert rep["schema_version"] == 1
    assert rep["centered_kappa"] == {"A": 0.5, "B": 0.5}
    assert rep["first_moment"] == 2.0 and rep["second_moment"] == 4.5


def test_validate_unit_origin_mass_exits_3(tmp_path):
    p = tmp_path / "k1.json"
    p.write_text(json.dumps({**M1_SPEC, "origin_mass": 1.0}))
    assert _run(tmp_path, "validate", "--spec", str(p))[0] == 3


def test_validate_kappa_override_not_centered(tmp_path, spec, capsys):
    code, out = _run(tmp_path, "validate", "--spec", spec, "--kappa", '{"A": 0.3, "B": 0.7}')
    assert code == 3
    rep = json.loads((out / "validate.json").read_text())
    assert [c["passed"] for c in rep["checks"]] == [True, False]


def test_config_errors_exit_2(tmp_path, spec, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run(tmp_path, "barrier", "--spec", str(bad))[0] == 2
    assert _run(tmp_path, "barrier", "--spec", str(tmp_path / "missing.json"))[0] == 2
    assert _run(tmp_path, "embed", "--spec", spec, "--paths", "0")[0] == 2
    with pytest.raises(SystemExit) as e:
        main(["compare", "--spec", spec, "--psi", "cube"])
    assert e.value.code == 2


def test_threads_env_must_be_integer(tmp_path, spec, monkeypatch, capsys):
    monkeypatch.setenv("WALSHEMBED_THREADS", "many")
    assert _run(tmp_path, "embed", "--spec", spec, *FAST)[0] == 2


def test_barrier_step_for_m1(tmp_path, spec, capsys):
    code, out = _run(tmp_path, "barrier", "--spec", spec)
    assert code == 0
    rows = (out / "barrier.csv").read_text().splitlines()
    assert rows[0] == "l,a_A,a_B,lambda"
    rep = json.loads((out / "barrier.json").read_text())
    assert rep["h_breakpoints"][0] == pytest.approx(-2.4 * math.log(0.375), abs=1e-9)


def test_embed_dubins_outputs(tmp_path, spec, capsys):
    code, out = _run(tmp_path, "embed", "--spec", spec, "--method", "dubins", "--depth", "2",
                     "--dump-path", "0", *FAST)
    assert code == 0
    rep = json.loads((out / "embed.json").read_text())
    assert rep["expected_tau_analytic"] == 4.5
    assert (out / "law.csv").read_text().splitlines()[0] == "ray_id,radius,probability"
    assert (out / "path.csv").read_text().startswith("t,W,R,L,ray_id\n")
    assert len((out / "samples.csv").read_text().splitlines()) == 301


def test_embed_is_byte_identical(tmp_path, spec, capsys):
    blobs = []
    for d in ("r1", "r2"):
        main(["embed", "--spec", spec, "--method", "vallois", *FAST, "--seed", "17",
              "--out", str(tmp_path / d)])
        blobs.append(((tmp_path / d / "samples.csv").read_bytes(), (tmp_path / d / "embed.json").read_bytes()))
    assert blobs[0] == blobs[1]


def test_compare_and_dual_check_run(tmp_path, spec, capsys):
    code, out = _run(tmp_path, "compare", "--spec", spec, *FAST)
    assert code in (0, 4)
    rep = json.loads((out / "compare.json").read_text())
    assert rep["ui_subset"] == ["A"] and len(rep["ui_rows"]) == 4
    code, out = _run(tmp_path, "dual-check", "--spec", spec, "--paths", "20", "--dt", "1e-3")
    assert code == 0
    rep = json.loads((out / "dual.json").read_text())
    assert rep["checks"][0]["statistic"] <= 0.02
    assert (out / "certificate_l.csv").exists() and (out / "certificate_r.csv").exists()
