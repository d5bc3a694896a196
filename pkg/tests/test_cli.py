import json

import pytest

from equishoot.cli import ParseError, main, parse_config

REF = ["--gamma", "0.5", "--sigma-d", "0.2", "--mu-d", "0.01", "--beta1", "0.056", "--beta2", "0.05"]


def _run(tmp_path, *args, sub="out"):
    out = tmp_path / sub
    return main([*args, "--out", str(out)]), out


def test_flags_only():
    cfg = parse_config(["solve", *REF])
    assert cfg.command == "solve"
    assert (cfg.raw.gamma, cfg.raw.sigma_d, cfg.raw.beta1) == (0.5, 0.2, 0.056)


def test_flag_beats_file(tmp_path):
    conf = tmp_path / "run.ini"
    conf.write_text("[params]\ngamma = 0.5\nsigma_d = 0.2\nmu_d = 0.01\nbeta1 = 0.056\nbeta2 = 0.05\n")
    assert parse_config(["validate", "--config", str(conf)]).raw.gamma == 0.5
    cfg = parse_config(["validate", "--config", str(conf), "--gamma", "0.6"])
    assert cfg.raw.gamma == 0.6
    assert cfg.sources["gamma"] == "--gamma"


def test_sectionless_file(tmp_path):
    conf = tmp_path / "run.ini"
    conf.write_text("# reference\ngamma = 0.5\nsigma_d = 0.2\nmu_d = 0.01\nbeta1 = 0.056\nbeta2 = 0.05\n")
    assert parse_config(["validate", "--config", str(conf)]).raw.beta2 == 0.05


def test_unknown_key_names_key_and_line(tmp_path):
    conf = tmp_path / "run.ini"
    conf.write_text("[params]\ngama = 0.5\n")
    with pytest.raises(ParseError, match=r"run\.ini:2: unknown key 'gama'"):
        parse_config(["validate", "--config", str(conf)])
    assert main(["validate", "--config", str(conf)]) == 1


def test_unknown_flag():
    with pytest.raises(ParseError, match="--gama"):
        parse_config(["validate", "--gama", "0.5"])


def test_missing_required():
    with pytest.raises(ParseError, match="--beta1"):
        parse_config(["solve", "--gamma", "0.5", "--sigma-d", "0.2", "--mu-d", "0.01", "--beta2", "0.05"])


def test_validate_prints_params(capsys):
    assert main(["validate", *REF]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["delta"] == pytest.approx(-0.3) and d["a_cap"] == pytest.approx(3.5)


def test_validate_equal_rates_exit_1(tmp_path, capsys):
    code = main(["validate", "--gamma", "0.5", "--sigma-d", "0.2", "--mu-d", "0.01", "--beta1", "0.05",
                 "--beta2", "0.05", "--out", str(tmp_path)])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "DeltaOutOfRange" and err["exit_status"] == 1
    assert json.loads((tmp_path / "error.json").read_text())["error"] == "DeltaOutOfRange"


def test_numerical_failure_exit_2(tmp_path, capsys):
    code, out = _run(tmp_path, "solve", *REF, "--ode-tol", "1e-3")
    assert code == 2
    assert json.loads((out / "error.json").read_text())["exit_status"] == 2


def test_io_failure_exit_3(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["prieto", "--gamma", "0.5", "--sigma-d", "0.2", "--mu-d", "0.0", "--out", str(blocker / "sub")]) == 3


def test_solve_outputs(tmp_path):
    code, out = _run(tmp_path, "solve", *REF)
    assert code == 0
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["slope_end"] == pytest.approx(0.65625, rel=1e-4)
    assert cert["passed"] is True
    lines = (out / "critical_curve.csv").read_text().splitlines()
    assert lines[0].startswith("# config_sha256=") and lines[1] == "y,h,i_log"


def test_classify_reference(tmp_path):
    code, out = _run(tmp_path, "classify", *REF)
    assert code == 0
    rep = json.loads((out / "survival.json").read_text())
    assert (rep["classification"], rep["provenance"]) == ("BothSurvive", "PaperProved")


def test_log_utility_boundary(tmp_path):
    code, out = _run(tmp_path, "prieto", "--gamma", "0.5", "--sigma-d", "0.2", "--mu-d", "0.01")
    assert code == 0
    assert json.loads((out / "prieto.json").read_text())["classification"] == "RecurrentIndeterminate"


SIM = ["--paths", "4", "--horizon", "1", "--dt", "0.01", "--seed", "9"]


@pytest.mark.parametrize("command, extra", [("equilibrium", []), ("simulate", SIM), ("prieto", [])])
def test_byte_identical_and_hashed(tmp_path, command, extra):
    args = REF if command != "prieto" else REF[:6]
    c1, a = _run(tmp_path, command, *args, *extra, sub="a")
    c2, b = _run(tmp_path, command, *args, *extra, sub="b")
    assert c1 == c2 == 0
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir()) and files
    for name in files:
        blob = (a / name).read_bytes()
        assert blob == (b / name).read_bytes()
        assert b"config_sha256" in blob


def test_json_format(tmp_path):
    code, out = _run(tmp_path, "simulate", *REF, *SIM, "--format", "json")
    assert code == 0
    occ = json.loads((out / "occupation.json").read_text())
    assert occ["config_sha256"]
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["sim_config"]["seed"] == 9 and len(meta["certificate_hash"]) == 64


def test_hash_ignores_output_dir():
    a = parse_config(["solve", *REF, "--out", "x"])
    b = parse_config(["solve", *REF, "--out", "y"])
    c = parse_config(["solve", *REF, "--xi-tol", "1e-12"])
    assert a.hash() == b.hash() != c.hash()


def test_small_sweep(tmp_path):
    code, out = _run(tmp_path, "sweep", "--sigma-d", "0.2", "--beta2", "0.05", "--grid", "2")
    assert code == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[1] == "delta,gamma,exp0,exp1,s0_div,s1_div,speed_mass,classification,provenance"
    assert len(lines) == 2 + 4
