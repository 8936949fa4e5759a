import json

import numpy as np
import pytest

from threatirl import cli
from threatirl.dql import TrainingDivergence
from threatirl.fieldgen import load_field
from threatirl.oracle import load_dataset


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_gen_field_smoke(workdir):
    assert run("gen-field", "--seed", 7, "--rows", 25, "--cols", 25, "--out", "f.json") == 0
    f = load_field("f.json")
    assert f.values.shape == (1, 625) and f.seed == 7
    entry = json.loads((workdir / "manifest.json").read_text())["entries"]["f.json"]
    assert entry["config"]["seed"] == 7 and entry["outputs"] == ["f.json"]


def test_pipeline_and_table_defaults(workdir):
    assert run("gen-field", "--seed", 1, "--rows", 3, "--cols", 3, "--out", "f.json") == 0
    assert run("gen-dataset", "--field", "f.json", "--starts", "all", "--out", "e.jsonl") == 0
    assert len(load_dataset("e.jsonl")) == 8
    code = run("train", "--field", "f.json", "--dataset", "e.jsonl", "--m-i", 1, "--out", "run")
    assert code in (0, 3)
    cfg = json.loads((workdir / "run" / "manifest.json").read_text())["entries"]["train"]["config"]
    irl, dql = cfg["irl"], cfg["dql"]
    assert (irl["m_p"], irl["m_e"], irl["eta_i"], irl["e_mu"]) == (500, 300, 0.01, 0.01)
    assert (dql["m_q"], dql["eta_q"], dql["eta_qprime"]) == (25, 0.005, 0.001)
    assert (dql["eps0"], dql["eps1"], dql["d"]) == (0.051, 0.95, 500)
    for name in ("config.json", "history.csv", "model.json", "weights/iter_0000.json"):
        assert (workdir / "run" / name).exists()
    assert run("synth", "--model", "run/model.json", "--field", "f.json", "--out", "s.jsonl") == 0
    assert len(load_dataset("s.jsonl")) == 8
    assert run("eval", "--model", "run/model.json", "--field", "f.json", "--out", "ev") == 0
    assert (workdir / "ev" / "errors_train.csv").exists()
    assert run("pca", "--a", "e.jsonl", "--b", "s.jsonl", "--field", "f.json", "--out", "p.csv") == 0
    # the grid defaults to dataset A's field_ref
    assert run("pca", "--a", "e.jsonl", "--b", "s.jsonl", "--out", "p2.csv") == 0
    assert (workdir / "p2.csv").read_text() == (workdir / "p.csv").read_text()


def test_time_steps_alias(workdir):
    assert run("gen-field", "--rows", 3, "--cols", 3, "--time-steps", 4, "--out", "f.json") == 0
    assert load_field("f.json").values.shape == (4, 9)


def test_unknown_flag_exits_1(workdir, capsys):
    with pytest.raises(SystemExit) as exc:
        run("gen-field", "--bogus", "--out", "f.json")
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_missing_input_exits_1(workdir):
    assert run("gen-dataset", "--field", "nope.json", "--out", "e.jsonl") == 1


def test_bad_starts_exits_1(workdir):
    run("gen-field", "--rows", 3, "--cols", 3, "--out", "f.json")
    assert run("gen-dataset", "--field", "f.json", "--starts", "some", "--out", "e.jsonl") == 1
    assert run("gen-dataset", "--field", "f.json", "--starts", "random:99", "--out", "e.jsonl") == 1


def test_divergence_exits_2(workdir, monkeypatch):
    run("gen-field", "--rows", 3, "--cols", 3, "--out", "f.json")
    run("gen-dataset", "--field", "f.json", "--out", "e.jsonl")

    def boom(*a, **k):
        raise TrainingDivergence("non-finite TD loss")
    monkeypatch.setattr(cli, "irl_train", boom)
    assert run("train", "--field", "f.json", "--dataset", "e.jsonl", "--out", "run") == 2


def test_not_converged_exits_3(workdir):
    run("gen-field", "--rows", 4, "--cols", 4, "--out", "f.json")
    run("gen-dataset", "--field", "f.json", "--out", "e.jsonl")
    assert run("train", "--field", "f.json", "--dataset", "e.jsonl", "--m-i", 1, "--m-e", 1,
               "--e-mu", 1e-9, "--out", "run") == 3
    assert (workdir / "run" / "model.json").exists()


def test_env_override(workdir, monkeypatch):
    monkeypatch.setenv("THREATIRL_ROWS", "4")
    monkeypatch.setenv("THREATIRL_OUT", "g.json")
    assert run("gen-field", "--cols", 3) == 0
    assert load_field("g.json").grid.rows == 4
    # an explicit flag beats the environment
    assert run("gen-field", "--rows", 2, "--cols", 3) == 0
    assert load_field("g.json").grid.rows == 2


def test_identical_inputs_give_identical_bytes(workdir):
    for d in ("a", "b"):
        run("gen-field", "--seed", 3, "--rows", 4, "--cols", 4, "--n-time-steps", 3, "--out", f"{d}/f.json")
        run("gen-dataset", "--field", f"{d}/f.json", "--starts", "random:5", "--seed", 9,
            "--out", f"{d}/e.jsonl")
    for name in ("f.json", "e.jsonl"):
        assert (workdir / "a" / name).read_bytes() == (workdir / "b" / name).read_bytes()


def test_blob_field(workdir):
    assert run("gen-field", "--blob", "--rows", 9, "--cols", 9, "--out", "b.json") == 0
    f = load_field("b.json")
    assert int(np.argmax(f.values[0])) == 40
