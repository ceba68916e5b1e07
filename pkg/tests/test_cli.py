import json
import subprocess
import sys

import pytest

from mdpfactor.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def synthetic_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic")
    assert main(["gen-synthetic", "--samples", "20000", "--seed", "0", "--out", str(root / "data")]) == 0
    assert main(["estimate", "--dataset", str(root / "data" / "dataset.csv"), "--seed", "0",
                 "--out", str(root / "mi")]) == 0
    return root


def test_gen_synthetic_files(synthetic_run):
    names = sorted(p.name for p in (synthetic_run / "data").iterdir())
    assert names == ["dataset.csv", "dataset.manifest.json", "run.json", "truth.csv"]
    run_doc = json.loads((synthetic_run / "data" / "run.json").read_text())
    assert run_doc["parameters"] == {"samples": 20000, "seed": 0, "reset": False}


def test_gen_synthetic_deterministic(tmp_path, synthetic_run):
    main(["gen-synthetic", "--samples", "20000", "--seed", "0", "--out", str(tmp_path)])
    for name in ("dataset.csv", "dataset.manifest.json", "truth.csv", "run.json"):
        assert (tmp_path / name).read_bytes() == (synthetic_run / "data" / name).read_bytes()


def test_zero_samples_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen-synthetic", "--samples", "0", "--seed", "0", "--out", str(tmp_path)])
    assert exc.value.code == 2
    assert "--samples must be >= 1" in capsys.readouterr().err


def test_synthetic_pipeline(synthetic_run, capsys):
    mi_dir = synthetic_run / "mi"
    assert sorted(p.name for p in mi_dir.iterdir()) == ["mi.csv", "mi.meta.json", "run.json"]
    doc = json.loads((mi_dir / "run.json").read_text())
    assert len(doc["inputs"]) == 2
    assert set(doc["parameters"]["normalization"][str(synthetic_run / "data" / "dataset.csv")]) == {
        "s1", "s2", "s3", "s4", "s5", "a1", "a2", "a3", "next_s1", "next_s2", "next_s3",
        "next_s4", "next_s5"}

    code, out, _ = run(capsys, "factorize", "--mi", mi_dir / "mi.csv", "--quantile", 0.5,
                       "--scope", "matrix", "--out", synthetic_run / "fac")
    assert code == 0 and out.strip() == "2 cluster(s)"

    code, out, _ = run(capsys, "evaluate", "--pred", synthetic_run / "fac" / "adjacency.csv",
                       "--truth", synthetic_run / "data" / "truth.csv")
    assert code == 0 and float(out) <= 0.025

    code, out, _ = run(capsys, "export", "--factorization", synthetic_run / "fac" / "factorization.json",
                       "--format", "svg")
    assert code == 0 and out.startswith("<svg")

    code, out, _ = run(capsys, "tune", "--mi", mi_dir / "mi.csv", "--quantile-grid", "0,0.5",
                       "--scope", "matrix")
    lines = out.strip().splitlines()
    assert code == 0 and len(lines) == 3
    assert lines[1].split("\t")[1] == "1" and lines[2].split("\t")[1] == "2"


def test_estimate_missing_manifest(tmp_path, capsys):
    (tmp_path / "x.csv").write_text("a\n1\n")
    code, _, err = run(capsys, "estimate", "--dataset", tmp_path / "x.csv", "--seed", 0,
                       "--out", tmp_path / "o")
    assert code == 1 and "error[DatasetError]" in err and "missing manifest" in err


def test_evaluate_shape_mismatch(tmp_path, capsys):
    (tmp_path / "a.csv").write_text(",c0\nr0,1\n")
    (tmp_path / "b.csv").write_text(",c0,c1\nr0,1,0\n")
    code, _, err = run(capsys, "evaluate", "--pred", tmp_path / "a.csv", "--truth", tmp_path / "b.csv")
    assert code == 1 and "shape mismatch" in err


def test_gen_grid_rejects_small_substation(tmp_path, capsys):
    code, _, err = run(capsys, "gen-grid", "--substations", "0", "--samples", 10, "--seed", 0,
                       "--out", tmp_path)
    assert code == 2
    assert "[1, 2, 3, 4, 5, 8, 12]" in err


def test_grid_pipeline_small(tmp_path, capsys):
    code, _, _ = run(capsys, "gen-grid", "--substations", "2,12", "--samples", 300, "--seed", 1,
                     "--out", tmp_path / "g")
    assert code == 0
    assert sorted(p.name for p in (tmp_path / "g").glob("*.csv")) == ["sub_12.csv", "sub_2.csv"]
    code, _, _ = run(capsys, "estimate", "--dataset", tmp_path / "g" / "sub_12.csv",
                     tmp_path / "g" / "sub_2.csv", "--seed", 0, "--out", tmp_path / "mi")
    assert code == 0
    header = (tmp_path / "mi" / "mi.csv").read_text().splitlines()[0]
    assert header == ",sub_2,sub_12"
    code, out, _ = run(capsys, "factorize", "--mi", tmp_path / "mi" / "mi.csv", "--quantile", 0.7,
                       "--out", tmp_path / "fac")
    assert code == 0 and out.strip().endswith("cluster(s)")


def test_dump_grid_round_trips(tmp_path, capsys):
    assert run(capsys, "dump-grid", "--out", tmp_path / "g.json")[0] == 0
    code, _, _ = run(capsys, "gen-grid", "--grid", tmp_path / "g.json", "--substations", "2",
                     "--samples", 20, "--seed", 0, "--out", tmp_path / "o")
    assert code == 0
    doc = json.loads((tmp_path / "o" / "run.json").read_text())
    assert list(doc["inputs"]) == [str(tmp_path / "g.json")]


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "mdpfactor", "--version"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "0.1.0"
