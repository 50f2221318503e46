import json
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from cccp import cli
from cccp.problem_io import (
    SchemaError,
    decode_complex,
    dumps,
    family_from_dict,
    load_problem,
    save_problem,
    spec_from_dict,
    spec_to_dict,
)
from cccp.reform import CesKnown, CovBounded, DataDriven, MomentExact, MomentsEllipsoid, NormSupport
from cccp import ces
from cccp import validation as vl

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def workdir(tmp_path):
    for name in ("minimal_problem.json", "solve_minimal.json", "validate_minimal.json"):
        shutil.copy(CONFIGS / name, tmp_path / name)
    return tmp_path


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return path


def test_minimal_round_trip_byte_identical(tmp_path):
    src = CONFIGS / "minimal_problem.json"
    out = tmp_path / "again.json"
    save_problem(out, load_problem(src))
    assert out.read_bytes() == src.read_bytes()


def test_generated_round_trip_and_load_time(tmp_path):
    inst = vl.generate_instance(vl.InstanceConfig(n=50, m=15, seed=3))
    path = tmp_path / "big.json"
    save_problem(path, inst.problem)
    t = time.perf_counter()
    back = load_problem(path)
    assert time.perf_counter() - t < 1.0
    assert back.n == 50 and back.m == 15
    np.testing.assert_array_equal(back.rows[4].a_moments.pcov, inst.problem.rows[4].a_moments.pcov)
    again = tmp_path / "again.json"
    save_problem(again, back)
    assert again.read_bytes() == path.read_bytes()


def test_non_hermitian_rejected_naming_entry(tmp_path):
    d = json.loads((CONFIGS / "minimal_problem.json").read_text())
    d["n"] = 2
    d["objective"] = [[-1, 0], [-1, 0]]
    d["rows"][0]["a"] = {"mean": [[1, 0], [1, 0]], "cov": [[[1, 0], [0.5, 0]], [[0.1, 0], [1, 0]]],
                         "pcov": [[[0, 0], [0, 0]], [[0, 0], [0, 0]]]}
    with pytest.raises(SchemaError, match=r"rows\[0\]\.a.*not Hermitian at entry \(0, 1\)"):
        load_problem(_write(tmp_path / "bad.json", d))


@pytest.mark.parametrize("edit,msg", [
    (lambda d: d.pop("n"), r"\.n: missing field"),
    (lambda d: d.update(levels=[1.5]), r"levels\[0\]"),
    (lambda d: d["rows"][0].update(b_mean="x"), r"rows\[0\]\.b_mean: expected a number"),
    (lambda d: d.update(format="other/9"), "unsupported format"),
    (lambda d: d["rows"][0]["a"].update(pcov=[[[5.0, 0]]]), "indefinite"),
])
def test_schema_errors(tmp_path, edit, msg):
    d = json.loads((CONFIGS / "minimal_problem.json").read_text())
    edit(d)
    with pytest.raises(SchemaError, match=msg):
        load_problem(_write(tmp_path / "bad.json", d))


def test_invalid_json_reports_position(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{\n  "n": 1,\n  oops\n}')
    with pytest.raises(SchemaError, match=r"broken.json:3:"):
        load_problem(p)


def test_complex_codec():
    np.testing.assert_array_equal(decode_complex([[1, 2], [3, -4]], "x"), [1 + 2j, 3 - 4j])
    with pytest.raises(SchemaError, match="pairs"):
        decode_complex([1, 2, 3], "x")
    assert dumps({"a": [[1.0, 0.5]], "b": None}) == '{\n  "a": [[1.0, 0.5]],\n  "b": null\n}\n'


def test_spec_codecs_round_trip():
    inst = vl.generate_instance(vl.InstanceConfig(n=2, m=2, seed=0))
    d = tuple(inst.d_moments)
    specs = [CesKnown(ces.StudentT(4.0)), MomentExact(), NormSupport(np.ones(3)),
             CovBounded((d[0].augmented(),)), MomentsEllipsoid(0.5, d), DataDriven(d, (0.1, 0.2), 0.3)]
    for s in specs:
        back = spec_from_dict(json.loads(json.dumps(spec_to_dict(s))))
        assert spec_to_dict(back) == spec_to_dict(s)
    with pytest.raises(SchemaError, match="unknown spec type"):
        spec_from_dict({"type": "nope"})
    with pytest.raises(SchemaError, match="unknown family"):
        family_from_dict("weird")


def test_data_driven_from_sample_files(tmp_path):
    from cccp.estimation import SampleSet, save_samples

    rng = np.random.default_rng(0)
    save_samples(tmp_path / "row0.txt", SampleSet(rng.standard_normal((200, 2)) + 1j))
    spec = spec_from_dict({"type": "data_driven", "samples": ["row0.txt"], "delta": 0.1, "R": 5.0}, base=tmp_path)
    assert isinstance(spec.r1, tuple) and spec.r1[0] > 0


def test_solve_minimal(workdir, capsys):
    out = workdir / "out"
    assert cli.main(["solve", "--config", str(workdir / "solve_minimal.json"), "--out", str(out)]) == 0
    sol = json.loads((out / "solution.json").read_text())
    assert sol["status"] == "optimal" and sol["mode"] == "individual"
    assert sol["objective"] == pytest.approx(-2.673184, abs=1e-6)
    assert len(sol["config_hash"]) == 16 and "seed" in sol


def test_validate_minimal(workdir):
    out = workdir / "out"
    assert cli.main(["validate", "--config", str(workdir / "validate_minimal.json"), "--out", str(out)]) == 0
    rep = json.loads((out / "validation.json").read_text())["validation"]
    assert rep["scenarios"] == 10_000
    assert abs(rep["joint_violation_rate"] - 0.1) <= 1.96 * np.sqrt(0.09 / 10_000)


def test_joint_solve(workdir):
    cfg = json.loads((workdir / "solve_minimal.json").read_text())
    cfg["spec"] = {"type": "moment_exact"}
    cfg["joint"] = {"theta": 2.0, "tangents": 8, "lifting": "reciprocal"}
    cfg["joint_level"] = 0.9
    assert cli.main(["solve", "--config", str(_write(workdir / "j.json", cfg)), "--out", str(workdir / "o")]) == 0
    sol = json.loads((workdir / "o" / "solution.json").read_text())
    assert sol["mode"] == "joint_lower" and sol["status"] == "optimal"
    cfg.pop("joint_level")
    assert cli.main(["solve", "--config", str(_write(workdir / "j2.json", cfg)), "--out", str(workdir / "o2")]) == 1


def test_gap_command_csv(tmp_path):
    cfg = {"seed": 1, "experiment": {"n": 3, "m": 2, "tangent_counts": [5, 10], "gap_descent_rounds": 3},
           "gap": {"p": 0.9}}
    out = tmp_path / "gap"
    assert cli.main(["experiment-gap", "--config", str(_write(tmp_path / "g.json", cfg)), "--out", str(out)]) == 0
    lines = (out / "gap.csv").read_text().splitlines()
    header = [l for l in lines if l.startswith("#")]
    assert any(l.startswith("# run_config_hash: ") for l in header)
    assert any(l == "# seed: 1" for l in header)
    body = [l for l in lines if not l.startswith("#")]
    assert body[0].split(",") == vl.GAP_COLUMNS
    assert len(body) == 3
    for row in body[1:]:
        r = dict(zip(vl.GAP_COLUMNS, row.split(",")))
        assert float(r["lower_bound"]) <= float(r["upper_bound"]) + 1e-7


def test_unknown_command_exit_2(capsys):
    assert cli.main(["frobnicate", "--config", "x.json"]) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_config_flag_exit_2():
    assert cli.main(["solve"]) == 2


def test_errors_exit_1_without_output(tmp_path, capsys):
    cfg = {"experiment": {"n": 3, "m": 2}}
    out = tmp_path / "never"
    assert cli.main(["experiment-gap", "--config", str(_write(tmp_path / "c.json", cfg)), "--out", str(out)]) == 1
    report = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert report["status"] == "error" and "seed" in report["message"]
    assert not out.exists()
    bad = {"seed": 1, "experiment": {"n": 3, "bogus": 1}}
    assert cli.main(["experiment-gap", "--config", str(_write(tmp_path / "d.json", bad)), "--out", str(out)]) == 1
    assert "bogus" in capsys.readouterr().err
    assert cli.main(["solve", "--config", str(tmp_path / "missing.json")]) == 1
    nofile = {"problem": "nowhere.json"}
    assert cli.main(["solve", "--config", str(_write(tmp_path / "e.json", nofile))]) == 1
    assert "does not exist" in capsys.readouterr().err


def test_seed_override_changes_hash(tmp_path):
    cfg = _write(tmp_path / "c.json", {"seed": 1, "experiment": {"n": 3, "m": 2, "tangent_counts": [5],
                                                                   "gap_descent_rounds": 0}})
    assert cli.main(["experiment-gap", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["experiment-gap", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2"]) == 0
    a = (tmp_path / "a" / "gap.csv").read_text()
    b = (tmp_path / "b" / "gap.csv").read_text()
    assert "# seed: 2" in b and a != b
