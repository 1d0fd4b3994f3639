import csv
import json

import pytest

from svbp import scenario_io
from svbp.cli import main
from svbp.perception import generate_scenario
from svbp.planning.scenario import canonical

FAST_GIBBS = ["--gibbs-samples", "200", "--gibbs-burn-in", "50", "--gibbs-thinning", "1"]


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("SVBP_OUTPUT_ROOT", str(tmp_path))
    return tmp_path


def test_single_cell_perception_run(out_root, capsys):
    assert main(["perception", "--runs", "1", "--noise-levels", "0", "--out", "a", *FAST_GIBBS]) == 0
    out = out_root / "a"
    fig3 = _rows(out / "fig3.csv")
    assert sorted(r["method"] for r in fig3) == ["pbp", "svbp"]
    iters = {r["method"]: int(r["iterations"]) for r in _rows(out / "metrics.csv")}
    assert iters == {"svbp": 100, "pbp": 50}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 0 and "fig4.csv" in manifest["outputs"]
    assert [p.name for p in out.iterdir()].count("manifest.json") == 1


def test_perception_csvs_are_reproducible(out_root):
    args = ["perception", "--runs", "1", "--noise-levels", "8", "--method", "svbp", *FAST_GIBBS,
            "--svbp-iterations", "20"]
    main([*args, "--out", "x"])
    main([*args, "--out", "y"])
    for name in ("fig3.csv", "fig4.csv", "fig6.csv"):
        assert (out_root / "x" / name).read_bytes() == (out_root / "y" / name).read_bytes()


def test_plan_single_robot_passes(out_root):
    assert main(["plan", "--scenario", "single", "--runs", "2", "--out", "p"]) == 0
    rows = {r["threshold"]: float(r["pass_rate"]) for r in _rows(out_root / "p" / "pass_rate.csv")}
    assert rows["0.30"] == 1.0
    assert len(list((out_root / "p" / "runs").glob("*.jsonl"))) == 2
    assert len(_rows(out_root / "p" / "path_time.csv")) == 2


def test_plan_decentralized_matches_centralized(out_root):
    common = ["--scenario", "swap2", "--runs", "1", "--max-steps", "15"]
    main(["plan", *common, "--out", "c"])
    main(["plan", *common, "--decentralized", "--out", "d"])
    assert _rows(out_root / "c" / "metrics.csv") == _rows(out_root / "d" / "metrics.csv")


def test_plan_rejects_unknown_inputs(out_root, capsys):
    with pytest.raises(SystemExit):
        main(["plan", "--scenario", "no-such-file.json"])
    with pytest.raises(SystemExit):
        main(["plan", "--scenario", "single", "--method", "orca"])


def test_generated_files_validate(tmp_path, capsys):
    for extra in (["--name", "corridor4"], ["--kind", "perception", "--noise", "8"]):
        path = tmp_path / "s.json"
        assert main(["gen-scenario", *extra, "--out", str(path)]) == 0
        assert main(["validate-scenario", str(path)]) == 0


def test_goal_inside_obstacle_is_named(tmp_path, capsys):
    doc = scenario_io.to_document(canonical("central_obstacle4"))
    doc["planning"]["robots"][1]["goal"] = [5.0, 5.0]
    doc["planning"]["robots"][3]["start"] = [20.0, 5.0, 0.0, 0.0]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    assert main(["validate-scenario", str(path)]) == 1
    err = capsys.readouterr().err
    assert "robot 1: goal inside obstacle" in err
    assert "robot 3: start outside bounds" in err


def test_unknown_schema_version_is_explicit(tmp_path):
    doc = scenario_io.to_document(canonical("single"))
    doc["schema_version"] = 99
    with pytest.raises(scenario_io.SchemaVersionError, match="unsupported version 99"):
        scenario_io.from_document(doc)


def test_perception_schema_lists_every_problem():
    doc = scenario_io.to_document(generate_scenario(8, 0, seed=1))
    body = doc["perception"]
    body["observations"] = body["observations"][:5]
    body["sigma"] = -1.0
    body["distances"][0]["edge"] = [0, 42]
    problems = scenario_io.validate_document(doc)
    assert any("observations" in p for p in problems)
    assert any("sigma" in p for p in problems)
    assert any("distances[0].edge" in p for p in problems)


def test_scenario_files_round_trip(tmp_path):
    for sc in (canonical("scattered4"), generate_scenario(8, 16, seed=3)):
        path = tmp_path / "s.json"
        scenario_io.dump(sc, path)
        assert scenario_io.load(path).to_dict() == sc.to_dict()


def test_packaged_canonical_files_match_builders():
    for name in ("circle8", "central_obstacle4", "swap3"):
        assert scenario_io.load(scenario_io.canonical_path(name)).to_dict() == canonical(name).to_dict()
