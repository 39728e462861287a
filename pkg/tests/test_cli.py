import json

from conftest import ROUNDS, flat_room_level
from decoy.cli import run
from decoy.dataset import FIXTURE_LAW, write_law
from decoy.damage import FeatureSchema
from decoy.geometry import level_to_dict


def test_no_arguments_is_usage_error(capsys):
    assert run([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_command_and_missing_setting(capsys):
    assert run(["teleport"]) == 2
    assert run(["waypoints"]) == 2
    assert "--out" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert run(["--help"]) == 0
    assert "eval-models" in capsys.readouterr().out


def test_bench_prints_table(capsys, tmp_path):
    assert run(["bench", "--agents", "2,4", "--decisions", "200", "--out", str(tmp_path / "b.json")]) == 0
    out = capsys.readouterr().out
    assert "ticks/s" in out and "time scale" in out
    rows = json.loads((tmp_path / "b.json").read_text())
    assert [r["n_agents"] for r in rows] == [2, 4]
    assert (tmp_path / "manifest.json").exists()


def test_waypoints_command(tmp_path, capsys):
    (tmp_path / "room.json").write_text(json.dumps(level_to_dict(flat_room_level())))
    assert run(["waypoints", "--map", str(tmp_path / "room.json"), "--out", str(tmp_path / "g.json")]) == 0
    assert "strongly connected: True" in capsys.readouterr().out
    assert json.loads((tmp_path / "g.json").read_text())["spacing"] == 0.7


def test_config_file_and_flag_precedence(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"agents": "2", "decisions": 100}))
    assert run(["bench", "--config", str(tmp_path / "c.json"), "--agents", "3"]) == 0
    table = capsys.readouterr().out.splitlines()
    assert table[1].split()[0] == "3"
    (tmp_path / "bad.json").write_text("[1]")
    assert run(["bench", "--config", str(tmp_path / "bad.json")]) == 2


def test_simulate_with_law(tmp_path, level, capsys):
    write_law(tmp_path / "law", FIXTURE_LAW, FeatureSchema.for_level(level))
    rc = run(["simulate", "--models", str(tmp_path / "law"), "--seed", "4", "--log", str(tmp_path / "log.jsonl")])
    assert rc == 0 and "winner" in capsys.readouterr().out
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert json.loads(lines[-1])["type"] == "round_end"


def test_missing_input_is_runtime_error(tmp_path, capsys):
    assert run(["replay", "--round", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
    assert "nope.json" in capsys.readouterr().err


def test_train_and_eval_models(tmp_path, capsys):
    m = tmp_path / "m"
    common = ["--synthetic", "1500", "--epochs", "2", "--out", str(m)]
    assert run(["train-dip", *common]) == 0
    assert run(["train-dog", *common]) == 0
    for f in ("dip.model", "dog.model", "threshold.txt", "features.schema"):
        assert (m / f).exists()
    assert run(["eval-models", "--models", str(m), "--synthetic", "500", "--report", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert 0 <= rep["dip"]["auc"] <= 1 and "damage_wd" in rep["dog"]


def test_eval_models_rejects_law(tmp_path, level, capsys):
    write_law(tmp_path, FIXTURE_LAW, FeatureSchema.for_level(level))
    assert run(["eval-models", "--models", str(tmp_path)]) == 1
    assert "damage law" in capsys.readouterr().err


def test_synth_replay_eval_pipeline(tmp_path, capsys):
    data = tmp_path / "data"
    assert run(["synth", "--rounds", "2", "--seed", "1", "--out", str(data)]) == 0
    assert run(["replay", "--round", str(data), "--mode", "full", "--models", str(data / "law"),
                "--out", str(tmp_path / "rep")]) == 0
    assert run(["eval", "--original", str(data), "--replayed", str(tmp_path / "rep"),
                "--report", str(tmp_path / "report.json"), "--grids", str(tmp_path / "grids")]) == 0
    text = (tmp_path / "report.txt").read_text()
    assert "dtw" in text and "outcome_agreement" in text
    assert (tmp_path / "grids" / "pct_diff_T.csv").exists()


def test_movement_replay_of_shipped_fixture(tmp_path, capsys):
    assert run(["replay", "--round", str(ROUNDS), "--out", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("round_*"))) == 3
