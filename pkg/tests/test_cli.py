import pytest

from crowdsim.cli import main
from crowdsim.scenario import CORRIDORS
from crowdsim.trajio import COLUMNS, read_kv, read_table


def test_presets(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    assert "corridor_B: 3.6 m x 13.2 m, 9 x 33 cells" in out


def test_run_twice_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["run", "--scenario", "corridor_B", "--seed", "3", "--steps", "100",
                     "--out", str(tmp_path / d)]) == 0
    for name in ("trajectory.csv", "summary.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_summary_time(tmp_path):
    assert main(["run", "--scenario", "corridor_A", "--density", "0.25", "--out", str(tmp_path)]) == 0
    s = read_kv(tmp_path / "summary.txt")
    assert s["steps"] == "1800"
    assert float(s["simulated_time_s"]) == pytest.approx(594.0)


def test_run_missing_file(tmp_path, capsys):
    missing = tmp_path / "missing.yaml"
    assert main(["run", "--scenario", str(missing), "--out", str(tmp_path)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_usage_errors(tmp_path):
    assert main(["fly"]) == 1
    assert main(["run"]) == 1
    assert main(["analyze", str(tmp_path / "x.csv"), "--metrics", "speeds,bogus"]) == 1


def test_invalid_weights_exit_two(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("preset: corridor_A\nweights: {kappa_g: 150}\n")
    assert main(["run", "--scenario", str(p), "--out", str(tmp_path)]) == 2


def test_analyze_speeds_by_group_size(tmp_path):
    main(["run", "--scenario", "corridor_A", "--density", "0.5", "--steps", "300", "--seed", "1",
          "--out", str(tmp_path / "run")])
    assert main(["analyze", str(tmp_path / "run" / "trajectory.csv"), "--metrics", "speeds",
                 "--out", str(tmp_path / "an")]) == 0
    cohorts = {r["cohort"]: r for r in read_table(tmp_path / "an" / "speeds.csv")}
    assert {"individuals", "size2", "size3"} <= set(cohorts)
    tests = read_table(tmp_path / "an" / "speed_tests.csv")
    assert tests and all(0 <= float(r["p"]) <= 1 for r in tests)


def test_analyze_empty_log(tmp_path, capsys):
    p = tmp_path / "empty.csv"
    p.write_text("# rows: 10\n# cols: 4\n" + ",".join(COLUMNS) + "\n")
    assert main(["analyze", str(p), "--metrics", "all", "--out", str(tmp_path / "an")]) == 0
    assert "warning" in capsys.readouterr().err
    for name in ("diagram", "speeds", "los", "dispersion"):
        assert read_table(tmp_path / "an" / f"{name}.csv") == []


def test_analyze_observation_interval(tmp_path):
    p = tmp_path / "obs.csv"
    rows = "\n".join(f"{t},1,,0,{t},1," for t in range(5))
    p.write_text("# rows: 10\n# cols: 4\n# cell_size: 0.4\n# frame_interval: 1.79\n"
                 + ",".join(COLUMNS) + "\n" + rows + "\n")
    assert main(["analyze", str(p), "--metrics", "speeds", "--out", str(tmp_path / "an")]) == 0
    (row,) = read_table(tmp_path / "an" / "speeds.csv")
    assert float(row["mean_speed"]) == pytest.approx(0.4 / 1.79, rel=1e-5)


def test_analyze_malformed_log(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("step,agent_id,row,col\n0,1,x,2\n")
    assert main(["analyze", str(p), "--out", str(tmp_path / "an")]) == 2


@pytest.mark.parametrize("name", sorted(CORRIDORS))
def test_analyze_round_trips_presets(tmp_path, name):
    assert main(["run", "--scenario", name, "--density", "1.0", "--steps", "200", "--out", str(tmp_path)]) == 0
    assert main(["analyze", str(tmp_path / "trajectory.csv"), "--metrics", "all", "--window", "60",
                 "--sample-interval", "10", "--out", str(tmp_path / "an")]) == 0
    assert main(["analyze", str(tmp_path / "trajectory.csv"), "--metrics", "speeds", "--cohort-by", "group",
                 "--out", str(tmp_path / "an2")]) == 0
    assert len(list((tmp_path / "an").glob("*.csv"))) == 9


def test_sweep_command(tmp_path):
    sw = tmp_path / "sw.yaml"
    sw.write_text("scenario: corridor_C\ndensities: [0.5, 1.0]\nrepetitions: 1\nsteps: 40\n")
    assert main(["sweep", "--scenario", str(sw), "--parallel", "2", "--out", str(tmp_path / "o")]) == 0
    assert "critical_density" in read_kv(tmp_path / "o" / "sweep_summary.txt")
    assert len(list((tmp_path / "o" / "trajectories").glob("*.csv"))) == 2
    assert main(["sweep", "--scenario", str(sw), "--parallel", "0", "--out", str(tmp_path / "o")]) == 1
