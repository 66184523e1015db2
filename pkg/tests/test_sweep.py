import math

import pytest

from crowdsim import engine
from crowdsim.scenario import ScenarioError, preset
from crowdsim.sweep import SIZE_COLUMNS, SweepSpec, critical_density, is_unimodal, load_sweep, run_sweep
from crowdsim.trajio import read_table


def small_spec(**kw):
    base = dict(scenario=preset("corridor_C"), densities=[0.5, 1.0, 1.5, 2.0], repetitions=3, steps=30)
    base.update(kw)
    return SweepSpec(**base)


def test_jobs_and_seeds():
    jobs = small_spec(seed_base=100).jobs()
    assert len(jobs) == 12
    assert [s for *_, s in jobs] == list(range(100, 112))
    assert [d for _, d, _ in jobs[:4]] == [0.5, 0.5, 0.5, 1.0]


@pytest.mark.parametrize("kw", [{"densities": []}, {"densities": [1.0, 0.5]}, {"densities": [0.0, 1.0]},
                                {"densities": [1.0, 1.0]}, {"repetitions": 0}, {"steps": 0}])
def test_spec_validation(kw):
    with pytest.raises(ScenarioError):
        small_spec(**kw)


def test_sweep_bookkeeping(tmp_path):
    res = run_sweep(small_spec(), out_dir=tmp_path)
    assert len(res.runs) == 12 and not res.failed
    assert len(list((tmp_path / "trajectories").glob("*.csv"))) == 12
    table = read_table(tmp_path / "fundamental_diagram.csv")
    assert len(table) == 4
    for label in SIZE_COLUMNS:
        assert f"speed_{label}" in table[0] and f"flow_{label}" in table[0]
    assert len(read_table(tmp_path / "runs.csv")) == 12
    assert read_table(tmp_path / "dispersion.csv")


def test_parallelism_does_not_change_tables(tmp_path):
    spec = small_spec(densities=[0.5, 1.5], repetitions=2)
    run_sweep(spec, 1, tmp_path / "one", trajectories=False)
    run_sweep(spec, 2, tmp_path / "two", trajectories=False)
    for name in ("fundamental_diagram.csv", "dispersion.csv", "runs.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


def test_failed_runs_are_reported(tmp_path, monkeypatch):
    real = engine.run

    def flaky(scenario, steps, seed, out):
        if seed == 1:
            raise RuntimeError("boom")
        return real(scenario, steps, seed, out)

    monkeypatch.setattr(engine, "run", flaky)
    res = run_sweep(small_spec(densities=[0.5, 2.0], repetitions=1), out_dir=tmp_path, trajectories=False)
    assert len(res.failed) == 1 and res.failed[0].density == 2.0
    assert "boom" in res.failed[0].error
    assert len(res.succeeded) == 1
    rows = read_table(tmp_path / "runs.csv")
    assert [r["status"] for r in rows] == ["ok", "failed"]


def test_load_sweep(tmp_path):
    (tmp_path / "sc.yaml").write_text("preset: corridor_B\n")
    (tmp_path / "sw.yaml").write_text("scenario: sc.yaml\ndensities: [0.5, 1.0]\nrepetitions: 2\n"
                                      "seed_base: 7\nsteps: 50\ngroup_mix: {2: 0.5}\n")
    spec = load_sweep(tmp_path / "sw.yaml")
    assert spec.scenario.name == "corridor_B"
    assert spec.steps == 50 and spec.group_mix == {2: 0.5}
    assert [s for *_, s in spec.jobs()] == [7, 8, 9, 10]
    with pytest.raises(ScenarioError, match="densities"):
        (tmp_path / "bad.yaml").write_text("scenario: corridor_A\n")
        load_sweep(tmp_path / "bad.yaml")


def test_critical_density_and_unimodal():
    curve = [(0.5, 0.6), (1.0, 1.1), (1.5, 1.3), (2.0, 1.0)]
    assert critical_density(curve) == 1.5
    assert critical_density([(0.5, 1.0), (1.0, 1.0)]) == 0.5
    with pytest.raises(ValueError):
        critical_density([])
    assert is_unimodal([f for _, f in curve])
    assert not is_unimodal([1.0, 2.0, 1.0, 2.0])
    assert is_unimodal([1.0, 2.0, 1.5, 1.55], tol=0.1)
    assert not is_unimodal([])
    assert not math.isnan(critical_density(curve))
