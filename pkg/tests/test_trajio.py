import io

import pytest
from hypothesis import given, strategies as st

from crowdsim.trajio import (
    COLUMNS,
    Trajectory,
    TrajectoryFormatError,
    TrajectoryRecord,
    read_kv,
    read_trajectory,
    write_kv,
    write_trajectory,
)

HEADER = "# rows: 10\n# cols: 4\n# cell_size: 0.4\n# frame_interval: 0.33\n"


def parse(body, header=HEADER):
    return read_trajectory(io.StringIO(header + ",".join(COLUMNS) + "\n" + body))


def test_parse_basic():
    t = parse("0,1,,0,2,3,\n1,1,,0,3,3,S\n0,2,7,0,0,0,\n")
    assert t.rows == 10 and t.cols == 4 and t.frame_interval == 0.33
    assert len(t.records) == 3
    assert t.records[2].group_id == 7 and t.records[0].group_id is None
    assert t.records[1].action == "S"
    assert t.group_sizes() == {1: 1, 2: 1}


def test_header_only_and_empty():
    assert read_trajectory(io.StringIO("")).records == []
    assert parse("").records == []


def test_duplicate_record_rejected():
    with pytest.raises(TrajectoryFormatError, match="line 7"):
        parse("0,1,,0,2,3,\n0,1,,0,2,2,\n")


def test_out_of_grid_rejected():
    with pytest.raises(TrajectoryFormatError, match="outside"):
        parse("0,1,,0,10,0,\n")


def test_malformed_fields():
    with pytest.raises(TrajectoryFormatError, match="expected 7"):
        parse("0,1,,0,2\n")
    with pytest.raises(TrajectoryFormatError):
        parse("x,1,,0,2,3,\n")
    with pytest.raises(TrajectoryFormatError, match="lacks"):
        read_trajectory(io.StringIO(HEADER + "step,agent_id\n"))
    with pytest.raises(TrajectoryFormatError, match="malformed header"):
        read_trajectory(io.StringIO("# nonsense\n"))


def test_observation_frame_interval():
    t = parse("0,1,,0,2,3,\n", header=HEADER.replace("0.33", "1.79"))
    assert t.frame_interval == 1.79


record = st.builds(TrajectoryRecord, step=st.integers(0, 50), agent_id=st.integers(1, 20),
                   group_id=st.none() | st.integers(1, 5), row=st.integers(0, 9), col=st.integers(0, 3),
                   trip=st.integers(0, 3), action=st.sampled_from(["", "N", "SE", "X"]))


@given(st.lists(record, max_size=30, unique_by=lambda r: (r.step, r.agent_id)))
def test_round_trip(records):
    import tempfile, pathlib
    t = Trajectory({"rows": 10, "cols": 4, "cell_size": 0.4, "frame_interval": 0.33}, records)
    with tempfile.TemporaryDirectory() as d:
        p = pathlib.Path(d) / "t.csv"
        write_trajectory(p, t)
        back = read_trajectory(p)
    assert back.records == records
    assert back.rows == 10 and back.cell_size == 0.4


def test_kv_round_trip(tmp_path):
    write_kv(tmp_path / "s.txt", {"a": 1, "b": 0.123456789, "c": "x"})
    assert read_kv(tmp_path / "s.txt") == {"a": "1", "b": "0.123457", "c": "x"}
