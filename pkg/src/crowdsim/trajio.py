"""Delimited trajectory logs shared by simulated and observed data.

A log is a ``#``-prefixed ``key: value`` header block followed by a CSV
table with the fixed column header ``COLUMNS``. ``frame_interval`` is the
seconds between consecutive ``step`` values (0.33 for simulations).
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

COLUMNS = ("step", "agent_id", "group_id", "trip", "row", "col", "action")
MAGIC = "crowdsim trajectory v1"


class TrajectoryFormatError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class TrajectoryRecord:
    step: int
    agent_id: int
    group_id: int | None
    row: int
    col: int
    trip: int = 0
    action: str = ""


@dataclass
class Trajectory:
    header: dict
    records: list = field(default_factory=list)

    @property
    def rows(self) -> int:
        return int(self.header.get("rows", 0))

    @property
    def cols(self) -> int:
        return int(self.header.get("cols", 0))

    @property
    def cell_size(self) -> float:
        return float(self.header.get("cell_size", 0.4))

    @property
    def frame_interval(self) -> float:
        return float(self.header.get("frame_interval", 0.33))

    @property
    def wrap(self) -> bool:
        return str(self.header.get("wrap", "false")).lower() == "true"

    def tracks(self) -> dict:
        """``(agent_id, trip) -> records`` sorted by step."""
        out = defaultdict(list)
        for r in self.records:
            out[(r.agent_id, r.trip)].append(r)
        for v in out.values():
            v.sort(key=lambda r: r.step)
        return dict(out)

    def by_step(self) -> dict:
        out = defaultdict(list)
        for r in self.records:
            out[r.step].append(r)
        return dict(out)

    def groups(self) -> dict:
        """Direct group id -> sorted member ids."""
        out = defaultdict(set)
        for r in self.records:
            if r.group_id is not None:
                out[r.group_id].add(r.agent_id)
        return {g: sorted(m) for g, m in out.items()}

    def group_sizes(self) -> dict:
        """Agent id -> size of its direct group (1 for individuals)."""
        sizes = {r.agent_id: 1 for r in self.records}
        for members in self.groups().values():
            for m in members:
                sizes[m] = len(members)
        return sizes

    def steps(self) -> list:
        return sorted({r.step for r in self.records})


def format_header(header: dict) -> str:
    lines = [f"# {MAGIC}"]
    lines += [f"# {k}: {v}" for k, v in header.items()]
    return "\n".join(lines) + "\n"


class TrajectoryWriter:
    """Stream records to ``path``; usable as a context manager."""

    def __init__(self, path, header: dict):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._fh.write(format_header(header))
        self._csv = csv.writer(self._fh, lineterminator="\n")
        self._csv.writerow(COLUMNS)

    def write(self, step, agent_id, group_id, trip, row, col, action) -> None:
        self._csv.writerow((step, agent_id, "" if group_id is None else group_id, trip, row, col, action))

    def write_record(self, r: TrajectoryRecord) -> None:
        self.write(r.step, r.agent_id, r.group_id, r.trip, r.row, r.col, r.action)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _parse_header(lines: Iterator[str]):
    header = {}
    for lineno, line in lines:
        if line.startswith("#"):
            body = line[1:].strip()
            if body == MAGIC or not body:
                continue
            if ":" not in body:
                raise TrajectoryFormatError(f"line {lineno}: malformed header line {line!r}")
            k, v = body.split(":", 1)
            header[k.strip()] = v.strip()
            continue
        return header, lineno, line
    return header, None, None


def read_trajectory(source) -> Trajectory:
    """Parse a log from a path or an open text stream."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
    else:
        text = source.read()
    lines = enumerate(io.StringIO(text).read().splitlines(), start=1)
    header, lineno, first = _parse_header(lines)
    traj = Trajectory(header)
    if first is None:
        return traj
    cols = tuple(c.strip() for c in first.split(","))
    missing = [c for c in ("step", "agent_id", "row", "col") if c not in cols]
    if missing:
        raise TrajectoryFormatError(f"line {lineno}: column header lacks {missing}")
    idx = {c: i for i, c in enumerate(cols)}
    seen = set()
    for lineno, line in lines:
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(cols):
            raise TrajectoryFormatError(f"line {lineno}: expected {len(cols)} fields, got {len(parts)}")
        try:
            g = parts[idx["group_id"]].strip() if "group_id" in idx else ""
            rec = TrajectoryRecord(
                step=int(parts[idx["step"]]), agent_id=int(parts[idx["agent_id"]]),
                group_id=int(g) if g else None, row=int(parts[idx["row"]]), col=int(parts[idx["col"]]),
                trip=int(parts[idx["trip"]]) if "trip" in idx else 0,
                action=parts[idx["action"]].strip() if "action" in idx else "")
        except ValueError as exc:
            raise TrajectoryFormatError(f"line {lineno}: {exc}") from exc
        key = (rec.step, rec.agent_id)
        if key in seen:
            raise TrajectoryFormatError(f"line {lineno}: duplicate record for step {rec.step} agent {rec.agent_id}")
        seen.add(key)
        if traj.rows and not (0 <= rec.row < traj.rows and 0 <= rec.col < traj.cols):
            raise TrajectoryFormatError(f"line {lineno}: cell ({rec.row}, {rec.col}) outside declared grid")
        traj.records.append(rec)
    return traj


def write_trajectory(path, traj: Trajectory) -> None:
    with TrajectoryWriter(path, traj.header) as w:
        for r in traj.records:
            w.write_record(r)


def write_table(path, columns: Iterable[str], rows: Iterable) -> None:
    """Plain CSV table with a fixed header row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(columns))
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return "" if v is None else v


def read_table(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_kv(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def write_kv(path, data: dict) -> None:
    with open(path, "w") as fh:
        for k, v in data.items():
            fh.write(f"{k} = {_fmt(v)}\n")
