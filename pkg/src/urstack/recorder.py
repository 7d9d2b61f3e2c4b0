"""Topic traces to CSV.

Columns: ``stamp`` followed by the scalar fields of each recorded topic in
the order requested. Rows are the union of all message stamps, sorted. For
every row, each topic contributes its message nearest in stamp, provided it
lies within one publish period of that topic; otherwise the cells are blank.
"""

from __future__ import annotations

import bisect
import csv
import io
from pathlib import Path

TOPIC_COLUMNS = {
    "wrench": lambda dof: ["fx", "fy", "fz", "tx", "ty", "tz"],
    "joint_states": lambda dof: [f"q{i}" for i in range(dof)] + [f"qd{i}" for i in range(dof)],
    "tcp_pose": lambda dof: ["x", "y", "z", "rx", "ry", "rz"],
    "io_state": lambda dof: ["digital_in", "digital_out"],
}

MERGE_RULE = "# rows: union of stamps; each topic fills from its nearest message within one publish period"


class RecordError(ValueError):
    pass


def check_topics(topics) -> list[str]:
    topics = list(topics)
    if not topics:
        raise RecordError("no topics to record")
    for t in topics:
        if t not in TOPIC_COLUMNS:
            raise RecordError(f"unknown topic: {t} (recordable: {', '.join(TOPIC_COLUMNS)})")
    return topics


def flatten(topic: str, body: dict) -> list:
    if topic == "wrench":
        return list(body["force"]) + list(body["torque"])
    if topic == "joint_states":
        return list(body["position"]) + list(body["velocity"])
    if topic == "tcp_pose":
        return list(body["position"]) + list(body["rotation"])
    if topic == "io_state":
        return [body["digital_in"], body["digital_out"]]
    raise RecordError(f"unknown topic: {topic}")


def _period(stamps: list[float]) -> float:
    gaps = sorted(b - a for a, b in zip(stamps, stamps[1:]) if b > a)
    return gaps[len(gaps) // 2] if gaps else 0.0


def _cell(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


class TraceRecorder:
    """Collects topic messages and writes the merged CSV."""

    def __init__(self, topics, dof: int | None = None):
        self.topics = check_topics(topics)
        self.dof = dof
        self.messages: dict[str, list[tuple[float, list]]] = {t: [] for t in self.topics}

    def add(self, msg: dict) -> None:
        topic = msg.get("topic")
        stamp = msg.get("stamp")
        if topic not in self.messages or stamp is None:
            return
        body = msg.get("body")
        if not isinstance(body, dict) or body.get("stopped"):
            return
        if topic == "joint_states" and self.dof is None:
            self.dof = len(body["position"])
        self.messages[topic].append((float(stamp), flatten(topic, body)))

    def header(self) -> list[str]:
        cols = ["stamp"]
        for t in self.topics:
            cols += TOPIC_COLUMNS[t](self.dof or 6)
        return cols

    def rows(self) -> list[list]:
        series = {}
        for t in self.topics:
            msgs = sorted(self.messages[t], key=lambda m: m[0])
            stamps = [m[0] for m in msgs]
            series[t] = (stamps, [m[1] for m in msgs], _period(stamps))
        all_stamps = sorted({s for stamps, _, _ in series.values() for s in stamps})
        out = []
        for stamp in all_stamps:
            row = [stamp]
            for t in self.topics:
                stamps, values, period = series[t]
                width = len(TOPIC_COLUMNS[t](self.dof or 6))
                row += self._nearest(stamps, values, period, stamp) or [""] * width
            out.append(row)
        return out

    @staticmethod
    def _nearest(stamps, values, period, stamp):
        if not stamps:
            return None
        i = bisect.bisect_left(stamps, stamp)
        best = min((j for j in (i - 1, i) if 0 <= j < len(stamps)), key=lambda j: abs(stamps[j] - stamp))
        # tiny slack absorbs float noise in stamps that are multiples of dt
        if abs(stamps[best] - stamp) <= period + 1e-9:
            return values[best]
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(MERGE_RULE + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header())
        for row in self.rows():
            writer.writerow([_cell(v) for v in row])
        return buf.getvalue()

    def write(self, path: str | Path) -> int:
        text = self.to_csv()
        Path(path).write_text(text, encoding="utf-8")
        return text.count("\n") - 2


def read_trace(path: str | Path) -> tuple[list[str], list[list[float | None]]]:
    """Load a CSV written by ``TraceRecorder``; blank cells become ``None``."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    rows = [[float(c) if c != "" else None for c in row] for row in reader]
    return header, rows
