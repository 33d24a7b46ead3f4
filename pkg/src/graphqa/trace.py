"""Run traces: an append-only event log for each question answered.

Events carry a logical sequence number and no wall-clock timestamps, so two
runs over the same inputs produce byte-identical trace files. The loader
validates structure line by line and refuses partial or reordered files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CorruptTraceError

logger = logging.getLogger(__name__)

EVENT_RUN_START = "run_start"
EVENT_RUN_END = "run_end"


@dataclass
class Trace:
    events: list[dict] = field(default_factory=list)

    def emit(self, event: str, **payload) -> dict:
        row = {"seq": len(self.events) + 1, "event": event}
        row.update(payload)
        self.events.append(row)
        return row

    def of(self, event: str) -> list[dict]:
        return [row for row in self.events if row["event"] == event]

    def last(self, event: str) -> dict | None:
        for row in reversed(self.events):
            if row["event"] == event:
                return row
        return None

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.events:
                fh.write(json.dumps(row, sort_keys=True, separators=(",", ":"),
                                    ensure_ascii=False))
                fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> Trace:
        path = Path(path)
        events = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    raise CorruptTraceError("blank line inside trace", lineno)
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorruptTraceError(f"bad JSON: {exc}", lineno) from exc
                if not isinstance(row, dict) or "seq" not in row or "event" not in row:
                    raise CorruptTraceError("event needs 'seq' and 'event'", lineno)
                if row["seq"] != lineno:
                    raise CorruptTraceError(
                        f"sequence gap: expected seq {lineno}, got {row['seq']}", lineno
                    )
                events.append(row)
        if not events:
            raise CorruptTraceError("trace is empty", 0)
        if events[0]["event"] != EVENT_RUN_START:
            raise CorruptTraceError(f"first event must be {EVENT_RUN_START}", 1)
        if events[-1]["event"] != EVENT_RUN_END:
            raise CorruptTraceError(f"last event must be {EVENT_RUN_END}", len(events))
        return cls(events=events)


def _compact(value, limit: int = 60) -> str:
    text = json.dumps(value, ensure_ascii=False) if not isinstance(value, str) else value
    if len(text) > limit:
        text = text[: limit - 3] + "..."
    return text


def format_trace(trace: Trace) -> str:
    """Human-readable one-line-per-event rendering for the CLI."""
    lines = []
    for row in trace.events:
        payload = {k: v for k, v in row.items() if k not in ("seq", "event")}
        parts = [f"{k}={_compact(v)}" for k, v in payload.items()]
        lines.append(f"{row['seq']:>4}  {row['event']:<13} {' '.join(parts)}".rstrip())
    return "\n".join(lines)
