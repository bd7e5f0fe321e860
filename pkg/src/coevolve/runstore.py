"""Run directories: config snapshot, JSON-lines event log, prompts, checkpoints, reports.

Layout::

    <out_dir>/run-<timestamp>-<seed>/
        config.json  events.jsonl  prompts/  checkpoints/
        report.json  report.csv  plots/*.svg
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .coevolution import Store
from .policy import NetArch, ParamVector, save_checkpoint


class IncompleteRun(RuntimeError):
    pass


def sanitize(obj):
    """Replace non-finite floats with None so the output is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):  # numpy scalars
        return sanitize(obj.item())
    return obj


def dumps(obj) -> str:
    return json.dumps(sanitize(obj), sort_keys=True, allow_nan=False)


class EventLog(list):
    """A list of events that also appends each one to a JSON-lines file."""

    def __init__(self, path: Optional[Path] = None):
        super().__init__()
        self.path = Path(path) if path else None
        self._fh = open(self.path, "a", encoding="utf-8") if self.path else None

    def append(self, rec: dict) -> None:
        super().append(rec)
        if self._fh:
            self._fh.write(dumps(rec) + "\n")
            self._fh.flush()

    def extend(self, recs) -> None:
        for r in recs:
            self.append(r)

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


def read_events(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


class RunStore(Store):
    def __init__(self, root: Path):
        self.root = Path(root)
        for sub in ("prompts", "checkpoints", "plots"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self.events = EventLog(self.root / "events.jsonl")

    @classmethod
    def create(cls, out_dir, seed: int, timestamp: Optional[str] = None) -> "RunStore":
        stamp = timestamp or time.strftime("%Y%m%dT%H%M%S")
        root = Path(out_dir) / f"run-{stamp}-{seed}"
        n = 1
        while root.exists():
            root = Path(out_dir) / f"run-{stamp}-{seed}.{n}"
            n += 1
        return cls(root)

    def write_text(self, relpath: str, text: str) -> None:
        path = self.root / relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")

    def write_json(self, relpath: str, obj) -> None:
        self.write_text(relpath, json.dumps(sanitize(obj), indent=2, sort_keys=True) + "\n")

    def save_params(self, name: str, params: ParamVector, arch: NetArch) -> None:
        save_checkpoint(self.root / "checkpoints" / f"{name}.json", params, arch)

    def close(self) -> None:
        self.events.close()


@dataclass
class RunArtifact:
    root: Path
    config: dict
    events: list

    @property
    def complete(self) -> bool:
        return bool(self.events) and self.events[-1].get("event") == "run_end"


def load_run(root, require_complete: bool = True) -> RunArtifact:
    root = Path(root)
    cfg_path, ev_path = root / "config.json", root / "events.jsonl"
    if not cfg_path.exists() or not ev_path.exists():
        raise IncompleteRun(f"{root} is missing config.json or events.jsonl")
    art = RunArtifact(root, json.loads(cfg_path.read_text(encoding="utf-8")), read_events(ev_path))
    if require_complete and not art.complete:
        raise IncompleteRun(f"{root} has no run_end event")
    return art
