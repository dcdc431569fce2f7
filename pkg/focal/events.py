from __future__ import annotations

import json
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

EVENTS_ENV = "FOCAL_EVENTS_PATH"

_events_file: Path | None = None


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def configure(path: Path | str | None) -> None:
    """Route events to ``path``; ``None`` falls back to $FOCAL_EVENTS_PATH (or disables logging)."""
    global _events_file
    _events_file = Path(path) if path is not None else None


def events_path() -> Path | None:
    if _events_file is not None:
        return _events_file
    env_path = os.getenv(EVENTS_ENV, "").strip()
    if env_path:
        return Path(env_path).expanduser()
    return None


def _json_default(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)


def append_event(event_type: str, payload: dict[str, Any] | None = None) -> None:
    path = events_path()
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    row = {
        "timestamp": utc_now(),
        "event": event_type,
        "payload": payload or {},
    }
    with path.open("a", encoding="utf-8") as handle:
        handle.write(json.dumps(row, ensure_ascii=True, default=_json_default) + "\n")


def read_events(path: Path) -> list[dict[str, Any]]:
    if not path.exists():
        return []
    rows: list[dict[str, Any]] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError:
            continue
        if isinstance(row, dict):
            rows.append(row)
    return rows
