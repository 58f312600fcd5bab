"""
Run Logger - records every executed command and builds run manifests.

Stores an in-memory list and saves it to data/run_log.json on request.
The CLI echoes entries in real time with --verbose and always writes the
manifest of a run to stderr.
"""
import json
import os
import sys
import threading
import time

from config import DATA_DIR, SCHEMA, VERSION

LOG_PATH = os.path.join(DATA_DIR, "run_log.json")
_lock = threading.Lock()


class RunLogger:
    """Singleton-style command logger."""

    _entries: list[dict] = []
    _sink = None  # --verbose sets this for real-time echo
    _session_start: float = time.time()

    @classmethod
    def set_sink(cls, sink):
        """Register a callable(entry_dict) for real-time echo."""
        cls._sink = sink

    @classmethod
    def clear(cls):
        """Clear the in-memory log (start a fresh session)."""
        with _lock:
            cls._entries.clear()
            cls._session_start = time.time()

    @classmethod
    def log(cls, command: str, args: dict, result: dict, elapsed: float = 0.0):
        """Log a single command execution."""
        entry = {
            "timestamp": time.strftime("%Y-%m-%d %H:%M:%S"),
            "session_elapsed": round(time.time() - cls._session_start, 3),
            "command": command,
            "args": _safe_truncate(args),
            "result": _safe_truncate(result),
            "success": result.get("success", False) if isinstance(result, dict) else False,
            "error_kind": result.get("error_kind") if isinstance(result, dict) else None,
            "elapsed": round(elapsed, 3),
        }

        with _lock:
            cls._entries.append(entry)

        if cls._sink:
            try:
                cls._sink(entry)
            except Exception:
                pass

    @classmethod
    def get_entries(cls) -> list[dict]:
        """Get a copy of all log entries."""
        with _lock:
            return list(cls._entries)

    @classmethod
    def entry_count(cls) -> int:
        with _lock:
            return len(cls._entries)

    @classmethod
    def save_to_file(cls, path: str | None = None):
        """Save the full log to a JSON file."""
        path = path or LOG_PATH
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with _lock:
            entries = list(cls._entries)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(entries, f, indent=2, ensure_ascii=False, default=str)
        return path

    @classmethod
    def format_entry(cls, entry: dict) -> str:
        """Format a single entry for display."""
        status = "ok" if entry["success"] else f"FAILED ({entry.get('error_kind') or 'error'})"
        args_str = json.dumps(entry.get("args", {}), default=str)
        if len(args_str) > 200:
            args_str = args_str[:200] + "..."

        line = f"[+{entry['session_elapsed']}s] {entry['command']}({args_str}) {status} in {entry['elapsed']}s"
        if not entry.get("success"):
            err = entry.get("result", {})
            if isinstance(err, dict):
                err = err.get("error", str(err))
            line += f"\n    {str(err)[:200]}"
        return line

    @staticmethod
    def manifest(command: str, config: dict, seed: int | None, outputs: list[str],
                 wall_time: float) -> dict:
        """The run manifest; equal manifests up to wall_time mean identical outputs."""
        return {
            "schema": SCHEMA,
            "kind": "manifest",
            "subcommand": command,
            "config": config,
            "seed": seed,
            "version": VERSION,
            "wall_time": round(wall_time, 6),
            "outputs": list(outputs),
        }

    @staticmethod
    def emit_manifest(manifest: dict, stream=None):
        stream = stream or sys.stderr
        stream.write(json.dumps(manifest, sort_keys=True, default=str) + "\n")
        stream.flush()


def _safe_truncate(obj, max_len=2000):
    """Truncate large values in dicts for log storage."""
    if isinstance(obj, dict):
        out = {}
        for k, v in obj.items():
            if isinstance(v, str) and len(v) > max_len:
                out[k] = v[:max_len] + f"... ({len(v)} chars)"
            elif isinstance(v, (list, dict)) and len(json.dumps(v, default=str)) > max_len:
                out[k] = f"<{type(v).__name__} of {len(v)} items>"
            else:
                out[k] = v
        return out
    return obj
