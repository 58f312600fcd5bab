"""
Settings Manager - load/save run preferences and read versioned JSON documents.
"""
import os
import json

from config import APP_DIR, REFERENCE_EXPERIMENT, DATA_DIR, SCHEMA
from core.errors import SchemaError

SETTINGS_PATH = os.path.join(DATA_DIR, "settings.json")

DEFAULTS = {
    # Execution
    "threads": 4,
    "output_dir": os.path.join(APP_DIR, "runs"),
    "auto_save_logs": False,

    # CSV output
    "csv_float_format": "%.17g",
    "histogram_bins": 40,

    # Default teacher-student experiment
    "experiment": {k: (dict(v) if isinstance(v, dict) else v) for k, v in REFERENCE_EXPERIMENT.items()},
}


def load_settings(path: str | None = None) -> dict:
    """Load settings from JSON, filling in defaults for missing keys."""
    path = path or SETTINGS_PATH
    settings = json.loads(json.dumps(DEFAULTS))
    if os.path.exists(path):
        try:
            with open(path, "r", encoding="utf-8") as f:
                saved = json.load(f)
            settings.update(saved)
        except (OSError, ValueError):
            pass
    return settings


def save_settings(settings: dict, path: str | None = None):
    """Save settings dict to JSON."""
    path = path or SETTINGS_PATH
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(settings, f, indent=2, ensure_ascii=False)


def load_document(path: str, kind: str | None = None) -> dict:
    """Read an input document, checking the schema tag and kind when present."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except OSError as e:
        raise SchemaError(f"cannot read {path}: {e}") from e
    except ValueError as e:
        raise SchemaError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(payload, (dict, list)):
        raise SchemaError(f"{path} must hold a JSON object or array")
    if isinstance(payload, dict):
        schema = payload.get("schema")
        if schema is not None and schema != SCHEMA:
            raise SchemaError(f"{path} has schema {schema!r}, expected {SCHEMA!r}")
        found = payload.get("kind")
        if kind and found is not None and found != kind:
            raise SchemaError(f"{path} holds a {found!r} document, expected {kind!r}")
    return payload


def dump_document(payload: dict, kind: str) -> dict:
    """Stamp the schema tag and document kind on an outgoing payload."""
    return {"schema": SCHEMA, **payload, "kind": payload.get("kind", kind)}
