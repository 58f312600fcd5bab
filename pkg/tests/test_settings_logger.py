import io
import json

import pytest

from config import SCHEMA, VERSION
from core.commands import execute_command, exit_code
from core.errors import SchemaError
from core.logger import RunLogger
from core.settings import DEFAULTS, dump_document, load_document, load_settings, save_settings


# ── Settings ──

def test_defaults_when_file_is_missing(tmp_path):
    settings = load_settings(str(tmp_path / "missing.json"))
    assert settings == DEFAULTS
    assert settings is not DEFAULTS
    settings["experiment"]["n"] = 99
    assert DEFAULTS["experiment"]["n"] == 5


def test_save_and_load(tmp_path):
    path = str(tmp_path / "nested" / "settings.json")
    save_settings({"threads": 1, "csv_float_format": "%.6g"}, path)
    settings = load_settings(path)
    assert settings["threads"] == 1
    assert settings["csv_float_format"] == "%.6g"
    assert settings["histogram_bins"] == DEFAULTS["histogram_bins"]


def test_corrupt_settings_fall_back(tmp_path):
    path = tmp_path / "settings.json"
    path.write_text("{not json", encoding="utf-8")
    assert load_settings(str(path)) == DEFAULTS


def test_load_document(tmp_path):
    path = tmp_path / "doc.json"
    path.write_text(json.dumps({"schema": SCHEMA, "kind": "experiment", "n": 5}), encoding="utf-8")
    assert load_document(str(path), "experiment")["n"] == 5
    untagged = tmp_path / "bare.json"
    untagged.write_text("[[1, 0], [0, 1]]", encoding="utf-8")
    assert load_document(str(untagged)) == [[1, 0], [0, 1]]


@pytest.mark.parametrize("text,kind", [
    ("{oops", None),
    (json.dumps({"schema": "elsewhere/v2"}), None),
    (json.dumps({"kind": "trajectory"}), "experiment"),
    ("3.5", None),
])
def test_load_document_errors(tmp_path, text, kind):
    path = tmp_path / "doc.json"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(SchemaError):
        load_document(str(path), kind)


def test_load_document_missing_file(tmp_path):
    with pytest.raises(SchemaError):
        load_document(str(tmp_path / "absent.json"))


def test_dump_document():
    assert dump_document({"value": 1}, "discriminant") == {"schema": SCHEMA, "value": 1, "kind": "discriminant"}
    assert dump_document({"kind": "trajectory"}, "flow")["kind"] == "trajectory"


# ── Run logger ──

def test_log_and_format():
    RunLogger.log("regime", {"d": 4}, {"success": True, "result": {}}, elapsed=0.25)
    RunLogger.log("fiber", {"r": 1}, {"success": False, "error": "bad signature", "error_kind": "precondition"})
    entries = RunLogger.get_entries()
    assert RunLogger.entry_count() == 2
    assert entries[0]["success"] is True
    assert "regime" in RunLogger.format_entry(entries[0])
    failed = RunLogger.format_entry(entries[1])
    assert "FAILED (precondition)" in failed
    assert "bad signature" in failed


def test_large_values_are_truncated():
    RunLogger.log("metric", {"blob": "x" * 5000, "rows": list(range(2000))}, {"success": True})
    args = RunLogger.get_entries()[0]["args"]
    assert args["blob"].endswith("(5000 chars)")
    assert args["rows"] == "<list of 2000 items>"


def test_sink_receives_entries():
    seen = []
    RunLogger.set_sink(seen.append)
    RunLogger.log("regime", {}, {"success": True})
    assert len(seen) == 1
    assert seen[0]["command"] == "regime"


def test_save_to_file(tmp_path):
    RunLogger.log("regime", {}, {"success": True})
    path = RunLogger.save_to_file(str(tmp_path / "a" / "log.json"))
    assert json.loads(open(path, encoding="utf-8").read())[0]["command"] == "regime"


def test_manifest():
    manifest = RunLogger.manifest("flow", {"r": 2}, 7, ["out.json"], 1.23456789)
    assert manifest["schema"] == SCHEMA
    assert manifest["version"] == VERSION
    assert manifest["seed"] == 7
    assert manifest["wall_time"] == pytest.approx(1.234568)
    stream = io.StringIO()
    RunLogger.emit_manifest(manifest, stream)
    assert json.loads(stream.getvalue()) == manifest


# ── Command registry ──

def test_unknown_command():
    result = execute_command("integrate", {})
    assert not result["success"]
    assert exit_code(result) == 2
    assert RunLogger.entry_count() == 1


def test_precondition_failure():
    result = execute_command("regime", {"d": 1, "n": 2, "r": 1})
    assert result["error_kind"] == "precondition"
    assert exit_code(result) == 2


def test_success_is_logged_without_csv():
    result = execute_command("demo-diverge", {"d": 3, "n": 2, "taus": "1,10"})
    assert exit_code(result) == 0
    assert result["csv"].startswith("tau,loss,param_norm")
    assert "csv" not in RunLogger.get_entries()[0]["result"]


def test_warnings_are_collected():
    result = execute_command("iid-count", {"n": 2, "t": "1,3", "mu2": 1.0, "mu4": 5.0})
    assert result["success"]
    assert any("assumption violated" in note for note in result["warnings"])
