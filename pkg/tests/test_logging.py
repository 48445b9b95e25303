#!filepath: tests/test_logging.py
from __future__ import annotations

import json
import logging

from weakfbsde_app.utils.logger import LoggingSettings
from weakfbsde_app.utils.logging_jsonl import JsonlFormatter


def test_jsonl_formatter_keeps_extra_fields() -> None:
    record = logging.LogRecord("weakfbsde_app.pde", logging.INFO, __file__, 1, "solved %s", ("heat-x2",), None)
    record.picard_iters = 3
    payload = json.loads(JsonlFormatter().format(record))
    assert payload["message"] == "solved heat-x2"
    assert payload["level"] == "INFO"
    assert payload["extra"] == {"picard_iters": 3}


def test_logging_settings_read_the_environment(monkeypatch) -> None:
    monkeypatch.setenv("WEAKFBSDE_CONSOLE_LEVEL", "ERROR")
    monkeypatch.setenv("WEAKFBSDE_JSONL_LOG", "runs.jsonl")
    s = LoggingSettings(_env_file=None)
    assert s.console_level == "ERROR"
    assert s.jsonl_name == "runs.jsonl"
