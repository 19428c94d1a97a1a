import json
import logging

from hartx.logging_config import get_logger, resolve_level


def test_level_resolution_order(monkeypatch):
    monkeypatch.delenv("HARTX_LOG_LEVEL", raising=False)
    monkeypatch.delenv("HARTX_TRAIN_LOG_LEVEL", raising=False)
    assert resolve_level() == logging.INFO
    monkeypatch.setenv("HARTX_LOG_LEVEL", "warning")
    assert resolve_level("HARTX_TRAIN_LOG_LEVEL") == logging.WARNING
    monkeypatch.setenv("HARTX_TRAIN_LOG_LEVEL", "debug")
    assert resolve_level("HARTX_TRAIN_LOG_LEVEL") == logging.DEBUG
    monkeypatch.setenv("HARTX_TRAIN_LOG_LEVEL", "loud")
    assert resolve_level("HARTX_TRAIN_LOG_LEVEL") == logging.INFO


def test_text_records_go_to_current_stderr(capsys):
    log = get_logger("hartx.test_text")
    log.info("epoch=1 loss=0.5")
    captured = capsys.readouterr()
    assert captured.out == ""
    assert "INFO [hartx.test_text] epoch=1 loss=0.5" in captured.err


def test_json_records(monkeypatch, capsys):
    monkeypatch.setenv("HARTX_LOG_JSON", "true")
    log = get_logger("hartx.test_json")
    log.warning("split=test windows=0")
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["level"] == "WARNING"
    assert record["logger"] == "hartx.test_json"
    assert record["msg"] == "split=test windows=0"
