"""
Тесты настройки логирования.
"""

import logging

import pytest

import cli
from logger_config import setup_logger


@pytest.fixture
def fresh_logger(request):
    """Логгер с уникальным именем; обработчики закрываются после теста."""
    name = f"sdan.test.{request.node.name}"
    yield name
    log = logging.getLogger(name)
    for handler in list(log.handlers):
        handler.close()
        log.removeHandler(handler)


class TestSetupLogger:
    """Тесты для setup_logger."""

    def test_debug_reaches_file_at_info(self, fresh_logger, tmp_path):
        """Тест: при консольном уровне INFO записи DEBUG попадают в файл."""
        path = tmp_path / "run.log"
        log = setup_logger(fresh_logger, level=logging.INFO, log_file=str(path))
        log.debug("отладочная запись")
        log.info("информационная запись")
        for handler in log.handlers:
            handler.flush()
        text = path.read_text(encoding="utf-8")
        assert "DEBUG - отладочная запись" in text
        assert "INFO - информационная запись" in text

    def test_console_filters_by_level(self, fresh_logger, tmp_path):
        """Тест: консольный обработчик получает запрошенный уровень."""
        log = setup_logger(fresh_logger, level=logging.WARNING, log_file=str(tmp_path / "run.log"))
        assert log.level == logging.DEBUG
        levels = {type(h): h.level for h in log.handlers}
        assert levels[logging.StreamHandler] == logging.WARNING
        assert levels[logging.FileHandler] == logging.DEBUG

    def test_reconfigure_keeps_single_handlers(self, fresh_logger, tmp_path):
        """Тест: повторный вызов не дублирует обработчики."""
        path = str(tmp_path / "run.log")
        setup_logger(fresh_logger, level=logging.INFO, log_file=path)
        log = setup_logger(fresh_logger, level=logging.ERROR, log_file=path)
        assert len(log.handlers) == 2
        console = [h for h in log.handlers if not isinstance(h, logging.FileHandler)]
        assert console[0].level == logging.ERROR


@pytest.mark.integration
class TestLogFileFlag:
    """Тесты флага --log-file."""

    def test_gradcheck_debug_in_file(self, tmp_path):
        """Тест: подробности проверки градиентов пишутся в файл при уровне INFO."""
        path = tmp_path / "gc.log"
        code = cli.main(["gradcheck", "--op", "flip", "--trials", "1", "--f64",
                         "--log-level", "INFO", "--log-file", str(path)])
        assert code == 0
        log = logging.getLogger("sdan")
        file_handlers = [h for h in log.handlers if isinstance(h, logging.FileHandler)]
        for handler in file_handlers:
            handler.close()
            log.removeHandler(handler)
        assert "проверено координат" in path.read_text(encoding="utf-8")
