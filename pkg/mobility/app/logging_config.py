from __future__ import annotations

import logging
import sys
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any

import structlog
from structlog.typing import EventDict, Processor

from mobility.app.config import AppSettings

ROOT_LOGGER_NAME = "mobility"
LOG_FILE_NAME = "mobility.jsonl"


def configure_application_logging(settings: AppSettings) -> Path | None:
    """Route the `mobility` logger tree to stderr and, optionally, a JSON-lines file.

    Stdout is never touched: it carries reports only. Calling this again replaces the
    handlers installed by a previous call.
    """
    _configure_structlog()

    logger = logging.getLogger(ROOT_LOGGER_NAME)
    logger.setLevel(logging.DEBUG)
    logger.propagate = False
    _close_handlers(logger)

    stderr_handler = logging.StreamHandler(stream=sys.stderr)
    stderr_handler.setLevel(_resolve_log_level(settings.log_level))
    stderr_handler.setFormatter(
        _formatter(structlog.dev.ConsoleRenderer(colors=_stream_supports_color(sys.stderr)))
    )
    logger.addHandler(stderr_handler)

    log_file: Path | None = None
    if settings.log_file_enabled:
        settings.log_dir.mkdir(parents=True, exist_ok=True)
        log_file = settings.log_dir / LOG_FILE_NAME
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(
            _formatter(
                structlog.processors.JSONRenderer(sort_keys=True),
                _add_record_metadata,
                structlog.processors.format_exc_info,
            )
        )
        logger.addHandler(file_handler)

    logger.debug(
        "logging configured stderr_level=%s log_file=%s workers=%s",
        settings.log_level,
        log_file,
        settings.workers,
    )
    return log_file


@contextmanager
def run_context(**fields: Any) -> Iterator[None]:
    """Attach `fields` (command, run_hash, ...) to every record logged inside the block."""
    structlog.contextvars.bind_contextvars(**fields)
    try:
        yield
    finally:
        structlog.contextvars.clear_contextvars()


def _resolve_log_level(raw_level: str) -> int:
    resolved = logging._nameToLevel.get(raw_level.strip().upper())
    return logging.WARNING if resolved is None else resolved


def _configure_structlog() -> None:
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.stdlib.filter_by_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso", utc=True, key="timestamp"),
            structlog.stdlib.ProcessorFormatter.wrap_for_formatter,
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


def _close_handlers(logger: logging.Logger) -> None:
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()


def _formatter(renderer: Processor, *extra: Processor) -> structlog.stdlib.ProcessorFormatter:
    # stdlib records only; structlog events arrive already enriched
    pre_chain: list[Processor] = [
        structlog.contextvars.merge_contextvars,
        structlog.stdlib.add_logger_name,
        structlog.stdlib.add_log_level,
        structlog.processors.TimeStamper(fmt="iso", utc=True, key="timestamp"),
    ]
    return structlog.stdlib.ProcessorFormatter(
        foreign_pre_chain=pre_chain,
        processors=[
            *extra,
            structlog.stdlib.ProcessorFormatter.remove_processors_meta,
            renderer,
        ],
    )


def _add_record_metadata(
    _logger: logging.Logger,
    _method_name: str,
    event_dict: EventDict,
) -> EventDict:
    record = event_dict.get("_record")
    if isinstance(record, logging.LogRecord):
        event_dict["module"] = record.module
        event_dict["lineno"] = record.lineno
        # solver and simulation workers run on pool threads
        event_dict["thread_name"] = record.threadName
    return event_dict


def _stream_supports_color(stream: object) -> bool:
    isatty = getattr(stream, "isatty", None)
    if not callable(isatty):
        return False
    try:
        return bool(isatty())
    except Exception:
        return False
