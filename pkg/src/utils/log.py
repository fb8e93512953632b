"""
PackAudit - Structured logging
Renders `LEVEL event=<message> key=value ...` lines on stderr
"""

import logging
import sys
from typing import Any, Dict, MutableMapping, Tuple

_FIELDS_ATTR = "kv_fields"
_STD_KWARGS = {"exc_info", "stack_info", "stacklevel", "extra"}


def _render_value(value: Any) -> str:
    if isinstance(value, float):
        text = f"{value:.6g}"
    else:
        text = str(value)
    if text == "" or any(ch in text for ch in ' "='):
        text = '"' + text.replace('"', '\\"') + '"'
    return text


class KeyValueFormatter(logging.Formatter):
    """Formats a record as one key=value line"""

    def format(self, record: logging.LogRecord) -> str:
        parts = [record.levelname, f"event={_render_value(record.getMessage())}",
                 f"logger={record.name}"]
        fields: Dict[str, Any] = getattr(record, _FIELDS_ATTR, {}) or {}
        for key, value in fields.items():
            parts.append(f"{key}={_render_value(value)}")
        line = " ".join(parts)
        if record.exc_info:
            line += "\n" + self.formatException(record.exc_info)
        return line


class StructuredAdapter(logging.LoggerAdapter):
    """Lets call sites write logger.info("trained", trees=500)"""

    def process(self, msg: Any, kwargs: MutableMapping[str, Any]) -> Tuple[Any, MutableMapping[str, Any]]:
        fields = {k: kwargs.pop(k) for k in list(kwargs) if k not in _STD_KWARGS}
        extra = dict(kwargs.get("extra") or {})
        extra[_FIELDS_ATTR] = fields
        kwargs["extra"] = extra
        return msg, kwargs


def get_logger(name: str) -> StructuredAdapter:
    return StructuredAdapter(logging.getLogger(name), {})


def setup_logging(level: str = "INFO") -> None:
    """Install the stderr key=value handler on the package root logger"""
    root = logging.getLogger("src")
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(KeyValueFormatter())
    root.addHandler(handler)
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))
    root.propagate = False
