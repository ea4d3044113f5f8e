"""Small shared helpers: warning category and atomic file writes."""

from __future__ import annotations

import os
import tempfile
import warnings


class ItemclWarning(UserWarning):
    """Category for degenerate-but-legal situations (empty splits, short
    eligible sets, excluded items)."""


def warn(message: str) -> None:
    warnings.warn(message, ItemclWarning, stacklevel=3)


def atomic_write_text(path: str, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file and rename."""
    _atomic_write(path, text.encode("utf-8"))


def atomic_write_bytes(path: str, data: bytes) -> None:
    _atomic_write(path, data)


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
