"""Small shared helpers: atomic file output and file-format errors."""

import os
import tempfile


class CorruptFileError(ValueError):
    """Raised when a binary artifact fails magic/version/size validation."""


def atomic_write_bytes(path, data: bytes) -> None:
    """Write `data` to `path` via a temp file + rename, so readers never
    observe a partially written file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
