"""Atomic file writes shared by model, report and raster outputs."""

import os
import tempfile


def atomic_write_bytes(path: str, data: bytes) -> str:
    """
    Write data to path through a temporary file in the same directory and a rename.

    Args:
        path: Destination file
        data: Content to write

    Returns:
        The destination path
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def atomic_write_text(path: str, text: str) -> str:
    """UTF-8 text variant of atomic_write_bytes."""
    return atomic_write_bytes(path, text.encode("utf-8"))
