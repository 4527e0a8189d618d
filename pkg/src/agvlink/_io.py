"""Shared output plumbing for the CSV writers."""

from __future__ import annotations

from contextlib import contextmanager


@contextmanager
def csv_sink(path):
    """Yield a writable text handle; `path` may be a path or open file."""
    if hasattr(path, "write"):
        yield path
        return
    fh = open(path, "w", newline="")
    try:
        yield fh
    finally:
        fh.close()
