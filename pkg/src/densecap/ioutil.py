"""Atomic file writes: produce to a temp name, rename into place on success."""

from __future__ import annotations

import os
from contextlib import contextmanager


@contextmanager
def atomic_path(path: str | os.PathLike):
    """Yield a temporary path next to ``path``; rename over it on success.

    The temp file is removed if the body raises, so consumers never observe
    half-written artifacts.
    """
    final = os.fspath(path)
    tmp = final + ".tmp"
    try:
        yield tmp
        os.replace(tmp, final)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
