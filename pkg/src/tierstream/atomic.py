"""Crash-safe file writes: temp file, fsync, rename.

Every write boundary calls :func:`boundary` with a label. Tests install a
hook there to simulate a crash at that exact point; the hook raises
:class:`SimulatedCrash`, which derives from ``BaseException`` so the
cleanup paths below (which catch ``Exception``) leave the half-finished
on-disk state in place exactly as a real crash would.
"""

from __future__ import annotations

import os
import zlib
from pathlib import Path
from typing import Callable

fault_hook: Callable[[str], None] | None = None


class SimulatedCrash(BaseException):
    """Raised by test hooks to abort a write at a named boundary."""


def boundary(label: str) -> None:
    if fault_hook is not None:
        fault_hook(label)


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    except OSError:
        pass
    finally:
        os.close(fd)


def write_temp(path: Path, data: bytes, label: str) -> Path:
    """Write ``data`` to ``<path>.tmp`` durably and return the temp path."""
    tmp = path.with_name(path.name + ".tmp")
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(tmp, "wb") as fh:
            half = len(data) // 2
            fh.write(data[:half])
            fh.flush()
            boundary(f"{label}:tmp-partial")
            fh.write(data[half:])
            fh.flush()
            os.fsync(fh.fileno())
    except Exception:
        tmp.unlink(missing_ok=True)
        raise
    boundary(f"{label}:tmp-written")
    return tmp


def atomic_write_bytes(path: str | Path, data: bytes, label: str = "file") -> None:
    path = Path(path)
    tmp = write_temp(path, data, label)
    os.replace(tmp, path)
    _fsync_dir(path.parent)
    boundary(f"{label}:renamed")
