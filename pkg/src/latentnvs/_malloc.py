"""glibc allocator tuning for large-tensor churn.

Training allocates and frees hundreds of megabytes of activation buffers
per optimizer step.  With glibc defaults those go through mmap/munmap,
so every step re-faults every page (~0.7 ms/MB — it roughly doubles the
step time).  Raising the mmap threshold keeps big buffers on the heap
free-list, where they get reused warm.

No-op off glibc.  Set LATENTNVS_NO_MALLOC_TUNING=1 to opt out.
"""

from __future__ import annotations

import ctypes
import os
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3

_applied = False


def tune() -> bool:
    """Idempotent; returns True when the tunables were applied."""
    global _applied
    if _applied:
        return True
    if os.environ.get("LATENTNVS_NO_MALLOC_TUNING") == "1":
        return False
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL("libc.so.6")
        ok = libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30) == 1
        ok = libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30) == 1 and ok
    except OSError:
        return False
    _applied = ok
    return ok
