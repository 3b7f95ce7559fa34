"""Kernel backend selection.

Hot numeric kernels (fused attention softmax, GELU, the ray-cast renderer)
exist twice: a numba @njit implementation and a pure-numpy reference. The
LATENTNVS_BACKEND environment variable picks one ("numba" or "numpy").
Unset, numba is used when importable and numpy otherwise. The flag is read
on every call so tests can flip it at runtime.
"""

from __future__ import annotations

import os

ENV_FLAG = "LATENTNVS_BACKEND"

_numba_ok: bool | None = None


def numba_available() -> bool:
    global _numba_ok
    if _numba_ok is None:
        try:
            import numba  # noqa: F401

            _numba_ok = True
        except ImportError:
            _numba_ok = False
    return _numba_ok


def backend_name() -> str:
    """Active backend: "numba" or "numpy"."""
    choice = os.environ.get(ENV_FLAG, "").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not numba_available():
            raise RuntimeError(
                f"{ENV_FLAG}=numba requested but numba is not importable"
            )
        return "numba"
    if choice:
        raise RuntimeError(
            f"unrecognized {ENV_FLAG}={choice!r}, expected 'numba' or 'numpy'"
        )
    return "numba" if numba_available() else "numpy"


def use_numba() -> bool:
    return backend_name() == "numba"
