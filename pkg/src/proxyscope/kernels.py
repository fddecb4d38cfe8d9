"""Backend selection for the hot kernels.

The compiled ``_speedups`` extension is preferred; the pure-Python module is
used when it is missing or when ``PROXYSCOPE_PURE`` is set to a true value.
Both expose ``keccak256``, ``decode_raw``, ``contains_opcode`` and
``jumpdests`` with identical behaviour.
"""

import os

from . import _pure

if os.environ.get("PROXYSCOPE_PURE", "").lower() in ("1", "true", "yes"):
    _impl = _pure
    BACKEND = "python"
else:
    try:
        from . import _speedups as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        _impl = _pure
        BACKEND = "python"

keccak256 = _impl.keccak256
decode_raw = _impl.decode_raw
contains_opcode = _impl.contains_opcode
jumpdests = _impl.jumpdests

__all__ = ["BACKEND", "keccak256", "decode_raw", "contains_opcode", "jumpdests"]
