"""Hot-loop kernels with backend selection at import.

Prefers the compiled extension (_kernels, built by setup.py); falls back to
the pure-Python twin when the extension is unavailable. Set
RAGFUZZ_PURE_PYTHON=1 to force the fallback (used by the benchmark and the
cross-check tests). Both backends return bit-identical results.
"""

import os

_NAMES = [
    "hash64",
    "embed_text",
    "dot",
    "update_bitmap",
    "bitflip",
    "byteflip",
    "arith_byte",
    "block_duplicate",
    "block_delete",
    "insert_bytes",
]

if os.environ.get("RAGFUZZ_PURE_PYTHON"):
    from ragfuzz.kernels import _pykernels as _impl

    BACKEND = "python"
else:
    try:
        from ragfuzz.kernels import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        from ragfuzz.kernels import _pykernels as _impl

        BACKEND = "python"

hash64 = _impl.hash64
embed_text = _impl.embed_text
dot = _impl.dot
update_bitmap = _impl.update_bitmap
bitflip = _impl.bitflip
byteflip = _impl.byteflip
arith_byte = _impl.arith_byte
block_duplicate = _impl.block_duplicate
block_delete = _impl.block_delete
insert_bytes = _impl.insert_bytes

__all__ = _NAMES + ["BACKEND"]
