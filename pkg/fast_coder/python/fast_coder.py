"""ctypes bindings for the accelerated range coder.

Everything crosses the language boundary as C-compatible flat buffers: an
i16 symbol array, a (n, 512) u16 blob of cumulative CDF starts per coded
element (the top value 65536 is implicit), and raw stream bytes. Build the
shared library with `cargo build --release` in the crate root first.
"""

import ctypes
from pathlib import Path

import numpy as np

NUM_SYMBOLS = 512
SYMBOL_MIN = -256

FC_OK = 0
ERROR_NAMES = {
    -1: "null pointer",
    -2: "symbol outside the coded range",
    -3: "output buffer too small",
    -4: "corrupt stream: truncated",
    -5: "corrupt stream: inconsistent state",
    -6: "unusable cdf row",
}


class FastCoderError(RuntimeError):
    """A coder call failed; `code` carries the library's status code."""

    def __init__(self, code):
        super().__init__(ERROR_NAMES.get(code, f"coder error {code}"))
        self.code = code


def library_path():
    root = Path(__file__).resolve().parent.parent
    for profile in ("release", "debug"):
        candidate = root / "target" / profile / "libfast_coder.so"
        if candidate.exists():
            return candidate
    raise OSError(
        "libfast_coder.so not found; run `cargo build --release` in "
        f"{root}")


_lib = None


def _load():
    global _lib
    if _lib is None:
        lib = ctypes.CDLL(str(library_path()))
        lib.fc_encode.restype = ctypes.c_int64
        lib.fc_encode.argtypes = [ctypes.c_void_p, ctypes.c_size_t,
                                  ctypes.c_void_p, ctypes.c_void_p,
                                  ctypes.c_size_t]
        lib.fc_decode.restype = ctypes.c_int64
        lib.fc_decode.argtypes = [ctypes.c_void_p, ctypes.c_size_t,
                                  ctypes.c_void_p, ctypes.c_size_t,
                                  ctypes.c_void_p]
        lib.fc_encode_bound.restype = ctypes.c_size_t
        lib.fc_encode_bound.argtypes = [ctypes.c_size_t]
        _lib = lib
    return _lib


def _check_starts(starts, n):
    starts = np.ascontiguousarray(starts, dtype=np.uint16)
    if starts.ndim != 2 or starts.shape[1] != NUM_SYMBOLS:
        raise ValueError(f"cdf starts must be (n, {NUM_SYMBOLS}) u16")
    if starts.shape[0] != n:
        raise ValueError(f"{n} symbols but {starts.shape[0]} cdf rows")
    return starts


def encode_bound(n):
    """Worst-case stream size in bytes for n symbols."""
    return int(_load().fc_encode_bound(n))


def encode(symbols, starts):
    """Encode an i16 symbol array against per-element CDF starts to bytes."""
    symbols = np.ascontiguousarray(symbols, dtype=np.int16)
    if symbols.ndim != 1:
        raise ValueError("symbols must be a 1-d array")
    n = symbols.shape[0]
    starts = _check_starts(starts, n)
    cap = encode_bound(n)
    out = np.empty(cap, dtype=np.uint8)
    written = _load().fc_encode(symbols.ctypes.data, n, starts.ctypes.data,
                                out.ctypes.data, cap)
    if written < 0:
        raise FastCoderError(written)
    return out[:written].tobytes()


def decode(data, starts):
    """Decode one symbol per CDF row from stream bytes; raises on corruption."""
    data = bytes(data)
    starts = np.ascontiguousarray(starts, dtype=np.uint16)
    if starts.ndim != 2 or starts.shape[1] != NUM_SYMBOLS:
        raise ValueError(f"cdf starts must be (n, {NUM_SYMBOLS}) u16")
    n = starts.shape[0]
    out = np.empty(n, dtype=np.int16)
    status = _load().fc_decode(data, len(data), starts.ctypes.data, n,
                               out.ctypes.data)
    if status != FC_OK:
        raise FastCoderError(status)
    return out
