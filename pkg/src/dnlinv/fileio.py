"""Binary tensor files, PGM image export, and CSV output.

The tensor format is deliberately tiny: magic ``DNLV``, a version word,
a dtype code, the rank, the extents, then the raw little-endian payload.
Anything that can write those 4 + 4 + 4 + 4 + 8*ndim header bytes can feed
data into the reconstruction path. All writers go through a temp file and
an atomic rename so readers never observe a partial artifact.
"""

from __future__ import annotations

import csv
import os
import struct
import tempfile

import numpy as np

MAGIC = b"DNLV"
FORMAT_VERSION = 1

_CODE_TO_DTYPE = {
    1: np.dtype("<f4"),
    2: np.dtype("<c8"),
    3: np.dtype("<f8"),
    4: np.dtype("<c16"),
}
_KIND_TO_CODE = {
    ("f", 4): 1,
    ("c", 8): 2,
    ("f", 8): 3,
    ("c", 16): 4,
}


class TensorFileError(ValueError):
    """Malformed or unreadable tensor file."""


def _atomic_write(path, payload: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".part-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _storage_dtype(arr: np.ndarray) -> np.dtype:
    kind = arr.dtype.kind
    if kind in "iub":
        return np.dtype("<f8")
    if kind == "f":
        return np.dtype("<f4") if arr.dtype.itemsize <= 4 else np.dtype("<f8")
    if kind == "c":
        return np.dtype("<c8") if arr.dtype.itemsize <= 8 else np.dtype("<c16")
    raise TensorFileError(f"cannot store arrays of dtype {arr.dtype}")


def write_tensor(path, arr) -> None:
    """Write an array; real data as 32/64-bit floats, complex interleaved.

    Integer and boolean arrays are promoted to real64 (masks survive a
    round trip exactly).
    """
    arr = np.asarray(arr)
    dt = _storage_dtype(arr)
    code = _KIND_TO_CODE[(dt.kind, dt.itemsize)]
    data = np.ascontiguousarray(arr, dtype=dt)
    header = MAGIC + struct.pack("<III", FORMAT_VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    _atomic_write(path, header + data.tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16:
        raise TensorFileError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise TensorFileError(f"{path}: bad magic {raw[:4]!r}")
    version, code, ndim = struct.unpack_from("<III", raw, 4)
    if version != FORMAT_VERSION:
        raise TensorFileError(f"{path}: unsupported format version {version}")
    if code not in _CODE_TO_DTYPE:
        raise TensorFileError(f"{path}: unknown dtype code {code}")
    if ndim > 32:
        raise TensorFileError(f"{path}: implausible rank {ndim}")
    offset = 16 + 8 * ndim
    if len(raw) < offset:
        raise TensorFileError(f"{path}: truncated extents")
    shape = struct.unpack_from(f"<{ndim}Q", raw, 16)
    dt = _CODE_TO_DTYPE[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    payload = raw[offset:]
    if len(payload) != expected:
        raise TensorFileError(
            f"{path}: payload is {len(payload)} bytes, header promises {expected}"
        )
    return np.frombuffer(payload, dtype=dt).reshape(shape).copy()


# ------------------------------------------------------------ PGM export


def export_image(arr, path, window=None) -> None:
    """Write a real 2-D array as a binary 8-bit PGM with linear windowing.

    ``window`` is (lo, hi); values clip to it and hi maps to byte 255.
    Default is [0, max]. A degenerate window (hi <= lo) renders black.
    """
    arr = np.asarray(arr, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite pixels")
    lo, hi = (0.0, float(arr.max())) if window is None else map(float, window)
    if hi > lo:
        scaled = np.clip((arr - lo) / (hi - lo), 0.0, 1.0)
    else:
        scaled = np.zeros_like(arr)
    pixels = np.round(scaled * 255).astype(np.uint8)
    h, w = pixels.shape
    _atomic_write(path, b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Parse a binary (P5) PGM back to a uint8 array; the export oracle."""
    with open(path, "rb") as f:
        raw = f.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    data = raw[pos : pos + w * h]
    if len(data) != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


# -------------------------------------------------------------- CSV files


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if np.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def write_csv(path, header, rows) -> None:
    """Comma-separated values, '.' decimal, floats at full precision."""
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    _atomic_write(path, buf.getvalue().encode("utf-8"))


def read_csv(path):
    """Returns (header, rows) with every cell still a string."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty CSV") from None
        return header, [row for row in reader]


TRACE_COLUMNS = ("iteration", "loss", "fidelity", "logdet", "latent_prior", "entropy", "psnr", "ssim")


def write_trace_csv(trace, path) -> None:
    """One row per traced iteration; blank psnr/ssim when no reference."""
    rows = [
        (t.iteration, t.loss, t.fidelity, t.logdet, t.latent_prior, t.entropy, t.psnr, t.ssim)
        for t in trace
    ]
    write_csv(path, TRACE_COLUMNS, rows)
