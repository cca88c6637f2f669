"""Matrix containers (binary ORPM and CSV) and grayscale PGM frames.

ORPM layout, all little-endian::

    offset  size  field
    0       4     magic b"ORPM"
    4       2     version (u16) = 1
    6       2     reserved (u16) = 0
    8       4     rows (u32)
    12      4     cols (u32)
    16      8*rows*cols  binary64 values, column-major
"""

from __future__ import annotations

import csv
import io
import os
import struct

import numpy as np

MAGIC = b"ORPM"
VERSION = 1
_HEADER = struct.Struct("<4sHHII")


class FormatError(ValueError):
    pass


class MagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


def _read_source(src):
    if isinstance(src, (bytes, bytearray, memoryview)):
        return bytes(src)
    if hasattr(src, "read"):
        return src.read()
    with open(src, "rb") as fh:
        return fh.read()


def _write_target(dst, data, mode="wb"):
    if hasattr(dst, "write"):
        dst.write(data)
        return
    # write to a sibling then rename so readers never see half a file
    tmp = f"{dst}.tmp{os.getpid()}"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, dst)


# --------------------------------------------------------------------------
# ORPM


def matrix_to_bytes(M):
    M = np.asarray(M, dtype="<f8")
    if M.ndim != 2:
        raise FormatError(f"expected a 2-D matrix, got shape {M.shape}")
    rows, cols = M.shape
    return _HEADER.pack(MAGIC, VERSION, 0, rows, cols) + M.tobytes(order="F")


def matrix_from_bytes(data):
    if len(data) < _HEADER.size:
        raise TruncatedError(f"header needs {_HEADER.size} bytes, got {len(data)}")
    magic, version, _, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"unsupported version {version}")
    need = _HEADER.size + 8 * rows * cols
    if len(data) < need:
        raise TruncatedError(f"payload needs {need} bytes, got {len(data)}")
    flat = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=_HEADER.size)
    return flat.reshape((rows, cols), order="F").astype(np.float64)


def write_matrix(dst, M):
    _write_target(dst, matrix_to_bytes(M))


def read_matrix(src):
    return matrix_from_bytes(_read_source(src))


# --------------------------------------------------------------------------
# CSV


def format_csv_matrix(M):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise FormatError(f"expected a 2-D matrix, got shape {M.shape}")
    return "".join(",".join(f"{v:.17g}" for v in row) + "\n" for row in M)


def parse_csv_matrix(text):
    rows = []
    for lineno, fields in enumerate(csv.reader(io.StringIO(text)), 1):
        if not fields:
            continue
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        if len(rows[-1]) != len(rows[0]):
            raise FormatError(f"line {lineno}: {len(rows[-1])} fields, expected {len(rows[0])}")
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def write_csv_matrix(dst, M):
    _write_target(dst, format_csv_matrix(M).encode())


def read_csv_matrix(src):
    data = _read_source(src)
    try:
        text = data.decode() if isinstance(data, bytes) else data
    except UnicodeDecodeError as exc:
        raise FormatError(str(exc)) from None
    return parse_csv_matrix(text)


def write_ev_csv(dst, ev):
    lines = ["sample,ev\n"] + [f"{i},{v:.17g}\n" for i, v in enumerate(ev, 1)]
    _write_target(dst, "".join(lines).encode())


def read_ev_csv(src):
    text = _read_source(src).decode()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["sample", "ev"]:
        raise FormatError("missing 'sample,ev' header")
    return np.array([float(r[1]) for r in rows[1:] if r])


def detect_format(path):
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".orpm", ".csv"):
        return ext[1:]
    raise FormatError(f"cannot tell the format of {path!r}; use .orpm or .csv")


def load_any(path):
    return read_matrix(path) if detect_format(path) == "orpm" else read_csv_matrix(path)


def save_any(path, M):
    if detect_format(path) == "orpm":
        write_matrix(path, M)
    else:
        write_csv_matrix(path, M)


# --------------------------------------------------------------------------
# PGM frames


def _pgm_tokens(data, count):
    """First ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, i = [], 0
    while len(tokens) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i >= len(data):
            raise FormatError("PGM header ended early")
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
            j += 1
        tokens.append(data[i:j])
        i = j
    return tokens, i


def parse_pgm(data):
    """Decode a P5 or P2 image with maxval 255 into a ``(height, width)`` array in [0, 1]."""
    data = _read_source(data)
    if data[:2] not in (b"P5", b"P2"):
        raise FormatError(f"not a PGM file (magic {data[:2]!r})")
    toks, pos = _pgm_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in toks[1:])
    except ValueError:
        raise FormatError("could not parse PGM dimensions") from None
    if width < 1 or height < 1:
        raise FormatError("PGM dimensions must be positive")
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    npix = width * height
    if toks[0] == b"P5":
        payload = data[pos + 1 : pos + 1 + npix]
        if len(payload) < npix:
            raise TruncatedError(f"PGM payload has {len(payload)} of {npix} bytes")
        pix = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    else:
        vals = data[pos:].split()
        if len(vals) < npix:
            raise TruncatedError(f"PGM payload has {len(vals)} of {npix} values")
        try:
            pix = np.array([int(v) for v in vals[:npix]], dtype=np.float64)
        except ValueError:
            raise FormatError("non-integer pixel in P2 payload") from None
    return pix.reshape(height, width) / 255.0


def box_weights(src, dst):
    """``dst x src`` matrix averaging source cells over each output cell's exact footprint.

    Output cell ``i`` covers ``[i*src/dst, (i+1)*src/dst)``. Scaling all
    coordinates by ``dst`` keeps every overlap an integer.
    """
    W = np.zeros((dst, src))
    for i in range(dst):
        a, b = i * src, (i + 1) * src
        for k in range(a // dst, min(src, -(-b // dst))):
            ov = min(b, (k + 1) * dst) - max(a, k * dst)
            if ov > 0:
                W[i, k] = ov / src
    return W


def box_downscale(img, height, width):
    h0, w0 = img.shape
    if (h0, w0) == (height, width):
        return img.copy()
    return box_weights(h0, height) @ img @ box_weights(w0, width).T


def read_pgm_frame(src, width=72, height=48):
    """Frame as a row-major vector of length ``width * height`` in [0, 1]."""
    if width < 1 or height < 1:
        raise FormatError("target size must be positive")
    return box_downscale(parse_pgm(src), height, width).ravel()


def quantize(values):
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0
    # values are non-negative here, so floor(x + 1/2) rounds half away from zero
    return np.floor(v + 0.5).astype(np.uint8)


def write_pgm_frame(values, width, height, absolute=False):
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size != width * height:
        raise FormatError(f"{values.size} values do not fill {width}x{height}")
    if absolute:
        values = np.abs(values)
    return b"P5\n%d %d\n255\n" % (width, height) + quantize(values).tobytes()
