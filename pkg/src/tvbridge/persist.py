"""File formats: numeric CSV series, binary PGM/PPM images and the
checkpoint container.

Checkpoint layout (all integers little-endian)::

    b"TART" | u32 version=1 | section* | u32 crc32(all preceding bytes)
    section = u16 name_len | name (utf-8) | u8 rank | u32 dim * rank | f64 payload

Writes go to a temporary file in the target directory and are renamed
into place.
"""

from __future__ import annotations

import csv
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .alignment import AlignmentModel, DIRECTIONS
from .errors import (ChecksumMismatch, CorruptHeader, EmptyFile, MissingCheckpoint, ParseError,
                     UnsupportedFormat, VersionUnsupported)
from .quantizer import MultiHeadCodebook
from .tokenization import Image, TimeSeries
from .training import BundleConfig, TokenizerBundle

MAGIC = b"TART"
VERSION = 1
KIND_BUNDLE = 0.0
KIND_ALIGNMENT = 1.0
_MODES = ("strict", "lenient")


def atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------- CSV

def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_series_csv(path, column: int | str | None = None) -> list[TimeSeries]:
    """One series per column (channel-independent); rows are timesteps.

    A first row with no numeric field is taken as a header. ``column`` picks
    a single column by 0-based position or header name.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh)]
    numbered = [(i + 1, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if not numbered:
        raise EmptyFile(f"{path} has no rows")
    header = None
    first = numbered[0][1]
    if not any(_is_number(c.strip()) for c in first):
        header = [c.strip() for c in first]
        numbered = numbered[1:]
    if not numbered:
        raise EmptyFile(f"{path} has a header but no data")
    width = len(numbered[0][1])
    data = np.empty((len(numbered), width))
    for r, (lineno, row) in enumerate(numbered):
        if len(row) != width:
            raise ParseError(f"row {lineno} has {len(row)} fields, expected {width}", lineno, None)
        for c, cell in enumerate(row):
            try:
                data[r, c] = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric value {cell!r} at row {lineno}, column {c + 1}",
                                 lineno, c + 1) from None
    if column is None:
        cols = range(width)
    elif isinstance(column, str) and not column.isdigit():
        if header is None or column not in header:
            raise ParseError(f"no column named {column!r}")
        cols = [header.index(column)]
    else:
        idx = int(column)
        if not 0 <= idx < width:
            raise ParseError(f"column {idx} out of range for {width} columns")
        cols = [idx]
    return [TimeSeries(data[:, c].copy()) for c in cols]


def save_series_csv(path, series: list, header: list[str] | None = None):
    """Write equal-length series side by side, full float precision."""
    cols = [np.asarray(getattr(s, "values", s), dtype=np.float64) for s in series]
    lines = []
    if header:
        lines.append(",".join(header))
    for row in zip(*cols):
        lines.append(",".join(repr(float(v)) for v in row))
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def save_rows_csv(path, header: list[str], rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    atomic_write(path, ("\n".join(lines) + "\n").encode())


# ----------------------------------------------------------------- PGM/PPM

def _header_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise CorruptHeader("truncated header")
        tokens.append(data[start:pos])
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise CorruptHeader("header must end with a single whitespace byte")
    return tokens, pos + 1


def load_image(path) -> Image:
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic in (b"P1", b"P2", b"P3", b"P4"):
        raise UnsupportedFormat(f"{magic.decode()} is not supported; use binary P5/P6")
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormat("not a PGM/PPM file")
    channels = 1 if magic == b"P5" else 3
    tokens, pos = _header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise CorruptHeader("non-integer header field") from None
    if width < 1 or height < 1:
        raise CorruptHeader("image dimensions must be positive")
    if maxval != 255:
        raise UnsupportedFormat(f"maxval {maxval} is not supported; expected 255")
    need = width * height * channels
    raw = data[pos:pos + need]
    if len(raw) != need:
        raise CorruptHeader(f"expected {need} pixel bytes, found {len(raw)}")
    px = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, channels)
    return Image(px.astype(np.float64) / 255.0)


def image_bytes(img: Image) -> bytes:
    h, w, c = img.pixels.shape
    magic = b"P5" if c == 1 else b"P6"
    px = np.clip(np.round(img.pixels * 255.0), 0, 255).astype(np.uint8)
    return magic + f"\n{w} {h}\n255\n".encode() + px.tobytes()


def save_image(img: Image, path):
    atomic_write(path, image_bytes(img))


# -------------------------------------------------------------- checkpoint

def _encode_sections(sections: dict[str, np.ndarray]) -> bytes:
    out = bytearray(MAGIC + struct.pack("<I", VERSION))
    for name, arr in sections.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def _decode_sections(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < 12 or data[:4] != MAGIC:
        raise CorruptHeader("not a checkpoint file")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise ChecksumMismatch("checkpoint CRC does not match its contents")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise VersionUnsupported(f"checkpoint version {version} is not supported")
    pos, end = 8, len(data) - 4
    sections = {}
    try:
        while pos < end:
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(dims)
            pos += 8 * size
            sections[name] = arr.astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CorruptHeader(f"malformed section table: {exc}") from None
    if pos != end:
        raise CorruptHeader("section table overruns the payload")
    return sections


def checkpoint_sections(obj) -> dict[str, np.ndarray]:
    if isinstance(obj, TokenizerBundle):
        cfg = obj.config
        sections = {"kind": np.array(KIND_BUNDLE)}
        for key in ("n", "d", "heads", "codes", "f", "l", "depth", "channels"):
            sections[f"config.{key}"] = np.array(float(getattr(cfg, key)))
        sections["config.mode"] = np.array(float(_MODES.index(cfg.mode)))
        sections["frozen"] = np.array(1.0 if obj.frozen else 0.0)
        sections.update(obj.arrays())
        return sections
    if isinstance(obj, AlignmentModel):
        sections = {"kind": np.array(KIND_ALIGNMENT),
                    "direction": np.array(float(DIRECTIONS.index(obj.direction)))}
        sections.update({f"align.{k}": v for k, v in obj.params.items()})
        return sections
    raise TypeError(f"cannot checkpoint {type(obj).__name__}")


def checkpoint_bytes(obj) -> bytes:
    return _encode_sections(checkpoint_sections(obj))


def save_checkpoint(obj, path):
    atomic_write(path, checkpoint_bytes(obj))


def _from_sections(sections: dict[str, np.ndarray]):
    kind = float(sections["kind"])
    if kind == KIND_BUNDLE:
        ints = {k: int(sections[f"config.{k}"]) for k in
                ("n", "d", "heads", "codes", "f", "l", "depth", "channels")}
        cfg = BundleConfig(**ints, mode=_MODES[int(sections["config.mode"])])
        vis = {k[len("visual."):]: v for k, v in sections.items() if k.startswith("visual.")}
        tmp = {k[len("temporal."):]: v for k, v in sections.items() if k.startswith("temporal.")}
        bundle = TokenizerBundle(vis, tmp, MultiHeadCodebook(sections["codebook"]), cfg)
        if float(sections["frozen"]):
            bundle.freeze()
        return bundle
    if kind == KIND_ALIGNMENT:
        params = {k[len("align."):]: v for k, v in sections.items() if k.startswith("align.")}
        return AlignmentModel(DIRECTIONS[int(sections["direction"])], params)
    raise CorruptHeader(f"unknown checkpoint kind {kind}")


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise MissingCheckpoint(f"no checkpoint at {path}")
    return _from_sections(_decode_sections(path.read_bytes()))
