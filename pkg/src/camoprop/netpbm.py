"""Binary PGM (P5) and PPM (P6) readers/writers, 8-bit only.

Chosen as the interchange format because round trips are byte-exact and
any language can parse them without a decoder dependency. Malformed input
is reported with the byte offset where parsing stopped.
"""

from __future__ import annotations

import os

import numpy as np


class PnmError(ValueError):
    """Malformed or truncated netpbm file."""


def _parse_header(blob: bytes, path) -> tuple[bytes, int, int, int, int]:
    """Returns (magic, width, height, maxval, payload offset)."""
    if len(blob) < 2 or blob[:1] != b"P" or blob[1:2] not in b"56":
        raise PnmError(f"{path}: not a binary PGM/PPM (bad magic at byte 0)")
    magic = blob[:2]
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        # skip whitespace and '#' comment lines
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            nl = blob.find(b"\n", pos)
            if nl < 0:
                raise PnmError(f"{path}: unterminated comment at byte {pos}")
            pos = nl + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        token = blob[start:pos]
        if not token:
            raise PnmError(f"{path}: header ended early at byte {start}")
        try:
            fields.append(int(token))
        except ValueError:
            raise PnmError(
                f"{path}: non-numeric header token {token!r} at byte {start}"
            ) from None
    if pos >= len(blob) or not blob[pos:pos + 1].isspace():
        raise PnmError(f"{path}: missing whitespace after header at byte {pos}")
    pos += 1  # exactly one whitespace byte separates header from payload
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise PnmError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise PnmError(f"{path}: only maxval 255 supported, got {maxval}")
    return magic, width, height, maxval, pos


def _read_payload(blob: bytes, pos: int, count: int, path) -> np.ndarray:
    payload = blob[pos:]
    if len(payload) != count:
        raise PnmError(f"{path}: payload at byte {pos} has {len(payload)} bytes, "
                       f"expected {count}")
    return np.frombuffer(payload, dtype=np.uint8)


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """8-bit grayscale -> uint8 array of shape (H, W)."""
    blob = open(path, "rb").read()
    magic, w, h, _, pos = _parse_header(blob, path)
    if magic != b"P5":
        raise PnmError(f"{path}: expected P5, found {magic.decode()}")
    return _read_payload(blob, pos, w * h, path).reshape(h, w).copy()


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    """8-bit RGB -> uint8 array of shape (3, H, W)."""
    blob = open(path, "rb").read()
    magic, w, h, _, pos = _parse_header(blob, path)
    if magic != b"P6":
        raise PnmError(f"{path}: expected P6, found {magic.decode()}")
    flat = _read_payload(blob, pos, 3 * w * h, path)
    return flat.reshape(h, w, 3).transpose(2, 0, 1).copy()


def write_pgm(path: str | os.PathLike, gray: np.ndarray) -> None:
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ValueError(f"PGM wants a 2-D array, got shape {gray.shape}")
    data = _to_u8(gray)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def write_ppm(path: str | os.PathLike, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"PPM wants a (3, H, W) array, got shape {rgb.shape}")
    data = _to_u8(rgb).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{rgb.shape[2]} {rgb.shape[1]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _to_u8(arr: np.ndarray) -> np.ndarray:
    if arr.dtype == np.uint8:
        return arr
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


# Float convenience wrappers used throughout the pipeline: frames and soft
# masks live in [0, 1]; masks binarize at 128/255 on read.

def read_frame(path) -> np.ndarray:
    return read_ppm(path).astype(np.float64) / 255.0


def write_frame(path, frame: np.ndarray) -> None:
    write_ppm(path, frame)


def read_mask(path, binarize: bool = True) -> np.ndarray:
    raw = read_pgm(path).astype(np.float64)
    if binarize:
        return (raw >= 128.0).astype(np.float64)
    return raw / 255.0


def write_mask(path, mask: np.ndarray) -> None:
    write_pgm(path, mask)
