"""Raw tensor files and parameter checkpoints.

Tensor file layout (used for checkpoints and debug dumps):

    b"CPMT1\\n"                       magic line
    b"<rank> <e1> <e2> ... <ek>\\n"   ASCII header, space separated
    <8 * prod(shape) bytes>           little-endian float64, row-major

A checkpoint is a directory of ``<name>.cpmt`` tensor files plus a UTF-8
``manifest.tsv`` with one ``name<TAB>shape<TAB>frozen`` line per tensor,
sorted by name. ``frozen`` is 1 when the tensor is excluded from training.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"CPMT1\n"
MANIFEST = "manifest.tsv"


class TensorFileError(ValueError):
    """Malformed or truncated tensor file."""


def write_tensor(path: str | os.PathLike, array: np.ndarray | Tensor) -> None:
    if isinstance(array, Tensor):
        array = array.data
    arr = np.asarray(array, dtype=np.float64)
    if not arr.flags.c_contiguous:
        # ascontiguousarray would promote 0-d arrays to 1-d, so only copy
        # when the layout actually needs it
        arr = np.ascontiguousarray(arr)
    header = " ".join([str(arr.ndim)] + [str(e) for e in arr.shape]) + "\n"
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode("ascii"))
        fh.write(arr.astype("<f8").tobytes())


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise TensorFileError(f"{path}: missing CPMT1 magic at byte 0")
    nl = blob.find(b"\n", len(MAGIC))
    if nl < 0:
        raise TensorFileError(f"{path}: unterminated header after byte {len(MAGIC)}")
    fields = blob[len(MAGIC):nl].split()
    try:
        rank = int(fields[0])
        shape = tuple(int(f) for f in fields[1:])
    except (IndexError, ValueError):
        raise TensorFileError(f"{path}: bad header {blob[len(MAGIC):nl]!r}") from None
    if len(shape) != rank or any(e <= 0 for e in shape):
        raise TensorFileError(f"{path}: header rank {rank} vs extents {shape}")
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = blob[nl + 1:]
    expected = 8 * count
    if len(payload) != expected:
        raise TensorFileError(
            f"{path}: payload has {len(payload)} bytes at offset {nl + 1}, "
            f"expected {expected}")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).copy()


def save_checkpoint(directory: str | os.PathLike,
                    params: dict[str, Tensor]) -> None:
    """Write every named tensor plus the manifest; overwrites in place."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name in sorted(params):
        t = params[name]
        write_tensor(directory / f"{name}.cpmt", t.data)
        shape = " ".join(str(e) for e in t.data.shape)
        frozen = 0 if t.requires_grad else 1
        lines.append(f"{name}\t{shape}\t{frozen}\n")
    (directory / MANIFEST).write_text("".join(lines), encoding="utf-8")


def read_manifest(directory: str | os.PathLike) -> list[tuple[str, tuple[int, ...], bool]]:
    directory = Path(directory)
    entries = []
    for line in (directory / MANIFEST).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        name, shape_s, frozen_s = line.split("\t")
        shape = tuple(int(e) for e in shape_s.split()) if shape_s else ()
        entries.append((name, shape, frozen_s == "1"))
    return entries


def load_checkpoint(directory: str | os.PathLike) -> dict[str, Tensor]:
    """Read a checkpoint back into named tensors (frozen flag restored)."""
    directory = Path(directory)
    params: dict[str, Tensor] = {}
    for name, shape, frozen in read_manifest(directory):
        arr = read_tensor(directory / f"{name}.cpmt")
        if arr.shape != shape:
            raise TensorFileError(
                f"{name}: manifest shape {shape} != file shape {arr.shape}")
        params[name] = Tensor(arr, requires_grad=not frozen)
    return params


def load_checkpoint_into(directory: str | os.PathLike,
                         params: dict[str, Tensor]) -> None:
    """Load stored values into an existing parameter dict, in place."""
    stored = load_checkpoint(directory)
    missing = sorted(set(params) - set(stored))
    extra = sorted(set(stored) - set(params))
    if missing or extra:
        raise TensorFileError(
            f"checkpoint mismatch: missing {missing}, unexpected {extra}")
    for name, t in params.items():
        src = stored[name]
        if src.data.shape != t.data.shape:
            raise TensorFileError(
                f"{name}: checkpoint shape {src.data.shape} != param {t.data.shape}")
        t.data = src.data
        t.requires_grad = src.requires_grad
