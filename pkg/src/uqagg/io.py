"""Bit-exact file formats: a restricted NPY subset and CSV tables.

The NPY support covers exactly what the pipeline needs: C-order 2-D arrays of
'<f4', '<f8', '<i4', '<i8', or '|u1'. The reader accepts format versions 1.0
and 2.0 and parses the header with a fixed grammar instead of evaluating it.
The writer always emits version 1.0 with '<f8' for floating grids and '<i8'
for integer grids, padding the header with spaces to a 64-byte multiple and
ending it with a newline, so identical arrays produce identical bytes.

CSV side: a sample manifest (sample_id, map_path, optional mask_path /
ood_label / risk, paths resolved against the manifest's directory) and score
tables (sample_id plus one column per canonical strategy identifier, floats
written with 17 significant digits so they round-trip exactly; empty cells
mean the strategy produced no score for that sample).
"""

from __future__ import annotations

import csv
import math
import os
import re
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    DuplicateId,
    FortranOrderUnsupported,
    MissingColumn,
    MissingFile,
    NonTwoDimensional,
    ParseError,
    TruncatedPayload,
    UnsupportedDtype,
)

_MAGIC = b"\x93NUMPY"
_READ_DTYPES = {"<f4", "<f8", "<i4", "<i8", "|u1"}

_HEADER_RE = re.compile(
    r"\{\s*'descr'\s*:\s*'([^']*)'\s*,"
    r"\s*'fortran_order'\s*:\s*(True|False)\s*,"
    r"\s*'shape'\s*:\s*\(([0-9,\s]*)\)\s*,?\s*\}\s*"
)


def write_npy(path, grid) -> None:
    """Write a 2-D array as NPY version 1.0.

    Floating grids are stored as '<f8', integer (or boolean) grids as '<i8'.
    """
    arr = np.asarray(grid)
    if arr.ndim != 2:
        raise NonTwoDimensional(f"can only write 2-D grids, got ndim={arr.ndim}")
    if np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype("<f8")
        descr = "<f8"
    elif np.issubdtype(arr.dtype, np.integer) or arr.dtype == np.bool_:
        arr = arr.astype("<i8")
        descr = "<i8"
    else:
        raise UnsupportedDtype(f"cannot write dtype {arr.dtype}")
    header = (
        f"{{'descr': '{descr}', 'fortran_order': False, "
        f"'shape': ({arr.shape[0]}, {arr.shape[1]}), }}"
    )
    # magic(6) + version(2) + length field(2) + header text, padded so the
    # total is a multiple of 64 and the text ends with a newline
    unpadded = len(_MAGIC) + 2 + 2 + len(header) + 1
    pad = (64 - unpadded % 64) % 64
    header_bytes = (header + " " * pad + "\n").encode("latin1")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(bytes((1, 0)))
        fh.write(struct.pack("<H", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_npy(path) -> np.ndarray:
    """Read a 2-D NPY file (versions 1.0/2.0, restricted dtype set)."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        raise MissingFile(f"no such file: {path}") from None
    if len(data) < len(_MAGIC) + 2 or data[: len(_MAGIC)] != _MAGIC:
        raise BadMagic(f"{path}: not an NPY file")
    major, minor = data[6], data[7]
    if (major, minor) == (1, 0):
        len_size, len_fmt = 2, "<H"
    elif (major, minor) == (2, 0):
        len_size, len_fmt = 4, "<I"
    else:
        raise ParseError(f"{path}: unsupported NPY version {major}.{minor}")
    offset = 8 + len_size
    if len(data) < offset:
        raise TruncatedPayload(f"{path}: file ends inside the header length field")
    (header_len,) = struct.unpack(len_fmt, data[8:offset])
    header_end = offset + header_len
    if len(data) < header_end:
        raise TruncatedPayload(f"{path}: file ends inside the header")
    try:
        header = data[offset:header_end].decode("latin1")
    except UnicodeDecodeError:  # pragma: no cover - latin1 decodes all bytes
        raise ParseError(f"{path}: undecodable header") from None
    match = _HEADER_RE.fullmatch(header)
    if match is None:
        raise ParseError(f"{path}: header does not match the restricted grammar")
    descr, fortran, shape_text = match.groups()
    if descr not in _READ_DTYPES:
        raise UnsupportedDtype(f"{path}: dtype {descr!r} outside {sorted(_READ_DTYPES)}")
    if fortran == "True":
        raise FortranOrderUnsupported(f"{path}: column-major payloads unsupported")
    dims = [int(tok) for tok in shape_text.replace(" ", "").split(",") if tok]
    if len(dims) != 2:
        raise NonTwoDimensional(f"{path}: expected a 2-D shape, got {tuple(dims)}")
    dtype = np.dtype(descr)
    expected = dims[0] * dims[1] * dtype.itemsize
    payload = data[header_end:]
    if len(payload) != expected:
        raise TruncatedPayload(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims[0], dims[1]).copy()


# ---------------------------------------------------------------------------
# CSV tables


@dataclass(frozen=True)
class ManifestRow:
    sample_id: str
    map_path: str
    mask_path: str | None = None
    ood_label: int | None = None
    risk: float | None = None


@dataclass(frozen=True)
class Manifest:
    rows: tuple[ManifestRow, ...]
    base_dir: str

    def resolve(self, rel_path: str) -> str:
        return os.path.normpath(os.path.join(self.base_dir, rel_path))

    @property
    def has_masks(self) -> bool:
        return all(r.mask_path is not None for r in self.rows)


def _parse_label(text: str, row: int) -> int:
    if text not in ("0", "1"):
        raise ParseError(f"row {row}, column ood_label: expected 0 or 1, got {text!r}")
    return int(text)


def _parse_risk(text: str, row: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(
            f"row {row}, column risk: expected a number, got {text!r}"
        ) from None
    if not (0.0 <= value <= 1.0) or not math.isfinite(value):
        raise ParseError(f"row {row}, column risk: {value!r} outside [0, 1]")
    return value


def read_manifest(path, *, check_files: bool = True) -> Manifest:
    """Load a sample manifest; paths are kept relative to the manifest."""
    base_dir = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in ("sample_id", "map_path"):
            if col not in header:
                raise MissingColumn(f"{path}: manifest lacks column {col!r}")
        rows = []
        seen: set[str] = set()
        for i, rec in enumerate(reader, start=2):
            sid = (rec.get("sample_id") or "").strip()
            if not sid:
                raise ParseError(f"row {i}, column sample_id: empty")
            if sid in seen:
                raise DuplicateId(f"{path}: sample_id {sid!r} appears twice")
            seen.add(sid)
            map_path = (rec.get("map_path") or "").strip()
            if not map_path:
                raise ParseError(f"row {i}, column map_path: empty")
            mask_path = (rec.get("mask_path") or "").strip() or None
            label_text = (rec.get("ood_label") or "").strip()
            risk_text = (rec.get("risk") or "").strip()
            rows.append(
                ManifestRow(
                    sample_id=sid,
                    map_path=map_path,
                    mask_path=mask_path,
                    ood_label=_parse_label(label_text, i) if label_text else None,
                    risk=_parse_risk(risk_text, i) if risk_text else None,
                )
            )
    manifest = Manifest(tuple(rows), base_dir)
    if check_files:
        for row in manifest.rows:
            for rel in (row.map_path, row.mask_path):
                if rel is not None and not os.path.exists(manifest.resolve(rel)):
                    raise MissingFile(
                        f"{path}: sample {row.sample_id!r} references missing "
                        f"file {rel!r}"
                    )
    return manifest


def write_manifest(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "map_path", "mask_path", "ood_label", "risk"])
        for r in rows:
            writer.writerow(
                [
                    r.sample_id,
                    r.map_path,
                    r.mask_path or "",
                    "" if r.ood_label is None else r.ood_label,
                    "" if r.risk is None else _fmt_float(r.risk),
                ]
            )


def _fmt_float(value: float) -> str:
    return format(float(value), ".17g")


def write_scores(path, sample_ids, strategy_names, values) -> None:
    """Write a score table; NaN cells are written empty."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (len(sample_ids), len(strategy_names)):
        raise ParseError(
            f"score table shape {arr.shape} does not match "
            f"{len(sample_ids)} ids x {len(strategy_names)} strategies"
        )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", *strategy_names])
        for sid, row in zip(sample_ids, arr):
            writer.writerow(
                [sid, *("" if math.isnan(v) else _fmt_float(v) for v in row)]
            )


def read_scores(path) -> tuple[list[str], list[str], np.ndarray]:
    """Read a score table back; empty cells become NaN."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn(f"{path}: empty score table") from None
        if not header or header[0] != "sample_id":
            raise MissingColumn(f"{path}: first column must be sample_id")
        names = header[1:]
        ids: list[str] = []
        rows: list[list[float]] = []
        seen: set[str] = set()
        for i, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise ParseError(f"row {i}: expected {len(header)} cells, got {len(rec)}")
            sid = rec[0]
            if sid in seen:
                raise DuplicateId(f"{path}: sample_id {sid!r} appears twice")
            seen.add(sid)
            ids.append(sid)
            row = []
            for name, cell in zip(names, rec[1:]):
                if cell == "":
                    row.append(math.nan)
                    continue
                try:
                    row.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"row {i}, column {name}: expected a number, got {cell!r}"
                    ) from None
            rows.append(row)
    matrix = np.array(rows, dtype=np.float64).reshape(len(ids), len(names))
    return ids, names, matrix
