"""Minimal PLY reader/writer for point clouds (ascii and binary little-endian)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class PlyError(ValueError):
    pass


def _parse_header(raw: bytes, path):
    end = raw.find(b"end_header")
    if end < 0:
        raise PlyError(f"{path}: missing end_header")
    body_start = raw.index(b"\n", end) + 1
    lines = raw[:end].decode("ascii", errors="replace").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PlyError(f"{path}: line 1: expected 'ply' magic")
    fmt = None
    elements: list[list] = []  # [name, count, [(prop, dtype | None)]]
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) != 3 or parts[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"{path}: line {lineno}: unsupported format {' '.join(parts[1:])!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise PlyError(f"{path}: line {lineno}: malformed element line")
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            if not elements:
                raise PlyError(f"{path}: line {lineno}: property before any element")
            if len(parts) == 5 and parts[1] == "list":
                elements[-1][2].append((parts[4], None))
            elif len(parts) == 3 and parts[1] in _TYPES:
                elements[-1][2].append((parts[2], _TYPES[parts[1]]))
            else:
                raise PlyError(f"{path}: line {lineno}: malformed property line")
        else:
            raise PlyError(f"{path}: line {lineno}: unexpected keyword {parts[0]!r}")
    if fmt is None:
        raise PlyError(f"{path}: missing format line")
    return fmt, elements, body_start


def ply_read(path) -> np.ndarray:
    """Return the x, y, z columns of the vertex element; other properties are ignored."""
    raw = Path(path).read_bytes()
    fmt, elements, body_start = _parse_header(raw, path)
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise PlyError(f"{path}: no vertex element")
    vi = names.index("vertex")
    _, count, props = elements[vi]
    prop_names = [p[0] for p in props]
    missing = [c for c in "xyz" if c not in prop_names]
    if missing:
        raise PlyError(f"{path}: vertex element lacks properties {missing}")

    if fmt == "ascii":
        lines = raw[body_start:].decode("ascii").splitlines()
        skip = sum(e[1] for e in elements[:vi])
        rows = lines[skip:skip + count]
        if len(rows) < count:
            raise PlyError(f"{path}: expected {count} vertex lines, found {len(rows)}")
        if any(p[1] is None for p in props):
            raise PlyError(f"{path}: list properties on vertices are not supported")
        cols = [prop_names.index(c) for c in "xyz"]
        data = np.array([r.split() for r in rows], dtype=np.float64).reshape(count, len(props))
        dtype = np.float64 if any(props[c][1] == "f8" for c in cols) else np.float32
        return data[:, cols].astype(dtype)

    offset = body_start
    for name, n, eprops in elements[:vi]:
        if any(p[1] is None for p in eprops):
            raise PlyError(f"{path}: variable-size element {name!r} precedes vertices")
        offset += n * sum(np.dtype(p[1]).itemsize for p in eprops)
    if any(p[1] is None for p in props):
        raise PlyError(f"{path}: list properties on vertices are not supported")
    record = np.dtype([(p[0], "<" + p[1]) for p in props])
    if len(raw) < offset + count * record.itemsize:
        raise PlyError(f"{path}: truncated binary body")
    arr = np.frombuffer(raw, dtype=record, count=count, offset=offset)
    dtype = np.float64 if any(arr.dtype[c].itemsize == 8 and arr.dtype[c].kind == "f" for c in "xyz") else np.float32
    return np.stack([arr[c].astype(dtype) for c in "xyz"], axis=1).reshape(count, 3)


def ply_write(cloud, path, binary: bool = True) -> None:
    pts = np.asarray(cloud).reshape(-1, 3)
    if pts.dtype != np.float64:
        pts = pts.astype(np.float32)
    ptype = "double" if pts.dtype == np.float64 else "float"
    header = (
        "ply\n"
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
        f"element vertex {len(pts)}\n"
        f"property {ptype} x\nproperty {ptype} y\nproperty {ptype} z\n"
        "end_header\n"
    ).encode("ascii")
    if binary:
        body = np.ascontiguousarray(pts, dtype=pts.dtype.newbyteorder("<")).tobytes()
    else:
        body = "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist()).encode("ascii")
    Path(path).write_bytes(header + body)
