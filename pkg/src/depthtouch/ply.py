"""Minimal PLY reader/writer for point clouds.

Writes ASCII PLY with float32 x, y, z (plus nx, ny, nz when normals are
present). Reads both ASCII and binary little-endian files; extra vertex
properties are skipped.
"""

from __future__ import annotations

import numpy as np

from .geometry import PointCloud

_TYPE_MAP = {
    "float": np.float32, "float32": np.float32,
    "double": np.float64, "float64": np.float64,
    "uchar": np.uint8, "uint8": np.uint8,
    "char": np.int8, "int8": np.int8,
    "short": np.int16, "int16": np.int16,
    "ushort": np.uint16, "uint16": np.uint16,
    "int": np.int32, "int32": np.int32,
    "uint": np.uint32, "uint32": np.uint32,
}


def _f32_str(v: float) -> str:
    return np.format_float_positional(np.float32(v), unique=True, trim="0")


def save_ply(cloud: PointCloud, path) -> None:
    """Write ``cloud`` as ASCII PLY (coordinates stored as float32)."""
    has_normals = cloud.normals is not None
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if has_normals:
        lines += ["property float nx", "property float ny", "property float nz"]
    lines.append("end_header")

    pts = cloud.points
    nrm = cloud.normals
    for i in range(len(cloud)):
        row = [_f32_str(v) for v in pts[i]]
        if has_normals:
            row += [_f32_str(v) for v in nrm[i]]
        lines.append(" ".join(row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_ply(path) -> PointCloud:
    """Read an ASCII or binary little-endian PLY vertex cloud."""
    with open(path, "rb") as f:
        raw = f.read()

    header_end = raw.find(b"end_header")
    if header_end < 0:
        raise ValueError(f"{path}: not a PLY file (no end_header)")
    header = raw[:header_end].decode("ascii", errors="replace").splitlines()
    body_start = raw.index(b"\n", header_end) + 1

    fmt = None
    n_vertices = 0
    props: list[tuple[str, type]] = []
    in_vertex = False
    for line in header:
        parts = line.strip().split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                n_vertices = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise ValueError(f"{path}: list properties on vertices unsupported")
            props.append((parts[2], _TYPE_MAP[parts[1]]))

    names = [p[0] for p in props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise ValueError(f"{path}: vertex element lacks property {axis}")

    if fmt == "ascii":
        rows = raw[body_start:].decode("ascii").split()
        n_cols = len(props)
        data = np.array(rows[: n_vertices * n_cols], dtype=np.float64).reshape(n_vertices, n_cols)
        # Route each column through its declared storage type so values
        # match a binary read of the same file bit for bit.
        columns = {name: data[:, i].astype(t).astype(np.float64)
                   for i, (name, t) in enumerate(props)}
    elif fmt == "binary_little_endian":
        dtype = np.dtype([(name, np.dtype(t).newbyteorder("<")) for name, t in props])
        data = np.frombuffer(raw, dtype=dtype, count=n_vertices, offset=body_start)
        columns = {name: data[name].astype(np.float64) for name, _ in props}
    else:
        raise ValueError(f"{path}: unsupported PLY format {fmt!r}")

    pts = np.column_stack([columns["x"], columns["y"], columns["z"]])
    normals = None
    if all(k in columns for k in ("nx", "ny", "nz")):
        normals = np.column_stack([columns["nx"], columns["ny"], columns["nz"]])
        # Re-normalize: float32 storage can leave lengths a hair off unit.
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        lengths[lengths == 0] = 1.0
        normals = normals / lengths
    return PointCloud(pts, normals)
