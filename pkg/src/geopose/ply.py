"""ASCII PLY point-cloud I/O and 16-bit PGM depth images.

Coordinates are written with repr-style shortest round-trip formatting so a
save/load cycle preserves float64 values bit-exactly.
"""

from __future__ import annotations

import numpy as np


class PlyParseError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def read_ply(path):
    """Read vertices (and nx/ny/nz normals when present) from an ASCII PLY.

    Returns (points (M,3), normals (M,3) or None).
    """
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PlyParseError(path, 1, "missing 'ply' magic")
    n_vertices = None
    props = []
    body_start = None
    in_vertex_element = False
    for i, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise PlyParseError(path, i, f"unsupported format {tok[1]!r}")
        elif tok[0] == "element":
            in_vertex_element = tok[1] == "vertex"
            if in_vertex_element:
                n_vertices = int(tok[2])
        elif tok[0] == "property" and in_vertex_element:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body_start = i
            break
    if body_start is None or n_vertices is None:
        raise PlyParseError(path, len(lines), "header ended without end_header/element vertex")
    for name in ("x", "y", "z"):
        if name not in props:
            raise PlyParseError(path, body_start, f"vertex property {name!r} missing")
    rows = []
    for i, line in enumerate(lines[body_start:body_start + n_vertices], start=body_start + 1):
        vals = line.split()
        if len(vals) != len(props):
            raise PlyParseError(path, i, f"expected {len(props)} values, got {len(vals)}")
        try:
            rows.append([float(v) for v in vals])
        except ValueError:
            raise PlyParseError(path, i, "non-numeric vertex value")
    if len(rows) != n_vertices:
        raise PlyParseError(path, len(lines), f"expected {n_vertices} vertices, got {len(rows)}")
    data = np.array(rows, dtype=np.float64)
    cols = {p: j for j, p in enumerate(props)}
    points = data[:, [cols["x"], cols["y"], cols["z"]]]
    normals = None
    if all(n in cols for n in ("nx", "ny", "nz")):
        normals = data[:, [cols["nx"], cols["ny"], cols["nz"]]]
    return points, normals


def write_ply(path, points, normals=None):
    points = np.asarray(points, dtype=np.float64)
    header = ["ply", "format ascii 1.0", f"element vertex {len(points)}",
              "property double x", "property double y", "property double z"]
    if normals is not None:
        normals = np.asarray(normals, dtype=np.float64)
        header += ["property double nx", "property double ny", "property double nz"]
    header.append("end_header")
    with open(path, "w") as f:
        f.write("\n".join(header) + "\n")
        for i in range(len(points)):
            vals = list(points[i]) + (list(normals[i]) if normals is not None else [])
            f.write(" ".join(repr(float(v)) for v in vals) + "\n")


def read_pgm16(path):
    """Binary PGM (P5, maxval 65535) with little-endian 16-bit samples."""
    with open(path, "rb") as f:
        blob = f.read()
    fields = []
    off = 0
    while len(fields) < 4:
        while off < len(blob) and blob[off:off + 1].isspace():
            off += 1
        if blob[off:off + 1] == b"#":
            while off < len(blob) and blob[off] != 0x0A:
                off += 1
            continue
        start = off
        while off < len(blob) and not blob[off:off + 1].isspace():
            off += 1
        fields.append(blob[start:off])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 65535:
        raise ValueError(f"{path}: expected 16-bit PGM (maxval 65535)")
    off += 1  # single whitespace after maxval
    data = np.frombuffer(blob, dtype="<u2", count=width * height, offset=off)
    return data.reshape(height, width).copy()


def write_pgm16(path, image):
    image = np.asarray(image, dtype="<u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{image.shape[1]} {image.shape[0]}\n65535\n".encode())
        f.write(image.tobytes())
