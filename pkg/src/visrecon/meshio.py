"""PLY (ascii / binary little-endian) and OBJ readers and writers.

The binary writer is byte-deterministic: saving, loading and saving again
produces identical files, which the golden tests rely on.  Readers accept
extra vertex properties (skipped), but the coordinates themselves must be
float typed.
"""

from __future__ import annotations

import os
import struct
import warnings

import numpy as np

from .geom import PointCloud, TriangleMesh


class MeshIOError(ValueError):
    pass


_PLY_SIZES = {
    "char": 1, "int8": 1, "uchar": 1, "uint8": 1,
    "short": 2, "int16": 2, "ushort": 2, "uint16": 2,
    "int": 4, "int32": 4, "uint": 4, "uint32": 4,
    "float": 4, "float32": 4, "double": 8, "float64": 8,
}
_PLY_STRUCT = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}
_FLOAT_TYPES = {"float", "float32", "double", "float64"}


class _PlyHeader:
    def __init__(self):
        self.fmt = None                      # "ascii" | "binary_little_endian"
        self.elements = []                   # (name, count, [properties])
        # property: (name, type) or (name, "list", count_type, item_type)


def _parse_ply_header(data, path):
    if not data.startswith(b"ply"):
        raise MeshIOError("%s: not a PLY file (missing magic)" % path)
    end = data.find(b"end_header")
    if end < 0:
        raise MeshIOError("%s: malformed header: no end_header" % path)
    body_start = data.find(b"\n", end)
    if body_start < 0:
        raise MeshIOError("%s: malformed header: unterminated end_header"
                          % path)
    body_start += 1
    header = _PlyHeader()
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    for ln, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            if len(tok) < 3 or tok[1] not in ("ascii", "binary_little_endian"):
                raise MeshIOError("%s:%d: unsupported format %r"
                                  % (path, ln, line.strip()))
            header.fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3:
                raise MeshIOError("%s:%d: malformed element line" % (path, ln))
            try:
                count = int(tok[2])
            except ValueError:
                raise MeshIOError("%s:%d: bad element count %r"
                                  % (path, ln, tok[2])) from None
            header.elements.append((tok[1], count, []))
        elif tok[0] == "property":
            if not header.elements:
                raise MeshIOError("%s:%d: property before any element"
                                  % (path, ln))
            props = header.elements[-1][2]
            if tok[1] == "list":
                if len(tok) != 5:
                    raise MeshIOError("%s:%d: malformed list property"
                                      % (path, ln))
                props.append((tok[4], "list", tok[2], tok[3]))
            else:
                if len(tok) != 3 or tok[1] not in _PLY_SIZES:
                    raise MeshIOError("%s:%d: unknown property type %r"
                                      % (path, ln, tok[1]))
                props.append((tok[2], tok[1]))
        elif tok[0] == "ply":
            pass
        else:
            raise MeshIOError("%s:%d: unrecognized header line %r"
                              % (path, ln, line.strip()))
    if header.fmt is None:
        raise MeshIOError("%s: malformed header: no format line" % path)
    return header, body_start


def _check_coord_types(props, path):
    types = {p[0]: p[1] for p in props}
    for axis in ("x", "y", "z"):
        if axis not in types:
            raise MeshIOError("%s: vertex element lacks %r property"
                              % (path, axis))
        if types[axis] not in _FLOAT_TYPES:
            raise MeshIOError("%s: vertex property %r has non-float type %r"
                              % (path, axis, types[axis]))


def _read_ply(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        raise MeshIOError("file not found: %s" % path) from None
    header, offset = _parse_ply_header(data, path)

    out = {}
    if header.fmt == "ascii":
        text = data[offset:].decode("ascii", errors="replace").split("\n")
        line_no = data[:offset].count(b"\n") + 1
        row = 0
        for name, count, props in header.elements:
            rows = []
            for _ in range(count):
                while row < len(text) and not text[row].strip():
                    row += 1
                if row >= len(text):
                    raise MeshIOError("%s: truncated element data in %r"
                                      % (path, name))
                rows.append((line_no + row, text[row].split()))
                row += 1
            out[name] = ("ascii", props, rows)
    else:
        mv = memoryview(data)
        pos = offset
        for name, count, props in header.elements:
            fixed = all(p[1] != "list" for p in props)
            if fixed:
                rec = sum(_PLY_SIZES[p[1]] for p in props)
                need = rec * count
                if pos + need > len(data):
                    raise MeshIOError(
                        "%s: truncated element data in %r at byte %d"
                        % (path, name, len(data)))
                out[name] = ("binary", props, (mv, pos, rec, count))
                pos += need
            else:
                rows = []
                for _ in range(count):
                    vals = []
                    for p in props:
                        if p[1] == "list":
                            csize = _PLY_SIZES[p[2]]
                            if pos + csize > len(data):
                                raise MeshIOError(
                                    "%s: truncated element data in %r at "
                                    "byte %d" % (path, name, pos))
                            n = struct.unpack_from(
                                "<" + _PLY_STRUCT[p[2]], mv, pos)[0]
                            pos += csize
                            isz = _PLY_SIZES[p[3]]
                            if pos + isz * n > len(data):
                                raise MeshIOError(
                                    "%s: truncated element data in %r at "
                                    "byte %d" % (path, name, pos))
                            vals.append(struct.unpack_from(
                                "<%d%s" % (n, _PLY_STRUCT[p[3]]), mv, pos))
                            pos += isz * n
                        else:
                            sz = _PLY_SIZES[p[1]]
                            if pos + sz > len(data):
                                raise MeshIOError(
                                    "%s: truncated element data in %r at "
                                    "byte %d" % (path, name, pos))
                            vals.append(struct.unpack_from(
                                "<" + _PLY_STRUCT[p[1]], mv, pos)[0])
                            pos += sz
                    rows.append(vals)
                out[name] = ("binary_rows", props, rows)
    return header, out


def _vertex_arrays(path, kind, props, payload):
    _check_coord_types(props, path)
    names = [p[0] for p in props]
    has_rgb = all(k in names for k in ("red", "green", "blue"))
    if kind == "ascii":
        n = len(payload)
        pos = np.empty((n, 3), dtype=np.float64)
        col = np.empty((n, 3), dtype=np.uint8) if has_rgb else None
        idx = {name: i for i, name in enumerate(names)}
        for r, (line_no, tok) in enumerate(payload):
            if len(tok) < len(names):
                raise MeshIOError("%s:%d: expected %d vertex fields, got %d"
                                  % (path, line_no, len(names), len(tok)))
            try:
                pos[r] = (float(tok[idx["x"]]), float(tok[idx["y"]]),
                          float(tok[idx["z"]]))
                if has_rgb:
                    col[r] = (int(tok[idx["red"]]), int(tok[idx["green"]]),
                              int(tok[idx["blue"]]))
            except ValueError:
                raise MeshIOError("%s:%d: non-numeric vertex field"
                                  % (path, line_no)) from None
        return pos, col
    if kind == "binary_rows":
        # vertex element carrying a list property: fall back to row tuples
        idx = {name: i for i, name in enumerate(names)}
        pos = np.array([[row[idx["x"]], row[idx["y"]], row[idx["z"]]]
                        for row in payload], dtype=np.float64)
        col = None
        if has_rgb:
            col = np.array([[row[idx["red"]], row[idx["green"]],
                             row[idx["blue"]]] for row in payload],
                           dtype=np.uint8)
        return pos.reshape(-1, 3), col
    # binary fixed-size records
    mv, start, rec, count = payload
    dt = np.dtype({"names": names,
                   "formats": ["<" + np.dtype(_PLY_STRUCT[p[1]]).str[1:]
                               for p in props]})
    arr = np.frombuffer(mv, dtype=dt, count=count, offset=start)
    pos = np.stack([arr["x"].astype(np.float64),
                    arr["y"].astype(np.float64),
                    arr["z"].astype(np.float64)], axis=1)
    col = None
    if has_rgb:
        col = np.stack([arr["red"], arr["green"], arr["blue"]],
                       axis=1).astype(np.uint8)
    return pos, col


def load_point_cloud(path):
    """Read a PLY point cloud (positions plus optional uchar colors)."""
    header, out = _read_ply(path)
    if "vertex" not in out:
        raise MeshIOError("%s: no vertex element" % path)
    kind, props, payload = out["vertex"]
    pos, col = _vertex_arrays(path, kind, props, payload)
    if not len(pos):
        raise MeshIOError("%s: empty point cloud" % path)
    return PointCloud(positions=pos, colors=col)


def save_point_cloud(cloud, path, ascii=False):
    with open(path, "wb") as fh:
        fmt = "ascii" if ascii else "binary_little_endian"
        lines = ["ply", "format %s 1.0" % fmt,
                 "element vertex %d" % len(cloud.positions),
                 "property float x", "property float y", "property float z"]
        if cloud.colors is not None:
            lines += ["property uchar red", "property uchar green",
                      "property uchar blue"]
        lines.append("end_header")
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        pos = cloud.positions.astype("<f4")
        if ascii:
            for i in range(len(pos)):
                rec = "%.9g %.9g %.9g" % tuple(pos[i])
                if cloud.colors is not None:
                    rec += " %d %d %d" % tuple(cloud.colors[i])
                fh.write((rec + "\n").encode("ascii"))
        else:
            if cloud.colors is None:
                fh.write(pos.tobytes())
            else:
                rec = np.zeros(len(pos), dtype=[("x", "<f4"), ("y", "<f4"),
                                                ("z", "<f4"), ("r", "u1"),
                                                ("g", "u1"), ("b", "u1")])
                rec["x"], rec["y"], rec["z"] = pos[:, 0], pos[:, 1], pos[:, 2]
                rec["r"], rec["g"], rec["b"] = (cloud.colors[:, 0],
                                                cloud.colors[:, 1],
                                                cloud.colors[:, 2])
                fh.write(rec.tobytes())


def _faces_from_lists(path, lists, n_vertices):
    faces = []
    for fi, idxs in enumerate(lists):
        if len(idxs) < 3:
            raise MeshIOError("%s: face %d has fewer than 3 vertices"
                              % (path, fi))
        for k in idxs:
            if k < 0 or k >= n_vertices:
                raise MeshIOError(
                    "%s: face %d references vertex %d of %d"
                    % (path, fi, k, n_vertices))
        for k in range(1, len(idxs) - 1):
            faces.append((idxs[0], idxs[k], idxs[k + 1]))
    return np.array(faces, dtype=np.int64).reshape(-1, 3)


def _load_ply_mesh(path):
    header, out = _read_ply(path)
    if "vertex" not in out:
        raise MeshIOError("%s: no vertex element" % path)
    kind, props, payload = out["vertex"]
    pos, _ = _vertex_arrays(path, kind, props, payload)
    lists = []
    if "face" in out:
        kind, props, payload = out["face"]
        names = [p[0] for p in props]
        if "vertex_indices" not in names and "vertex_index" not in names:
            raise MeshIOError("%s: face element lacks vertex_indices" % path)
        key = "vertex_indices" if "vertex_indices" in names else "vertex_index"
        li = names.index(key)
        if kind == "ascii":
            for line_no, tok in payload:
                try:
                    n = int(tok[0])
                    idxs = [int(v) for v in tok[1:1 + n]]
                except (ValueError, IndexError):
                    raise MeshIOError("%s:%d: malformed face record"
                                      % (path, line_no)) from None
                if len(idxs) != n:
                    raise MeshIOError("%s:%d: face record shorter than its "
                                      "declared count" % (path, line_no))
                lists.append(idxs)
        else:
            for vals in payload:
                lists.append(list(vals[li]))
    faces = _faces_from_lists(path, lists, len(pos))
    return TriangleMesh(vertices=pos, faces=faces)


def _load_obj(path):
    verts = []
    lists = []
    skipped = 0
    try:
        fh = open(path, "r", encoding="utf-8", errors="replace")
    except FileNotFoundError:
        raise MeshIOError("file not found: %s" % path) from None
    with fh:
        for ln, line in enumerate(fh, start=1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "v":
                if len(tok) < 4:
                    raise MeshIOError("%s:%d: vertex with fewer than 3 "
                                      "coordinates" % (path, ln))
                try:
                    verts.append((float(tok[1]), float(tok[2]),
                                  float(tok[3])))
                except ValueError:
                    raise MeshIOError("%s:%d: non-numeric vertex coordinate"
                                      % (path, ln)) from None
            elif tok[0] == "f":
                idxs = []
                for ref in tok[1:]:
                    try:
                        raw = int(ref.split("/")[0])
                    except ValueError:
                        raise MeshIOError("%s:%d: malformed face reference %r"
                                          % (path, ln, ref)) from None
                    idxs.append(raw - 1 if raw > 0 else len(verts) + raw)
                lists.append(idxs)
            else:
                skipped += 1
    if skipped:
        warnings.warn("%s: ignored %d non-v/f OBJ records" % (path, skipped))
    faces = _faces_from_lists(path, lists, len(verts))
    return TriangleMesh(vertices=np.array(verts, dtype=np.float64)
                        .reshape(-1, 3), faces=faces)


def load_mesh(path):
    """Read a triangle mesh from .ply or .obj (fan-triangulating polygons)."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        return _load_obj(path)
    return _load_ply_mesh(path)


def save_mesh(mesh, path, ascii=False):
    """Write a mesh; format chosen by extension (.obj else PLY)."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        with open(path, "w", encoding="ascii") as fh:
            for v in mesh.vertices:
                fh.write("v %.17g %.17g %.17g\n" % tuple(v))
            for f in mesh.faces:
                fh.write("f %d %d %d\n" % (f[0] + 1, f[1] + 1, f[2] + 1))
        return
    with open(path, "wb") as fh:
        fmt = "ascii" if ascii else "binary_little_endian"
        lines = ["ply", "format %s 1.0" % fmt,
                 "element vertex %d" % mesh.n_vertices,
                 "property float x", "property float y", "property float z",
                 "element face %d" % mesh.n_faces,
                 "property list uchar int vertex_indices", "end_header"]
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        pos = mesh.vertices.astype("<f4")
        if ascii:
            for v in pos:
                fh.write(("%.9g %.9g %.9g\n" % tuple(v)).encode("ascii"))
            for f in mesh.faces:
                fh.write(("3 %d %d %d\n" % tuple(f)).encode("ascii"))
        else:
            fh.write(pos.tobytes())
            rec = np.zeros(mesh.n_faces, dtype=[("n", "u1"), ("i", "<i4", 3)])
            rec["n"] = 3
            rec["i"] = mesh.faces.astype("<i4")
            fh.write(rec.tobytes())
