"""Mesh, model, partition and report file formats.

* PLY (ASCII or binary little-endian), triangles only, optional per-vertex
  ``quality`` scalar and ``exact`` flag for heatmaps.
* OBJ (ASCII, triangles only).
* Model files: ``b"SSM1"`` then little-endian ``uint32`` V, T, N, sample
  count; ``float64`` mean (3V), modes (N x 3V, row-major), stddevs (N);
  ``uint32`` triangle indices (3T).
* Partition files: JSON with ``version``, ``n_vertices``, sorted
  ``unknown_indices`` and optional ``crop`` provenance.
* Reports: one JSON object per line, plus a JSON summary document.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import (
    FormatError,
    HeaderError,
    IndexOutOfRangeError,
    NonTriangleFaceError,
    TruncatedPayloadError,
)
from .mesh import TriMesh
from .ssm import ShapeModel

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

MODEL_MAGIC = b"SSM1"
_MODEL_HEADER = struct.Struct("<4sIIII")
PARTITION_VERSION = 1
GRAM_TOL = 1e-8


# -- PLY --------------------------------------------------------------------

def _parse_ply_header(data):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise HeaderError("not a PLY file or missing end_header", "line 1")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise HeaderError("end_header line not terminated", f"byte {end}")
    lines = data[:nl].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements = []
    for lineno, raw in enumerate(lines, start=1):
        tok = raw.split()
        if not tok or tok[0] in ("ply", "comment", "obj_info", "end_header"):
            continue
        where = f"header line {lineno}"
        if tok[0] == "format":
            if len(tok) != 3 or tok[1] not in ("ascii", "binary_little_endian"):
                raise HeaderError(f"unsupported format {' '.join(tok[1:])!r}", where)
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3:
                raise HeaderError("malformed element line", where)
            try:
                count = int(tok[2])
            except ValueError:
                raise HeaderError(f"bad element count {tok[2]!r}", where) from None
            elements.append({"name": tok[1], "count": count, "props": []})
        elif tok[0] == "property":
            if not elements:
                raise HeaderError("property before any element", where)
            if tok[1] == "list":
                if len(tok) != 5 or tok[2] not in _PLY_TYPES or tok[3] not in _PLY_TYPES:
                    raise HeaderError("malformed list property", where)
                elements[-1]["props"].append((tok[4], "list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
            else:
                if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                    raise HeaderError(f"unknown property type {tok[1]!r}", where)
                elements[-1]["props"].append((tok[2], "scalar", _PLY_TYPES[tok[1]], None))
        else:
            raise HeaderError(f"unexpected header keyword {tok[0]!r}", where)
    if fmt is None:
        raise HeaderError("missing format line")
    names = [e["name"] for e in elements]
    if "vertex" not in names or "face" not in names:
        raise HeaderError("PLY needs vertex and face elements")
    for e in elements:
        if e["name"] not in ("vertex", "face"):
            raise HeaderError(f"unsupported element {e['name']!r}")
    vert = elements[names.index("vertex")]
    vnames = [p[0] for p in vert["props"]]
    if any(p[1] == "list" for p in vert["props"]) or not {"x", "y", "z"} <= set(vnames):
        raise HeaderError("vertex element needs scalar x, y, z properties")
    face = elements[names.index("face")]
    if len(face["props"]) != 1 or face["props"][0][1] != "list":
        raise HeaderError("face element must hold exactly one list property")
    return fmt, elements, nl + 1, len(lines)


def _finish_faces(faces, n_vertices, where_fn):
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    bad = np.flatnonzero((faces < 0).any(axis=1) | (faces >= n_vertices).any(axis=1))
    if bad.size:
        raise IndexOutOfRangeError("face index out of range", where_fn(int(bad[0])))
    return faces


def read_ply(path):
    """Read a PLY mesh. Returns ``(mesh, vertex_properties)``.

    ``vertex_properties`` maps every non-coordinate vertex property name
    (``quality``, ``exact``, ...) to an array.
    """
    data = Path(path).read_bytes()
    fmt, elements, offset, n_header_lines = _parse_ply_header(data)
    if fmt == "ascii":
        return _read_ply_ascii(data[offset:], elements, n_header_lines)
    return _read_ply_binary(data, offset, elements)


def _read_ply_binary(data, offset, elements):
    vertices = props = faces = None
    n_vertices = 0
    for e in elements:
        if e["name"] == "vertex":
            dt = np.dtype([(p[0], "<" + p[2]) for p in e["props"]])
            need = dt.itemsize * e["count"]
            if offset + need > len(data):
                raise TruncatedPayloadError("truncated vertex data", f"byte {len(data)}")
            arr = np.frombuffer(data, dtype=dt, count=e["count"], offset=offset)
            offset += need
            vertices = np.column_stack([arr["x"], arr["y"], arr["z"]]).astype(np.float64)
            props = {n: np.array(arr[n]) for n in arr.dtype.names if n not in ("x", "y", "z")}
            n_vertices = e["count"]
        else:
            _, _, ctype, itype = e["props"][0]
            dt = np.dtype([("n", "<" + ctype), ("i", "<" + itype, (3,))])
            count = e["count"]
            avail = (len(data) - offset) // dt.itemsize
            arr = np.frombuffer(data, dtype=dt, count=min(count, avail), offset=offset)
            bad = np.flatnonzero(arr["n"] != 3)
            if bad.size:
                k = int(bad[0])
                raise NonTriangleFaceError(
                    f"non-triangle face with {int(arr['n'][k])} vertices",
                    f"face {k}, byte {offset + k * dt.itemsize}",
                )
            if avail < count:
                raise TruncatedPayloadError("truncated face data", f"byte {len(data)}")
            faces = np.array(arr["i"], dtype=np.int64)
            offset += dt.itemsize * count
    if offset != len(data):
        raise FormatError("trailing bytes after PLY payload", f"byte {offset}")
    faces = _finish_faces(faces, n_vertices, lambda k: f"face {k}")
    return TriMesh(vertices, faces), props


def _read_ply_ascii(body, elements, n_header_lines):
    lines = body.decode("ascii", errors="replace").splitlines()
    pos = 0
    vertices = props = faces = None
    n_vertices = 0
    face_lines = None

    def take(count, what):
        nonlocal pos
        chunk = []
        while len(chunk) < count:
            if pos >= len(lines):
                raise TruncatedPayloadError(f"truncated {what} data",
                                            f"line {n_header_lines + pos + 1}")
            if lines[pos].strip():
                chunk.append((n_header_lines + pos + 1, lines[pos]))
            pos += 1
        return chunk

    for e in elements:
        if e["name"] == "vertex":
            chunk = take(e["count"], "vertex")
            names = [p[0] for p in e["props"]]
            rows = []
            for lineno, text in chunk:
                tok = text.split()
                if len(tok) != len(names):
                    raise FormatError(f"expected {len(names)} vertex values, got {len(tok)}",
                                      f"line {lineno}")
                try:
                    rows.append([float(t) for t in tok])
                except ValueError:
                    raise FormatError("non-numeric vertex value", f"line {lineno}") from None
            arr = np.array(rows, dtype=np.float64).reshape(-1, len(names))
            cols = {n: arr[:, k] for k, n in enumerate(names)}
            vertices = np.column_stack([cols["x"], cols["y"], cols["z"]])
            props = {}
            for (n, _, t, _), col in zip(e["props"], arr.T):
                if n not in ("x", "y", "z"):
                    props[n] = col.astype(t)
            n_vertices = e["count"]
        else:
            chunk = take(e["count"], "face")
            face_lines = [ln for ln, _ in chunk]
            rows = []
            for lineno, text in chunk:
                tok = text.split()
                try:
                    vals = [int(t) for t in tok]
                except ValueError:
                    raise FormatError("non-integer face value", f"line {lineno}") from None
                if not vals or vals[0] != 3 or len(vals) != 4:
                    raise NonTriangleFaceError(
                        f"non-triangle face with {vals[0] if vals else 0} vertices",
                        f"line {lineno}")
                rows.append(vals[1:])
            faces = np.array(rows, dtype=np.int64).reshape(-1, 3)
    if any(ln.strip() for ln in lines[pos:]):
        raise FormatError("trailing data after PLY payload", f"line {n_header_lines + pos + 1}")
    faces = _finish_faces(faces, n_vertices, lambda k: f"line {face_lines[k]}")
    return TriMesh(vertices, faces), props


def write_ply(path, mesh, quality=None, exact=None, binary=True):
    """Write ``mesh`` as PLY with float64 coordinates.

    ``quality`` (float per vertex) and ``exact`` (bool per vertex) are
    optional scalar properties, used for heatmaps.
    """
    v = mesh.vertices
    t = mesh.triangles
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    header = [
        "ply",
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
        f"element vertex {len(v)}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if quality is not None:
        fields.append(("quality", "<f8"))
        header.append("property double quality")
    if exact is not None:
        fields.append(("exact", "u1"))
        header.append("property uchar exact")
    header += [f"element face {len(t)}", "property list uchar uint vertex_indices", "end_header"]
    vert = np.zeros(len(v), dtype=np.dtype(fields))
    vert["x"], vert["y"], vert["z"] = v[:, 0], v[:, 1], v[:, 2]
    if quality is not None:
        vert["quality"] = np.asarray(quality, dtype=np.float64)
    if exact is not None:
        vert["exact"] = np.asarray(exact, dtype=bool).astype(np.uint8)
    head = ("\n".join(header) + "\n").encode("ascii")
    if binary:
        face = np.zeros(len(t), dtype=np.dtype([("n", "u1"), ("i", "<u4", (3,))]))
        face["n"] = 3
        face["i"] = t
        payload = head + vert.tobytes() + face.tobytes()
    else:
        out = [head.decode("ascii")]
        for row in vert:
            vals = [repr(float(row[n])) for n in ("x", "y", "z")]
            if quality is not None:
                vals.append(repr(float(row["quality"])))
            if exact is not None:
                vals.append(str(int(row["exact"])))
            out.append(" ".join(vals) + "\n")
        for a, b, c in t:
            out.append(f"3 {a} {b} {c}\n")
        payload = "".join(out).encode("ascii")
    Path(path).write_bytes(payload)


# -- OBJ --------------------------------------------------------------------

def read_obj(path):
    verts = []
    faces = []
    face_lines = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            tok = raw.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "v":
                if len(tok) < 4:
                    raise FormatError("vertex needs 3 coordinates", f"line {lineno}")
                try:
                    verts.append([float(x) for x in tok[1:4]])
                except ValueError:
                    raise FormatError("non-numeric vertex coordinate", f"line {lineno}") from None
            elif tok[0] == "f":
                if len(tok) != 4:
                    raise NonTriangleFaceError(
                        f"non-triangle face with {len(tok) - 1} vertices", f"line {lineno}")
                idx = []
                for t in tok[1:]:
                    try:
                        k = int(t.split("/")[0])
                    except ValueError:
                        raise FormatError(f"bad face index {t!r}", f"line {lineno}") from None
                    # negative indices count back from the latest vertex
                    idx.append(k - 1 if k > 0 else len(verts) + k)
                    if k == 0:
                        raise IndexOutOfRangeError("face index 0", f"line {lineno}")
                faces.append(idx)
                face_lines.append(lineno)
    if not verts:
        raise FormatError("OBJ file has no vertices")
    faces = _finish_faces(faces, len(verts), lambda k: f"line {face_lines[k]}")
    return TriMesh(np.array(verts), faces)


def write_obj(path, mesh):
    out = [f"# {mesh.n_vertices} vertices, {mesh.n_triangles} triangles\n"]
    out += [f"v {x:.9g} {y:.9g} {z:.9g}\n" for x, y, z in mesh.vertices]
    out += [f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in mesh.triangles]
    Path(path).write_text("".join(out), encoding="utf-8")


def read_mesh(path):
    """Read a ``.ply`` or ``.obj`` mesh (geometry only)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)[0]
    if suffix == ".obj":
        return read_obj(path)
    raise FormatError(f"unsupported mesh extension {suffix!r}", str(path))


def write_mesh(path, mesh, **kwargs):
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        write_ply(path, mesh, **kwargs)
    elif suffix == ".obj":
        write_obj(path, mesh)
    else:
        raise FormatError(f"unsupported mesh extension {suffix!r}", str(path))


# -- shape models -----------------------------------------------------------

def write_model(path, model):
    n_v = model.n_vertices
    n_t = len(model.triangles)
    n_m = model.n_modes
    parts = [
        _MODEL_HEADER.pack(MODEL_MAGIC, n_v, n_t, n_m, int(model.sample_count)),
        np.ascontiguousarray(model.mean, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.modes, dtype="<f8").reshape(n_m, 3 * n_v).tobytes(),
        np.ascontiguousarray(model.stddevs, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.triangles, dtype="<u4").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def read_model(path, gram_tol=GRAM_TOL):
    data = Path(path).read_bytes()
    if len(data) < _MODEL_HEADER.size:
        if not data.startswith(MODEL_MAGIC[: len(data)]):
            raise FormatError("bad magic: not a model file", "byte 0")
        raise TruncatedPayloadError("truncated payload: incomplete header", f"byte {len(data)}")
    magic, n_v, n_t, n_m, n_s = _MODEL_HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}: not a model file", "byte 0")
    sizes = [3 * n_v * 8, n_m * 3 * n_v * 8, n_m * 8, 3 * n_t * 4]
    expected = _MODEL_HEADER.size + sum(sizes)
    if len(data) < expected:
        raise TruncatedPayloadError(
            f"truncated payload: expected {expected} bytes, got {len(data)}", f"byte {len(data)}")
    if len(data) > expected:
        raise FormatError("trailing bytes after model payload", f"byte {expected}")
    off = _MODEL_HEADER.size
    mean = np.frombuffer(data, "<f8", 3 * n_v, off).astype(np.float64)
    off += sizes[0]
    modes = np.frombuffer(data, "<f8", n_m * 3 * n_v, off).astype(np.float64).reshape(n_m, 3 * n_v)
    off += sizes[1]
    stddevs = np.frombuffer(data, "<f8", n_m, off).astype(np.float64)
    off += sizes[2]
    tri = np.frombuffer(data, "<u4", 3 * n_t, off).astype(np.int64).reshape(n_t, 3)
    if tri.size and tri.max() >= n_v:
        raise IndexOutOfRangeError("triangle index out of range in model", "triangle block")
    model = ShapeModel(mean, modes, stddevs, tri, int(n_s))
    err = model.gram_error()
    if err > gram_tol:
        raise FormatError(f"stored modes are not orthonormal (max Gram error {err:.3g})")
    return model


# -- partitions -------------------------------------------------------------

def write_partition(path, n_vertices, unknown_indices, crop=None):
    idx = sorted({int(i) for i in unknown_indices})
    doc = {"version": PARTITION_VERSION, "n_vertices": int(n_vertices), "unknown_indices": idx}
    if crop is not None:
        doc["crop"] = dict(crop)
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def read_partition(path):
    """Returns ``(n_vertices, unknown_indices, crop_or_None)``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid partition JSON: {exc.msg}",
                          f"line {exc.lineno}, column {exc.colno}") from None
    if not isinstance(doc, dict):
        raise FormatError("partition document must be an object")
    for key in ("version", "n_vertices", "unknown_indices"):
        if key not in doc:
            raise FormatError(f"partition is missing {key!r}")
    if doc["version"] != PARTITION_VERSION:
        raise FormatError(f"unsupported partition version {doc['version']!r}")
    n = doc["n_vertices"]
    idx = doc["unknown_indices"]
    if not isinstance(n, int) or n < 0 or not isinstance(idx, list):
        raise FormatError("malformed n_vertices or unknown_indices")
    if not all(isinstance(i, int) for i in idx):
        raise FormatError("unknown_indices must be integers")
    arr = np.array(idx, dtype=np.int64)
    if arr.size:
        if np.any(np.diff(arr) <= 0):
            k = int(np.flatnonzero(np.diff(arr) <= 0)[0]) + 1
            raise FormatError("unknown_indices must be sorted and unique", f"unknown_indices[{k}]")
        if arr[0] < 0 or arr[-1] >= n:
            k = int(np.flatnonzero((arr < 0) | (arr >= n))[0])
            raise IndexOutOfRangeError("unknown index out of range", f"unknown_indices[{k}]")
    return n, arr, doc.get("crop")


# -- reports ----------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def dumps_record(record):
    return json.dumps(_jsonable(record), sort_keys=True)


def write_records(path, records):
    Path(path).write_text("".join(dumps_record(r) + "\n" for r in records), encoding="utf-8")


def read_records(path):
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid record: {exc.msg}", f"line {lineno}") from None
    return out


def write_summary(path, summary):
    Path(path).write_text(json.dumps(_jsonable(summary), sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")
