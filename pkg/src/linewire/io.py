"""Readers and writers for every on-disk artifact.

Formats:
  line cloud   plain text, one segment per row "px py pz qx qy qz", optionally
               followed by the five label fields "f i1 d1 i2 d2"; or an OBJ
               subset with `v` and 2-vertex `l` records. `#` starts a comment.
  wireframe    OBJ subset (`v` / `l`, 1-based indices), 9 significant digits.
  cameras      JSON list with per-view intrinsics / rotation / translation.
  supports     JSON sidecar keyed by segment index.
  weights      one-line JSON header + raw little-endian float64 tensor data.
  mesh         OBJ subset with `v` and `f` records (for GT extraction).

All parsers raise ParseError on malformed input; they never propagate raw
decoding or conversion exceptions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    Camera,
    GeometryError,
    LabelArray,
    LineCloud,
    Support2D,
    Wireframe,
    validate_wireframe,
)

WEIGHTS_MAGIC = "linewire-weights"
WEIGHTS_VERSION = 1


class ParseError(ValueError):
    """Structured parse failure: carries the file and, when known, the line."""

    def __init__(self, path, message, line: int | None = None):
        loc = f"{path}" if line is None else f"{path}:{line}"
        super().__init__(f"{loc}: {message}")
        self.path = str(path)
        self.line = line


def _fmt(x: float) -> str:
    return f"{float(x):.9g}"


def _read_text(path) -> str:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise ParseError(path, f"cannot read file: {e}") from e
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(path, f"not valid UTF-8 text: {e}") from e


def _data_lines(text: str):
    """Yield (line_number, tokens) for non-empty, non-comment lines."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        yield lineno, line.split()


def _floats(path, lineno, tokens):
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ParseError(path, f"expected numbers, got {tokens!r}", lineno) from None


# ---------------------------------------------------------------------------
# line clouds


def read_line_cloud(path) -> LineCloud:
    """Read a line cloud from plain-text rows or from an OBJ subset.

    The format is sniffed from the first data line: an alphabetic leading
    token means OBJ (`v` / `l` records), otherwise numeric columns.
    """
    text = _read_text(path)
    first = next(_data_lines(text), None)
    if first is None:
        return LineCloud(np.zeros((0, 2, 3)))
    if first[1][0][0].isalpha():
        verts, polylines = _read_obj_records(path, text, want="l")
        segs = [[verts[a], verts[b]] for a, b in polylines]
        try:
            return LineCloud(np.asarray(segs, dtype=np.float64).reshape(-1, 2, 3))
        except GeometryError as e:
            raise ParseError(path, str(e)) from e

    rows, labels, have_labels = [], [], False
    for lineno, tokens in _data_lines(text):
        vals = _floats(path, lineno, tokens)
        if len(vals) == 6:
            if have_labels:
                raise ParseError(path, "mixed labeled and unlabeled rows", lineno)
            rows.append(vals)
            labels.append((0, -1, 0.0, -1, 0.0))
        elif len(vals) == 11:
            have_labels = True
            rows.append(vals[:6])
            f = int(vals[6])
            if f not in (0, 1):
                raise ParseError(path, f"label flag must be 0 or 1, got {vals[6]}", lineno)
            labels.append((f, int(vals[7]), vals[8], int(vals[9]), vals[10]))
        else:
            raise ParseError(path, f"expected 6 or 11 columns, got {len(vals)}", lineno)
    segs = np.asarray(rows, dtype=np.float64).reshape(-1, 2, 3)
    try:
        if have_labels:
            lab = LabelArray(
                [l[0] for l in labels], [l[1] for l in labels], [l[2] for l in labels],
                [l[3] for l in labels], [l[4] for l in labels])
            return LineCloud(segs, labels=lab)
        return LineCloud(segs)
    except GeometryError as e:
        raise ParseError(path, str(e)) from e


def write_line_cloud(lc: LineCloud, path) -> None:
    lines = ["# line cloud: px py pz qx qy qz" + ("  f i1 d1 i2 d2" if lc.labels is not None else "")]
    for i in range(len(lc)):
        row = " ".join(_fmt(v) for v in lc.array[i].reshape(-1))
        if lc.labels is not None:
            lab = lc.labels
            row += f" {int(lab.f[i])} {int(lab.i1[i])} {_fmt(lab.d1[i])} {int(lab.i2[i])} {_fmt(lab.d2[i])}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")


def _read_obj_records(path, text: str, want: str):
    """Parse `v` records plus either `l` (want='l') or `f` (want='f') records."""
    verts = []
    groups = []
    for lineno, tokens in _data_lines(text):
        tag = tokens[0]
        if tag == "v":
            vals = _floats(path, lineno, tokens[1:])
            if len(vals) != 3:
                raise ParseError(path, f"vertex record needs 3 coordinates, got {len(vals)}", lineno)
            verts.append(vals)
        elif tag == want:
            try:
                idx = [int(t.split("/")[0]) for t in tokens[1:]]
            except ValueError:
                raise ParseError(path, f"bad index in {tag!r} record", lineno) from None
            if want == "l" and len(idx) != 2:
                raise ParseError(path, f"`l` record needs exactly 2 indices, got {len(idx)}", lineno)
            if want == "f" and len(idx) < 3:
                raise ParseError(path, f"`f` record needs at least 3 indices, got {len(idx)}", lineno)
            zero_based = []
            for k in idx:
                if k < 1 or k > len(verts):
                    raise ParseError(path, f"index {k} out of range (have {len(verts)} vertices)", lineno)
                zero_based.append(k - 1)
            groups.append(tuple(zero_based))
        elif tag in ("l", "f", "vn", "vt", "o", "g", "s", "mtllib", "usemtl"):
            continue  # tolerated OBJ records we do not consume
        else:
            raise ParseError(path, f"unrecognized record {tag!r}", lineno)
    return np.asarray(verts, dtype=np.float64).reshape(-1, 3), groups


# ---------------------------------------------------------------------------
# wireframes


def read_wireframe(path) -> Wireframe:
    text = _read_text(path)
    verts, lines = _read_obj_records(path, text, want="l")
    return Wireframe(verts, np.asarray(lines, dtype=np.int64).reshape(-1, 2))


def write_wireframe(wf: Wireframe, path) -> None:
    """Write OBJ `v`/`l` records; refuses wireframes violating their invariants."""
    violations = validate_wireframe(wf)
    if violations:
        raise GeometryError(f"refusing to write invalid wireframe: {violations[0]}")
    out = ["# wireframe"]
    for v in wf.vertices:
        out.append(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")
    order = np.lexsort((wf.edges[:, 1], wf.edges[:, 0])) if wf.n_edges else []
    for k in order:
        a, b = wf.edges[k]
        out.append(f"l {a + 1} {b + 1}")
    Path(path).write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# meshes (GT extraction input)


@dataclass
class Mesh:
    """Indexed polygon mesh: vertex array plus face index tuples."""

    vertices: np.ndarray
    faces: list[tuple[int, ...]]

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = [tuple(int(i) for i in f) for f in self.faces]


def read_mesh(path) -> Mesh:
    text = _read_text(path)
    verts, faces = _read_obj_records(path, text, want="f")
    return Mesh(verts, faces)


def write_mesh(mesh: Mesh, path) -> None:
    out = ["# mesh"]
    for v in mesh.vertices:
        out.append(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")
    for f in mesh.faces:
        out.append("f " + " ".join(str(i + 1) for i in f))
    Path(path).write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# cameras and 2D supports


def read_cameras(path) -> list[Camera]:
    text = _read_text(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(path, f"invalid JSON: {e}") from e
    if not isinstance(doc, dict) or "cameras" not in doc:
        raise ParseError(path, "expected an object with a 'cameras' list")
    cams = []
    for i, entry in enumerate(doc["cameras"]):
        try:
            k = np.asarray(entry["intrinsics"], dtype=np.float64).reshape(3, 3)
            r = np.asarray(entry["rotation"], dtype=np.float64).reshape(3, 3)
            t = np.asarray(entry["translation"], dtype=np.float64).reshape(3)
            w, h = int(entry["width"]), int(entry["height"])
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(path, f"camera {i}: {e}") from e
        err = float(np.abs(r @ r.T - np.eye(3)).max())
        if err > 1e-4:
            raise ParseError(path, f"camera {i}: rotation not orthonormal (deviation {err:.2e})")
        if np.linalg.det(r) < 0:
            raise ParseError(path, f"camera {i}: rotation is a reflection (det < 0)")
        if err > 1e-6:
            u, _, vt = np.linalg.svd(r)
            r = u @ vt
        try:
            cams.append(Camera(k, r, t, w, h))
        except GeometryError as e:
            raise ParseError(path, f"camera {i}: {e}") from e
    return cams


def write_cameras(cameras: list[Camera], path) -> None:
    doc = {"cameras": [
        {
            "intrinsics": c.intrinsics.tolist(),
            "rotation": c.rotation.tolist(),
            "translation": c.translation.tolist(),
            "width": c.width,
            "height": c.height,
        }
        for c in cameras
    ]}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_supports(path, n_segments: int) -> list[list[Support2D]]:
    """Read the per-segment 2D support sidecar; absent indices mean no supports."""
    text = _read_text(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(path, f"invalid JSON: {e}") from e
    if not isinstance(doc, dict) or "supports" not in doc:
        raise ParseError(path, "expected an object with a 'supports' map")
    out = [[] for _ in range(n_segments)]
    for key, entries in doc["supports"].items():
        try:
            idx = int(key)
        except ValueError:
            raise ParseError(path, f"non-integer segment key {key!r}") from None
        if not (0 <= idx < n_segments):
            raise ParseError(path, f"segment key {idx} out of range (cloud has {n_segments})")
        try:
            out[idx] = [Support2D(int(e["view"]), np.asarray(e["a"], float), np.asarray(e["b"], float))
                        for e in entries]
        except (KeyError, TypeError, ValueError, GeometryError) as e:
            raise ParseError(path, f"segment {idx}: {e}") from e
    return out


def write_supports(supports: list[list[Support2D]], path) -> None:
    doc = {"supports": {
        str(i): [{"view": s.view, "a": s.a.tolist(), "b": s.b.tolist()} for s in sup]
        for i, sup in enumerate(supports) if sup
    }}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# weights


class WeightsError(ValueError):
    """Weights file does not match the configured architecture."""


@dataclass
class WeightsFile:
    """Named tensors with a format version; the unit of model serialization."""

    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    version: int = WEIGHTS_VERSION


def write_weights_file(wf: WeightsFile, path) -> None:
    names = list(wf.tensors)
    if len(set(names)) != len(names):
        raise WeightsError("duplicate tensor names")
    header = {
        "magic": WEIGHTS_MAGIC,
        "version": wf.version,
        "tensors": [{"name": n, "shape": list(wf.tensors[n].shape)} for n in names],
        "meta": wf.meta,
    }
    blob = bytearray(json.dumps(header, sort_keys=True).encode("utf-8"))
    blob += b"\n"
    for n in names:
        arr = np.ascontiguousarray(wf.tensors[n], dtype=np.float64)
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


def read_weights_file(path) -> WeightsFile:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise ParseError(path, f"cannot read file: {e}") from e
    nl = raw.find(b"\n")
    if nl < 0:
        raise ParseError(path, "missing weights header")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError(path, f"invalid weights header: {e}") from e
    if not isinstance(header, dict) or header.get("magic") != WEIGHTS_MAGIC:
        raise ParseError(path, "not a weights file (bad magic)")
    version = header.get("version")
    if version != WEIGHTS_VERSION:
        raise ParseError(path, f"unrecognized weights version {version!r}")
    tensors = {}
    offset = nl + 1
    for entry in header.get("tensors", []):
        try:
            name, shape = entry["name"], tuple(int(s) for s in entry["shape"])
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(path, f"bad tensor entry {entry!r}: {e}") from e
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise ParseError(path, f"tensor {name!r}: file truncated")
        if name in tensors:
            raise ParseError(path, f"duplicate tensor name {name!r}")
        tensors[name] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise ParseError(path, f"{len(raw) - offset} trailing bytes after tensor data")
    return WeightsFile(tensors=tensors, meta=header.get("meta", {}), version=version)
