"""Point-cloud scenes: the data container, file formats and a synthetic scene generator.

Two native formats are supported, ``sfpc-text`` and ``sfpc-binary``, which
carry every per-point attribute the pipeline uses (probability vectors,
instance embeddings, both ground truths).  PLY files can be read for
positions, normals, colours and faces.
"""
from __future__ import annotations

import math
import os
import struct
from collections import deque
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

IGNORE_ID = -1
BLOCKS = ("positions", "normals", "colors", "faces", "semantic_probs",
          "instance_embed", "semantic_gt", "instance_gt")
SHAPES = ("box", "plane", "cylinder")
FORMATS = ("sfpc-text", "sfpc-binary", "ply")
MAGIC = b"SFPC\x01"


class SceneError(ValueError):
    """Raised for malformed scene files or clouds violating the invariants."""


@dataclass(frozen=True, eq=False)
class PointCloud:
    positions: np.ndarray
    normals: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None
    faces: Optional[np.ndarray] = None
    semantic_probs: Optional[np.ndarray] = None
    instance_embed: Optional[np.ndarray] = None
    semantic_gt: Optional[np.ndarray] = None
    instance_gt: Optional[np.ndarray] = None
    num_classes: int = 0
    embed_dim: int = 0

    def __post_init__(self):
        conv = {"faces": np.int64, "semantic_gt": np.int64, "instance_gt": np.int64}
        for name in BLOCKS:
            val = getattr(self, name)
            if val is not None:
                arr = np.array(val, dtype=conv.get(name, np.float64))
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        if self.semantic_probs is not None and self.num_classes == 0:
            object.__setattr__(self, "num_classes", self.semantic_probs.shape[1])
        if self.instance_embed is not None and self.embed_dim == 0:
            object.__setattr__(self, "embed_dim", self.instance_embed.shape[1])

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def present(self) -> tuple:
        return tuple(b for b in BLOCKS if getattr(self, b) is not None)

    def replace(self, **changes) -> "PointCloud":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return PointCloud(**kw)

    def validate(self, prob_tol: float = 1e-6) -> "PointCloud":
        """Check every present block against the cloud invariants; returns self."""
        n = self.n
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise SceneError(f"positions must be N x 3, got {self.positions.shape}")
        widths = {"positions": 3, "normals": 3, "colors": 3,
                  "semantic_probs": self.num_classes, "instance_embed": self.embed_dim}
        for name, width in widths.items():
            arr = getattr(self, name)
            if arr is None:
                continue
            if arr.shape != (n, width):
                raise SceneError(f"{name}: expected shape {(n, width)}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                row = int(np.argwhere(~np.isfinite(arr))[0, 0])
                raise SceneError(f"{name}: non-finite value at row {row}")
        if self.normals is not None:
            bad = np.abs(np.linalg.norm(self.normals, axis=1) - 1.0) > 1e-6
            if bad.any():
                raise SceneError(f"normals: row {int(np.argmax(bad))} is not unit length")
        if self.colors is not None and (self.colors.min(initial=0) < 0 or self.colors.max(initial=0) > 1):
            raise SceneError("colors must lie in [0, 1]")
        if self.faces is not None:
            f = self.faces
            if f.ndim != 2 or f.shape[1] != 3:
                raise SceneError(f"faces must be M x 3, got {f.shape}")
            if f.size and (f.min() < 0 or f.max() >= n):
                raise SceneError("face index out of range")
            degen = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if degen.any():
                raise SceneError(f"degenerate face at row {int(np.argmax(degen))}")
        if self.semantic_probs is not None:
            p = self.semantic_probs
            if p.size and p.min() < 0:
                raise SceneError(f"semantic_probs: negative entry in row {int(np.argwhere(p < 0)[0, 0])}")
            off = np.abs(p.sum(axis=1) - 1.0) > prob_tol
            if off.any():
                raise SceneError(f"probability row not normalized (row {int(np.argmax(off))})")
        for name in ("semantic_gt", "instance_gt"):
            arr = getattr(self, name)
            if arr is not None and arr.shape != (n,):
                raise SceneError(f"{name}: expected {n} entries, got {arr.shape}")
        if self.semantic_gt is not None:
            g = self.semantic_gt
            bad = (g != IGNORE_ID) & ((g < 0) | (g >= self.num_classes))
            if bad.any():
                raise SceneError(f"semantic_gt: label out of range at row {int(np.argmax(bad))}")
        if self.instance_gt is not None and (self.instance_gt < IGNORE_ID).any():
            raise SceneError("instance_gt: negative ids other than the ignore id")
        return self


def clouds_equal(a: PointCloud, b: PointCloud, atol: float = 0.0) -> bool:
    if (a.num_classes, a.embed_dim) != (b.num_classes, b.embed_dim):
        return False
    for name in BLOCKS:
        x, y = getattr(a, name), getattr(b, name)
        if (x is None) != (y is None):
            return False
        if x is None:
            continue
        if x.shape != y.shape:
            return False
        if atol == 0.0 or x.dtype.kind == "i":
            if not np.array_equal(x, y):
                return False
        elif not np.allclose(x, y, rtol=atol, atol=atol):
            return False
    return True


# ---------------------------------------------------------------- sfpc formats

def _detect_format(path) -> str:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ply":
        return "ply"
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
    return "sfpc-binary" if head == MAGIC else "sfpc-text"


def load_scene(path, format: Optional[str] = None) -> PointCloud:
    """Read a scene file; ``format`` is sniffed from the content when omitted."""
    fmt = format or _detect_format(path)
    if fmt == "sfpc-binary":
        return _load_binary(path)
    if fmt == "sfpc-text":
        return _load_text(path)
    if fmt == "ply":
        return load_ply(path)
    raise SceneError(f"unknown format {fmt!r}")


def save_scene(cloud: PointCloud, path, format: str = "sfpc-binary"):
    cloud.validate()
    if format == "sfpc-binary":
        data = _encode_binary(cloud)
        mode = "wb"
    elif format == "sfpc-text":
        data = _encode_text(cloud)
        mode = "w"
    else:
        raise SceneError(f"cannot write format {format!r}")
    try:
        with open(path, mode) as fh:
            fh.write(data)
    except OSError as exc:
        raise SceneError(f"cannot write {path}: {exc}") from exc


def _encode_binary(cloud: PointCloud) -> bytes:
    mask = 0
    for bit, name in enumerate(BLOCKS):
        if getattr(cloud, name) is not None:
            mask |= 1 << bit
    out = [MAGIC, struct.pack("<QIII", cloud.n, cloud.num_classes, cloud.embed_dim, mask)]
    for name in BLOCKS:
        arr = getattr(cloud, name)
        if arr is None:
            continue
        if name == "faces":
            out.append(struct.pack("<Q", arr.shape[0]))
        dtype = "<i8" if arr.dtype.kind == "i" else "<f8"
        out.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    return b"".join(out)


def _load_binary(path) -> PointCloud:
    with open(path, "rb") as fh:
        buf = fh.read()
    if not buf.startswith(MAGIC):
        raise SceneError(f"{path}: malformed header (bad magic)")
    pos = len(MAGIC)
    try:
        n, c, d, mask = struct.unpack_from("<QIII", buf, pos)
        pos += struct.calcsize("<QIII")
        widths = {"positions": 3, "normals": 3, "colors": 3, "semantic_probs": c,
                  "instance_embed": d, "semantic_gt": None, "instance_gt": None}
        kw = {}
        for bit, name in enumerate(BLOCKS):
            if not mask & (1 << bit):
                continue
            if name == "faces":
                (m,) = struct.unpack_from("<Q", buf, pos)
                pos += 8
                shape, dtype = (m, 3), "<i8"
            elif widths[name] is None:
                shape, dtype = (n,), "<i8"
            else:
                shape, dtype = (n, widths[name]), "<f8"
            count = int(np.prod(shape))
            if pos + 8 * count > len(buf):
                raise SceneError(f"{path}: attribute length mismatch in block {name}")
            kw[name] = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).reshape(shape)
            pos += 8 * count
    except struct.error as exc:
        raise SceneError(f"{path}: malformed header") from exc
    if pos != len(buf):
        raise SceneError(f"{path}: attribute length mismatch (trailing bytes)")
    if "positions" not in kw:
        raise SceneError(f"{path}: positions block missing")
    return PointCloud(num_classes=c, embed_dim=d, **kw).validate(prob_tol=1e-4)


def _fmt_rows(arr: np.ndarray) -> list[str]:
    if arr.dtype.kind == "i":
        if arr.ndim == 1:
            return [str(v) for v in arr.tolist()]
        return [" ".join(str(v) for v in row) for row in arr.tolist()]
    return [" ".join(f"{v:.9g}" for v in row) for row in arr.tolist()]


def _encode_text(cloud: PointCloud) -> str:
    lines = ["sfpc 1", f"points {cloud.n}", f"classes {cloud.num_classes}", f"embed {cloud.embed_dim}"]
    for name in BLOCKS:
        arr = getattr(cloud, name)
        if arr is None:
            continue
        lines.append(f"faces {arr.shape[0]}" if name == "faces" else name)
        lines.extend(_fmt_rows(arr))
    return "\n".join(lines) + "\n"


def _load_text(path) -> PointCloud:
    with open(path, "r") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or lines[0].split() != ["sfpc", "1"]:
        raise SceneError(f"{path}: malformed header (expected 'sfpc 1')")
    header = {"points": None, "classes": 0, "embed": 0}
    pos = 1
    while pos < len(lines):
        parts = lines[pos].split()
        if len(parts) == 2 and parts[0] in header and parts[0] != "faces":
            try:
                header[parts[0]] = int(parts[1])
            except ValueError:
                raise SceneError(f"{path}: malformed header line {lines[pos]!r}") from None
            pos += 1
        else:
            break
    n = header["points"]
    if n is None or n < 0:
        raise SceneError(f"{path}: malformed header (missing 'points N')")
    kw = {}
    while pos < len(lines):
        parts = lines[pos].split()
        name = parts[0]
        if name not in BLOCKS or name in kw:
            raise SceneError(f"{path}: unexpected line {lines[pos]!r}")
        rows = n
        if name == "faces":
            if len(parts) != 2:
                raise SceneError(f"{path}: malformed faces header")
            rows = int(parts[1])
        pos += 1
        body = lines[pos:pos + rows]
        if len(body) != rows or any(b.split()[0] in BLOCKS for b in body):
            raise SceneError(f"{path}: attribute length mismatch in block {name}")
        pos += rows
        integer = name in ("faces", "semantic_gt", "instance_gt")
        try:
            vals = [[(int(v) if integer else float(v)) for v in b.split()] for b in body]
        except ValueError:
            raise SceneError(f"{path}: unparsable value in block {name}") from None
        widths = {len(v) for v in vals}
        if len(widths) > 1:
            raise SceneError(f"{path}: attribute length mismatch in block {name}")
        arr = np.array(vals, dtype=np.int64 if integer else np.float64)
        if name in ("semantic_gt", "instance_gt"):
            arr = arr.reshape(-1)
        elif arr.size == 0:
            arr = arr.reshape(0, {"faces": 3, "semantic_probs": header["classes"],
                                  "instance_embed": header["embed"]}.get(name, 3))
        kw[name] = arr
    if "positions" not in kw:
        raise SceneError(f"{path}: positions block missing")
    return PointCloud(num_classes=header["classes"], embed_dim=header["embed"], **kw).validate(prob_tol=1e-4)


# ---------------------------------------------------------------- PLY (read-only)

_PLY_TYPES = {"char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1", "short": "i2", "int16": "i2",
              "ushort": "u2", "uint16": "u2", "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
              "float": "f4", "float32": "f4", "double": "f8", "float64": "f8"}


def load_ply(path) -> PointCloud:
    """Read vertices (x, y, z, optional normals and colours) and faces from a PLY file."""
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise SceneError(f"{path}: malformed header (not a PLY file)")
        fmt = None
        elements = []
        while True:
            line = fh.readline()
            if not line:
                raise SceneError(f"{path}: malformed header (no end_header)")
            tok = line.decode("ascii", "replace").split()
            if not tok or tok[0] in ("comment", "obj_info"):
                continue
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                elements.append((tok[1], int(tok[2]), []))
            elif tok[0] == "property":
                if not elements:
                    raise SceneError(f"{path}: property before element")
                if tok[1] == "list":
                    elements[-1][2].append((tok[4], ("list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]])))
                else:
                    elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
            elif tok[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise SceneError(f"{path}: unsupported PLY format {fmt!r}")
        data = {}
        if fmt == "ascii":
            tokens = fh.read().split()
            pos = 0
            for name, count, props in elements:
                rows = []
                for _ in range(count):
                    row = []
                    for _, typ in props:
                        if isinstance(typ, tuple):
                            k = int(tokens[pos])
                            row.append([float(t) for t in tokens[pos + 1:pos + 1 + k]])
                            pos += 1 + k
                        else:
                            row.append(float(tokens[pos]))
                            pos += 1
                    rows.append(row)
                data[name] = (props, rows)
        else:
            buf = fh.read()
            pos = 0
            for name, count, props in elements:
                if all(not isinstance(t, tuple) for _, t in props):
                    dt = np.dtype([(p, "<" + t) for p, t in props])
                    arr = np.frombuffer(buf, dtype=dt, count=count, offset=pos)
                    pos += dt.itemsize * count
                    data[name] = (props, [[float(r[p]) for p, _ in props] for r in arr])
                    continue
                rows = []
                for _ in range(count):
                    row = []
                    for _, typ in props:
                        if isinstance(typ, tuple):
                            cdt, idt = np.dtype("<" + typ[1]), np.dtype("<" + typ[2])
                            k = int(np.frombuffer(buf, cdt, 1, pos)[0])
                            pos += cdt.itemsize
                            row.append(np.frombuffer(buf, idt, k, pos).astype(float).tolist())
                            pos += idt.itemsize * k
                        else:
                            dt = np.dtype("<" + typ)
                            row.append(float(np.frombuffer(buf, dt, 1, pos)[0]))
                            pos += dt.itemsize
                    rows.append(row)
                data[name] = (props, rows)
    if "vertex" not in data:
        raise SceneError(f"{path}: no vertex element")
    props, rows = data["vertex"]
    names = [p for p, _ in props]
    types = dict(props)
    table = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    col = {p: table[:, i] for i, p in enumerate(names)}
    if not all(k in col for k in "xyz"):
        raise SceneError(f"{path}: vertex element lacks x/y/z")
    kw = {"positions": np.stack([col["x"], col["y"], col["z"]], axis=1)}
    if all(k in col for k in ("nx", "ny", "nz")):
        nrm = np.stack([col["nx"], col["ny"], col["nz"]], axis=1)
        length = np.linalg.norm(nrm, axis=1, keepdims=True)
        kw["normals"] = np.where(length > 0, nrm / np.where(length > 0, length, 1), [0.0, 0.0, 1.0])
    if all(k in col for k in ("red", "green", "blue")):
        rgb = np.stack([col["red"], col["green"], col["blue"]], axis=1)
        if types["red"] in ("u1", "i1"):
            rgb = rgb / 255.0
        elif types["red"] in ("u2", "i2"):
            rgb = rgb / 65535.0
        kw["colors"] = np.clip(rgb, 0.0, 1.0)
    if "face" in data:
        fprops, frows = data["face"]
        li = [i for i, (_, t) in enumerate(fprops) if isinstance(t, tuple)]
        if not li:
            raise SceneError(f"{path}: face element has no index list")
        tris = []
        for row in frows:
            poly = [int(v) for v in row[li[0]]]
            for k in range(1, len(poly) - 1):
                tri = (poly[0], poly[k], poly[k + 1])
                if len(set(tri)) == 3:
                    tris.append(tri)
        kw["faces"] = np.array(tris, dtype=np.int64).reshape(-1, 3)
    return PointCloud(**kw).validate(prob_tol=1e-4)


# ---------------------------------------------------------------- synthesis

@dataclass(frozen=True)
class SceneSynthConfig:
    num_instances: int = 6
    points_per_instance: int = 300
    shape_set: tuple = SHAPES
    noise_sigma: float = 0.004
    part_corruption_rate: float = 0.15
    embed_noise_sigma: float = 0.05
    seed: int = 0
    embed_dim: int = 4
    color_noise: float = 0.01
    knn_k: int = 10
    cell: float = 1.0

    def validate(self) -> "SceneSynthConfig":
        if self.num_instances < 1 or self.points_per_instance < 2:
            raise SceneError("need at least one instance and two points per instance")
        if not self.shape_set or any(s not in SHAPES for s in self.shape_set):
            raise SceneError(f"shape_set must be a non-empty subset of {SHAPES}")
        if len(set(self.shape_set)) != len(self.shape_set):
            raise SceneError("shape_set has duplicates")
        if not 0.0 <= self.part_corruption_rate < 0.5:
            raise SceneError("part_corruption_rate must lie in [0, 0.5)")
        if self.part_corruption_rate > 0 and len(self.shape_set) < 2:
            raise SceneError("corruption needs at least two classes")
        if min(self.noise_sigma, self.embed_noise_sigma, self.color_noise) < 0 or self.embed_dim < 1:
            raise SceneError("noise levels must be non-negative and embed_dim positive")
        return self


def corruption_budget(rate: float, n: int) -> int:
    return int(math.ceil(rate * n - 1e-9))


def _sample_box(rng, n, size):
    sx, sy, sz = size
    # faces: (axis, sign); area-weighted choice
    faces = [(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)]
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    which = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.random((n, 3)) * np.array(size)
    nrm = np.zeros((n, 3))
    for f, (axis, sign) in enumerate(faces):
        sel = which == f
        u[sel, axis] = size[axis] if sign > 0 else 0.0
        nrm[sel, axis] = sign
    return u - np.array([sx / 2, sy / 2, 0.0]), nrm


def _sample_plane(rng, n, size):
    sx, sy, _ = size
    pts = np.column_stack([(rng.random(n) - 0.5) * sx, (rng.random(n) - 0.5) * sy, np.zeros(n)])
    nrm = np.tile([0.0, 0.0, 1.0], (n, 1))
    return pts, nrm


def _sample_cylinder(rng, n, size):
    r = min(size[0], size[1]) / 2
    h = size[2]
    areas = np.array([2 * np.pi * r * h, np.pi * r * r, np.pi * r * r])
    which = rng.choice(3, size=n, p=areas / areas.sum())
    pts = np.zeros((n, 3))
    nrm = np.zeros((n, 3))
    side = which == 0
    th = rng.random(side.sum()) * 2 * np.pi
    pts[side] = np.column_stack([r * np.cos(th), r * np.sin(th), rng.random(side.sum()) * h])
    nrm[side] = np.column_stack([np.cos(th), np.sin(th), np.zeros(side.sum())])
    for cap, z, nz in ((1, 0.0, -1.0), (2, h, 1.0)):
        sel = which == cap
        rad = r * np.sqrt(rng.random(sel.sum()))
        ang = rng.random(sel.sum()) * 2 * np.pi
        pts[sel] = np.column_stack([rad * np.cos(ang), rad * np.sin(ang), np.full(sel.sum(), z)])
        nrm[sel] = [0.0, 0.0, nz]
    return pts, nrm


_SAMPLERS = {"box": _sample_box, "plane": _sample_plane, "cylinder": _sample_cylinder}


def _bfs_ball(points: np.ndarray, seed: int, budget: int, k: int) -> np.ndarray:
    """First ``budget`` points reached by breadth-first search on the kNN graph from ``seed``."""
    from .geometry import knn_adjacency

    adj = knn_adjacency(points, min(k, len(points) - 1))
    seen = np.zeros(len(points), dtype=bool)
    order = []
    queue = deque([seed])
    seen[seed] = True
    while queue and len(order) < budget:
        i = queue.popleft()
        order.append(i)
        for j in adj[i]:
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    if len(order) < budget:
        # kNN graph of this instance is disconnected; top up with nearest unvisited points
        rest = np.flatnonzero(~np.isin(np.arange(len(points)), order))
        d = np.linalg.norm(points[rest] - points[seed], axis=1)
        order.extend(rest[np.argsort(d, kind="stable")][: budget - len(order)].tolist())
    return np.array(order, dtype=np.int64)


def synthesize_scene(cfg: SceneSynthConfig) -> PointCloud:
    """Build a labelled scene of boxes, planes and cylinders laid out on a grid.

    Each instance gets a colour, exact outward normals, a smoothed one-hot
    class distribution and a noisy embedding around a random per-instance
    centroid.  One contiguous kNN ball per instance has its predicted class
    flipped, imitating part misclassification of a semantic backbone.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    c = len(cfg.shape_set)
    m = cfg.points_per_instance
    cols = int(math.ceil(math.sqrt(cfg.num_instances)))
    budget = corruption_budget(cfg.part_corruption_rate, m)
    other = 0.3 / (c - 1) if c > 1 else 0.0
    hi = 0.7 if c > 1 else 1.0

    pos, nrm, col, probs, emb, sem, ins = [], [], [], [], [], [], []
    for k in range(cfg.num_instances):
        cls = int(rng.integers(c))
        shape = cfg.shape_set[cls]
        size = rng.uniform(0.6, 1.0, size=3)
        if shape == "plane":
            size[:2] = rng.uniform(0.8, 1.0, size=2)
        p, nm = _SAMPLERS[shape](rng, m, size)
        center = np.array([(k % cols) * cfg.cell, (k // cols) * cfg.cell, 0.0])
        p = p + center + rng.normal(0.0, cfg.noise_sigma, size=p.shape)
        color = rng.uniform(0.1, 0.9, size=3)
        cl = np.clip(color + rng.normal(0.0, cfg.color_noise, size=(m, 3)), 0.0, 1.0)
        pr = np.full((m, c), other)
        pr[:, cls] = hi
        if budget:
            wrong = int(rng.choice([j for j in range(c) if j != cls]))
            ball = _bfs_ball(p, int(rng.integers(m)), budget, cfg.knn_k)
            pr[ball] = other
            pr[ball, wrong] = hi
        centroid = rng.normal(0.0, 1.0, size=cfg.embed_dim)
        e = centroid + rng.normal(0.0, cfg.embed_noise_sigma, size=(m, cfg.embed_dim))
        pos.append(p)
        nrm.append(nm)
        col.append(cl)
        probs.append(pr)
        emb.append(e)
        sem.append(np.full(m, cls))
        ins.append(np.full(m, k))

    return PointCloud(
        positions=np.concatenate(pos), normals=np.concatenate(nrm), colors=np.concatenate(col),
        semantic_probs=np.concatenate(probs), instance_embed=np.concatenate(emb),
        semantic_gt=np.concatenate(sem), instance_gt=np.concatenate(ins),
        num_classes=c, embed_dim=cfg.embed_dim,
    ).validate()


def random_cloud(rng: np.random.Generator, n: int, c: int = 3, d: int = 4, faces: int = 0) -> PointCloud:
    """Random cloud with every block populated; used for round-trip checks."""
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    probs = rng.random((n, c))
    probs /= probs.sum(axis=1, keepdims=True)
    kw = dict(positions=rng.normal(size=(n, 3)), normals=nrm, colors=rng.random((n, 3)),
              semantic_probs=probs, instance_embed=rng.normal(size=(n, d)),
              semantic_gt=rng.integers(-1, c, size=n), instance_gt=rng.integers(-1, 5, size=n))
    if faces and n >= 3:
        tris = np.array([rng.choice(n, 3, replace=False) for _ in range(faces)])
        kw["faces"] = tris
    return PointCloud(num_classes=c, embed_dim=d, **kw)
