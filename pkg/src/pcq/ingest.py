"""Point cloud I/O, quality-score normalization, synthetic datasets.

PLY support covers ascii and binary_little_endian encodings with at
least x/y/z float coordinates and red/green/blue uchar colors; unknown
properties are skipped. Raw MOS values are normalized onto the five
level BT.500 scale, split into an integer quality level and a decimal
confidence degree.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DESCRIPTIONS = {
    5: "The distortion is almost imperceptible",
    4: "The distortion is perceptible but not annoying",
    3: "The distortion is slightly annoying",
    2: "The distortion is annoying",
    1: "The distortion is seriously annoying",
}

DISTORTION_TYPES = ("gaussian_geometry", "color_noise", "downsample")


class PlyError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass
class PointCloud:
    points: np.ndarray  # (n, 3) float64
    colors: np.ndarray  # (n, 3) uint8
    id: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.colors = np.asarray(self.colors, dtype=np.uint8)
        if len(self.points) == 0:
            raise ValidationError("empty point cloud")
        if self.points.shape != (len(self.colors), 3) or self.colors.shape[1] != 3:
            raise ValidationError("points/colors shape mismatch")
        if not np.all(np.isfinite(self.points)):
            raise ValidationError("non-finite coordinates")


@dataclass
class QualityLabel:
    q: float          # normalized score in [0.5, 5.5]
    level: int        # 1..5
    confidence: float  # delta * (q - level)


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)  # (path, mos, content_id)
    scale_min: float = 0.0
    scale_max: float = 1.0

    def __post_init__(self):
        if not self.scale_min < self.scale_max:
            raise ValidationError("scale_min must be < scale_max")
        for path, mos, cid in self.entries:
            if not (self.scale_min <= mos <= self.scale_max):
                raise ValidationError(f"mos {mos} out of scale for {path}")
            if not cid:
                raise ValidationError(f"empty content_id for {path}")

    def content_ids(self) -> list:
        seen = {}
        for _, _, cid in self.entries:
            seen.setdefault(cid, None)
        return list(seen)


# -- score algebra ---------------------------------------------------------

def _round_half_away(x: float) -> int:
    return int(np.floor(x + 0.5)) if x >= 0 else -int(np.floor(-x + 0.5))


def normalize_score(raw_mos: float, scale_min: float, scale_max: float,
                    delta: float = 1.0) -> QualityLabel:
    """Map a raw MOS onto [0.5, 5.5] and split into level + confidence."""
    if not scale_min < scale_max:
        raise ValidationError("scale_min must be < scale_max")
    if delta <= 0:
        raise ValidationError("delta must be positive")
    if not (scale_min <= raw_mos <= scale_max):
        raise ValidationError(f"raw mos {raw_mos} outside [{scale_min}, {scale_max}]")
    q = (raw_mos - scale_min) / (scale_max - scale_min) * 5.0 + 0.5
    level = min(5, max(1, _round_half_away(q)))
    confidence = delta * (q - level)
    return QualityLabel(q=q, level=level, confidence=confidence)


def denormalize(label: QualityLabel, delta: float = 1.0) -> float:
    return label.level + label.confidence / delta


# -- PLY -------------------------------------------------------------------

_PLY_SIZES = {"char": 1, "uchar": 1, "int8": 1, "uint8": 1,
              "short": 2, "ushort": 2, "int16": 2, "uint16": 2,
              "int": 4, "uint": 4, "int32": 4, "uint32": 4,
              "float": 4, "float32": 4, "double": 8, "float64": 8}
_PLY_STRUCT = {"char": "b", "uchar": "B", "int8": "b", "uint8": "B",
               "short": "h", "ushort": "H", "int16": "h", "uint16": "H",
               "int": "i", "uint": "I", "int32": "i", "uint32": "I",
               "float": "f", "float32": "f", "double": "d", "float64": "d"}


def parse_ply(data: bytes, cloud_id: str = "") -> PointCloud:
    """Parse an ascii or binary_little_endian PLY into a PointCloud."""
    end_tag = b"end_header\n"
    idx = data.find(end_tag)
    if idx < 0:
        raise PlyError("missing end_header")
    header_lines = data[:idx].decode("ascii", errors="replace").splitlines()
    body = data[idx + len(end_tag):]
    if not header_lines or header_lines[0].strip() != "ply":
        raise PlyError("missing 'ply' magic line")

    fmt = None
    elements = []  # (name, count, [(prop_name, prop_type), ...])
    for line in header_lines[1:]:
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"unsupported format line: {line!r}")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3:
                raise PlyError(f"malformed element line: {line!r}")
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise PlyError("property before any element")
            if tok[1] == "list":
                raise PlyError(f"list properties unsupported: {line!r}")
            if len(tok) != 3:
                raise PlyError(f"malformed property line: {line!r}")
            if tok[1] not in _PLY_SIZES:
                raise PlyError(f"unknown property type {tok[1]!r}")
            elements[-1][2].append((tok[2], tok[1]))
    if fmt is None:
        raise PlyError("missing format line")

    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise PlyError("missing vertex element")
    names = [p[0] for p in vertex[2]]
    for req in ("x", "y", "z", "red", "green", "blue"):
        if req not in names:
            raise PlyError(f"missing required property {req!r}")

    if fmt == "ascii":
        rows = _parse_ascii_rows(body, elements)
    else:
        rows = _parse_binary_rows(body, elements)
    verts = rows["vertex"]
    pts = np.stack([verts["x"], verts["y"], verts["z"]], axis=1).astype(np.float64)
    cols = np.stack([verts["red"], verts["green"], verts["blue"]], axis=1)
    cols = np.clip(np.round(cols), 0, 255).astype(np.uint8)
    return PointCloud(points=pts, colors=cols, id=cloud_id)


def _parse_ascii_rows(body: bytes, elements) -> dict:
    lines = [ln for ln in body.decode("ascii", errors="replace").splitlines()
             if ln.strip()]
    out, pos = {}, 0
    for name, count, props in elements:
        if pos + count > len(lines):
            raise PlyError(f"truncated payload: element {name!r} expects "
                           f"{count} rows, found {len(lines) - pos}")
        cols = {p: np.empty(count) for p, _ in props}
        for r in range(count):
            fields = lines[pos + r].split()
            if len(fields) < len(props):
                raise PlyError(f"short row {r} in element {name!r}")
            for (p, _), val in zip(props, fields):
                cols[p][r] = float(val)
        pos += count
        out[name] = cols
    return out


def _parse_binary_rows(body: bytes, elements) -> dict:
    out, pos = {}, 0
    for name, count, props in elements:
        row_fmt = "<" + "".join(_PLY_STRUCT[t] for _, t in props)
        row_size = struct.calcsize(row_fmt)
        need = row_size * count
        if pos + need > len(body):
            raise PlyError(f"truncated payload: element {name!r} expects "
                           f"{need} bytes, found {len(body) - pos}")
        arr = np.frombuffer(body, count=count,
                            dtype=[(p, "<" + np.dtype(_PLY_STRUCT[t]).str[1:])
                                   for p, t in props], offset=pos)
        out[name] = {p: np.asarray(arr[p], dtype=np.float64) for p, _ in props}
        pos += need
    return out


def write_ply(cloud: PointCloud, encoding: str = "binary_little_endian") -> bytes:
    if encoding not in ("ascii", "binary_little_endian"):
        raise PlyError(f"unsupported encoding {encoding!r}")
    n = len(cloud.points)
    header = (
        "ply\n"
        f"format {encoding} 1.0\n"
        f"element vertex {n}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    ).encode("ascii")
    if encoding == "ascii":
        buf = io.StringIO()
        for p, c in zip(cloud.points, cloud.colors):
            buf.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} "
                      f"{c[0]} {c[1]} {c[2]}\n")
        return header + buf.getvalue().encode("ascii")
    rec = np.empty(n, dtype=[("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
                             ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    rec["x"], rec["y"], rec["z"] = cloud.points.T
    rec["red"], rec["green"], rec["blue"] = cloud.colors.T
    return header + rec.tobytes()


# -- manifest CSV ----------------------------------------------------------

def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["path", "mos", "content_id"])
        for p, mos, cid in manifest.entries:
            w.writerow([p, repr(float(mos)), cid])


def read_manifest(path, scale_min: float, scale_max: float) -> DatasetManifest:
    entries = []
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if [h.strip() for h in header] != ["path", "mos", "content_id"]:
            raise ValidationError(f"bad manifest header: {header}")
        for row in r:
            if not row:
                continue
            entries.append((row[0], float(row[1]), row[2]))
    return DatasetManifest(entries=entries, scale_min=scale_min,
                           scale_max=scale_max)


# -- synthetic dataset -----------------------------------------------------

@dataclass
class SynthConfig:
    n_shapes: int = 8
    distortions: tuple = DISTORTION_TYPES
    severities: tuple = (0, 1, 2, 3, 4)
    n_points: int = 2048
    scale_min: float = 0.0
    scale_max: float = 100.0
    seed: int = 0


def synth_mos(severity: float, severity_max: float, scale_min: float,
              scale_max: float) -> float:
    """Monotone decreasing, mildly concave severity-to-MOS curve."""
    if severity_max <= 0:
        return scale_max
    frac = (severity / severity_max) ** 0.8
    return scale_max - (scale_max - scale_min) * frac


def _base_shape(rng: np.random.Generator, kind: int, n: int) -> PointCloud:
    u = rng.uniform(0.0, 2 * np.pi, n)
    v = rng.uniform(-1.0, 1.0, n)
    if kind % 4 == 0:  # sphere surface
        r = np.sqrt(1 - v ** 2)
        pts = np.stack([r * np.cos(u), r * np.sin(u), v], axis=1)
    elif kind % 4 == 1:  # torus
        w = rng.uniform(0.0, 2 * np.pi, n)
        pts = np.stack([(1 + 0.35 * np.cos(w)) * np.cos(u),
                        (1 + 0.35 * np.cos(w)) * np.sin(u),
                        0.35 * np.sin(w)], axis=1)
    elif kind % 4 == 2:  # cube faces
        face = rng.integers(0, 6, n)
        pts = rng.uniform(-1, 1, (n, 3))
        pts[np.arange(n), face % 3] = np.where(face < 3, -1.0, 1.0)
    else:  # twisted band
        t = rng.uniform(-1, 1, n)
        pts = np.stack([np.cos(u) + 0.2 * t * np.sin(2 * u),
                        np.sin(u) + 0.2 * t * np.cos(3 * u),
                        0.6 * t], axis=1)
    # smooth per-shape color field
    basis = rng.uniform(-1, 1, (3, 3))
    cols = 127.5 + 110.0 * np.tanh(pts @ basis)
    cols = np.clip(np.round(cols), 0, 255).astype(np.uint8)
    return PointCloud(points=pts, colors=cols, id=f"shape{kind:02d}")


def _distort(cloud: PointCloud, kind: str, severity: float,
             severity_max: float, rng: np.random.Generator) -> PointCloud:
    pts, cols = cloud.points.copy(), cloud.colors.copy()
    if severity <= 0:
        return PointCloud(pts, cols, id=cloud.id)
    rel = severity / severity_max
    extent = float(np.ptp(pts, axis=0).max())
    if kind == "gaussian_geometry":
        pts = pts + rng.normal(0.0, 0.08 * rel * extent, pts.shape)
    elif kind == "color_noise":
        noisy = cols.astype(np.float64) + rng.normal(0.0, 110.0 * rel, cols.shape)
        cols = np.clip(np.round(noisy), 0, 255).astype(np.uint8)
    elif kind == "downsample":
        keep_frac = 1.0 - 0.92 * rel
        keep = max(8, int(round(len(pts) * keep_frac)))
        idx = rng.choice(len(pts), size=keep, replace=False)
        idx.sort()
        pts, cols = pts[idx], cols[idx]
    else:
        raise ValidationError(f"unknown distortion type {kind!r}")
    return PointCloud(pts, cols, id=cloud.id)


def synth_dataset(config: SynthConfig):
    """Deterministic synthetic distorted dataset with known MOS.

    Returns (clouds, manifest); manifest paths are
    '<content>__<distortion>__s<severity>.ply'.
    """
    if config.n_shapes <= 0:
        raise ValidationError("need at least one base shape")
    if not config.severities:
        raise ValidationError("need at least one severity level")
    for d in config.distortions:
        if d not in DISTORTION_TYPES:
            raise ValidationError(f"unknown distortion type {d!r}")
    sev_max = max(config.severities)
    clouds, entries = [], []
    for s in range(config.n_shapes):
        shape_rng = np.random.default_rng([config.seed, s])
        base = _base_shape(shape_rng, s, config.n_points)
        for kind in config.distortions:
            for sev in config.severities:
                key = f"{base.id}__{kind}__s{sev}"
                rng = np.random.default_rng(
                    [config.seed, s, DISTORTION_TYPES.index(kind), sev])
                dist = _distort(base, kind, sev, sev_max, rng)
                dist.id = key
                mos = synth_mos(sev, sev_max, config.scale_min, config.scale_max)
                clouds.append(dist)
                entries.append((key + ".ply", mos, base.id))
    manifest = DatasetManifest(entries=entries, scale_min=config.scale_min,
                               scale_max=config.scale_max)
    return clouds, manifest


def save_dataset(clouds, manifest: DatasetManifest, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for cloud, (path, _, _) in zip(clouds, manifest.entries):
        (out / path).write_bytes(write_ply(cloud))
    write_manifest(manifest, out / "manifest.csv")
