"""File formats: binary cube and scene files, text depth maps, configs, CSV and PLY.

CubeFile (little endian)::

    b"SPC1"  u32 nx  u32 ny  u32 nt  f64 bin_width_ps  f64 t0_ps
    u32 counts[nx * ny * nt]          # x fastest, then y, then t

SceneFile (little endian)::

    b"SPS1"  u32 width  u32 height
    f32 reflectivity[height * width]  # row-major
    f32 depth[height * width]
    u8  valid[height * width]

Depth maps are text: a ``width height`` line, ``height`` rows of depth values
(``nan`` marks invalid pixels), then an ``# intensity`` line followed by
``height`` rows of intensities. Floats are written with :func:`repr` so
reading and writing again reproduces the file exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import struct
from pathlib import Path

import numpy as np

from splidar.core import DataCube, DepthMap, FormatError, GateMask, SceneMap, UsageError
from splidar.gate import GateConfig
from splidar.simulate import SimConfig
from splidar.solver import SolverConfig

CUBE_MAGIC = b"SPC1"
SCENE_MAGIC = b"SPS1"
_CUBE_HEADER = struct.Struct("<4sIIIdd")
_SCENE_HEADER = struct.Struct("<4sII")
PS = 1e-12


# ---------------------------------------------------------------------------
# cubes


def cube_to_bytes(cube: DataCube) -> bytes:
    if cube.is_cropped:
        raise UsageError("cropped cubes cannot be stored; save the full cube and re-gate")
    if cube.counts.size and cube.counts.max() > np.iinfo(np.uint32).max:
        raise UsageError("counts exceed the unsigned 32-bit range of the cube format")
    header = _CUBE_HEADER.pack(CUBE_MAGIC, cube.nx, cube.ny, cube.nt, cube.bin_width / PS, cube.t0 / PS)
    payload = np.ascontiguousarray(cube.counts.transpose(2, 0, 1), dtype="<u4").tobytes()
    return header + payload


def cube_from_bytes(data: bytes) -> DataCube:
    if len(data) < _CUBE_HEADER.size:
        raise FormatError("truncated cube header", len(data))
    magic, nx, ny, nt, bw_ps, t0_ps = _CUBE_HEADER.unpack_from(data)
    if magic != CUBE_MAGIC:
        raise FormatError(f"bad cube magic {magic!r}, expected {CUBE_MAGIC!r}", 0)
    expected = nx * ny * nt * 4
    got = len(data) - _CUBE_HEADER.size
    if got != expected:
        raise FormatError(
            f"cube payload is {got} bytes, header implies {expected}",
            _CUBE_HEADER.size + min(got, expected),
        )
    if not bw_ps > 0:
        raise FormatError(f"bin width {bw_ps} ps is not positive", 16)
    counts = np.frombuffer(data, dtype="<u4", offset=_CUBE_HEADER.size).reshape(nt, ny, nx)
    return DataCube(counts.transpose(1, 2, 0).astype(np.int64), bw_ps * PS, t0_ps * PS)


def write_cube(path, cube: DataCube) -> None:
    Path(path).write_bytes(cube_to_bytes(cube))


def read_cube(path) -> DataCube:
    return cube_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# scenes


def scene_to_bytes(scene: SceneMap) -> bytes:
    header = _SCENE_HEADER.pack(SCENE_MAGIC, scene.width, scene.height)
    return b"".join(
        [
            header,
            np.ascontiguousarray(scene.reflectivity, dtype="<f4").tobytes(),
            np.ascontiguousarray(scene.depth, dtype="<f4").tobytes(),
            np.ascontiguousarray(scene.valid, dtype=np.uint8).tobytes(),
        ]
    )


def scene_from_bytes(data: bytes) -> SceneMap:
    if len(data) < _SCENE_HEADER.size:
        raise FormatError("truncated scene header", len(data))
    magic, width, height = _SCENE_HEADER.unpack_from(data)
    if magic != SCENE_MAGIC:
        raise FormatError(f"bad scene magic {magic!r}, expected {SCENE_MAGIC!r}", 0)
    n = width * height
    expected = _SCENE_HEADER.size + 9 * n
    if len(data) != expected:
        raise FormatError(f"scene file is {len(data)} bytes, header implies {expected}", min(len(data), expected))
    off = _SCENE_HEADER.size
    refl = np.frombuffer(data, "<f4", n, off).reshape(height, width)
    depth = np.frombuffer(data, "<f4", n, off + 4 * n).reshape(height, width)
    flags = np.frombuffer(data, np.uint8, n, off + 8 * n)
    if np.any(flags > 1):
        raise FormatError("validity flags must be 0 or 1", off + 8 * n + int(np.argmax(flags > 1)))
    return SceneMap(refl.astype(float), depth.astype(float), flags.reshape(height, width).astype(bool))


def write_scene(path, scene: SceneMap) -> None:
    Path(path).write_bytes(scene_to_bytes(scene))


def read_scene(path) -> SceneMap:
    return scene_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# depth maps


def _rows(grid: np.ndarray) -> list[str]:
    return [" ".join(repr(float(v)) for v in row) for row in grid]


def depth_to_text(dm: DepthMap) -> str:
    h, w = dm.shape
    depth = np.where(dm.valid, dm.depth, np.nan)
    lines = [f"{w} {h}", *_rows(depth), "# intensity", *_rows(dm.intensity)]
    return "\n".join(lines) + "\n"


def depth_from_text(text: str) -> DepthMap:
    lines = text.splitlines(keepends=True)
    offsets = np.cumsum([0] + [len(l.encode()) for l in lines]).tolist()

    def grid(start: int, h: int, w: int) -> np.ndarray:
        out = np.empty((h, w))
        for r in range(h):
            n = start + r
            if n >= len(lines):
                raise FormatError(f"expected {h} rows, file ends after {r}", offsets[-1])
            parts = lines[n].split()
            if len(parts) != w:
                raise FormatError(f"row {r} has {len(parts)} values, expected {w}", offsets[n])
            try:
                out[r] = [float(p) for p in parts]
            except ValueError as exc:
                raise FormatError(f"bad number in row {r}: {exc}", offsets[n]) from None
        return out

    if not lines:
        raise FormatError("empty depth file", 0)
    try:
        w, h = (int(v) for v in lines[0].split())
    except ValueError:
        raise FormatError("first line must be 'width height'", 0) from None
    depth = grid(1, h, w)
    valid = np.isfinite(depth)
    if len(lines) > h + 1:
        if lines[h + 1].strip() != "# intensity":
            raise FormatError("expected '# intensity' after the depth rows", offsets[h + 1])
        intensity = grid(h + 2, h, w)
        extra = h + 2 + h
    else:
        intensity = valid.astype(float)
        extra = h + 1
    if any(l.strip() for l in lines[extra:]):
        raise FormatError("unexpected trailing content", offsets[extra])
    if np.any(~(intensity >= 0)):
        raise FormatError("intensity values must be nonnegative", offsets[h + 2])
    return DepthMap(depth, intensity, valid)


def write_depth(path, dm: DepthMap) -> None:
    Path(path).write_text(depth_to_text(dm))


def read_depth(path) -> DepthMap:
    return depth_from_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# gates, traces, metrics, point clouds


def gates_to_text(gates: GateMask) -> str:
    return f"# nt {gates.nt}\n" + "".join(f"{a} {b}\n" for a, b in gates.intervals)


def gates_from_text(text: str) -> GateMask:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# nt "):
        raise FormatError("gate file must start with '# nt <bins>'", 0)
    nt = int(lines[0][5:])
    pairs = []
    offset = len(lines[0]) + 1
    for line in lines[1:]:
        if line.strip():
            try:
                a, b = (int(v) for v in line.split())
            except ValueError:
                raise FormatError(f"bad gate line {line!r}", offset) from None
            pairs.append((a, b))
        offset += len(line) + 1
    return GateMask(tuple(pairs), nt)


def trace_to_csv(trace) -> str:
    rows = ["iteration,phi,alpha,backtracks"]
    rows += [f"{r.iteration},{r.phi!r},{r.alpha!r},{r.backtracks}" for r in trace]
    return "\n".join(rows) + "\n"


def metrics_to_csv(rows: list[tuple[str, float]], config_hash: str) -> str:
    out = ["metric,value,config_hash"]
    out += [f"{name},{float(value)!r},{config_hash}" for name, value in rows]
    return "\n".join(out) + "\n"


def ply_text(dm: DepthMap) -> str:
    ys, xs = np.nonzero(dm.valid)
    inten = dm.intensity[ys, xs]
    top = inten.max() if inten.size and inten.max() > 0 else 1.0
    gray = np.clip(np.round(255.0 * inten / top), 0, 255).astype(int)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(xs)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    body = [f"{x} {y} {dm.depth[y, x]!r} {g} {g} {g}" for x, y, g in zip(xs, ys, gray)]
    return "\n".join(header + body) + "\n"


def ply_vertex_count(text: str) -> int:
    for line in text.splitlines():
        if line.startswith("element vertex"):
            return int(line.split()[2])
        if line == "end_header":
            break
    raise FormatError("PLY header has no vertex element", 0)


# ---------------------------------------------------------------------------
# configs

_CONFIG_TYPES = (SimConfig, GateConfig, SolverConfig)
PIPELINE_KEYS = {"order": str}


def parse_config(text: str) -> dict[str, str]:
    """Flat ``key = value`` pairs; ``#`` starts a comment."""
    values: dict[str, str] = {}
    offset = 0
    for line in text.splitlines(keepends=True):
        body = line.split("#", 1)[0].strip()
        if body:
            if "=" not in body:
                raise FormatError(f"expected 'key = value', got {body!r}", offset)
            key, value = (s.strip() for s in body.split("=", 1))
            if not key:
                raise FormatError("empty key", offset)
            values[key] = value
        offset += len(line.encode())
    known = {f.name for t in _CONFIG_TYPES for f in dataclasses.fields(t)} | set(PIPELINE_KEYS)
    unknown = sorted(set(values) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return values


def _convert(raw: str, field: dataclasses.Field):
    kind = str(field.type)
    if "tuple" in kind:
        return tuple(float(v) for v in raw.replace(",", " ").split())
    if kind.startswith("bool"):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"{field.name} must be a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if kind.startswith("int"):
        return None if raw.lower() == "none" else int(raw)
    if kind.startswith("float"):
        return float(raw)
    return raw


def build_config(cls, values: dict[str, str], **overrides):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in values:
            try:
                kwargs[f.name] = _convert(values[f.name], f)
            except ValueError as exc:
                raise UsageError(f"bad value for {f.name}: {exc}") from None
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**kwargs)


def read_config(path) -> dict[str, str]:
    return parse_config(Path(path).read_text())


def config_hash(values: dict[str, str]) -> str:
    canonical = "\n".join(f"{k}={values[k]}" for k in sorted(values))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]
