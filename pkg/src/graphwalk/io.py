"""Raw volume + JSON sidecar files, OBJ meshes and small JSON helpers.

A volume of shape ``(nx, ny, nz)`` or ``(nx, ny, nz, c)`` is stored as a
flat little-endian array with ``z`` slowest, then ``y``, then ``x`` and the
channel fastest. The sidecar records ``dims``, ``channels``, ``order`` and
``dtype``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .mesh import TriMesh

DTYPES = {"float32": "<f4", "uint16": "<u2", "uint8": "u1"}


def _paths(base):
    base = str(base)
    for ext in (".raw", ".json"):
        if base.endswith(ext):
            base = base[: -len(ext)]
    return Path(base + ".raw"), Path(base + ".json")


def write_volume(base, volume, dtype: str = "float32", extra: dict | None = None):
    """Write ``base.raw`` and ``base.json``; returns the two paths."""
    if dtype not in DTYPES:
        raise InvalidInputError(f"unsupported dtype {dtype!r}")
    v = np.asarray(volume)
    if v.ndim not in (3, 4):
        raise InvalidInputError("volume must be 3D or 3D + channels")
    if dtype != "float32":
        info = np.iinfo(DTYPES[dtype])
        if v.size and (v.min() < info.min or v.max() > info.max):
            raise InvalidInputError(f"values do not fit {dtype}")
    channels = 1 if v.ndim == 3 else v.shape[3]
    v4 = v.reshape(v.shape[:3] + (channels,))
    raw, side = _paths(base)
    raw.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(v4.transpose(2, 1, 0, 3)).astype(DTYPES[dtype])
    raw.write_bytes(data.tobytes())
    meta = {"dims": [int(d) for d in v.shape[:3]], "channels": int(channels),
            "order": "row-major", "dtype": dtype}
    if v.ndim == 4:
        meta["channel_axis"] = True
    if extra:
        meta.update(extra)
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return raw, side


def read_volume(base):
    """Inverse of :func:`write_volume`; returns ``(array, sidecar dict)``."""
    raw, side = _paths(base)
    if not side.exists() or not raw.exists():
        raise InvalidInputError(f"volume {raw} or its sidecar is missing")
    meta = json.loads(side.read_text())
    try:
        dims = [int(d) for d in meta["dims"]]
        channels = int(meta.get("channels", 1))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed sidecar {side}: {exc}") from exc
    if meta.get("order", "row-major") != "row-major":
        raise InvalidInputError("only row-major volumes are supported")
    dt = DTYPES.get(meta.get("dtype", "float32"))
    if dt is None:
        raise InvalidInputError(f"unsupported dtype in {side}")
    data = np.frombuffer(raw.read_bytes(), dtype=dt)
    expected = int(np.prod(dims)) * channels
    if data.size != expected:
        raise InvalidInputError(f"{raw} holds {data.size} values, sidecar implies {expected}")
    nx, ny, nz = dims
    v = data.reshape(nz, ny, nx, channels).transpose(2, 1, 0, 3)
    v = v.astype(v.dtype.newbyteorder("="))
    if channels == 1 and not meta.get("channel_axis", False):
        v = v[..., 0]
    return np.ascontiguousarray(v), meta


def read_obj(path) -> TriMesh:
    """ASCII OBJ subset: ``v x y z`` and ``f a b c`` lines, 1-based indices."""
    verts, faces = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                if len(idx) != 3:
                    raise ValueError("only triangles are supported")
                faces.append([i - 1 for i in idx])
        except ValueError as exc:
            raise InvalidInputError(f"{path}:{lineno}: {exc}") from exc
    return TriMesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_obj(path, mesh: TriMesh):
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise InvalidInputError(f"missing file {path}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path} is not valid JSON: {exc}") from exc


def exists(base) -> bool:
    raw, side = _paths(base)
    return os.path.exists(raw) and os.path.exists(side)
