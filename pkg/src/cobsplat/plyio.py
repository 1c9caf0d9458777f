"""Binary little-endian PLY reader/writer for 3DGS-style checkpoints."""

from __future__ import annotations

import os
from typing import List, Tuple

import numpy as np

from .scene import GaussianCloud, ValidationError

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}


class PlyParseError(ValidationError):
    pass


def _property_names(sh_degree: int) -> List[str]:
    n_rest = 3 * ((sh_degree + 1) ** 2 - 1)
    names = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(n_rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def _read_header(f) -> Tuple[int, List[Tuple[str, str]], int]:
    first = f.readline()
    if first.strip() != b"ply":
        raise PlyParseError("byte 0: missing 'ply' magic")
    count = None
    props: List[Tuple[str, str]] = []
    in_vertex = False
    fmt_ok = False
    while True:
        offset = f.tell()
        raw = f.readline()
        if not raw:
            raise PlyParseError(f"byte {offset}: header ended before end_header")
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise PlyParseError(f"byte {offset}: non-ascii header line") from None
        if line == "end_header":
            break
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] != "binary_little_endian":
                raise PlyParseError(f"byte {offset}: unsupported format '{line}'")
            fmt_ok = True
        elif parts[0] == "element":
            if len(parts) != 3:
                raise PlyParseError(f"byte {offset}: malformed element line '{line}'")
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                try:
                    count = int(parts[2])
                except ValueError:
                    raise PlyParseError(f"byte {offset}: bad vertex count '{parts[2]}'") from None
                if count < 0:
                    raise PlyParseError(f"byte {offset}: negative vertex count")
            elif count is not None:
                raise PlyParseError(f"byte {offset}: elements after 'vertex' are not supported")
        elif parts[0] == "property":
            if not in_vertex:
                continue
            if len(parts) != 3 or parts[1] == "list":
                raise PlyParseError(f"byte {offset}: unsupported property '{line}'")
            if parts[1] not in _PLY_TYPES:
                raise PlyParseError(f"byte {offset}: unknown property type '{parts[1]}'")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise PlyParseError(f"byte {offset}: unexpected header line '{line}'")
    if not fmt_ok:
        raise PlyParseError("header has no binary_little_endian format line")
    if count is None:
        raise PlyParseError("header declares no vertex element")
    return count, props, f.tell()


def load_ply(path) -> GaussianCloud:
    """Read a 3DGS PLY. Optional ``mask_logit``/``obj_id`` default to 0."""
    with open(path, "rb") as f:
        count, props, data_start = _read_header(f)
        payload = f.read()
    names = [p[0] for p in props]
    if len(set(names)) != len(names):
        raise PlyParseError("duplicate vertex property names")
    dtype = np.dtype([(n, t) for n, t in props])
    have = len(payload) // dtype.itemsize if dtype.itemsize else 0
    if have < count:
        raise PlyParseError(
            f"truncated payload: header declares {count} elements, payload holds {have}; "
            f"element {have} missing at byte {data_start + have * dtype.itemsize}")
    arr = np.frombuffer(payload, dtype=dtype, count=count)

    for req in ("x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"):
        if req not in names:
            raise PlyParseError(f"missing required property '{req}'")
    n_rest = sum(1 for n in names if n.startswith("f_rest_"))
    k = n_rest // 3 + 1
    degree = int(round(np.sqrt(k))) - 1
    if (degree + 1) ** 2 != k or 3 * (k - 1) != n_rest or degree > 3:
        raise PlyParseError(f"{n_rest} f_rest properties do not match any SH degree 0..3")

    def col(*keys):
        return np.stack([arr[key].astype(np.float64) for key in keys], axis=1) if keys else None

    pos = col("x", "y", "z")
    scl = col("scale_0", "scale_1", "scale_2")
    rot = col("rot_0", "rot_1", "rot_2", "rot_3")
    for name, block in (("position", pos), ("scale", scl), ("rotation", rot)):
        bad = np.flatnonzero(~np.isfinite(block).all(axis=1))
        if len(bad):
            raise PlyParseError(f"element {bad[0]}: non-finite {name}")
    bad = np.flatnonzero(np.linalg.norm(rot, axis=1) == 0) if count else []
    if len(bad):
        raise PlyParseError(f"element {bad[0]}: zero-norm rotation")

    colors = np.zeros((count, k, 3))
    colors[:, 0, :] = col("f_dc_0", "f_dc_1", "f_dc_2")
    if n_rest:
        rest = col(*[f"f_rest_{i}" for i in range(n_rest)]).reshape(count, 3, k - 1)
        colors[:, 1:, :] = rest.transpose(0, 2, 1)
    mask = arr["mask_logit"].astype(np.float64) if "mask_logit" in names else np.zeros(count)
    ids = arr["obj_id"].astype(np.int32) if "obj_id" in names else np.zeros(count, np.int32)
    return GaussianCloud(pos, scl, rot, arr["opacity"].astype(np.float64), colors, mask, ids, degree)


def save_ply(cloud: GaussianCloud, path) -> None:
    """Write the cloud; ``mask_logit`` and ``obj_id`` are always included."""
    names = _property_names(cloud.sh_degree)
    n = len(cloud)
    k = (cloud.sh_degree + 1) ** 2
    dtype = np.dtype([(nm, "<f4") for nm in names] + [("mask_logit", "<f4"), ("obj_id", "<i4")])
    out = np.empty(n, dtype=dtype)
    for i, c in enumerate("xyz"):
        out[c] = cloud.positions[:, i]
    for i in range(3):
        out[f"f_dc_{i}"] = cloud.colors[:, 0, i]
        out[f"scale_{i}"] = cloud.log_scales[:, i]
    rest = cloud.colors[:, 1:, :].transpose(0, 2, 1).reshape(n, 3 * (k - 1))
    for i in range(rest.shape[1]):
        out[f"f_rest_{i}"] = rest[:, i]
    out["opacity"] = cloud.opacity_logits
    for i in range(4):
        out[f"rot_{i}"] = cloud.rotations[:, i]
    out["mask_logit"] = cloud.mask_logits
    out["obj_id"] = cloud.obj_ids

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {nm}" for nm in names]
    header += ["property float mask_logit", "property int obj_id", "end_header"]
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(out.tobytes())
    os.replace(tmp, path)
