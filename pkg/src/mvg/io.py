"""File formats: PFM maps, PNG/PPM images, camera JSON, PLY/OBJ geometry.

Scene directory layout (produced by `mvg synth`, consumed everywhere):

    scene_dir/
      cameras/NNN.json     intrinsics + world-to-camera pose
      depth/NNN.pfm        z-depth, meters, invalid = 0
      images/NNN.png       8-bit RGB (PPM accepted too)
      gt_normals/NNN.pfm   optional camera-frame unit normals (3 channels)
      scene.json           optional analytic ground-truth description
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import CameraIntrinsics, CameraPose
from .errors import SceneFormatError
from .maps import DepthMap, ImageBuffer, NormalMap
from .meshing import TriangleMesh
from .surfels import SurfelCloud
from .view import View

# ---------------------------------------------------------------------------
# PFM

def write_pfm(path, data: np.ndarray) -> None:
    """Write a (H, W) or (H, W, 3) float array as little-endian PFM."""
    a = np.asarray(data, dtype=np.float32)
    if a.ndim == 2:
        header = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError(f"PFM supports (H, W) or (H, W, 3), got {a.shape}")
    h, w = a.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale = little endian
        f.write(np.flipud(a).astype("<f4").tobytes())  # PFM rows go bottom-up


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise SceneFormatError(path, f"not a PFM file (header {header!r})")
        dims = f.readline().decode("ascii", "replace")
        m = re.match(r"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not m:
            raise SceneFormatError(path, f"bad PFM dimensions line {dims!r}")
        w, h = int(m.group(1)), int(m.group(2))
        scale = float(f.readline().decode("ascii", "replace"))
        endian = "<" if scale < 0 else ">"
        count = w * h * channels
        raw = np.frombuffer(f.read(count * 4), dtype=endian + "f4")
        if raw.size != count:
            raise SceneFormatError(path, "truncated PFM payload")
    a = raw.reshape((h, w, channels)) if channels == 3 else raw.reshape((h, w))
    return np.flipud(a).astype(np.float64)


def read_depth(path) -> DepthMap:
    a = read_pfm(path)
    if a.ndim != 2:
        raise SceneFormatError(path, "depth PFM must be single channel")
    if not np.all(np.isfinite(a)):
        raise SceneFormatError(path, "depth contains non-finite values")
    return DepthMap(np.where(a > 0, a, 0.0))


def write_normals(path, normals: NormalMap) -> None:
    data = np.where(normals.mask[:, :, None], normals.values, 0.0)
    write_pfm(path, data)


def read_normals(path) -> NormalMap:
    a = read_pfm(path)
    if a.ndim != 3:
        raise SceneFormatError(path, "normal PFM must have 3 channels")
    norms = np.linalg.norm(a, axis=-1)
    mask = norms > 0.5
    vals = np.zeros_like(a)
    vals[mask] = a[mask] / norms[mask][:, None]  # renormalize float32 rounding
    return NormalMap(vals, mask)


# ---------------------------------------------------------------------------
# Images

def write_image(path, image: ImageBuffer) -> None:
    a = np.clip(np.rint(image.rgb * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        with open(path, "wb") as f:
            f.write(f"P6\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii"))
            f.write(a.tobytes())
    else:
        Image.fromarray(a, mode="RGB").save(path)


def read_image(path) -> ImageBuffer:
    try:
        with Image.open(path) as im:
            a = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except Exception as exc:
        raise SceneFormatError(path, f"unreadable image ({exc})") from exc
    return ImageBuffer(a)


# ---------------------------------------------------------------------------
# Camera JSON

_CAM_FIELDS = ("id", "width", "height", "fx", "fy", "cx", "cy", "rotation", "translation")


def write_camera(path, view_id: int, k: CameraIntrinsics, pose: CameraPose) -> None:
    doc = {
        "id": int(view_id),
        "width": k.width,
        "height": k.height,
        "fx": k.fx,
        "fy": k.fy,
        "cx": k.cx,
        "cy": k.cy,
        "rotation": [float(x) for x in pose.rotation.reshape(-1)],
        "translation": [float(x) for x in pose.translation],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def read_camera(path):
    """Returns (id, CameraIntrinsics, CameraPose)."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise SceneFormatError(path, "camera file not found")
    except json.JSONDecodeError as exc:
        raise SceneFormatError(path, f"invalid JSON ({exc})") from exc
    for field in _CAM_FIELDS:
        if field not in doc:
            raise SceneFormatError(path, f"missing field {field!r}")
    rot = np.asarray(doc["rotation"], dtype=np.float64)
    if rot.size != 9:
        raise SceneFormatError(path, "field 'rotation' must hold 9 numbers")
    tr = np.asarray(doc["translation"], dtype=np.float64)
    if tr.size != 3:
        raise SceneFormatError(path, "field 'translation' must hold 3 numbers")
    try:
        k = CameraIntrinsics(
            fx=float(doc["fx"]), fy=float(doc["fy"]),
            cx=float(doc["cx"]), cy=float(doc["cy"]),
            width=int(doc["width"]), height=int(doc["height"]),
        )
        pose = CameraPose(rot.reshape(3, 3), tr)
    except ValueError as exc:
        raise SceneFormatError(path, str(exc)) from exc
    return int(doc["id"]), k, pose


# ---------------------------------------------------------------------------
# Scene directories

def view_ids(scene_dir) -> list:
    cam_dir = Path(scene_dir) / "cameras"
    if not cam_dir.is_dir():
        raise SceneFormatError(cam_dir, "missing cameras/ directory")
    ids = sorted(int(p.stem) for p in cam_dir.glob("*.json"))
    if not ids:
        raise SceneFormatError(cam_dir, "no camera files")
    return ids


def _find_image(scene_dir: Path, vid: int) -> Path:
    for ext in (".png", ".ppm"):
        p = scene_dir / "images" / f"{vid:03d}{ext}"
        if p.exists():
            return p
    raise SceneFormatError(scene_dir / "images" / f"{vid:03d}.png", "image file not found")


def load_view(scene_dir, vid: int) -> View:
    scene_dir = Path(scene_dir)
    cam_path = scene_dir / "cameras" / f"{vid:03d}.json"
    file_id, k, pose = read_camera(cam_path)
    if file_id != vid:
        raise SceneFormatError(cam_path, f"field 'id' is {file_id}, expected {vid}")
    depth_path = scene_dir / "depth" / f"{vid:03d}.pfm"
    if not depth_path.exists():
        raise SceneFormatError(depth_path, "depth file not found")
    depth = read_depth(depth_path)
    image = read_image(_find_image(scene_dir, vid))
    return View(id=vid, intrinsics=k, pose=pose, image=image, depth=depth)


def load_views(scene_dir) -> list:
    return [load_view(scene_dir, vid) for vid in view_ids(scene_dir)]


def load_gt_normals(scene_dir, vid: int):
    p = Path(scene_dir) / "gt_normals" / f"{vid:03d}.pfm"
    return read_normals(p) if p.exists() else None


def save_scene(views, out_dir, gt_normals=None, scene_meta: dict | None = None) -> None:
    """Write views (and optional ground truth) in the scene-dir layout."""
    out = Path(out_dir)
    for sub in ("cameras", "depth", "images") + (("gt_normals",) if gt_normals else ()):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for i, view in enumerate(views):
        vid = view.id
        write_camera(out / "cameras" / f"{vid:03d}.json", vid, view.intrinsics, view.pose)
        write_pfm(out / "depth" / f"{vid:03d}.pfm", view.depth.values)
        write_image(out / "images" / f"{vid:03d}.png", view.image)
        if gt_normals is not None:
            write_normals(out / "gt_normals" / f"{vid:03d}.pfm", gt_normals[i])
    if scene_meta is not None:
        with open(out / "scene.json", "w") as f:
            json.dump(scene_meta, f, indent=1, sort_keys=True)
            f.write("\n")


def load_scene_meta(scene_dir) -> dict | None:
    p = Path(scene_dir) / "scene.json"
    if not p.exists():
        return None
    with open(p) as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# PLY: surfel clouds

_SURFEL_PROPS = (
    "x", "y", "z", "nx", "ny", "nz", "qw", "qx", "qy", "qz",
    "sx", "sy", "opacity_logit", "sh0_r", "sh0_g", "sh0_b",
)


def write_surfels(path, cloud: SurfelCloud) -> None:
    n = len(cloud)
    data = np.empty((n, len(_SURFEL_PROPS)), dtype="<f4")
    data[:, 0:3] = cloud.positions
    data[:, 3:6] = cloud.normals
    data[:, 6:10] = cloud.rotations
    data[:, 10:12] = cloud.scales
    data[:, 12] = cloud.opacity_logits
    data[:, 13:16] = cloud.sh0
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    lines += [f"property float {p}" for p in _SURFEL_PROPS]
    lines.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        f.write(data.tobytes())


def _read_ply_header(f, path):
    line = f.readline().strip()
    if line != b"ply":
        raise SceneFormatError(path, "not a PLY file")
    fmt = f.readline().strip()
    if fmt != b"format binary_little_endian 1.0":
        raise SceneFormatError(path, f"unsupported PLY format {fmt!r}")
    elements = []  # (name, count, [property names])
    while True:
        line = f.readline()
        if not line:
            raise SceneFormatError(path, "missing end_header")
        parts = line.strip().decode("ascii", "replace").split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "end_header":
            break
        if parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            elements[-1][2].append(tuple(parts[1:]))
    return elements


def read_surfels(path) -> SurfelCloud:
    with open(path, "rb") as f:
        elements = _read_ply_header(f, path)
        if not elements or elements[0][0] != "vertex":
            raise SceneFormatError(path, "first PLY element must be 'vertex'")
        name, count, props = elements[0]
        names = tuple(p[-1] for p in props)
        if names != _SURFEL_PROPS or any(p[0] != "float" for p in props):
            raise SceneFormatError(path, f"unexpected surfel properties {names}")
        raw = np.frombuffer(f.read(count * len(names) * 4), dtype="<f4")
        if raw.size != count * len(names):
            raise SceneFormatError(path, "truncated vertex payload")
    data = raw.reshape(count, len(names)).astype(np.float64)
    normals = data[:, 3:6]
    quats = data[:, 6:10]
    # renormalize float32 rounding so the cloud invariants hold exactly
    nn = np.linalg.norm(normals, axis=1, keepdims=True)
    qn = np.linalg.norm(quats, axis=1, keepdims=True)
    if count and (np.min(nn) <= 0 or np.min(qn) <= 0):
        raise SceneFormatError(path, "zero-length normal or quaternion")
    return SurfelCloud(
        positions=data[:, 0:3],
        normals=normals / np.where(nn > 0, nn, 1.0),
        rotations=quats / np.where(qn > 0, qn, 1.0),
        scales=data[:, 10:12],
        opacity_logits=data[:, 12],
        sh0=data[:, 13:16],
    )


# ---------------------------------------------------------------------------
# PLY / OBJ: triangle meshes

def write_mesh_ply(path, mesh: TriangleMesh) -> None:
    v = np.ascontiguousarray(mesh.vertices, dtype="<f4")
    t = np.ascontiguousarray(mesh.triangles, dtype="<i4")
    header = [
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {len(v)}",
        "property float x",
        "property float y",
        "property float z",
        f"element face {len(t)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    faces = np.empty((len(t), 13), dtype=np.uint8)
    faces[:, 0] = 3
    faces[:, 1:] = t.view(np.uint8).reshape(len(t), 12)
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(v.tobytes())
        f.write(faces.tobytes())


def read_mesh_ply(path) -> TriangleMesh:
    with open(path, "rb") as f:
        elements = _read_ply_header(f, path)
        names = [e[0] for e in elements]
        if names[:2] != ["vertex", "face"]:
            raise SceneFormatError(path, f"expected vertex+face elements, got {names}")
        nv, nf = elements[0][1], elements[1][1]
        verts = np.frombuffer(f.read(nv * 12), dtype="<f4").reshape(nv, 3)
        faces = np.frombuffer(f.read(nf * 13), dtype=np.uint8).reshape(nf, 13)
        if np.any(faces[:, 0] != 3):
            raise SceneFormatError(path, "only triangle faces supported")
        tris = faces[:, 1:].copy().view("<i4").reshape(nf, 3)
    return TriangleMesh(verts.astype(np.float64), tris.astype(np.int64))


def write_mesh_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w") as f:
        for x, y, z in mesh.vertices:
            f.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in mesh.triangles + 1:  # OBJ indices are 1-based
            f.write(f"f {a} {b} {c}\n")
