"""Observation file format (JSON) and intrinsics handling.

An observation file carries, per camera, the intrinsics (focal length in
pixels, principal point, image width/height), an optional gravity direction,
and records of line/scanline intersections in pixel coordinates.  Optional
per-camera ground-truth poses at the first and middle scanlines support
pseudo-ground-truth interpolation.  A separate "ground truth sidecar" stores
exact per-scanline poses, lines, and the scene tensor for synthetic data.

All on-disk values are pixels; loading converts to normalized coordinates
((px - principal_point) / focal, for both axes).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InconsistentIntrinsics, ParseError, SchemaError
from .geometry import CameraPose, Line3D, ScanlineObservation, interpolate_scanline_pose
from .synthetic import SyntheticInstance

FORMAT_VERSION = 1

# Fastec sequences: 640x480 at 768 px focal length
INTRINSICS_PRESETS = {
    "fastec": {"focal": 768.0, "cx": 320.0, "cy": 240.0,
               "width": 640, "height": 480},
}


@dataclass
class CameraIntrinsics:
    focal: float
    cx: float
    cy: float
    width: int
    height: int

    def normalize(self, x_px: float, y_px: float) -> tuple[float, float]:
        return (x_px - self.cx) / self.focal, (y_px - self.cy) / self.focal

    def to_pixels(self, x: float, y: float) -> tuple[float, float]:
        return x * self.focal + self.cx, y * self.focal + self.cy


@dataclass
class ObservationFile:
    intrinsics: list[CameraIntrinsics]
    records: list[dict]                     # camera_index, line_id, x_px, y_px
    gravity: list | None = None             # per camera, optional
    gt_first: list[CameraPose] | None = None
    gt_middle: list[CameraPose] | None = None


def _pose_to_json(p: CameraPose) -> dict:
    return {"rotation": p.rotation.tolist(), "center": p.center.tolist(),
            "scanline_y": p.scanline_y}


def _pose_from_json(d: dict) -> CameraPose:
    return CameraPose(rotation=np.array(d["rotation"]),
                      center=np.array(d["center"]),
                      scanline_y=float(d.get("scanline_y", 0.0)))


def save_observations(path, obs_file: ObservationFile) -> None:
    doc = {
        "version": FORMAT_VERSION,
        "cameras": [
            {
                "focal": c.focal, "cx": c.cx, "cy": c.cy,
                "width": c.width, "height": c.height,
                **({"gravity": list(map(float, obs_file.gravity[i]))}
                   if obs_file.gravity and obs_file.gravity[i] is not None
                   else {}),
            }
            for i, c in enumerate(obs_file.intrinsics)
        ],
        "records": obs_file.records,
    }
    if obs_file.gt_first is not None:
        doc["gt_first"] = [_pose_to_json(p) for p in obs_file.gt_first]
    if obs_file.gt_middle is not None:
        doc["gt_middle"] = [_pose_to_json(p) for p in obs_file.gt_middle]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_observations(path):
    """Load an observation file and normalize coordinates.

    Returns (observations, pseudo_gt) with observations a camera-major grid
    of ScanlineObservation and pseudo_gt a per-camera CameraPose list (None
    without embedded ground truth).  Pseudo ground truth interpolates the
    first/middle poses to each camera's scanline.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}") from exc
    for key in ("version", "cameras", "records"):
        if key not in doc:
            raise SchemaError(f"{path}: missing top-level field {key!r}")
    if doc["version"] != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported version {doc['version']}")
    cams = []
    gravity = []
    for k, c in enumerate(doc["cameras"]):
        try:
            cams.append(CameraIntrinsics(
                focal=float(c["focal"]), cx=float(c["cx"]), cy=float(c["cy"]),
                width=int(c["width"]), height=int(c["height"])))
        except KeyError as exc:
            raise SchemaError(f"{path}: camera {k} missing field {exc}") from exc
        if cams[-1].focal <= 0:
            raise InconsistentIntrinsics(f"{path}: camera {k} focal <= 0")
        gravity.append(np.array(c["gravity"], dtype=float)
                       if "gravity" in c else None)
    per_camera: dict[int, dict[int, dict]] = {}
    ys: dict[int, float] = {}
    for rec_no, rec in enumerate(doc["records"]):
        for key in ("camera_index", "line_id", "x_px", "y_px"):
            if key not in rec:
                raise SchemaError(
                    f"{path}: record {rec_no} missing field {key!r}")
        i = int(rec["camera_index"])
        j = int(rec["line_id"])
        if not 0 <= i < len(cams):
            raise SchemaError(f"{path}: record {rec_no} references camera {i}")
        if j in per_camera.setdefault(i, {}):
            raise SchemaError(
                f"{path}: duplicate (camera {i}, line {j}) record")
        intr = cams[i]
        if not (0.0 <= rec["x_px"] <= intr.width):
            raise SchemaError(
                f"{path}: record {rec_no} x_px {rec['x_px']} outside image")
        per_camera[i][j] = rec
        if i in ys and abs(ys[i] - rec["y_px"]) > 1e-9:
            raise SchemaError(
                f"{path}: camera {i} has records on two scanlines")
        ys[i] = rec["y_px"]
    m = len(cams)
    if set(per_camera) != set(range(m)):
        raise SchemaError(f"{path}: records missing for some cameras")
    line_ids = sorted(per_camera[0])
    for i in range(m):
        if sorted(per_camera[i]) != line_ids:
            raise SchemaError(f"{path}: camera {i} sees a different line set")
    observations = []
    for i in range(m):
        intr = cams[i]
        row = []
        for j in line_ids:
            rec = per_camera[i][j]
            x, y = intr.normalize(float(rec["x_px"]), float(rec["y_px"]))
            row.append(ScanlineObservation(
                camera_index=i, line_index=j, x=x, scanline_y=y,
                gravity=gravity[i]))
        observations.append(row)
    pseudo_gt = None
    if "gt_first" in doc and "gt_middle" in doc:
        firsts = [_pose_from_json(d) for d in doc["gt_first"]]
        middles = [_pose_from_json(d) for d in doc["gt_middle"]]
        if len(firsts) != m or len(middles) != m:
            raise SchemaError(f"{path}: ground-truth pose count != cameras")
        pseudo_gt = []
        for i in range(m):
            y_px = ys[i]
            pose = interpolate_scanline_pose(
                firsts[i], middles[i], y_px, cams[i].height)
            pose.scanline_y = (y_px - cams[i].cy) / cams[i].focal
            pseudo_gt.append(pose)
    return observations, pseudo_gt


# ---------------------------------------------------------------------------
# Synthetic instance round trip
# ---------------------------------------------------------------------------

def _auto_intrinsics(inst: SyntheticInstance, focal: float) -> list[CameraIntrinsics]:
    """Per-file intrinsics wide enough that every projection is in-bounds."""
    out = []
    for row in inst.observations:
        max_x = max(abs(o.x) for o in row)
        max_y = max(abs(o.scanline_y) for o in row)
        half_w = float(np.ceil(max_x * focal + 10))
        half_h = float(np.ceil(max_y * focal + 10))
        out.append(CameraIntrinsics(
            focal=focal, cx=half_w, cy=half_h,
            width=int(2 * half_w), height=int(2 * half_h)))
    return out


def instance_to_file(inst: SyntheticInstance,
                     focal: float = 1000.0) -> ObservationFile:
    intr = _auto_intrinsics(inst, focal)
    records = []
    for i, row in enumerate(inst.observations):
        for o in row:
            x_px, y_px = intr[i].to_pixels(o.x, o.scanline_y)
            records.append({"camera_index": i, "line_id": o.line_index,
                            "x_px": x_px, "y_px": y_px})
    gravity = [row[0].gravity for row in inst.observations]
    # first == middle == exact pose makes interpolation exact at any scanline
    gt = [CameraPose(rotation=p.rotation, center=p.center, scanline_y=0.0)
          for p in inst.gt_poses]
    return ObservationFile(intrinsics=intr, records=records, gravity=gravity,
                           gt_first=gt, gt_middle=gt)


def save_gt_sidecar(path, inst: SyntheticInstance) -> None:
    doc = {
        "version": FORMAT_VERSION,
        "setting": inst.setting,
        "poses": [_pose_to_json(p) for p in inst.gt_poses],
        "lines": [{"point_l0": ln.point_l0.tolist(),
                   "direction_ld": ln.direction_ld.tolist()}
                  for ln in inst.gt_lines],
    }
    if inst.gt_tensor is not None:
        doc["tensor"] = inst.gt_tensor.ravel().tolist()
        doc["tensor_shape"] = list(inst.gt_tensor.shape)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_gt_sidecar(path):
    """Returns (poses, lines, tensor, setting)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}") from exc
    poses = [_pose_from_json(d) for d in doc["poses"]]
    lines = [Line3D(point_l0=np.array(d["point_l0"]),
                    direction_ld=np.array(d["direction_ld"]))
             for d in doc["lines"]]
    tensor = None
    if "tensor" in doc:
        tensor = np.array(doc["tensor"]).reshape(doc["tensor_shape"])
    return poses, lines, tensor, doc.get("setting", "E")
