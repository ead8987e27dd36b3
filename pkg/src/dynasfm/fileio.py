"""Readers and writers for the on-disk formats.

Formats:
  * tracks: JSON Lines, one track object per line with keys
    id, start, points, vis and optional depth, dyn, score.
  * depth: PFM grayscale ("Pf"), negative scale = little-endian,
    rows stored bottom-to-top as usual for PFM.
  * trajectories: TUM text, "timestamp tx ty tz qx qy qz qw".
  * clouds: ASCII PLY with x y z, red green blue, label, frame.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .cloud import ScenePointCloud
from .errors import InvariantViolation, NonPositiveDepthValue, ParseError
from .geometry import PoseSE3
from .tracks import DepthFrame, Track, TrackSet

_TRACK_KEYS = {"id", "start", "points", "vis", "depth", "dyn", "score"}


# --- tracks (JSON Lines) -----------------------------------------------------

def read_tracks(path) -> TrackSet:
    path = Path(path)
    tracks = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path, lineno) from exc
            if not isinstance(obj, dict):
                raise ParseError("track line must be a JSON object", path, lineno)
            unknown = set(obj) - _TRACK_KEYS
            if unknown:
                raise ParseError(f"unknown keys {sorted(unknown)}", path, lineno)
            for key in ("id", "start", "points", "vis"):
                if key not in obj:
                    raise ParseError(f"missing key '{key}'", path, lineno)
            try:
                track = Track(
                    track_id=int(obj["id"]),
                    start=int(obj["start"]),
                    points=np.array(obj["points"], dtype=np.float64),
                    vis=np.array(obj["vis"]),
                    depth=np.array(obj["depth"], dtype=np.float64) if obj.get("depth") is not None else None,
                    dyn=int(obj["dyn"]) if obj.get("dyn") is not None else None,
                    score=float(obj["score"]) if obj.get("score") is not None else None,
                )
            except (InvariantViolation, NonPositiveDepthValue):
                raise
            except (TypeError, ValueError) as exc:
                raise ParseError(f"malformed track fields: {exc}", path, lineno) from exc
            tracks.append(track)
    return TrackSet(tracks).sorted_by_id()


def write_tracks(trackset: TrackSet, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for t in trackset.sorted_by_id():
            obj = {
                "id": t.track_id,
                "start": t.start,
                "points": [[float(x), float(y)] for x, y in t.points],
                "vis": [int(v) for v in t.vis],
            }
            if t.depth is not None:
                obj["depth"] = [float(d) for d in t.depth]
            if t.dyn is not None:
                obj["dyn"] = int(t.dyn)
            if t.score is not None:
                obj["score"] = float(t.score)
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


# --- depth (PFM) ---------------------------------------------------------------

def read_depth_pfm(path, frame: int | None = None) -> DepthFrame:
    path = Path(path)
    with path.open("rb") as fh:
        header = fh.readline().strip()
        if header != b"Pf":
            raise ParseError("not a grayscale PFM (header must be 'Pf')", path, 1)
        dims = fh.readline().split()
        if len(dims) != 2:
            raise ParseError("expected 'width height'", path, 2)
        try:
            width, height = int(dims[0]), int(dims[1])
        except ValueError:
            raise ParseError("non-integer dimensions", path, 2)
        try:
            scale = float(fh.readline().strip())
        except ValueError:
            raise ParseError("bad scale line", path, 3)
        endian = "<" if scale < 0 else ">"
        count = width * height
        raw = fh.read(count * 4)
        if len(raw) != count * 4:
            raise ParseError(f"truncated raster: expected {count * 4} bytes", path)
    data = np.frombuffer(raw, dtype=endian + "f4").reshape(height, width)
    data = data[::-1].copy()  # PFM stores rows bottom-to-top
    if not np.all(np.isfinite(data)) or np.any(data <= 0):
        raise NonPositiveDepthValue(f"{path}: raster contains non-positive or non-finite depth")
    if frame is None:
        stem = path.stem
        digits = "".join(ch for ch in stem if ch.isdigit())
        frame = int(digits) if digits else 0
    return DepthFrame(frame, data)


def write_depth_pfm(frame: DepthFrame, path) -> None:
    path = Path(path)
    data = np.asarray(frame.values, dtype="<f4")
    with path.open("wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{frame.width} {frame.height}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(data[::-1].tobytes())


# --- trajectories (TUM) ----------------------------------------------------------

def write_trajectory_tum(poses: list[PoseSE3], path, timestamps=None) -> None:
    """One line per pose: 'timestamp tx ty tz qx qy qz qw' (qw last)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for i, pose in enumerate(poses):
            ts = float(timestamps[i]) if timestamps is not None else float(i)
            w, x, y, z = (float(v) for v in pose.q)
            tx, ty, tz = (float(v) for v in pose.t)
            fh.write(f"{ts!r} {tx!r} {ty!r} {tz!r} {x!r} {y!r} {z!r} {w!r}\n")


def read_trajectory_tum(path) -> tuple[list[PoseSE3], list[float]]:
    path = Path(path)
    poses, stamps = [], []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ParseError(f"expected 8 fields, got {len(parts)}", path, lineno)
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ParseError("non-numeric field", path, lineno)
            ts, tx, ty, tz, qx, qy, qz, qw = vals
            try:
                poses.append(PoseSE3(np.array([qw, qx, qy, qz]), np.array([tx, ty, tz])))
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from exc
            stamps.append(ts)
    return poses, stamps


# --- point clouds (ASCII PLY) -------------------------------------------------------

def write_ply(cloud: ScenePointCloud, path) -> None:
    path = Path(path)
    try:
        with path.open("w", encoding="ascii") as fh:
            fh.write("ply\n")
            fh.write("format ascii 1.0\n")
            fh.write(f"element vertex {len(cloud)}\n")
            fh.write("property float x\nproperty float y\nproperty float z\n")
            fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
            fh.write("property uchar label\n")
            fh.write("property int frame\n")
            fh.write("end_header\n")
            for p, c, lab, frm in zip(cloud.points, cloud.colors, cloud.labels, cloud.frames):
                fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} "
                         f"{int(c[0])} {int(c[1])} {int(c[2])} {int(lab)} {int(frm)}\n")
    except OSError as exc:
        raise IOError(f"cannot write PLY to {path}: {exc}") from exc


# --- small JSON helpers ---------------------------------------------------------------

def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from exc


def write_camera_json(cam, path) -> None:
    write_json(
        {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
         "width": cam.width, "height": cam.height},
        path,
    )


def read_camera_json(path):
    from .geometry import CameraModel

    obj = read_json(path)
    try:
        return CameraModel(
            fx=float(obj["fx"]), fy=float(obj["fy"]),
            cx=float(obj["cx"]), cy=float(obj["cy"]),
            width=int(obj["width"]), height=int(obj["height"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad camera file: {exc}", path) from exc
