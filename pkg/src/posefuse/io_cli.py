"""Line-delimited file formats, config parsing, and the benchmark harness.

Every stream is one JSON object per line. Timestamps travel as decimal
strings with nine fractional digits so values survive write/read/write
byte-identically; floats elsewhere rely on the shortest round-trip repr.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .affinity import TrackerConfig
from .geometry import CameraView
from .simulator import GroundTruth, ScenarioSpec, baseline_alg_s1, generate, \
    synchronized_groups
from .tracker import AssignmentRecord, CrossViewTracker, Detection, FrameBatch, \
    StepResult


class ParseError(ValueError):
    """A file violated a wire format; message carries path/line/field context."""


def fmt_ts(t: float) -> str:
    return "%.9f" % t


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _loads(line: str, path: str, lineno: int) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:{lineno}: invalid record: {e}") from None
    if not isinstance(obj, dict):
        raise ParseError(f"{path}:{lineno}: expected an object, got {type(obj).__name__}")
    return obj


def _field(obj: dict, key: str, path: str, lineno: int):
    if key not in obj:
        raise ParseError(f"{path}:{lineno}: missing field {key!r}")
    return obj[key]


def _parse_ts(raw, path: str, lineno: int) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ParseError(f"{path}:{lineno}: bad timestamp {raw!r}") from None


# ---------------------------------------------------------------- calibration

def load_calibration(path: str) -> list[CameraView]:
    """Read one camera per line: {id, P: 12 row-major numbers, image_size}."""
    cams: list[CameraView] = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            obj = _loads(line, path, lineno)
            cid = _field(obj, "id", path, lineno)
            if not isinstance(cid, str):
                raise ParseError(f"{path}:{lineno}: field 'id' must be a string")
            if cid in seen:
                raise ParseError(f"{path}:{lineno}: duplicate camera id {cid!r}")
            seen.add(cid)
            P = _field(obj, "P", path, lineno)
            if not isinstance(P, list) or len(P) != 12:
                raise ParseError(f"{path}:{lineno}: field 'P' must hold 12 numbers")
            size = _field(obj, "image_size", path, lineno)
            if not isinstance(size, list) or len(size) != 2:
                raise ParseError(f"{path}:{lineno}: field 'image_size' must be [w, h]")
            try:
                P_arr = np.array(P, dtype=float)
                w, h = int(size[0]), int(size[1])
            except (TypeError, ValueError):
                raise ParseError(f"{path}:{lineno}: non-numeric 'P' or "
                                 "'image_size' values") from None
            cams.append(CameraView.from_projection(cid, P_arr, (w, h)))
    return cams


def write_calibration(cams: list[CameraView], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for c in cams:
            f.write(dumps({"id": c.id, "P": [float(v) for v in c.P.reshape(-1)],
                           "image_size": [c.image_size[0], c.image_size[1]]}) + "\n")


# -------------------------------------------------------------- detections

def parse_frame_line(line: str, path: str, lineno: int) -> FrameBatch:
    obj = _loads(line, path, lineno)
    cid = _field(obj, "camera_id", path, lineno)
    if not isinstance(cid, str):
        raise ParseError(f"{path}:{lineno}: field 'camera_id' must be a string")
    t = _parse_ts(_field(obj, "timestamp", path, lineno), path, lineno)
    raw_dets = _field(obj, "detections", path, lineno)
    if not isinstance(raw_dets, list):
        raise ParseError(f"{path}:{lineno}: field 'detections' must be a list")
    dets: list[Detection] = []
    for i, rd in enumerate(raw_dets):
        if not isinstance(rd, dict) or "joints" not in rd:
            raise ParseError(f"{path}:{lineno}: detection {i} must carry 'joints'")
        joints = rd["joints"]
        if not isinstance(joints, list) or not joints:
            raise ParseError(f"{path}:{lineno}: detection {i}: 'joints' must be a "
                             "non-empty list")
        k = len(joints)
        xy = np.full((k, 2), np.nan)
        conf = np.zeros(k)
        for j, entry in enumerate(joints):
            if entry is None:
                continue
            if not isinstance(entry, list) or len(entry) != 3:
                raise ParseError(f"{path}:{lineno}: detection {i} joint {j}: "
                                 "expected [x, y, confidence] or null")
            x, y, c = (float(v) for v in entry)
            if np.isfinite(x) and np.isfinite(y):
                xy[j] = (x, y)
                conf[j] = c
        dets.append(Detection(cid, t, xy, conf, index=i))
    return FrameBatch(cid, t, dets)


def iter_detections(path: str):
    """Stream FrameBatch records without holding the file in memory."""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if line.strip():
                yield parse_frame_line(line, path, lineno)


def load_detections(path: str) -> list[FrameBatch]:
    return list(iter_detections(path))


def frame_record(frame: FrameBatch) -> dict:
    dets = []
    for d in frame.detections:
        joints = []
        for j in range(d.joints.shape[0]):
            if np.isfinite(d.joints[j]).all():
                joints.append([float(d.joints[j, 0]), float(d.joints[j, 1]),
                               float(d.confidences[j])])
            else:
                joints.append(None)
        dets.append({"joints": joints})
    return {"camera_id": frame.camera_id, "timestamp": fmt_ts(frame.timestamp),
            "detections": dets}


def write_detections(frames: list[FrameBatch], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for fr in frames:
            f.write(dumps(frame_record(fr)) + "\n")


# ------------------------------------------------------------------- tracks

@dataclass(frozen=True)
class TrackRow:
    timestamp: float
    targets: dict[int, np.ndarray]
    joint_times: dict[int, np.ndarray]


def track_record(step: StepResult) -> dict:
    targets = []
    for p in sorted(step.poses, key=lambda p: p.id):
        joints = []
        for row in p.joints:
            joints.append([float(row[0]), float(row[1]), float(row[2])]
                          if np.isfinite(row).all() else None)
        times = [fmt_ts(t) if np.isfinite(t) else None for t in p.joint_times]
        targets.append({"id": p.id, "joints": joints, "joint_times": times})
    return {"timestamp": fmt_ts(step.timestamp), "targets": targets}


def load_tracks(path: str) -> list[TrackRow]:
    rows: list[TrackRow] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            obj = _loads(line, path, lineno)
            t = _parse_ts(_field(obj, "timestamp", path, lineno), path, lineno)
            targets: dict[int, np.ndarray] = {}
            times: dict[int, np.ndarray] = {}
            for tg in _field(obj, "targets", path, lineno):
                tid = tg.get("id")
                if not isinstance(tid, int):
                    raise ParseError(f"{path}:{lineno}: target id must be an integer")
                joints = tg.get("joints")
                if not isinstance(joints, list):
                    raise ParseError(f"{path}:{lineno}: target {tid}: bad 'joints'")
                xyz = np.full((len(joints), 3), np.nan)
                jt = np.full(len(joints), np.nan)
                for j, entry in enumerate(joints):
                    if entry is None:
                        continue
                    if not isinstance(entry, list) or len(entry) != 3:
                        raise ParseError(f"{path}:{lineno}: target {tid} joint {j}: "
                                         "expected [X, Y, Z] or null")
                    xyz[j] = [float(v) for v in entry]
                for j, entry in enumerate(tg.get("joint_times") or []):
                    if entry is not None:
                        jt[j] = _parse_ts(entry, path, lineno)
                targets[tid] = xyz
                times[tid] = jt
            rows.append(TrackRow(t, targets, times))
    return rows


# -------------------------------------------------------------- ground truth

def write_truth(truth: GroundTruth, path: str) -> None:
    """Poses and detection identities, interleaved in stream order."""
    det_by_frame: dict[tuple[str, float], list[tuple[int, int]]] = {}
    for (cid, t, idx), pid in truth.det_person.items():
        det_by_frame.setdefault((cid, t), []).append((idx, pid))
    with open(path, "w", encoding="utf-8") as f:
        for cid, t, poses in truth.pose_frames:
            people = {str(pid): [[float(v) for v in row] for row in pose]
                      for pid, pose in poses.items()}
            f.write(dumps({"kind": "pose", "camera_id": cid,
                           "timestamp": fmt_ts(t), "people": people}) + "\n")
            for idx, pid in sorted(det_by_frame.get((cid, t), [])):
                f.write(dumps({"kind": "det", "camera_id": cid,
                               "timestamp": fmt_ts(t), "index": idx,
                               "person": pid}) + "\n")


def load_truth(path: str) -> GroundTruth:
    truth = GroundTruth(pose_frames=[], det_person={}, noise={})
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            obj = _loads(line, path, lineno)
            kind = _field(obj, "kind", path, lineno)
            cid = _field(obj, "camera_id", path, lineno)
            t = _parse_ts(_field(obj, "timestamp", path, lineno), path, lineno)
            if kind == "pose":
                people = {int(k): np.array(v, dtype=float)
                          for k, v in _field(obj, "people", path, lineno).items()}
                truth.pose_frames.append((cid, t, people))
            elif kind == "det":
                key = (cid, t, int(_field(obj, "index", path, lineno)))
                truth.det_person[key] = int(_field(obj, "person", path, lineno))
            else:
                raise ParseError(f"{path}:{lineno}: unknown record kind {kind!r}")
    return truth


# -------------------------------------------------------------- assignments

def assignment_record(r: AssignmentRecord) -> dict:
    return {"camera_id": r.camera_id, "timestamp": fmt_ts(r.timestamp),
            "index": r.index, "target": r.target_id}


def load_assignments(path: str) -> list[AssignmentRecord]:
    out: list[AssignmentRecord] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            obj = _loads(line, path, lineno)
            out.append(AssignmentRecord(
                _field(obj, "camera_id", path, lineno),
                _parse_ts(_field(obj, "timestamp", path, lineno), path, lineno),
                int(_field(obj, "index", path, lineno)),
                _field(obj, "target", path, lineno)))
    return out


# ------------------------------------------------------------------- config

_INT_KEYS = {"velocity_window", "min_views_init", "min_shared_joints",
             "max_exact_partition"}
_BOOL_KEYS = {"confidence_weighting"}
_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _coerce_config_value(key: str, val, path: str):
    if key in _BOOL_KEYS:
        if isinstance(val, bool):
            return val
        if isinstance(val, str) and val.lower() in _TRUE | _FALSE:
            return val.lower() in _TRUE
        raise ParseError(f"{path}: config key {key!r}: expected a boolean, got {val!r}")
    if key == "alpha2d_epi" and (val is None or
                                 (isinstance(val, str) and val.lower() in ("none", "null"))):
        return None
    try:
        num = float(val)
    except (TypeError, ValueError):
        raise ParseError(f"{path}: config key {key!r}: not a number: {val!r}") from None
    if key in _INT_KEYS:
        if num != int(num):
            raise ParseError(f"{path}: config key {key!r}: expected an integer")
        return int(num)
    return num


def parse_config_text(text: str, path: str = "<config>") -> TrackerConfig:
    """Flat key=value lines or a single JSON object; keys are config fields."""
    raw: dict[str, object] = {}
    if text.lstrip().startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: invalid structured config: {e}") from None
        if not isinstance(obj, dict):
            raise ParseError(f"{path}: structured config must be an object")
        raw = obj
    else:
        for lineno, line in enumerate(text.splitlines(), 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ParseError(f"{path}:{lineno}: expected key=value")
            k, v = body.split("=", 1)
            raw[k.strip()] = v.strip()
    known = set(TrackerConfig.__dataclass_fields__)
    kwargs = {}
    for k, v in raw.items():
        if k not in known:
            raise ParseError(f"{path}: unknown config key {k!r}")
        kwargs[k] = _coerce_config_value(k, v, path)
    return TrackerConfig(**kwargs)


def load_config(path: str) -> TrackerConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read(), path)


def load_scenario(path: str) -> ScenarioSpec:
    with open(path, encoding="utf-8") as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: invalid scenario file: {e}") from None
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: scenario file must hold one object")
    return ScenarioSpec.from_dict(obj)


# -------------------------------------------------------------------- bench

@dataclass(frozen=True)
class BenchRow:
    variant: str
    cameras: int
    people: int
    steps: int
    frames: float
    elapsed_s: float
    per_frame_ms: float
    fps: float
    p50_ms: float
    p90_ms: float
    p99_ms: float


BENCH_HEADER = ("variant,cameras,people,steps,frames,elapsed_s,per_frame_ms,"
                "fps,p50_ms,p90_ms,p99_ms")


def bench_csv_line(r: BenchRow) -> str:
    return (f"{r.variant},{r.cameras},{r.people},{r.steps},{r.frames:.2f},"
            f"{r.elapsed_s:.4f},{r.per_frame_ms:.4f},{r.fps:.2f},"
            f"{r.p50_ms:.4f},{r.p90_ms:.4f},{r.p99_ms:.4f}")


def bench_scene(n_cameras: int, n_people: int, duration: float, seed: int = 0):
    """Ceiling-grid rig, default motion; input preloaded for timing runs."""
    spec = ScenarioSpec(n_people=n_people, n_cameras=n_cameras, rig="grid",
                        duration=duration, seed=seed)
    return generate(spec)


def _percentiles(times_s: list[float]) -> tuple[float, float, float]:
    p = np.percentile(np.array(times_s) * 1e3, [50, 90, 99])
    return float(p[0]), float(p[1]), float(p[2])


def bench_tracker(cams, frames, n_people: int,
                  cfg: TrackerConfig | None = None) -> BenchRow:
    """Per-step latency over a preloaded stream; one frame = every camera once."""
    tracker = CrossViewTracker(cams, cfg)
    times = []
    t0 = time.perf_counter()
    for f in frames:
        s0 = time.perf_counter()
        tracker.step(f)
        times.append(time.perf_counter() - s0)
    elapsed = time.perf_counter() - t0
    n_cam = len(cams)
    n_frames = len(frames) / n_cam
    p50, p90, p99 = _percentiles(times)
    return BenchRow("tracker", n_cam, n_people, len(frames), n_frames, elapsed,
                    1e3 * elapsed / n_frames if n_frames else 0.0,
                    n_frames / elapsed if elapsed > 0 else 0.0, p50, p90, p99)


def bench_baseline(cams, frames, n_people: int,
                   cfg: TrackerConfig | None = None) -> BenchRow:
    """Times the per-frame brute-force clustering over synchronized groups."""
    from .geometry import build_fundamental_table

    cfg = cfg or TrackerConfig()
    groups = synchronized_groups(frames)
    ftable = build_fundamental_table(cams)
    times = []
    t0 = time.perf_counter()
    for g in groups:
        s0 = time.perf_counter()
        baseline_alg_s1(g, cams, cfg, ftable)
        times.append(time.perf_counter() - s0)
    elapsed = time.perf_counter() - t0
    p50, p90, p99 = _percentiles(times) if times else (0.0, 0.0, 0.0)
    n_frames = float(len(groups))
    return BenchRow("baseline", len(cams), n_people, len(groups), n_frames,
                    elapsed, 1e3 * elapsed / n_frames if n_frames else 0.0,
                    n_frames / elapsed if elapsed > 0 else 0.0, p50, p90, p99)
