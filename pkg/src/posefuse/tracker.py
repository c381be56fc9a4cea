"""Cross-view tracking loop: match, update, initialize, retire.

Targets live in 3-space and are updated one camera frame at a time; no
frame-level synchronization between cameras is assumed anywhere. All target
state sits in tracker-level arrays indexed by slot so that each step runs a
constant number of vectorized passes regardless of how many targets matched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .affinity import EPS_CLOCK, ChronologyViolation, TrackerConfig, \
    epipolar_affinity_matrix
from .assignment import filter_matches, hungarian_max, partition_cycle_consistent
from .geometry import CameraView, build_fundamental_table
from .reconstruction import InsufficientViews, JointObservationSet, NearDegenerate, \
    UnknownCamera, triangulate


@dataclass
class Detection:
    """One person candidate in one camera frame.

    joints is (K, 2) pixels with NaN rows for missing joints; confidences is
    (K,). index is the detection's position within its frame and, together
    with (camera_id, timestamp), identifies it in assignment records.
    """

    camera_id: str
    timestamp: float
    joints: np.ndarray
    confidences: np.ndarray
    index: int = 0

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float).reshape(-1, 2)
        self.confidences = np.asarray(self.confidences, dtype=float).reshape(-1)

    def valid_mask(self, min_confidence: float) -> np.ndarray:
        return (self.confidences >= min_confidence) & np.isfinite(self.joints).all(axis=1)


@dataclass
class FrameBatch:
    camera_id: str
    timestamp: float
    detections: list[Detection]


@dataclass(frozen=True)
class JointState:
    """Read-only snapshot of one joint of one target."""

    point: np.ndarray | None
    point_time: float
    velocity: np.ndarray
    velocity_valid: bool
    observations: dict[str, tuple[np.ndarray, float, float]]
    history: list[tuple[float, np.ndarray]]


@dataclass(frozen=True)
class AssignmentRecord:
    camera_id: str
    timestamp: float
    index: int
    target_id: int | None


@dataclass(frozen=True)
class TargetPose:
    id: int
    joints: np.ndarray
    joint_times: np.ndarray


@dataclass(frozen=True)
class StepResult:
    camera_id: str
    timestamp: float
    poses: list[TargetPose]
    assignments: list[AssignmentRecord]
    retired: list[int]


class Target:
    """Handle onto one live slot of the tracker's state arrays.

    Valid while the target is live; a retired target's slot may be reused.
    """

    __slots__ = ("id", "slot", "created_at", "_tr")

    def __init__(self, tr: "CrossViewTracker", target_id: int, slot: int,
                 created_at: float):
        self.id = target_id
        self.slot = slot
        self.created_at = created_at
        self._tr = tr

    @property
    def joint_xyz(self) -> np.ndarray:
        return self._tr._xyz[self.slot]

    @property
    def joint_t(self) -> np.ndarray:
        return self._tr._xyz_t[self.slot]

    @property
    def vel(self) -> np.ndarray:
        return self._tr._vel[self.slot]

    @property
    def vel_valid(self) -> np.ndarray:
        return self._tr._vel_ok[self.slot]

    @property
    def last_matched(self) -> float:
        return float(self._tr._slot_last[self.slot])

    def joint_state(self, k: int) -> JointState:
        tr, s = self._tr, self.slot
        xyz = tr._xyz[s, k]
        point = xyz.copy() if np.isfinite(xyz).all() else None
        obs = {}
        for ci in np.flatnonzero(tr._obs_ok[s, k]):
            obs[tr._cam_ids[ci]] = (tr._obs_xy[s, k, ci].copy(),
                                    float(tr._obs_conf[s, k, ci]),
                                    float(tr._obs_t[s, k, ci]))
        n = min(int(tr._hist_n[s, k]), tr._hist_t.shape[2])
        hist = sorted(((float(tr._hist_t[s, k, i]), tr._hist_x[s, k, i].copy())
                       for i in range(n)), key=lambda p: p[0])
        return JointState(point, float(tr._xyz_t[s, k]), tr._vel[s, k].copy(),
                          bool(tr._vel_ok[s, k]), obs, hist)


class CrossViewTracker:
    """Fuses per-camera 2D pose streams into identity-stable 3D targets.

    weighted=False switches the incremental update from time-weighted to
    plain triangulation; initialization always uses the plain solve.
    """

    def __init__(self, cameras: list[CameraView], cfg: TrackerConfig | None = None,
                 weighted: bool = True):
        if not cameras:
            raise ValueError("need at least one camera")
        self.cfg = cfg or TrackerConfig()
        self.weighted = weighted
        self.cameras = {c.id: c for c in cameras}
        if len(self.cameras) != len(cameras):
            raise ValueError("duplicate camera id")
        self._cam_ids = [c.id for c in cameras]
        self._cam_idx = {cid: i for i, cid in enumerate(self._cam_ids)}
        self._P = np.stack([c.P for c in cameras])
        self._P_plus = np.stack([c.P_plus for c in cameras])
        self._centers = np.stack([c.center for c in cameras])
        self._P0 = np.ascontiguousarray(self._P[:, 0])
        self._P1 = np.ascontiguousarray(self._P[:, 1])
        self._P2 = np.ascontiguousarray(self._P[:, 2])
        self._ftable = build_fundamental_table(cameras) if len(cameras) > 1 else {}
        self.targets: list[Target] = []
        self.pool: dict[str, list[Detection]] = {}
        self.K: int | None = None
        self._last_t: dict[str, float] = {}
        self._next_id = 0
        self._dt_sum = 0.0
        self._dt_count = 0
        self._cap = 0
        self._free: list[int] = []
        self._live = np.empty(0, dtype=np.intp)

    # --------------------------------------------------------------- storage

    def _ensure_store(self, K: int):
        if self._cap:
            return
        self._alloc(8, K)

    def _alloc(self, cap: int, K: int):
        C, W = len(self._cam_ids), self.cfg.velocity_window
        self._xyz = np.full((cap, K, 3), np.nan)
        self._xyz_t = np.full((cap, K), np.nan)
        self._vel = np.zeros((cap, K, 3))
        self._vel_ok = np.zeros((cap, K), dtype=bool)
        self._obs_xy = np.zeros((cap, K, C, 2))
        self._obs_t = np.full((cap, K, C), -np.inf)
        self._obs_conf = np.zeros((cap, K, C))
        self._obs_ok = np.zeros((cap, K, C), dtype=bool)
        self._hist_t = np.zeros((cap, K, W))
        self._hist_x = np.zeros((cap, K, W, 3))
        self._hist_n = np.zeros((cap, K), dtype=np.int64)
        self._slot_last = np.zeros(cap)
        self._free = list(range(cap - 1, -1, -1))
        self._cap = cap

    def _grow(self):
        old = (self._xyz, self._xyz_t, self._vel, self._vel_ok, self._obs_xy,
               self._obs_t, self._obs_conf, self._obs_ok, self._hist_t,
               self._hist_x, self._hist_n, self._slot_last)
        cap = self._cap
        self._alloc(cap * 2, self.K)
        for new_a, old_a in zip((self._xyz, self._xyz_t, self._vel, self._vel_ok,
                                 self._obs_xy, self._obs_t, self._obs_conf,
                                 self._obs_ok, self._hist_t, self._hist_x,
                                 self._hist_n, self._slot_last), old):
            new_a[:cap] = old_a
        self._free = list(range(self._cap - 1, cap - 1, -1))

    def _alloc_slot(self) -> int:
        if not self._free:
            self._grow()
        s = self._free.pop()
        self._xyz[s] = np.nan
        self._xyz_t[s] = np.nan
        self._vel[s] = 0.0
        self._vel_ok[s] = False
        self._obs_xy[s] = 0.0
        self._obs_t[s] = -np.inf
        self._obs_conf[s] = 0.0
        self._obs_ok[s] = False
        self._hist_n[s] = 0
        return s

    def _rebuild_live(self):
        self._live = np.array([tg.slot for tg in self.targets], dtype=np.intp)

    # ------------------------------------------------------------- pipeline

    def step(self, frame: FrameBatch) -> StepResult:
        cid = frame.camera_id
        ci = self._cam_idx.get(cid)
        if ci is None:
            raise UnknownCamera(cid)
        t = frame.timestamp
        last = self._last_t.get(cid)
        if last is not None and t < last - EPS_CLOCK:
            raise ChronologyViolation(
                f"camera {cid!r} went back in time: {t} after {last}")
        self._last_t[cid] = t if last is None else max(last, t)

        records: list[AssignmentRecord] = []
        for d in self.pool.pop(cid, []):
            records.append(AssignmentRecord(d.camera_id, d.timestamp, d.index, None))

        dets = frame.detections
        dxy = dconf = dvm = None
        if dets:
            k = dets[0].joints.shape[0]
            if self.K is None:
                self.K = k
            elif k != self.K:
                raise ValueError(f"joint count changed from {self.K} to {k}")
            self._ensure_store(k)
            dxy = np.stack([d.joints for d in dets])
            dconf = np.stack([d.confidences for d in dets])
            dvm = (dconf >= self.cfg.min_joint_confidence) & np.isfinite(dxy).all(axis=2)

        accepted: list[tuple[int, int]] = []
        unmatched = list(range(len(dets)))
        if dets and self.targets:
            A = self._affinity_core(dxy, dvm, ci, t)
            pairs = hungarian_max(A)
            accepted, _, unmatched = filter_matches(pairs, A, self.cfg.match_threshold)
        if accepted:
            rows = np.array([r for r, _ in accepted], dtype=np.intp)
            cols = np.array([c for _, c in accepted], dtype=np.intp)
            self._update_matched(self._live[rows], cols, dxy, dconf, dvm, ci, t)
            for r, c in accepted:
                records.append(AssignmentRecord(cid, dets[c].timestamp,
                                                dets[c].index, self.targets[r].id))
        self.pool[cid] = [dets[c] for c in unmatched]

        records.extend(self._initialize_targets())
        retired = self._retire(t)
        poses = [TargetPose(tg.id, self._xyz[tg.slot].copy(),
                            self._xyz_t[tg.slot].copy()) for tg in self.targets]
        return StepResult(cid, t, poses, records, retired)

    def finish(self) -> list[AssignmentRecord]:
        """Flush pool leftovers as unmatched at end of stream."""
        records = []
        for cid in sorted(self.pool):
            for d in self.pool[cid]:
                records.append(AssignmentRecord(d.camera_id, d.timestamp, d.index, None))
        self.pool.clear()
        return records

    def mean_collection_time_diff(self) -> float:
        """Mean staleness of the views feeding each incremental solve so far."""
        return self._dt_sum / self._dt_count if self._dt_count else 0.0

    # ------------------------------------------------------------- internals

    def _affinity_matrix(self, dets: list[Detection], ci: int, t: float) -> np.ndarray:
        dxy = np.stack([d.joints for d in dets])
        dconf = np.stack([d.confidences for d in dets])
        dvm = (dconf >= self.cfg.min_joint_confidence) & np.isfinite(dxy).all(axis=2)
        return self._affinity_core(dxy, dvm, ci, t)

    def _affinity_core(self, dxy: np.ndarray, dvm: np.ndarray, ci: int,
                       t: float) -> np.ndarray:
        """Vectorized body affinities, live targets x detections."""
        cfg = self.cfg
        live = self._live
        M, K = dxy.shape[0], dxy.shape[1]

        with np.errstate(all="ignore"):
            # back-projection rays for every detection joint, shared across targets
            dh = np.concatenate([dxy, np.ones((M, K, 1))], axis=2)
            q = dh @ self._P_plus[ci].T
            w4 = q[..., 3:]
            center = self._centers[ci]
            dirs = np.where(np.abs(w4) > 1e-12, q[..., :3] / w4 - center, q[..., :3])
            dirs /= np.sqrt((dirs * dirs).sum(axis=2, keepdims=True))

            pxy = self._obs_xy[live, :, ci]
            pt = self._obs_t[live, :, ci]
            pvalid = self._obs_ok[live, :, ci]
            dt2 = np.maximum(t - pt, 0.0)
            decay2 = np.exp(-cfg.lambda_a * dt2)
            diff2 = pxy[:, None] - dxy[None]
            dist = np.sqrt((diff2 * diff2).sum(axis=3))
            s2 = cfg.w2d * (1.0 - dist / (cfg.alpha2d * dt2[:, None])) * decay2[:, None]
            zero_dt = (dt2 == 0.0)[:, None]
            s2 = np.where(zero_dt & (dist > 0), -np.inf, s2)
            s2 = np.where(zero_dt & (dist == 0), cfg.w2d, s2)
            mask2 = pvalid[:, None] & dvm[None]

            X3 = self._xyz[live]
            t3 = self._xyz_t[live]
            valid3 = np.isfinite(t3)
            dt3 = np.maximum(t - np.where(valid3, t3, t), 0.0)
            Xp = X3 + np.where(self._vel_ok[live, :, None], self._vel[live], 0.0) \
                * dt3[..., None]
            u = dirs[None]
            v = (Xp - center)[:, None]
            cx = u[..., 1] * v[..., 2] - u[..., 2] * v[..., 1]
            cy = u[..., 2] * v[..., 0] - u[..., 0] * v[..., 2]
            cz = u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]
            d3 = np.sqrt(cx * cx + cy * cy + cz * cz)
            s3 = cfg.w3d * (1.0 - d3 / cfg.alpha3d) * np.exp(-cfg.lambda_a * dt3)[:, None]
            mask3 = valid3[:, None] & dvm[None]

            A = np.where(mask2, s2, 0.0).sum(axis=2) + np.where(mask3, s3, 0.0).sum(axis=2)
        return A

    def _update_matched(self, sl: np.ndarray, msel: np.ndarray, dxy: np.ndarray,
                        dconf: np.ndarray, dvm: np.ndarray, ci: int, t: float):
        """One batched state update covering every matched (target, detection)."""
        cfg = self.cfg
        self._slot_last[sl] = np.maximum(self._slot_last[sl], t)
        vis = dvm[msel]  # (P, K)
        if not vis.any():
            return
        p_i, k_i = np.nonzero(vis)
        s_i = sl[p_i]
        m_i = msel[p_i]
        self._obs_xy[s_i, k_i, ci] = dxy[m_i, k_i]
        self._obs_t[s_i, k_i, ci] = t
        self._obs_conf[s_i, k_i, ci] = dconf[m_i, k_i]
        self._obs_ok[s_i, k_i, ci] = True

        # Per joint, gather this camera's fresh point plus the newest point
        # from every other camera, then drop anything past the staleness horizon.
        oxy = self._obs_xy[sl]  # (P, K, C, 2)
        ot = self._obs_t[sl]
        ook = self._obs_ok[sl]
        with np.errstate(all="ignore"):
            t_ref = np.where(ook, ot, -np.inf).max(axis=2)  # (P, K)
            age = t_ref[:, :, None] - ot  # (P, K, C)
            keep = ook & (age <= cfg.retire_after)
            nkeep = keep.sum(axis=2)
            solve = vis & (nkeep >= 2)
            if not solve.any():
                return

            x = oxy[..., 0, None]
            y = oxy[..., 1, None]
            r1 = x * self._P2 - self._P0  # (P, K, C, 4)
            r2 = y * self._P2 - self._P1
            if self.weighted:
                w = np.exp(-cfg.lambda_t * age)
                if cfg.confidence_weighting:
                    w = w * self._obs_conf[sl]
                n1 = np.sqrt(np.einsum("pkci,pkci->pkc", r1, r1))
                n2 = np.sqrt(np.einsum("pkci,pkci->pkc", r2, r2))
                w1 = np.where(keep, w / n1, 0.0)
                w2 = np.where(keep, w / n2, 0.0)
            else:
                w1 = w2 = keep.astype(float)
            R1 = r1 * w1[..., None]
            R2 = r2 * w2[..., None]
            AtA = R1.swapaxes(-1, -2) @ R1
            AtA += R2.swapaxes(-1, -2) @ R2

            _, vecs = np.linalg.eigh(AtA[solve])
            sol = vecs[:, :, 0]  # unit null directions
            ok = np.abs(sol[:, 3]) >= 1e-12
            pq, kq = np.nonzero(solve)
            pq, kq, sol = pq[ok], kq[ok], sol[ok]
            if pq.size == 0:
                return
            X = sol[:, :3] / sol[:, 3:]

        sq = sl[pq]
        tq = t_ref[pq, kq]
        self._xyz[sq, kq] = X
        self._xyz_t[sq, kq] = tq
        W = self._hist_t.shape[2]
        h = self._hist_n[sq, kq] % W
        self._hist_t[sq, kq, h] = tq
        self._hist_x[sq, kq, h] = X
        self._hist_n[sq, kq] += 1
        self._refresh_velocity(sq, kq)

        ages = np.where(keep, age, 0.0).sum(axis=2)
        spread = ages[pq, kq] / nkeep[pq, kq]
        self._dt_sum += float(spread.sum())
        self._dt_count += int(pq.size)

    def _refresh_velocity(self, sq: np.ndarray, kq: np.ndarray):
        W = self._hist_t.shape[2]
        ts = self._hist_t[sq, kq]  # (Q, W)
        xs = self._hist_x[sq, kq]  # (Q, W, 3)
        n = np.minimum(self._hist_n[sq, kq], W)
        m = np.arange(W)[None, :] < n[:, None]
        with np.errstate(all="ignore"):
            tm = np.where(m, ts, 0.0)
            tmean = tm.sum(axis=1) / n
            span = np.where(m, ts, -np.inf).max(axis=1) - np.where(m, ts, np.inf).min(axis=1)
            d = np.where(m, ts - tmean[:, None], 0.0)
            denom = (d * d).sum(axis=1)
            # sum of centered weights is zero over the window, so the position
            # mean drops out of the regression numerator
            num = (d[:, None, :] @ xs)[:, 0]
            valid = (n >= 2) & (span >= 1e-3) & (denom > 0)
            v = np.where(valid[:, None], num / denom[:, None], 0.0)
        self._vel[sq, kq] = v
        self._vel_ok[sq, kq] = valid

    def _initialize_targets(self) -> list[AssignmentRecord]:
        cfg = self.cfg
        items: list[Detection] = []
        for cid in sorted(self.pool):
            items.extend(self.pool[cid])
        if len(items) < cfg.min_views_init:
            return []
        ids = [d.camera_id for d in items]
        if len(set(ids)) < 2:
            return []
        a = epipolar_affinity_matrix(items, ids, self._ftable, cfg)
        part = partition_cycle_consistent(a, cfg.max_exact_partition)
        records: list[AssignmentRecord] = []
        consumed: set[int] = set()
        for cluster in part.clusters():
            if len(cluster) < cfg.min_views_init:
                continue
            tgt = self._build_target([items[i] for i in cluster])
            if tgt is None:
                continue
            for i in cluster:
                d = items[i]
                records.append(AssignmentRecord(d.camera_id, d.timestamp, d.index, tgt.id))
                consumed.add(i)
        if consumed:
            kept: dict[str, list[Detection]] = {cid: [] for cid in self.pool}
            for i, d in enumerate(items):
                if i not in consumed:
                    kept[d.camera_id].append(d)
            self.pool = kept
        return records

    def _build_target(self, members: list[Detection]) -> Target | None:
        cfg = self.cfg
        K = members[0].joints.shape[0]
        t_ref = max(d.timestamp for d in members)
        s = self._alloc_slot()
        solved = False
        vis = {id(d): d.valid_mask(cfg.min_joint_confidence) for d in members}
        for k in range(K):
            use = [d for d in members if vis[id(d)][k]]
            if len(use) < 2:
                continue
            obs = JointObservationSet(tuple(d.camera_id for d in use),
                                      [d.joints[k] for d in use],
                                      [d.timestamp for d in use],
                                      [d.confidences[k] for d in use])
            try:
                res = triangulate(obs, self.cameras)
            except (InsufficientViews, NearDegenerate):
                continue
            self._xyz[s, k] = res.point
            self._xyz_t[s, k] = t_ref
            solved = True
        if not solved:
            self._free.append(s)
            return None
        ks = np.flatnonzero(np.isfinite(self._xyz_t[s]))
        self._hist_t[s, ks, 0] = t_ref
        self._hist_x[s, ks, 0] = self._xyz[s, ks]
        self._hist_n[s, ks] = 1
        for d in members:
            ci = self._cam_idx[d.camera_id]
            v = vis[id(d)]
            self._obs_xy[s, v, ci] = d.joints[v]
            self._obs_t[s, v, ci] = d.timestamp
            self._obs_conf[s, v, ci] = d.confidences[v]
            self._obs_ok[s, v, ci] = True
        self._slot_last[s] = t_ref
        tgt = Target(self, self._next_id, s, t_ref)
        self._next_id += 1
        self.targets.append(tgt)
        self._rebuild_live()
        return tgt

    def _retire(self, now: float) -> list[int]:
        if not self.targets:
            return []
        lag = now - self._slot_last[self._live]
        if not (lag > self.cfg.retire_after).any():
            return []
        gone = []
        kept = []
        for tg, stale in zip(self.targets, lag > self.cfg.retire_after):
            if stale:
                gone.append(tg.id)
                self._free.append(tg.slot)
            else:
                kept.append(tg)
        self.targets = kept
        self._rebuild_live()
        return gone
