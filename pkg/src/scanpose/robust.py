"""Line triangulation, chirality, model scoring, and the RANSAC driver."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    AllIterationsFailed,
    NotEnoughLines,
    ScanposeError,
    Unnormalizable,
)
from .geometry import E2, CameraPose, ReducedCamera, rotation_to_e2
from .solvers import MIN_LINES, SOLVERS, SolverOutput


@dataclass
class RansacConfig:
    iterations: int = 1000
    inlier_threshold: float = 1.0     # pixels
    focal: float = 1000.0             # pixels
    seed: int = 0
    solver_id: str = "e35"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.inlier_threshold <= 0:
            raise ValueError("inlier threshold must be positive")


@dataclass
class CandidateModel:
    """One scoring candidate: scanline camera matrices plus, for metric
    solvers, the poses and the line direction that give true ray depths."""

    cameras: list
    poses: list | None = None
    direction: np.ndarray | None = None


@dataclass
class ScoredModel:
    cameras: list
    score: float
    inlier_mask: np.ndarray
    triangulated: list
    poses: list = field(default_factory=list)
    residuals_px: np.ndarray | None = None
    iteration: int = -1


def _camera_matrix(cam) -> np.ndarray:
    return cam.a if isinstance(cam, ReducedCamera) else np.asarray(cam, float)


def _obs_u(obs) -> np.ndarray:
    from .geometry import reduced_x

    if hasattr(obs, "u"):
        return obs.u
    if hasattr(obs, "x"):
        return np.array([reduced_x(obs.x, obs.scanline_y), 1.0])
    return np.asarray(obs, dtype=float)


def triangulate_line(cameras, us):
    """Plane point of a line from >= 2 scanline cameras.

    Stacks normalized rows u_i^T A_i and takes the smallest right singular
    vector; returns (L_h with third component 1, per-camera residuals,
    total squared residual).  The residual of camera i is
    |p_2/p_1 + x'_i| with p = A_i L_h (infinite when a guard division is
    too small)."""
    mats = [_camera_matrix(c) for c in cameras]
    uvecs = [_obs_u(u) for u in us]
    if len(mats) < 2:
        raise ValueError("need at least two cameras")
    rows = np.array([u @ a for u, a in zip(uvecs, mats)])
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    norms[norms < 1e-300] = 1.0
    _, _, vt = np.linalg.svd(rows / norms)
    lh = vt[-1]
    if abs(lh[2]) < 1e-12:
        raise Unnormalizable("triangulated point at infinity")
    lh = lh / lh[2]
    residuals = np.empty(len(mats))
    for i, (a, u) in enumerate(zip(mats, uvecs)):
        p = a @ lh
        if abs(p[0]) < 1e-12 or abs(u[1]) < 1e-12:
            residuals[i] = np.inf
            continue
        residuals[i] = abs(p[1] / p[0] + u[0] / u[1])
    finite = residuals[np.isfinite(residuals)]
    e_total = float((finite ** 2).sum()) if finite.size else np.inf
    return lh, residuals, e_total


def ray_depth(pose: CameraPose, direction: np.ndarray, l0: np.ndarray,
              x: float, y: float) -> float:
    """Depth along the back-projected ray of observation (x, y) to its meet
    with the line (l0, direction); positive iff the meet is in front."""
    p_world = pose.rotation.T @ np.array([x, y, 1.0])
    axis = np.cross(direction, p_world)
    denom = axis @ axis
    if denom < 1e-18:
        return np.inf
    w = np.cross(direction, l0 - pose.center)
    return float(w @ axis / denom)


def _world_point(lh: np.ndarray, direction: np.ndarray | None) -> np.ndarray:
    """3D base point of a triangulated plane point, in the world frame of
    the model's poses."""
    p = np.array([lh[0], 0.0, lh[1]])
    if direction is None:
        return p
    return rotation_to_e2(direction) @ p


def _in_front(model: CandidateModel, mats, lh, observations_col) -> bool:
    if model.poses is not None:
        direction = model.direction if model.direction is not None else E2
        l0 = _world_point(lh, None if model.direction is None else direction)
        for pose, obs in zip(model.poses, observations_col):
            if ray_depth(pose, direction, l0, obs.x, obs.scanline_y) <= 0:
                return False
        return True
    # projective candidates: sign-consistency of the reduced scale factor
    for a, obs in zip(mats, observations_col):
        u = _obs_u(obs)
        up = np.array([u[1], -u[0]])
        if (a @ lh) @ up <= 0:
            return False
    return True


def _as_model(model) -> CandidateModel:
    if isinstance(model, CandidateModel):
        return model
    return CandidateModel(cameras=list(model))


def score_model(model, observations, config: RansacConfig) -> ScoredModel:
    """Truncated quadratic score over all lines.

    A line is an inlier when it triangulates in front of every camera and
    its worst per-camera reprojection error, converted to pixels by the
    focal length, is below the threshold; it then contributes
    (threshold - eps)^2."""
    model = _as_model(model)
    mats = [_camera_matrix(c) for c in model.cameras]
    m = len(mats)
    n = len(observations[0])
    thr = config.inlier_threshold
    mask = np.zeros(n, dtype=bool)
    eps_px = np.full(n, np.inf)
    tri = [None] * n
    score = 0.0
    for j in range(n):
        col = [observations[i][j] for i in range(m)]
        try:
            lh, residuals, _ = triangulate_line(mats, col)
        except Unnormalizable:
            continue
        tri[j] = lh
        eps = float(np.max(residuals)) * config.focal
        eps_px[j] = eps
        if eps < thr and _in_front(model, mats, lh, col):
            mask[j] = True
            score += (thr - eps) ** 2
    return ScoredModel(cameras=mats, score=score, inlier_mask=mask,
                       triangulated=tri,
                       poses=list(model.poses) if model.poses else [],
                       residuals_px=eps_px)


def candidate_models(output: SolverOutput) -> list[CandidateModel]:
    """Scoring candidates of a solver output (canonical camera triplets for
    the projective solver, poses with directions for the metric ones)."""
    models = []
    for k, mats in enumerate(output.camera_sets):
        poses = output.poses[k] if output.poses else None
        direction = None
        if poses is not None:
            direction = (output.directions[k] if output.directions
                         else E2.copy())
        models.append(CandidateModel(cameras=list(mats), poses=poses,
                                     direction=direction))
    return models


def chirality_filter(candidates: SolverOutput, observations) -> SolverOutput:
    """Keep candidates whose triangulated lines all lie in front of every
    camera; fall back to the best in-front count when none survive."""
    n = len(observations[0])
    counts = []
    for model in candidate_models(candidates):
        mats = [_camera_matrix(c) for c in model.cameras]
        cnt = 0
        for j in range(n):
            col = [observations[i][j] for i in range(len(mats))]
            try:
                lh, _, _ = triangulate_line(mats, col)
            except Unnormalizable:
                continue
            if _in_front(model, mats, lh, col):
                cnt += 1
        counts.append(cnt)
    counts = np.asarray(counts)
    keep = np.flatnonzero(counts == n)
    clean = keep.size > 0
    if not clean:
        keep = np.array([int(np.argmax(counts))])
    return SolverOutput(
        tensor=candidates.tensor,
        poses=[candidates.poses[k] for k in keep] if candidates.poses else [],
        camera_sets=[candidates.camera_sets[k] for k in keep],
        canonical=([candidates.canonical[k] for k in keep]
                   if candidates.canonical else []),
        directions=([candidates.directions[k] for k in keep]
                    if candidates.directions else []),
        solver_id=candidates.solver_id,
        chirality_clean=clean,
    )


def _triangulate_batch(mats, observations):
    """Batched triangulation of every line: returns (lh (n,3), eps (n,))
    with eps the worst per-camera residual; lines at infinity get eps=inf."""
    m = len(mats)
    n = len(observations[0])
    us = np.empty((n, m, 2))
    for i in range(m):
        for j in range(n):
            us[j, i] = _obs_u(observations[i][j])
    amats = np.stack(mats)                        # (m, 2, 3)
    rows = np.einsum("jiu,iuv->jiv", us, amats)   # (n, m, 3)
    norms = np.linalg.norm(rows, axis=2, keepdims=True)
    norms[norms < 1e-300] = 1.0
    _, _, vt = np.linalg.svd(rows / norms)
    lh = vt[:, -1, :]                             # (n, 3)
    finite = np.abs(lh[:, 2]) > 1e-12
    lh = np.where(finite[:, None], lh / np.where(
        finite, lh[:, 2], 1.0)[:, None], lh)
    p = np.einsum("iuv,jv->jiu", amats, lh)       # (n, m, 2)
    bad = (np.abs(p[:, :, 0]) < 1e-12) | (np.abs(us[:, :, 1]) < 1e-12)
    with np.errstate(divide="ignore", invalid="ignore"):
        res = np.abs(p[:, :, 1] / p[:, :, 0] + us[:, :, 0] / us[:, :, 1])
    res[bad] = np.inf
    eps = res.max(axis=1)
    eps[~finite] = np.inf
    return lh, eps, us, finite


def _depths_batch(model: CandidateModel, lh, us, observations) -> np.ndarray:
    """(n, m) ray depths (metric models) or reduced scale factors
    (projective models); positive means in front."""
    n = lh.shape[0]
    m = len(model.cameras)
    out = np.empty((n, m))
    if model.poses is not None:
        direction = model.direction if model.direction is not None else E2
        base = np.stack([lh[:, 0], np.zeros(n), lh[:, 1]], axis=1)
        if model.direction is not None:
            base = base @ rotation_to_e2(direction).T
        for i, pose in enumerate(model.poses):
            xs = np.array([observations[i][j].x for j in range(n)])
            y = observations[i][0].scanline_y
            p_world = (pose.rotation.T
                       @ np.stack([xs, np.full(n, y), np.ones(n)])).T
            axis = np.cross(np.broadcast_to(direction, (n, 3)), p_world)
            w = np.cross(np.broadcast_to(direction, (n, 3)),
                         base - pose.center)
            denom = np.einsum("na,na->n", axis, axis)
            denom[denom < 1e-18] = np.inf
            out[:, i] = np.einsum("na,na->n", w, axis) / denom
        return out
    for i, cam in enumerate(model.cameras):
        a = _camera_matrix(cam)
        p = lh @ a.T                               # (n, 2)
        up = np.stack([us[:, i, 1], -us[:, i, 0]], axis=1)
        out[:, i] = np.einsum("nu,nu->n", p, up)
    return out


def score_candidates(output: SolverOutput, observations,
                     config: RansacConfig) -> list[ScoredModel]:
    """Score every candidate of a solver output, sharing triangulations
    between candidates whose cameras differ only by per-camera sign (the
    sign branches of the gravity solvers)."""
    models = candidate_models(output)
    n = len(observations[0])
    thr = config.inlier_threshold
    groups: dict[bytes, list[int]] = {}
    for k, model in enumerate(models):
        sig = []
        for c in model.cameras:
            a = _camera_matrix(c)
            a = a / np.linalg.norm(a)
            flat = a.ravel()
            lead = flat[np.argmax(np.abs(flat) > 1e-12)]
            sig.append(np.round(a if lead >= 0 else -a, 9).tobytes())
        groups.setdefault(b"".join(sig), []).append(k)
    out: list[ScoredModel | None] = [None] * len(models)
    for members in groups.values():
        rep = models[members[0]]
        mats = [_camera_matrix(c) for c in rep.cameras]
        lh, eps, us, finite = _triangulate_batch(mats, observations)
        eps_px = eps * config.focal
        below = finite & (eps_px < thr)
        tri = [lh[j] if finite[j] else None for j in range(n)]
        for k in members:
            model = models[k]
            mats_k = [_camera_matrix(c) for c in model.cameras]
            depths = _depths_batch(model, lh, us, observations)
            mask = below & (depths > 0).all(axis=1)
            score = float(((thr - eps_px[mask]) ** 2).sum())
            out[k] = ScoredModel(
                cameras=mats_k, score=score, inlier_mask=mask,
                triangulated=list(tri),
                poses=list(model.poses) if model.poses else [],
                residuals_px=eps_px.copy())
    return [m for m in out if m is not None]


def ransac(observations, config: RansacConfig) -> ScoredModel:
    """Fixed-iteration RANSAC over minimal line subsets.

    Each iteration draws a minimal sample without replacement, runs the
    configured solver, scores every candidate on all lines, and keeps the
    global best (earliest iteration wins ties).  No local optimization is
    applied."""
    solver = SOLVERS[config.solver_id]
    sample_size = MIN_LINES[config.solver_id]
    n = len(observations[0])
    if n < sample_size:
        raise NotEnoughLines(f"{n} lines < minimal sample {sample_size}")
    best: ScoredModel | None = None
    for it in range(config.iterations):
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, it)))
        subset = rng.choice(n, size=sample_size, replace=False)
        sub = [[row[j] for j in subset] for row in observations]
        try:
            output = solver(sub)
        except ScanposeError:
            continue
        for scored in score_candidates(output, observations, config):
            scored.iteration = it
            if best is None or scored.score > best.score:
                best = scored
    if best is None:
        raise AllIterationsFailed("every RANSAC draw failed to solve")
    return best
