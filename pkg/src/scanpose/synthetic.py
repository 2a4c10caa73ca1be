"""Random scene generation, noise injection, degeneracy predicates, and the
noise-sweep benchmark harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensors
from .exceptions import ExhaustedRetries, NoIntersection, ScanposeError
from .geometry import (
    E2,
    CameraPose,
    Line3D,
    ScanlineObservation,
    canonicalize_solution,
    gravity_factorization,
    pose_errors,
    project_line_to_scanline,
    random_rotation,
    reduced_camera_matrix,
    rotation_exp,
    rotation_to_e2,
    scanline_rotation,
    tensor_error,
)
from .solvers import MIN_CAMERAS, MIN_LINES, SOLVERS

SETTING_OF_SOLVER = {"b37": "B", "e35": "E", "e44": "E", "d37": "D"}


@dataclass
class SceneConfig:
    setting: str
    cameras_m: int
    lines_n: int
    seed: int = 0
    depth_offset: float = 5.0

    def __post_init__(self):
        self.setting = self.setting.upper()
        if self.setting not in ("B", "D", "E"):
            raise ValueError("setting must be one of B, D, E")


@dataclass
class NoiseConfig:
    sigma_p: float = 0.0       # pixels
    focal: float = 1000.0      # pixels
    sigma_v: float = 0.0       # radians

    def __post_init__(self):
        if self.sigma_p < 0 or self.focal <= 0 or self.sigma_v < 0:
            raise ValueError("noise parameters must be nonnegative")


@dataclass
class SyntheticInstance:
    gt_poses: list[CameraPose]
    gt_lines: list[Line3D]
    observations: list[list[ScanlineObservation]]
    gt_tensor: np.ndarray | None = None
    setting: str = "E"
    config: SceneConfig | None = None


def _sample_direction(setting: str, rng: np.random.Generator) -> np.ndarray:
    if setting == "D":
        d = np.array([rng.standard_normal(), 1.0, rng.standard_normal()])
        return d / np.linalg.norm(d)
    return E2.copy()


def sample_scene(config: SceneConfig) -> SyntheticInstance:
    """Random scene and its noise-free scanline observations.

    Scanlines are U[-1, 1], rotations uniform on SO(3), centers standard
    Gaussian, line base points [mu_x, 0, mu_z + depth_offset].  Retries the
    whole draw (up to 100 times) when a line misses a scanline or the scene
    is degenerate for the setting's solvers.
    """
    rng = np.random.default_rng(config.seed)
    m, n = config.cameras_m, config.lines_n
    solver_id = {"B": "b37", "D": "d37", "E": "e35"}[config.setting]
    for _ in range(100):
        ys = rng.uniform(-1.0, 1.0, m)
        rots = [random_rotation(rng) for _ in range(m)]
        cents = [rng.standard_normal(3) for _ in range(m)]
        direction = _sample_direction(config.setting, rng)
        lines = [
            Line3D(
                point_l0=np.array([rng.standard_normal(), 0.0,
                                   rng.standard_normal() + config.depth_offset]),
                direction_ld=direction.copy(),
            )
            for _ in range(n)
        ]
        poses = [CameraPose(rotation=r, center=c, scanline_y=float(y))
                 for r, c, y in zip(rots, cents, ys)]
        try:
            obs = [
                [
                    ScanlineObservation(
                        camera_index=i,
                        line_index=j,
                        x=project_line_to_scanline(poses[i], lines[j], ys[i]),
                        scanline_y=float(ys[i]),
                        gravity=rots[i] @ E2,
                    )
                    for j in range(n)
                ]
                for i in range(m)
            ]
        except NoIntersection:
            continue
        inst = SyntheticInstance(
            gt_poses=poses, gt_lines=lines, observations=obs,
            setting=config.setting, config=config)
        degenerate, _reason = is_degenerate_scene(inst, solver_id)
        if degenerate:
            continue
        inst.gt_tensor = ground_truth_tensor(inst)
        return inst
    raise ExhaustedRetries("100 scene draws were degenerate")


def sample_front_scene(config: SceneConfig) -> SyntheticInstance:
    """Random scene whose cameras face the line cluster, so every line
    triangulates in front of every camera (the physical capture geometry
    needed by chirality-based scoring)."""
    rng = np.random.default_rng(config.seed)
    m, n = config.cameras_m, config.lines_n
    solver_id = {"B": "b37", "D": "d37", "E": "e35"}[config.setting]
    for _ in range(100):
        ys = rng.uniform(-1.0, 1.0, m)
        direction = _sample_direction(config.setting, rng)
        lines = [
            Line3D(
                point_l0=np.array([rng.standard_normal(), 0.0,
                                   rng.standard_normal() + config.depth_offset]),
                direction_ld=direction.copy(),
            )
            for _ in range(n)
        ]
        target = np.array([0.0, 0.0, config.depth_offset])
        rots, cents = [], []
        for _i in range(m):
            c = rng.standard_normal(3) * 0.8
            fwd = target + 0.5 * rng.standard_normal(3) - c
            fwd = fwd / np.linalg.norm(fwd)
            right = np.cross(E2, fwd)
            if np.linalg.norm(right) < 1e-6:
                right = np.cross(np.array([1.0, 0, 0]), fwd)
            right /= np.linalg.norm(right)
            up = np.cross(fwd, right)
            rot = np.vstack([right, up, fwd])
            wobble = rng.standard_normal(3) * 0.15
            rots.append(rotation_exp(wobble) @ rot)
            cents.append(c)
        poses = [CameraPose(rotation=r, center=c, scanline_y=float(y))
                 for r, c, y in zip(rots, cents, ys)]
        try:
            obs = [
                [
                    ScanlineObservation(
                        camera_index=i,
                        line_index=j,
                        x=project_line_to_scanline(poses[i], lines[j], ys[i]),
                        scanline_y=float(ys[i]),
                        gravity=rots[i] @ E2,
                    )
                    for j in range(n)
                ]
                for i in range(m)
            ]
        except NoIntersection:
            continue
        front = True
        for i in range(m):
            for j in range(n):
                p_world = rots[i].T @ np.array([obs[i][j].x, ys[i], 1.0])
                axis = np.cross(direction, p_world)
                w = np.cross(direction, lines[j].point_l0 - cents[i])
                if w @ axis <= 1e-9 * (axis @ axis):
                    front = False
                    break
            if not front:
                break
        if not front:
            continue
        inst = SyntheticInstance(
            gt_poses=poses, gt_lines=lines, observations=obs,
            setting=config.setting, config=config)
        degenerate, _reason = is_degenerate_scene(inst, solver_id)
        if degenerate:
            continue
        inst.gt_tensor = ground_truth_tensor(inst)
        return inst
    raise ExhaustedRetries("100 front-facing scene draws failed")


def ground_truth_tensor(inst: SyntheticInstance) -> np.ndarray | None:
    """Tensor of the ground-truth scene in the frame the matching solver
    estimates (trifocal for B/D, calibrated trifocal for E with 3 cameras,
    dual quadrifocal over the line footprints for E with 4)."""
    m = len(inst.gt_poses)
    if inst.setting == "B" and m == 3:
        mats = [reduced_camera_matrix(p) for p in inst.gt_poses]
        return tensors.trifocal_from_cameras(*mats).t
    if inst.setting == "E" and m == 3:
        mats = []
        for p in inst.gt_poses:
            _f, a_a = gravity_factorization(p.rotation @ E2, p.scanline_y)
            mats.append(np.linalg.solve(a_a, reduced_camera_matrix(p)))
        return tensors.trifocal_from_cameras(*mats).t
    if inst.setting == "E" and m == 4:
        pts = [np.array([ln.point_l0[0], ln.point_l0[2], 1.0])
               for ln in inst.gt_lines[:4]]
        return tensors.dual_quadrifocal_from_points(pts).t
    if inst.setting == "D" and m == 3:
        rd = rotation_to_e2(inst.gt_lines[0].direction_ld)
        mats = []
        for p in inst.gt_poses:
            rdi = scanline_rotation(p.scanline_y) @ p.rotation @ rd
            cp = rd.T @ p.center
            t = -rdi @ np.array([cp[2], 0.0, -cp[0]])
            mats.append(np.array([[-rdi[0, 2], rdi[0, 0], t[0]],
                                  [-rdi[2, 2], rdi[2, 0], t[2]]]))
        return tensors.trifocal_from_cameras(*mats).t
    return None


def add_noise(inst: SyntheticInstance, noise: NoiseConfig,
              seed: int = 0) -> SyntheticInstance:
    """Perturb observations: x by N(0, (sigma_p/focal)^2) and each gravity
    vector by a rotation of exactly sigma_v radians about a random axis
    orthogonal to it.  Ground-truth fields are shared, not copied."""
    rng = np.random.default_rng(seed)
    sx = noise.sigma_p / noise.focal
    new_obs = []
    for row in inst.observations:
        grav = row[0].gravity
        if grav is not None and noise.sigma_v > 0:
            # random rotation of angle exactly sigma_v about a uniformly
            # random axis; the direction itself moves by at most sigma_v
            axis = rng.standard_normal(3)
            axis /= np.linalg.norm(axis)
            grav = rotation_exp(noise.sigma_v * axis) @ grav
        new_row = [
            ScanlineObservation(
                camera_index=o.camera_index,
                line_index=o.line_index,
                x=o.x + (rng.standard_normal() * sx if sx > 0 else 0.0),
                scanline_y=o.scanline_y,
                gravity=None if o.gravity is None else grav.copy(),
            )
            for o in row
        ]
        new_obs.append(new_row)
    return SyntheticInstance(
        gt_poses=inst.gt_poses, gt_lines=inst.gt_lines, observations=new_obs,
        gt_tensor=inst.gt_tensor, setting=inst.setting, config=inst.config)


# ---------------------------------------------------------------------------
# Degeneracy predicates
# ---------------------------------------------------------------------------

def _footprints(lines: list[Line3D]) -> np.ndarray:
    """2D coordinates of the lines in the plane orthogonal to their shared
    direction."""
    d = lines[0].direction_ld
    ref = E2 if abs(d[1]) < 0.9 else np.array([1.0, 0, 0])
    b1 = np.cross(d, ref)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(d, b1)
    return np.array([[ln.point_l0 @ b1, ln.point_l0 @ b2] for ln in lines])


def _max_collinear(points: np.ndarray, tol: float = 1e-9) -> int:
    """Size of the largest collinear subset of 2D points."""
    n = len(points)
    if n <= 2:
        return n
    best = 2
    scale = max(np.abs(points).max(), 1.0)
    for i in range(n):
        for j in range(i + 1, n):
            d = points[j] - points[i]
            nd = np.linalg.norm(d)
            if nd < tol * scale:
                continue
            d = d / nd
            cnt = 2
            for k in range(n):
                if k in (i, j):
                    continue
                v = points[k] - points[i]
                if abs(v[0] * d[1] - v[1] * d[0]) < tol * scale:
                    cnt += 1
            best = max(best, cnt)
    return best


def is_degenerate_scene(inst: SyntheticInstance,
                        solver_id: str) -> tuple[bool, str]:
    """Degeneracy per the solver family: coincident centers always; all
    lines coplanar for the E solvers; five or more coplanar lines for the
    b37/d37 solvers.  Collinear centers are explicitly fine."""
    cents = np.array([p.center for p in inst.gt_poses])
    for i in range(len(cents)):
        for j in range(i + 1, len(cents)):
            if np.linalg.norm(cents[i] - cents[j]) < 1e-9:
                return True, "coincident camera centers"
    pts = _footprints(inst.gt_lines)
    k = _max_collinear(pts)
    if solver_id in ("e35", "e44"):
        if k == len(inst.gt_lines):
            return True, "all lines coplanar"
    else:
        if k >= 5:
            return True, "five or more lines coplanar"
    return False, ""


# ---------------------------------------------------------------------------
# Scoring and the benchmark harness
# ---------------------------------------------------------------------------

def best_candidate_errors(output, inst: SyntheticInstance):
    """Errors of the candidate closest to ground truth (after mapping both
    into the canonical frame).  Returns (rot_err, trans_err, tensor_err);
    rotation and translation are NaN for the projective b37 output."""
    terr = (tensor_error(output.tensor.t, inst.gt_tensor)
            if inst.gt_tensor is not None else np.nan)
    if not output.poses:
        return np.nan, np.nan, terr
    gt_canon, _ = canonicalize_solution(inst.gt_poses, inst.gt_lines)
    directions = output.directions
    best = (np.inf, np.nan, np.nan)
    for idx, tuple_poses in enumerate(output.poses):
        d = directions[idx] if directions else E2
        try:
            cand, _ = canonicalize_solution(
                tuple_poses, [Line3D(point_l0=np.zeros(3), direction_ld=d)])
            rep = pose_errors(cand, gt_canon)
        except ScanposeError:
            continue
        key = max(rep.rot_err, rep.trans_err)
        if key < best[0]:
            best = (key, rep.rot_err, rep.trans_err)
    return best[1], best[2], terr


def solver_scene_config(solver_id: str, seed: int) -> SceneConfig:
    return SceneConfig(
        setting=SETTING_OF_SOLVER[solver_id],
        cameras_m=MIN_CAMERAS[solver_id],
        lines_n=MIN_LINES[solver_id],
        seed=seed,
    )


def run_trial(solver_id: str, seed: int, noise: NoiseConfig | None = None,
              noise_seed: int | None = None):
    """One generate/perturb/solve/score cycle.

    Returns (rot_err, trans_err, tensor_err, n_candidates) or None when the
    solver reports a failure (rank deficiency, complex roots, no real
    solution, or a gravity draw inside the singular cone)."""
    try:
        inst = sample_scene(solver_scene_config(solver_id, seed))
        if noise is not None and (noise.sigma_p > 0 or noise.sigma_v > 0):
            inst = add_noise(inst, noise,
                             seed if noise_seed is None else noise_seed)
        output = SOLVERS[solver_id](inst.observations)
    except ScanposeError:
        return None
    rot, trans, terr = best_candidate_errors(output, inst)
    count = len(output.poses) if output.poses else len(output.canonical)
    return rot, trans, terr, count


@dataclass
class BenchmarkCell:
    solver_id: str
    sigma_p: float
    sigma_v: float
    trials: int
    median_rot: float
    median_trans: float
    median_tensor: float
    mean_rot: float
    p99_rot: float
    fail_rate: float

    def row(self) -> dict:
        return {
            "setting": SETTING_OF_SOLVER[self.solver_id],
            "solver": self.solver_id,
            "sigma_p": self.sigma_p,
            "sigma_v": self.sigma_v,
            "trials": self.trials,
            "median_rot": self.median_rot,
            "median_trans": self.median_trans,
            "median_tensor": self.median_tensor,
            "p99_rot": self.p99_rot,
            "fail_rate": self.fail_rate,
        }


CSV_COLUMNS = ["setting", "solver", "sigma_p", "sigma_v", "trials",
               "median_rot", "median_trans", "median_tensor", "p99_rot",
               "fail_rate"]


def run_benchmark(solver_id: str, sigma_ps, sigma_vs, trials: int,
                  seed: int = 0, focal: float = 1000.0,
                  progress=None) -> list[BenchmarkCell]:
    """Noise-sweep benchmark: one cell per (sigma_p, sigma_v) pair."""
    cells = []
    for ci, (sp, sv) in enumerate(
            [(sp, sv) for sp in sigma_ps for sv in sigma_vs]):
        noise = NoiseConfig(sigma_p=sp, focal=focal, sigma_v=sv)
        rots, transs, terrs = [], [], []
        fails = 0
        for t in range(trials):
            ss = np.random.SeedSequence((seed, ci, t))
            child = ss.generate_state(2)
            res = run_trial(solver_id, int(child[0]), noise, int(child[1]))
            if res is None:
                fails += 1
                continue
            rot, trans, terr, _ = res
            rots.append(rot)
            transs.append(trans)
            terrs.append(terr)
            if progress is not None:
                progress(ci, t)
        def _agg(v, f):
            arr = np.asarray(v, dtype=float)
            arr = arr[~np.isnan(arr)]
            return float(f(arr)) if arr.size else np.nan
        cells.append(BenchmarkCell(
            solver_id=solver_id, sigma_p=sp, sigma_v=sv, trials=trials,
            median_rot=_agg(rots, np.median),
            median_trans=_agg(transs, np.median),
            median_tensor=_agg(terrs, np.median),
            mean_rot=_agg(rots, np.mean),
            p99_rot=_agg(rots, lambda a: np.quantile(a, 0.99)),
            fail_rate=fails / trials,
        ))
    return cells


def write_benchmark_csv(cells: list[BenchmarkCell], path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for cell in cells:
            writer.writerow(cell.row())
