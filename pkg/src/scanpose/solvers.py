"""Minimal solvers for single-scanline relative pose.

Four solvers, named by (setting, cameras, lines):

- b37: parallel lines, 3 cameras, 7 lines; projective output (tensor plus
  canonical camera triplets, no metric poses).
- e35: vertical lines with gravity, 3 cameras, 5 lines; up to 16 poses.
- e44: vertical lines with gravity, 4 cameras, 4 lines; up to 32 poses.
- d37: parallel lines of unknown direction with gravity, 3 cameras,
  7 lines; tensor decomposed by a seeded multi-start damped Newton search.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensors
from .exceptions import GravityMissing, NoRealSolution, SingularBlock
from .geometry import (
    CameraPose,
    ReducedCamera,
    RotationFactors,
    gravity_factorization,
    quat_to_rot,
    reduced_camera_matrix,
    reduced_x,
    rot_y,
    rotation_to_e2,
    scanline_rotation,
)

MIN_LINES = {"b37": 7, "e35": 5, "e44": 4, "d37": 7}
MIN_CAMERAS = {"b37": 3, "e35": 3, "e44": 4, "d37": 3}


@dataclass
class SolverOutput:
    """Result of one minimal solve.

    poses holds one entry per pose candidate (each a list of m CameraPose);
    camera_sets holds the matching 2x3 scanline camera matrices used for
    triangulation and scoring.  b37 leaves poses empty and reports the
    canonical triplets instead.
    """

    tensor: object
    poses: list = field(default_factory=list)
    camera_sets: list = field(default_factory=list)
    canonical: list = field(default_factory=list)
    directions: list = field(default_factory=list)
    solver_id: str = ""
    chirality_clean: bool = True


def _scaled_trifocal_estimate(us_by_line) -> "tensors.Tensor222":
    """Trifocal DLT with per-camera coordinate scaling.

    Balancing each camera's flattened coordinate to unit RMS before building
    the monomial rows conditions the system under pixel noise; the tensor is
    mapped back to the unscaled convention afterwards.
    """
    n = len(us_by_line)
    xs = np.array([[us_by_line[j][i][0] for j in range(n)] for i in range(3)])
    scales = np.sqrt((xs ** 2).mean(axis=1))
    scales = np.maximum(scales, 1e-6)
    scaled = [[np.array([us_by_line[j][i][0] / scales[i], 1.0])
               for i in range(3)] for j in range(n)]
    t_scaled = tensors.estimate_trifocal_dlt(
        tensors.build_trifocal_system(scaled))
    back = t_scaled.t.copy()
    for axis, s in enumerate(scales):
        shape = [1, 1, 1]
        shape[axis] = 2
        back = back / np.array([s, 1.0]).reshape(shape)
    return tensors.Tensor222(t=back)


def _grid_shape(observations) -> tuple[int, int]:
    m = len(observations)
    n = len(observations[0])
    if any(len(row) != n for row in observations):
        raise ValueError("observation grid must be rectangular")
    return m, n


def _flattened_u(obs) -> np.ndarray:
    return np.array([reduced_x(obs.x, obs.scanline_y), 1.0])


def _require_gravity(observations) -> None:
    for row in observations:
        for obs in row:
            if obs.gravity is None:
                raise GravityMissing(
                    f"camera {obs.camera_index} lacks a gravity direction")


# ---------------------------------------------------------------------------
# (B, 3, 7): parallel lines, projective
# ---------------------------------------------------------------------------

def solve_b37(observations) -> SolverOutput:
    """Estimate the trifocal tensor of 3 scanline cameras from >= 7 parallel
    lines and decompose it into canonical camera triplets."""
    m, n = _grid_shape(observations)
    if m != 3 or n < 7:
        raise ValueError("b37 needs 3 cameras and at least 7 lines")
    us = [[_flattened_u(observations[i][j]) for i in range(3)]
          for j in range(n)]
    tensor = _scaled_trifocal_estimate(us)
    tensor.provenance = "b37"
    triplets = tensors.decompose_trifocal_canonical(tensor)
    return SolverOutput(
        tensor=tensor,
        canonical=triplets,
        camera_sets=[t.cameras() for t in triplets],
        solver_id="b37",
    )


# ---------------------------------------------------------------------------
# (E, 3, 5) and (E, 4, 4): vertical lines, gravity
# ---------------------------------------------------------------------------

def recover_pose_from_calibrated(
    a_prime: np.ndarray,
    factors: RotationFactors,
    r_dprime_choice: bool,
    scanline_y: float = 0.0,
) -> CameraPose:
    """Metric pose from a calibrated 2x3 camera and the gravity factors.

    The left 2x2 block determines the unknown y-axis rotation up to sign;
    `r_dprime_choice` selects the branch.  The center is read from the third
    column (its y-component is unobservable and set to zero).
    """
    a_prime = a_prime.a if isinstance(a_prime, ReducedCamera) else a_prime
    block = a_prime[:, :2]
    rho = np.hypot(block[0, 0], block[0, 1])
    if rho < 1e-12 or abs(np.linalg.det(block)) < 1e-12:
        raise SingularBlock("left 2x2 block not invertible")
    c = block[0, 0] / rho
    s = block[0, 1] / rho
    if r_dprime_choice:
        c, s = -c, -s
    # block ~ [[c, s], [-s, c]] is the y-rotation [[c,0,s],[0,1,0],[-s,0,c]]
    r_dprime = np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])
    rotation = factors.r0.T @ factors.ra @ r_dprime
    sol = np.linalg.solve(block, a_prime[:, 2])
    center = np.array([-sol[0], 0.0, -sol[1]])
    return CameraPose(rotation=rotation, center=center, scanline_y=scanline_y)


def _gravity_setup(observations):
    """Per-camera factors, A_a matrices, and u'' grids."""
    m, n = _grid_shape(observations)
    _require_gravity(observations)
    factors, a_as = [], []
    for i in range(m):
        f, a_a = gravity_factorization(
            observations[i][0].gravity, observations[i][0].scanline_y)
        factors.append(f)
        a_as.append(a_a)
    udd = [[a_as[i].T @ _flattened_u(observations[i][j]) for j in range(n)]
           for i in range(m)]
    return factors, a_as, udd


def _enumerate_sign_poses(cams, factors, ys):
    """All 2^m sign-branch pose tuples for each decomposed camera set.

    Scoring cameras are rebuilt from each pose so that their sign is the
    deterministic pose composition (chirality needs a fixed sign).
    """
    import itertools

    m = len(cams[0])
    poses, camera_sets = [], []
    for cam_set in cams:
        for signs in itertools.product((False, True), repeat=m):
            tuple_poses = [
                recover_pose_from_calibrated(cam_set[i], factors[i], signs[i],
                                             scanline_y=ys[i])
                for i in range(m)
            ]
            poses.append(tuple_poses)
            camera_sets.append([reduced_camera_matrix(p) for p in tuple_poses])
    return poses, camera_sets


def solve_e35(observations) -> SolverOutput:
    """Vertical lines and known gravity, 3 cameras, >= 5 lines."""
    m, n = _grid_shape(observations)
    if m != 3 or n < 5:
        raise ValueError("e35 needs 3 cameras and at least 5 lines")
    factors, a_as, udd = _gravity_setup(observations)
    grid = [[udd[i][j] for i in range(3)] for j in range(n)]
    constraints = tensors.derive_calibrated_constraints(3)
    tensor = tensors.estimate_calibrated_trifocal(grid, constraints)
    tensor.provenance = "e35"
    cams = tensors.decompose_calibrated_trifocal(tensor)
    ys = [observations[i][0].scanline_y for i in range(3)]
    poses, camera_sets = _enumerate_sign_poses(cams, factors, ys)
    return SolverOutput(tensor=tensor, poses=poses, camera_sets=camera_sets,
                        solver_id="e35")


def solve_e44(observations) -> SolverOutput:
    """Vertical lines and known gravity, 4 cameras, >= 4 lines."""
    m, n = _grid_shape(observations)
    if m != 4 or n < 4:
        raise ValueError("e44 needs 4 cameras and at least 4 lines")
    factors, a_as, udd = _gravity_setup(observations)
    constraints = tensors.derive_calibrated_constraints(4)
    tensor = tensors.estimate_dual_quadrifocal(udd, constraints)
    tensor.provenance = "e44"
    sets = tensors.decompose_dual_quadrifocal(tensor, udd)
    cams = [cameras for cameras, _points in sets]
    ys = [observations[i][0].scanline_y for i in range(4)]
    poses, camera_sets = _enumerate_sign_poses(cams, factors, ys)
    return SolverOutput(tensor=tensor, poses=poses, camera_sets=camera_sets,
                        solver_id="e44")


# ---------------------------------------------------------------------------
# (D, 3, 7): parallel lines of unknown direction, gravity
# ---------------------------------------------------------------------------

def _d37_starts(count: int, seed: int) -> np.ndarray:
    """Deterministic quasi-random starts over (th2, th3, dx, dz)."""
    from scipy.stats import qmc

    bits = max(int(np.ceil(np.log2(max(count, 2)))), 1)
    sob = qmc.Sobol(d=4, scramble=True, seed=seed)
    st = sob.random_base2(bits)[:count]
    th = (st[:, :2] * 2.0 - 1.0) * np.pi
    radius = np.sqrt(st[:, 2]) * 0.999
    ang = st[:, 3] * 2.0 * np.pi
    x = np.zeros((count, 8))
    x[:, :2] = th
    x[:, 2] = radius * np.cos(ang)
    x[:, 3] = radius * np.sin(ang)
    return x


def _d37_normalize_key(x: np.ndarray) -> np.ndarray | None:
    key = x.copy()
    norm = np.linalg.norm(key[4:])
    if norm < 1e-12:
        return None
    key[4:] /= norm
    lead = key[4:][np.argmax(np.abs(key[4:]) > 1e-9)]
    if lead < 0:
        key[4:] *= -1
    key[0] = np.arctan2(np.sin(key[0]), np.cos(key[0]))
    key[1] = np.arctan2(np.sin(key[1]), np.cos(key[1]))
    return key


def decompose_d37_tensor(
    tensor_values: np.ndarray,
    r0v: np.ndarray,
    starts: int = 4096,
    max_iters: int = 48,
    seed: int = 20250,
    accept_tol: float = 1e-7,
    dedupe_tol: float = 1e-6,
) -> list[np.ndarray]:
    """All distinct real decompositions of a D-setting trifocal tensor.

    Returns parameter keys (th2, th3, dx, dz, t21, t23, t31, t33) with the
    translation block unit-normalized and sign-fixed; every key recomposes
    the tensor (up to sign and scale) within `accept_tol`.
    """
    from ._d37 import lm_multistart, tensor_of_params_batch

    tv = np.asarray(tensor_values, dtype=float).ravel()
    tv = tv / np.linalg.norm(tv)
    x0 = _d37_starts(starts, seed)
    x, cost = lm_multistart(np.ascontiguousarray(r0v), tv, x0, max_iters, 1e-28)
    cand = np.flatnonzero(cost < 1e-12)
    if cand.size == 0:
        return []
    # collapse numerically identical converged starts before the tensor check
    _, first = np.unique(np.round(x[cand], 6), axis=0, return_index=True)
    cand = cand[np.sort(first)]
    t = tensor_of_params_batch(r0v, x[cand])
    norms = np.linalg.norm(t, axis=1)
    ok = norms > 1e-13
    cand, t, norms = cand[ok], t[ok], norms[ok]
    t /= norms[:, None]
    dist = np.minimum(np.linalg.norm(t - tv, axis=1),
                      np.linalg.norm(t + tv, axis=1))
    ok = dist <= accept_tol
    cand = cand[ok]
    keys = []
    for k in cand:
        key = _d37_normalize_key(x[k])
        if key is not None:
            keys.append(key)
    if not keys:
        return []
    keys = np.array(keys)
    # collapse exact numerical duplicates first, then fine-dedupe
    _, first = np.unique(np.round(keys, 9), axis=0, return_index=True)
    keys = keys[np.sort(first)]
    order = np.argsort(cost[cand][np.sort(first)])
    sols: list[np.ndarray] = []
    for k in order:
        key = keys[k]
        if sols and np.linalg.norm(
                np.asarray(sols) - key, axis=1).min() < dedupe_tol:
            continue
        sols.append(key)
        if len(sols) >= 48:
            break
    return sols


def solve_d37(observations, starts: int = 4096, seed: int = 20250) -> SolverOutput:
    """Parallel lines of unknown shared direction with gravity, 3 cameras,
    >= 7 lines; all tensor-consistent real poses found by the multi-start
    search, emitted with both translation mirrors."""
    m, n = _grid_shape(observations)
    if m != 3 or n < 7:
        raise ValueError("d37 needs 3 cameras and at least 7 lines")
    _require_gravity(observations)
    ys = [observations[i][0].scanline_y for i in range(3)]
    rvs = [rotation_to_e2(observations[i][0].gravity) for i in range(3)]
    r0v = np.array([scanline_rotation(ys[i]) @ rvs[i] for i in range(3)])
    us = [[_flattened_u(observations[i][j]) for i in range(3)]
          for j in range(n)]
    tensor = _scaled_trifocal_estimate(us)
    tensor.provenance = "d37"
    keys = decompose_d37_tensor(tensor.t, r0v, starts=starts, seed=seed)
    if not keys:
        raise NoRealSolution("no real decomposition reproduces the tensor")
    poses, camera_sets, directions = [], [], []
    for key in keys:
        th = [0.0, key[0], key[1]]
        dx, dz = key[2], key[3]
        w = np.sqrt(max(1.0 - dx * dx - dz * dz, 1e-12))
        rd = quat_to_rot(np.array([w, dx, 0.0, dz]))
        for mirror in (1.0, -1.0):
            ts = [np.zeros(2), mirror * key[4:6], mirror * key[6:8]]
            tuple_poses, mats = [], []
            ok = True
            for i in range(3):
                rot = rvs[i] @ rot_y(th[i])
                rdi = r0v[i] @ rot_y(th[i]) @ rd
                block = np.array([[-rdi[0, 2], rdi[0, 0]],
                                  [-rdi[2, 2], rdi[2, 0]]])
                mats.append(np.hstack([block, ts[i][:, None]]))
                if abs(np.linalg.det(block)) < 1e-12:
                    ok = False
                    break
                sol = np.linalg.solve(block, ts[i])
                center = rd @ np.array([-sol[0], 0.0, -sol[1]])
                tuple_poses.append(
                    CameraPose(rotation=rot, center=center, scanline_y=ys[i]))
            if ok:
                poses.append(tuple_poses)
                camera_sets.append(mats)
                directions.append(rd @ np.array([0.0, 1.0, 0.0]))
    if not poses:
        raise NoRealSolution("decompositions found but poses degenerate")
    return SolverOutput(tensor=tensor, poses=poses, camera_sets=camera_sets,
                        directions=directions, solver_id="d37")


SOLVERS = {"b37": solve_b37, "e35": solve_e35, "e44": solve_e44,
           "d37": solve_d37}
