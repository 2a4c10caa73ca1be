"""Core geometry for single-scanline pose estimation.

Conventions
-----------
- World and camera frames are right-handed; a camera with orientation R and
  center C maps a world point X to the ray direction R (X - C).
- Image coordinates are normalized (pixels divided by focal length, principal
  point removed).  A point on scanline y is p = [x, y, 1].
- The vertical axis is e2 = [0, 1, 0].  In the parallel-line settings all 3D
  lines share the direction e2 after alignment, so a line is a point
  L_h = [L0_x, L0_z, 1] of the xz-plane in homogeneous form.
- A scanline pose reduces to a 2x3 matrix A ("1D camera") acting on L_h:
  the incidence constraint becomes u^T A L_h = 0 with u = [x', 1], where x'
  is the observation after the scanline-flattening rotation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DecompositionFailed,
    DegenerateGauge,
    DegenerateRay,
    GravitySingular,
    LengthMismatch,
    NoIntersection,
    ShapeMismatch,
)

E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])

_ORTHO_TOL = 1e-12


# ---------------------------------------------------------------------------
# Rotation helpers
# ---------------------------------------------------------------------------

def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * y * y - 2 * z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * x * x - 2 * z * z, 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * x * x - 2 * y * y],
    ])


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def rotation_angle(r: np.ndarray) -> float:
    """Angle of a rotation matrix, in [0, pi].

    Uses atan2 of the antisymmetric part against the trace, which keeps full
    precision for small angles (arccos of the trace loses half the digits).
    """
    axis2 = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    s = 0.5 * np.linalg.norm(axis2)
    c = 0.5 * (np.trace(r) - 1.0)
    return float(np.arctan2(s, c))


def rotation_log(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (Rodrigues vector)."""
    angle = rotation_angle(r)
    if angle < 1e-12:
        return np.zeros(3)
    if np.pi - angle < 1e-6:
        # near pi: extract axis from R + I
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(m), 0.0, None))
        # fix signs from off-diagonals
        k = int(np.argmax(axis))
        axis = m[:, k] / axis[k]
        axis /= np.linalg.norm(axis)
        return axis * angle
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return axis / (2.0 * np.sin(angle)) * angle


def rotation_exp(v: np.ndarray) -> np.ndarray:
    """Rotation matrix from an axis-angle vector."""
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        return np.eye(3)
    k = v / angle
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * (kx @ kx)


def rotation_to_e2(v: np.ndarray) -> np.ndarray:
    """Rotation with axis in the xz-plane sending e2 to the unit vector v.

    The quaternion is (w, x, 0, z) with w = sqrt((1+v_y)/2); it is the unique
    such rotation.  Raises GravitySingular when v is (numerically) -e2.
    """
    v = np.asarray(v, dtype=float)
    w2 = (1.0 + v[1]) / 2.0
    if w2 < 1e-12:
        raise GravitySingular("direction antiparallel to e2; rotation undefined")
    w = np.sqrt(w2)
    return quat_to_rot(np.array([w, v[2] / (2 * w), 0.0, -v[0] / (2 * w)]))


def factor_xz_then_y(q_rot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Factor a rotation Q = Ra @ Rb with Ra's axis in the xz-plane and Rb
    a y-axis rotation.

    Works in quaternion space: if Q has quaternion (w, x, y, z), the y-axis
    factor is the Givens rotation zeroing the quaternion's y-component.
    Raises GravitySingular at the gimbal configuration w = y = 0.
    """
    w, x, y, z = rot_to_quat(q_rot)
    n = np.hypot(w, y)
    if n < 1e-9:
        raise GravitySingular("gimbal configuration; xz/y factorization undefined")
    c, s = w / n, y / n
    # q_a = q (x) (c, 0, -s, 0)
    qa = np.array([w * c + y * s, x * c + z * s, 0.0, -x * s + z * c])
    ra = quat_to_rot(qa / np.linalg.norm(qa))
    rb = rot_y(2.0 * np.arctan2(s, c))
    return ra, rb


def rot_to_quat(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix, w >= 0."""
    w2 = 1.0 + r[0, 0] + r[1, 1] + r[2, 2]
    if w2 > 1e-8:
        w = 0.5 * np.sqrt(w2)
        q = np.array([
            w,
            (r[2, 1] - r[1, 2]) / (4 * w),
            (r[0, 2] - r[2, 0]) / (4 * w),
            (r[1, 0] - r[0, 1]) / (4 * w),
        ])
    else:
        # w near 0: use the largest diagonal entry
        k = int(np.argmax(np.diag(r)))
        i, j = (k + 1) % 3, (k + 2) % 3
        t = np.sqrt(max(1.0 + r[k, k] - r[i, i] - r[j, j], 0.0))
        q = np.empty(4)
        q[1 + k] = 0.5 * t
        q[0] = (r[j, i] - r[i, j]) / (2 * t)
        q[1 + i] = (r[i, k] + r[k, i]) / (2 * t)
        q[1 + j] = (r[j, k] + r[k, j]) / (2 * t)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation via a normalized 4D Gaussian quaternion."""
    q = rng.standard_normal(4)
    return quat_to_rot(q / np.linalg.norm(q))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass
class CameraPose:
    """Orientation and center of one camera at one scanline."""

    rotation: np.ndarray
    center: np.ndarray
    scanline_y: float = 0.0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.center = np.asarray(self.center, dtype=float)
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 100 * _ORTHO_TOL:
            raise ValueError(f"rotation not orthonormal (err {err:.2e})")
        if abs(np.linalg.det(self.rotation) - 1.0) > 100 * _ORTHO_TOL:
            raise ValueError("rotation has determinant != +1")


@dataclass
class Line3D:
    """3D line as a base point and unit direction."""

    point_l0: np.ndarray
    direction_ld: np.ndarray

    def __post_init__(self):
        self.point_l0 = np.asarray(self.point_l0, dtype=float)
        d = np.asarray(self.direction_ld, dtype=float)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-9:
            raise ValueError("line direction must be a unit vector")
        self.direction_ld = d / n


@dataclass
class ScanlineObservation:
    """Intersection of one line's projection with one camera's scanline."""

    camera_index: int
    line_index: int
    x: float
    scanline_y: float
    gravity: np.ndarray | None = None

    def __post_init__(self):
        if self.gravity is not None:
            g = np.asarray(self.gravity, dtype=float)
            n = np.linalg.norm(g)
            if abs(n - 1.0) > 1e-9:
                raise ValueError("gravity must be a unit vector")
            self.gravity = g / n


@dataclass
class ReducedCamera:
    """2x3 scanline camera matrix, stored with Frobenius norm 1 and the
    first nonzero entry positive."""

    a: np.ndarray
    calibrated: bool = False

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        n = np.linalg.norm(a)
        if n < 1e-15:
            raise ValueError("reduced camera must be nonzero")
        a = a / n
        flat = a.ravel()
        lead = flat[np.argmax(np.abs(flat) > 1e-14)]
        if lead < 0:
            a = -a
        self.a = a


@dataclass
class ReducedObservation:
    """Observation vectors of one line on one flattened scanline."""

    u: np.ndarray
    u_prime: np.ndarray
    u_dprime: np.ndarray | None = None

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.u_prime = np.asarray(self.u_prime, dtype=float)
        expect = np.array([self.u[1], -self.u[0]])
        if np.abs(self.u_prime - expect).max() > 1e-12:
            raise ValueError("u_prime must be the 90-degree rotation of u")


@dataclass
class RotationFactors:
    """Factorization R0 @ Rv = Ra @ Rb used by the gravity solvers."""

    r0: np.ndarray
    rv: np.ndarray
    ra: np.ndarray
    rb: np.ndarray


@dataclass
class ErrorReport:
    rot_err: float
    trans_err: float
    tensor_err: float = 0.0


# ---------------------------------------------------------------------------
# Incidence and reduction
# ---------------------------------------------------------------------------

def incidence_residual(pose: CameraPose, line: Line3D, p: np.ndarray) -> float:
    """Scalar triple product p^T R [L_d]x (L_0 - C); zero iff the
    back-projected ray of p meets the line."""
    p = np.asarray(p, dtype=float)
    g = pose.rotation @ np.cross(line.direction_ld, line.point_l0 - pose.center)
    return float(p @ g)


def scanline_rotation(scanline_y: float) -> np.ndarray:
    """Rotation about the x-axis mapping the ray direction [0, y, 1] to the
    optical axis [0, 0, 1]."""
    return rot_x(np.arctan(scanline_y))


def reduce_parallel(obs: ScanlineObservation) -> ReducedObservation:
    """Flatten an observation on scanline y to the y=0 scanline.

    Returns u = [x', 1] and u' = [1, -x'] with x' = x / sqrt(1 + y^2).
    """
    denom = np.sqrt(1.0 + obs.scanline_y ** 2)
    if denom < 1e-14:
        raise DegenerateRay("rotated ray parallel to the y=0 plane")
    xp = obs.x / denom
    return ReducedObservation(u=np.array([xp, 1.0]), u_prime=np.array([1.0, -xp]))


def reduced_x(x: float, scanline_y: float) -> float:
    """Flattened coordinate x' for a raw scanline observation."""
    return x / np.sqrt(1.0 + scanline_y ** 2)


def reduced_camera_matrix(pose: CameraPose) -> np.ndarray:
    """Unnormalized 2x3 scanline camera matrix of a pose.

    With R' = R0 R and t' = -R' [C_z, 0, -C_x]^T the matrix is
    [[-R'_13, R'_11, t'_1], [-R'_33, R'_31, t'_3]].
    """
    r0 = scanline_rotation(pose.scanline_y)
    rp = r0 @ pose.rotation
    c = pose.center
    tp = -rp @ np.array([c[2], 0.0, -c[0]])
    return np.array([
        [-rp[0, 2], rp[0, 0], tp[0]],
        [-rp[2, 2], rp[2, 0], tp[2]],
    ])


def reduced_camera_from_pose(pose: CameraPose) -> ReducedCamera:
    """Normalized reduced camera of a pose."""
    return ReducedCamera(a=reduced_camera_matrix(pose))


def decompose_reduced_camera(
    a: ReducedCamera, scanline_y: float = 0.0
) -> list[tuple[np.ndarray, float, float, float]]:
    """All real decompositions of a reduced camera into pose parameters.

    Returns tuples (R, C_x, C_z, sigma) such that the reduced camera matrix
    of the pose (R, [C_x, 0, C_z], scanline_y) equals sigma * a.a.  A generic
    matrix admits exactly four real decompositions; the algebraic count over
    the complex numbers is eight, but the four extra solutions carry complex
    rotation entries for every real input (the larger root of the scale
    quadratic always violates the unit-row bound).
    """
    av = a.a
    r0 = scanline_rotation(scanline_y)
    # corner matrix of R' is sigma * B
    b = np.array([[av[0, 1], -av[0, 0]], [av[1, 1], -av[1, 0]]])
    b1s = float(b[0] @ b[0])
    b3s = float(b[1] @ b[1])
    cc = float(b[0] @ b[1])
    det = float(np.linalg.det(b))
    # det^2 s^2 - (b1s + b3s) s + 1 = 0 with s = sigma^2
    disc = (b1s + b3s) ** 2 - 4.0 * det ** 2
    if disc < 0:
        if disc > -1e-10:
            disc = 0.0
        else:
            raise DecompositionFailed("scale quadratic has no real root")
    roots = []
    if abs(det) > 1e-14:
        sq = np.sqrt(disc)
        roots = [(b1s + b3s - sq) / (2 * det ** 2), (b1s + b3s + sq) / (2 * det ** 2)]
    elif b1s + b3s > 1e-14:
        roots = [1.0 / (b1s + b3s)]
    out = []
    for s in roots:
        if s <= 0:
            continue
        r12sq = 1.0 - s * b1s
        r32sq = 1.0 - s * b3s
        if r12sq < -1e-10 or r32sq < -1e-10:
            continue
        r12sq, r32sq = max(r12sq, 0.0), max(r32sq, 0.0)
        for sigma in (np.sqrt(s), -np.sqrt(s)):
            if r12sq > 1e-18:
                r12_choices = [np.sqrt(r12sq), -np.sqrt(r12sq)]
            else:
                r12_choices = [0.0]
            for r12 in r12_choices:
                if abs(r12) > 1e-12:
                    r32_choices = [-s * cc / r12]
                elif abs(s * cc) < 1e-10:
                    r32_choices = [np.sqrt(r32sq)] if r32sq <= 1e-18 else [
                        np.sqrt(r32sq), -np.sqrt(r32sq)]
                else:
                    continue
                for r32 in r32_choices:
                    row1 = np.array([sigma * b[0, 0], r12, sigma * b[0, 1]])
                    row3 = np.array([sigma * b[1, 0], r32, sigma * b[1, 1]])
                    if (abs(row1 @ row1 - 1) > 1e-8 or abs(row3 @ row3 - 1) > 1e-8
                            or abs(row1 @ row3) > 1e-8):
                        continue
                    rp = np.vstack([row1, np.cross(row3, row1), row3])
                    if abs(rp[1, 1]) < 1e-12:
                        continue
                    t1, t3 = sigma * av[0, 2], sigma * av[1, 2]
                    t2 = -(rp[0, 1] * t1 + rp[2, 1] * t3) / rp[1, 1]
                    w = -rp.T @ np.array([t1, t2, t3])
                    cz, cx = w[0], -w[2]
                    out.append((r0.T @ rp, float(cx), float(cz), float(sigma)))
    if not out:
        raise DecompositionFailed("no real decomposition for this matrix")
    return out


def gravity_factorization(
    gravity: np.ndarray, scanline_y: float
) -> tuple[RotationFactors, np.ndarray]:
    """Rotation factors and the known 2x2 factor A_a for a gravity direction.

    Computes Rv (xz-axis rotation with Rv e2 = gravity), R0 (scanline
    rotation), the factorization R0 Rv = Ra Rb, and the matrix
    A_a = [[-2 qx qz, 1 - 2 qz^2], [-(1 - 2 qx^2), 2 qx qz]] from Ra's
    quaternion (qw, qx, 0, qz).
    """
    gravity = np.asarray(gravity, dtype=float)
    if gravity[1] < -1.0 + 1.5e-4:  # ~179 degrees from e2
        raise GravitySingular("gravity within tolerance of -e2")
    rv = rotation_to_e2(gravity / np.linalg.norm(gravity))
    r0 = scanline_rotation(scanline_y)
    ra, rb = factor_xz_then_y(r0 @ rv)
    q = rot_to_quat(ra)
    qx, qz = q[1], q[3]
    a_a = np.array([
        [-2 * qx * qz, 1 - 2 * qz * qz],
        [-(1 - 2 * qx * qx), 2 * qx * qz],
    ])
    return RotationFactors(r0=r0, rv=rv, ra=ra, rb=rb), a_a


# ---------------------------------------------------------------------------
# Gauge, errors, interpolation
# ---------------------------------------------------------------------------

def canonicalize_solution(
    poses: list[CameraPose], lines: list[Line3D]
) -> tuple[list[CameraPose], list[Line3D]]:
    """Map a solution into the canonical frame: C_1 = 0, camera 1 free of
    rotation about the line direction, line direction e1, centers' components
    along the direction zeroed, and ||C_2|| = 1 when there are two cameras.
    """
    if not poses:
        raise ValueError("need at least one pose")
    direction = lines[0].direction_ld if lines else E2.copy()
    # world rotation taking the line direction to e2
    g1 = rotation_to_e2(direction).T
    c1 = poses[0].center
    rots = [p.rotation @ g1.T for p in poses]
    cents = [g1 @ (p.center - c1) for p in poses]
    l0s = [g1 @ (ln.point_l0 - c1) for ln in lines]
    # remove camera 1's y-axis rotation component
    rv1 = rotation_to_e2(rots[0] @ E2)
    ry1 = rv1.T @ rots[0]
    theta1 = np.arctan2(ry1[0, 2], ry1[0, 0])
    g2 = rot_y(theta1)
    rots = [r @ g2.T for r in rots]
    cents = [g2 @ c for c in cents]
    l0s = [g2 @ l for l in l0s]
    # unobservable coordinate along the (now e2) direction
    for c in cents:
        c[1] = 0.0
    for l in l0s:
        l[1] = 0.0
    if len(cents) >= 2:
        scale = np.linalg.norm(cents[1])
        if scale < 1e-12:
            raise DegenerateGauge("second center coincides with the first")
        cents = [c / scale for c in cents]
        l0s = [l / scale for l in l0s]
    # fixed rotation e2 -> e1
    z = rotation_to_e2(E1)
    out_poses = [
        CameraPose(rotation=r @ z.T, center=z @ c, scanline_y=p.scanline_y)
        for r, c, p in zip(rots, cents, poses)
    ]
    out_lines = [
        Line3D(point_l0=z @ l, direction_ld=E1.copy()) for l in l0s
    ]
    return out_poses, out_lines


def pose_errors(
    estimated: list[CameraPose], ground_truth: list[CameraPose]
) -> ErrorReport:
    """Worst-camera rotation angle and center-direction angle.

    Both lists must already be canonicalized; camera 1 is excluded from the
    translation error (its center is pinned at the origin).
    """
    if len(estimated) != len(ground_truth):
        raise LengthMismatch(f"{len(estimated)} vs {len(ground_truth)} poses")
    rot_err = 0.0
    for e, g in zip(estimated, ground_truth):
        rot_err = max(rot_err, rotation_angle(e.rotation.T @ g.rotation))
    trans_err = 0.0
    for e, g in zip(estimated[1:], ground_truth[1:]):
        ne, ng = np.linalg.norm(e.center), np.linalg.norm(g.center)
        if ne < 1e-15 or ng < 1e-15:
            trans_err = max(trans_err, 0.0 if ne == ng else np.pi)
            continue
        cosang = np.clip(e.center @ g.center / (ne * ng), -1.0, 1.0)
        trans_err = max(trans_err, float(np.arccos(cosang)))
    return ErrorReport(rot_err=rot_err, trans_err=trans_err)


def tensor_error(t_est: np.ndarray, t_gt: np.ndarray) -> float:
    """Sign-resolved Frobenius distance between unit-normalized tensors."""
    t_est, t_gt = np.asarray(t_est, dtype=float), np.asarray(t_gt, dtype=float)
    if t_est.shape != t_gt.shape:
        raise ShapeMismatch(f"{t_est.shape} vs {t_gt.shape}")
    a = t_est / np.linalg.norm(t_est)
    b = t_gt / np.linalg.norm(t_gt)
    return float(min(np.linalg.norm(a - b), np.linalg.norm(a + b)))


def interpolate_scanline_pose(
    first: CameraPose, middle: CameraPose, y: float, image_height: float
) -> CameraPose:
    """Pose at scanline y from first- and middle-scanline poses.

    The center interpolates linearly with factor (h - 2y)/h; the rotation
    applies the same fraction of the axis-angle of R_F R_M^T to R_M.
    """
    f = (image_height - 2.0 * y) / image_height
    center = middle.center + f * (first.center - middle.center)
    delta = rotation_log(first.rotation @ middle.rotation.T)
    rot = rotation_exp(f * delta) @ middle.rotation
    return CameraPose(rotation=rot, center=center, scanline_y=y)


def project_line_to_scanline(
    pose: CameraPose, line: Line3D, scanline_y: float
) -> float:
    """The x-coordinate where the line's projection crosses scanline y."""
    g = pose.rotation @ np.cross(line.direction_ld, line.point_l0 - pose.center)
    if abs(g[0]) < 1e-14:
        raise NoIntersection("line projects parallel to the scanline")
    return float(-(scanline_y * g[1] + g[2]) / g[0])
