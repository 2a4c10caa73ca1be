"""Trifocal and dual quadrifocal tensors of 1D scanline cameras.

Conventions
-----------
- Tensor entries are plain stacked-row determinants:
  T[a,b,c]    = det([A1[a]; A2[b]; A3[c]])             (2x3 cameras)
  Q[a,b,c,d]  = det([D1[a]; D2[b]; D3[c]; D4[d]])      (2x4 dual cameras)
  with zero-based indices.  No alternating sign factor is applied; with this
  convention the data constraint is the multilinear expansion of
  det([u_1^T A_1; u_2^T A_2; u_3^T A_3]) = 0 where u_i = [x'_i, 1], because
  each row annihilates the common homogeneous point.
- The dual camera of a plane point L = (x, y, z) is
  D(L) = [[x, -y, z, 0], [y, x, 0, z]]; a calibrated camera's parameter
  vector kappa = (cos t, sin t, t1, t2) satisfies (u^T D(L)) kappa = 0.
- Estimated tensors are normalized to unit Frobenius norm with the first
  entry of magnitude > 1e-14 made positive.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import (
    ComplexRoots,
    ConstraintViolation,
    IncompleteVisibility,
    PivotZero,
    RankDeficient,
    SingularBlock,
    SpanDimensionMismatch,
)

_RANK_TOL = 1e-12

# rows of the per-index change of basis to the complex (+, -) frame
_S = np.array([[1.0, 1.0j], [1.0, -1.0j]])


def _normalize(t: np.ndarray) -> np.ndarray:
    t = t / np.linalg.norm(t)
    flat = t.ravel()
    lead = flat[np.argmax(np.abs(flat) > 1e-14)]
    return -t if lead < 0 else t


@dataclass
class Tensor222:
    """2x2x2 trifocal tensor, unit Frobenius norm."""

    t: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(2, 2, 2)
        self.t = _normalize(t)


@dataclass
class DualQuadTensor:
    """2x2x2x2 dual quadrifocal tensor, unit Frobenius norm."""

    t: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(2, 2, 2, 2)
        self.t = _normalize(t)


@dataclass
class CanonicalTriplet:
    """Parameters a1..a7 of the canonical projective camera triplet."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        if a.shape != (7,):
            raise ValueError("alpha must have 7 entries")
        if abs(a[0]) < 1e-14 or abs(a[1]) < 1e-14:
            raise PivotZero("canonical parameters a1, a2 must be nonzero")
        self.alpha = a

    def cameras(self) -> list[np.ndarray]:
        a1, a2, a3, a4, a5, a6, a7 = self.alpha
        return [
            np.array([[1.0, 0, 0], [a1, a1, a1]]),
            np.array([[0, 1.0, 0], [a2, a3, a4]]),
            np.array([[0, 0, 1.0], [a5, a6, a7]]),
        ]


# ---------------------------------------------------------------------------
# Forward tensors
# ---------------------------------------------------------------------------

def trifocal_from_cameras(a1, a2, a3) -> Tensor222:
    """Trifocal tensor of three 2x3 camera matrices (stacked-row dets)."""
    mats = [m.a if hasattr(m, "a") else np.asarray(m, dtype=float)
            for m in (a1, a2, a3)]
    t = np.empty((2, 2, 2))
    for a, b, c in itertools.product(range(2), repeat=3):
        t[a, b, c] = np.linalg.det(
            np.vstack([mats[0][a], mats[1][b], mats[2][c]]))
    return Tensor222(t=t, provenance="from_cameras")


def dual_camera(point_h: np.ndarray) -> np.ndarray:
    """2x4 dual camera of a homogeneous plane point (x, y, z)."""
    x, y, z = point_h
    return np.array([[x, -y, z, 0.0], [y, x, 0.0, z]])


def dual_quadrifocal_from_points(points_h) -> DualQuadTensor:
    """Dual quadrifocal tensor of four homogeneous plane points."""
    ds = [dual_camera(np.asarray(p, dtype=float)) for p in points_h]
    q = np.empty((2, 2, 2, 2))
    for idx in itertools.product(range(2), repeat=4):
        q[idx] = np.linalg.det(np.vstack([ds[k][idx[k]] for k in range(4)]))
    return DualQuadTensor(t=q, provenance="from_points")


# ---------------------------------------------------------------------------
# Linear estimation
# ---------------------------------------------------------------------------

def _u_of(obs) -> np.ndarray:
    if obs is None:
        raise IncompleteVisibility("missing observation in the grid")
    return obs.u if hasattr(obs, "u") else np.asarray(obs, dtype=float)


def build_trifocal_system(observations) -> np.ndarray:
    """Stack one monomial row per line: row[j] = u1 (x) u2 (x) u3 flattened.

    `observations` is an n x 3 grid (line-major) of ReducedObservation or
    plain 2-vectors.
    """
    rows = []
    for triple in observations:
        u1, u2, u3 = (_u_of(o) for o in triple)
        rows.append(np.einsum("a,b,c->abc", u1, u2, u3).ravel())
    return np.array(rows)


def _nullspace_vector(system: np.ndarray) -> np.ndarray:
    # unit row norms: equalizes the leverage of monomial rows under noise
    norms = np.linalg.norm(system, axis=1, keepdims=True)
    norms[norms < 1e-300] = 1.0
    system = system / norms
    sv = np.linalg.svd(system, compute_uv=False)
    rank_needed = system.shape[1] - 1
    if system.shape[0] < rank_needed or sv[rank_needed - 1] / sv[0] < _RANK_TOL:
        raise RankDeficient("ambiguous nullspace; degenerate data")
    _, _, vt = np.linalg.svd(system)
    return vt[-1]


def estimate_trifocal_dlt(system: np.ndarray) -> Tensor222:
    """Right singular vector of the smallest singular value, as a tensor."""
    system = np.asarray(system, dtype=float)
    if system.shape[1] != 8:
        raise ValueError("trifocal system must have 8 columns")
    return Tensor222(t=_nullspace_vector(system), provenance="dlt")


def estimate_calibrated_trifocal(observations, constraints) -> Tensor222:
    """Calibrated trifocal tensor from 5 observation triples plus the two
    linear internal constraints (stacked as extra rows)."""
    data = build_trifocal_system(observations)
    rows = np.vstack([data] + [np.asarray(c, dtype=float).ravel()[None, :]
                               for c in constraints])
    return Tensor222(t=_nullspace_vector(rows), provenance="calibrated_dlt")


def build_dual_quadrifocal_system(observations) -> np.ndarray:
    """One monomial row per camera: row[i] = u_i1 (x) u_i2 (x) u_i3 (x) u_i4.

    `observations` is an m x 4 grid (camera-major) of ReducedObservation or
    plain 2-vectors, using the gravity-corrected u'' form.
    """
    rows = []
    for quad in observations:
        us = [_u_of(o) for o in quad]
        rows.append(np.einsum("a,b,c,d->abcd", *us).ravel())
    return np.array(rows)


def estimate_dual_quadrifocal(observations, constraints) -> DualQuadTensor:
    """Dual quadrifocal tensor from 4 camera rows and 11 constraints."""
    data = build_dual_quadrifocal_system(observations)
    rows = np.vstack([data] + [np.asarray(c, dtype=float).ravel()[None, :]
                               for c in constraints])
    return DualQuadTensor(t=_nullspace_vector(rows), provenance="calibrated_dlt")


# ---------------------------------------------------------------------------
# Canonical (projective) decomposition
# ---------------------------------------------------------------------------

def _stable_quadratic(ca: float, cb: float, cc: float) -> list[float]:
    """Real roots of ca x^2 + cb x + cc = 0, numerically stable form."""
    if abs(ca) < 1e-300:
        return [-cc / cb] if abs(cb) > 1e-300 else []
    disc = cb * cb - 4.0 * ca * cc
    if disc < 0:
        # clamp relative to the coefficient scale: double roots at machine
        # precision must survive noise-free round trips
        scale = max(cb * cb + abs(4.0 * ca * cc), 1.0)
        if disc >= -1e-10 * scale:
            disc = 0.0
        else:
            raise ComplexRoots(f"negative discriminant {disc:.3e}")
    sq = np.sqrt(disc)
    if abs(cb) < 1e-300:
        r = sq / (2 * ca)
        return [r, -r]
    q = -(cb + np.copysign(sq, cb)) / 2.0
    roots = [q / ca]
    if abs(q) > 1e-300:
        roots.append(cc / q)
    else:
        roots.append(0.0)
    return roots


def decompose_trifocal_canonical(t: Tensor222) -> list[CanonicalTriplet]:
    """The two canonical camera triplets of a generic trifocal tensor.

    Normalizes T so its first entry is 1, reads off a1, a3, a7 directly,
    then a5, a2, and solves a quadratic for a4 (a6 follows linearly).
    """
    tt = t.t
    if abs(tt[0, 0, 0]) < 1e-12:
        raise PivotZero("leading tensor entry vanishes")
    tt = tt / tt[0, 0, 0]
    a1 = tt[1, 0, 0]
    a3 = tt[0, 1, 0]
    a7 = tt[0, 0, 1]
    if abs(a1) < 1e-12:
        raise PivotZero("a1 vanishes")
    a5 = (a1 * a7 - tt[1, 0, 1]) / a1
    a2 = (a1 * a3 - tt[1, 1, 0]) / a1
    if abs(a2) < 1e-12:
        raise PivotZero("a2 vanishes")
    prod46 = a3 * a7 - tt[0, 1, 1]            # a4 * a6
    lin46 = tt[1, 1, 1] / a1 - tt[0, 1, 1] + a2 * a7 + a3 * a5   # a4*a5 + a2*a6
    roots = _stable_quadratic(-a5 / a2, lin46 / a2, -prod46)
    out = []
    for a4 in roots:
        a6 = (lin46 - a4 * a5) / a2
        out.append(CanonicalTriplet(
            alpha=np.array([a1, a2, a3, a4, a5, a6, a7])))
    # drop duplicate double roots
    if len(out) == 2 and np.allclose(out[0].alpha, out[1].alpha, atol=1e-12):
        out = out[:1]
    return out


# ---------------------------------------------------------------------------
# Calibrated internal constraints (derived numerically)
# ---------------------------------------------------------------------------

def _random_calibrated_camera(rng) -> np.ndarray:
    th = rng.uniform(-np.pi, np.pi)
    c, s = np.cos(th), np.sin(th)
    t1, t2 = rng.standard_normal(2)
    return np.array([[c, -s, t1], [s, c, t2]])


def _snap_basis(basis: np.ndarray) -> np.ndarray:
    """Rotate a nullspace basis toward a sparse integer-like form."""
    from scipy.linalg import qr
    # row-reduce over the support of largest entries, then snap
    b = qr(basis.T, mode="economic")[0].T
    # greedy sparsification: Gauss-Jordan on well-conditioned pivots
    b = b.copy()
    used = []
    for i in range(b.shape[0]):
        mags = np.abs(b[i]).copy()
        mags[used] = 0.0
        p = int(np.argmax(mags))
        used.append(p)
        b[i] /= b[i, p]
        for j in range(b.shape[0]):
            if j != i:
                b[j] -= b[j, p] * b[i]
    b[np.abs(b) < 1e-10] = 0.0
    rounded = np.round(b)
    b = np.where(np.abs(b - rounded) < 1e-9, rounded, b)
    return np.array([row / np.linalg.norm(row) for row in b])


@lru_cache(maxsize=4)
def derive_calibrated_constraints(view_count: int) -> tuple[np.ndarray, ...]:
    """Linear functionals annihilating every calibrated multi-view tensor.

    Samples random calibrated camera configurations, spans their tensors,
    and returns a basis of the orthogonal complement: 2 functionals for
    3 views (8 entries each), 11 for 4 views (16 entries each).
    """
    if view_count not in (3, 4):
        raise ValueError("view_count must be 3 or 4")
    rng = np.random.default_rng(20240 + view_count)
    n_entries = 8 if view_count == 3 else 16
    samples = np.empty((240, n_entries))
    for k in range(240):
        cams = [_random_calibrated_camera(rng) for _ in range(view_count)]
        if view_count == 3:
            samples[k] = trifocal_from_cameras(*cams).t.ravel()
        else:
            # calibrated 4-view tensors live over the observed points; the
            # span of point-built tensors is the right object
            pts = [np.append(rng.standard_normal(2), 1.0) for _ in range(4)]
            samples[k] = dual_quadrifocal_from_points(pts).t.ravel()
    sv = np.linalg.svd(samples, compute_uv=False)
    rank = int((sv > 1e-8 * sv[0]).sum())
    expected = 2 if view_count == 3 else 11
    if n_entries - rank != expected:
        raise SpanDimensionMismatch(
            f"complement dimension {n_entries - rank}, expected {expected}")
    _, _, vt = np.linalg.svd(samples)
    basis = _snap_basis(vt[rank:])
    return tuple(basis)


def check_calibrated(t: np.ndarray, view_count: int, tol: float = 1e-6) -> None:
    """Raise ConstraintViolation unless t satisfies the internal constraints."""
    v = np.asarray(t, dtype=float).ravel()
    v = v / np.linalg.norm(v)
    for c in derive_calibrated_constraints(view_count):
        if abs(c @ v) > tol:
            raise ConstraintViolation(
                f"constraint residual {abs(c @ v):.3e} exceeds {tol:.1e}")


# ---------------------------------------------------------------------------
# Calibrated decomposition
# ---------------------------------------------------------------------------

def _complexify3(t: np.ndarray) -> np.ndarray:
    return np.einsum("ia,jb,kc,abc->ijk", _S, _S, _S, t.astype(complex))


def _complexify4(q: np.ndarray) -> np.ndarray:
    return np.einsum("ia,jb,kc,ld,abcd->ijkl", _S, _S, _S, _S, q.astype(complex))


def _calibrated_camera(z: complex, tau: complex) -> np.ndarray:
    c, s = z.real, z.imag
    return np.array([[c, -s, tau.real], [s, c, tau.imag]])


def decompose_calibrated_trifocal(t: Tensor222) -> list[list[np.ndarray]]:
    """Two sets of calibrated cameras for a calibrated trifocal tensor.

    In the complex frame the tensor reduces to three bracket products; after
    gauge-fixing camera 1 to [I | 0] the remaining rotations satisfy one
    line-circle intersection, hence at most two real solutions.
    """
    check_calibrated(t.t, 3)
    tt = _complexify3(t.t)
    m1 = tt[0, 0, 1] / 2j       # tau2 * conj(z3) * mu
    m2 = tt[0, 1, 0] / (-2j)    # conj(z2) * tau3 * mu
    m3 = tt[1, 0, 0] / 2j       # (z2 tau3 - z3 tau2) * mu
    if abs(m2) < 1e-14:
        raise PivotZero("degenerate tensor: vanishing bracket")
    k = np.conj(m3) * m1
    h = (abs(m2) ** 2 - abs(m3) ** 2 - abs(m1) ** 2) / 2.0
    if abs(k) < 1e-14:
        raise PivotZero("degenerate tensor: vanishing bracket product")
    ratio = h / abs(k)
    if abs(ratio) > 1.0:
        if abs(ratio) < 1.0 + 1e-10:
            ratio = np.sign(ratio)
        else:
            raise ComplexRoots("no real rotation solves the tensor")
    phi = np.arccos(ratio)
    sets = []
    for sgn in (1.0, -1.0):
        alpha = sgn * phi - np.angle(k)
        xi = np.exp(1j * alpha)               # z3^2
        zeta = (m3 + m1 * xi) / m2            # z2^2
        z2 = np.sqrt(zeta / abs(zeta))
        z3 = np.sqrt(xi)
        tau2 = m1 * z3
        tau3 = m2 * z2
        sets.append([
            np.array([[1.0, 0, 0], [0, 1.0, 0]]),
            _calibrated_camera(z2, tau2),
            _calibrated_camera(z3, tau3),
        ])
    if len(sets) == 2 and phi < 1e-12:
        sets = sets[:1]
    return sets


def decompose_dual_quadrifocal(
    q: DualQuadTensor, observations
) -> list[tuple[list[np.ndarray], list[np.ndarray]]]:
    """Two (cameras, points) sets for a calibrated dual quadrifocal tensor.

    The balanced entries of the complex-frame tensor are products of point
    brackets; with points 1, 2 gauge-fixed at 0 and 1 of the complex plane,
    the remaining two points solve a single real quadratic.  Cameras follow
    per-camera from the 4x4 nullspace of the observation rows.
    """
    check_calibrated(q.t, 4)
    qt = _complexify4(q.t)
    b1 = qt[0, 0, 1, 1] / 4.0      # [12] conj([34]) mu
    b2 = -qt[0, 1, 0, 1] / 4.0     # [13] conj([24]) mu
    b3 = qt[0, 1, 1, 0] / 4.0      # [14] conj([23]) mu
    d = -np.conj(b1)
    g2, g3 = -b2, -b3
    w_sum = g2 + g3
    im_u = w_sum.imag
    m = (g2 - g3 - d).imag
    scale = abs(d) + abs(g2) + abs(g3)
    if abs(m) < 1e-7 * max(scale, 1e-300):
        # all bracket products real: the four plane points are collinear,
        # i.e. the observed lines are coplanar
        raise PivotZero("vanishing scale pivot; lines coplanar")
    a2 = m + 2.0 * d.imag
    a1 = -2.0 * (w_sum.real * d.imag + im_u * d.real)
    a0 = m * (im_u * im_u - abs(d) ** 2) + 2.0 * im_u * d.real * w_sum.real
    roots = _stable_quadratic(a2, a1, a0)
    if not roots:
        raise ComplexRoots("no real point configuration solves the tensor")
    out = []
    for s in roots:
        u = complex(s, im_u)
        mu = -(s * d.imag - im_u * d.real) / m
        if abs(mu) < 1e-14:
            continue
        w3 = (u + d) / (2.0 * mu)
        w4 = (u - d) / (2.0 * mu)
        points = [np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 1.0]),
                  np.array([w3.real, w3.imag, 1.0]),
                  np.array([w4.real, w4.imag, 1.0])]
        cameras = _cameras_from_points(points, observations)
        out.append((cameras, points))
    if not out:
        raise ComplexRoots("no real point configuration solves the tensor")
    return out


def _cameras_from_points(points, observations) -> list[np.ndarray]:
    """Calibrated cameras from known plane points and u'' observations."""
    duals = [dual_camera(p) for p in points]
    cams = []
    for quad in observations:
        rows = np.vstack([_u_of(o) @ duals[j] for j, o in enumerate(quad)])
        sv = np.linalg.svd(rows, compute_uv=False)
        if sv[2] / sv[0] < 1e-9:
            # collinear plane points leave the camera one-parameter ambiguous
            raise RankDeficient("ambiguous camera recovery; lines coplanar")
        _, _, vt = np.linalg.svd(rows)
        kappa = vt[-1]
        rho = np.hypot(kappa[0], kappa[1])
        if rho < 1e-12:
            raise SingularBlock("recovered camera has zero rotation block")
        kappa = kappa / rho
        if kappa[0] < 0 or (abs(kappa[0]) < 1e-12 and kappa[1] < 0):
            kappa = -kappa
        cams.append(np.array([[kappa[0], -kappa[1], kappa[2]],
                              [kappa[1], kappa[0], kappa[3]]]))
    return cams


def decompose_calibrated_tensor(t, observations=None):
    """Dispatch to the trifocal or dual quadrifocal decomposition.

    The quadrifocal branch needs the observation grid to recover cameras
    from the decoded points.
    """
    if isinstance(t, Tensor222):
        return decompose_calibrated_trifocal(t)
    if isinstance(t, DualQuadTensor):
        if observations is None:
            raise ValueError("quadrifocal decomposition needs observations")
        return decompose_dual_quadrifocal(t, observations)
    raise TypeError("expected Tensor222 or DualQuadTensor")
