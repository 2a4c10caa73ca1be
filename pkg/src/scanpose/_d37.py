"""Multi-start damped-Newton kernel for the D-setting tensor decomposition.

Unknowns per start: x = (th2, th3, dx, dz, t21, t23, t31, t33).  The shared
line direction is R_d e2 with R_d the xz-axis rotation of quaternion
(w, dx, 0, dz), w = sqrt(1 - dx^2 - dz^2); camera 1 is gauge-fixed to a zero
y-rotation and zero translation block.  The residual is the component of the
parameterized tensor orthogonal to the measured unit tensor, with the
translation block renormalized after every accepted step (the zero tensor at
t = 0 would otherwise be a spurious attractor).
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _blocks(r0v, th2, th3, dx, dz, b1, b2, b3):
    """Fill the 2x2 corner blocks for the three cameras."""
    w2 = 1.0 - dx * dx - dz * dz
    if w2 < 1e-12:
        w2 = 1e-12
    w = np.sqrt(w2)
    rd = np.empty((3, 3))
    rd[0, 0] = 1 - 2 * dz * dz
    rd[0, 1] = -2 * w * dz
    rd[0, 2] = 2 * dx * dz
    rd[1, 0] = 2 * w * dz
    rd[1, 1] = 1 - 2 * dx * dx - 2 * dz * dz
    rd[1, 2] = -2 * w * dx
    rd[2, 0] = 2 * dx * dz
    rd[2, 1] = 2 * w * dx
    rd[2, 2] = 1 - 2 * dx * dx
    for i in range(3):
        if i == 0:
            c, s = 1.0, 0.0
            out = b1
        elif i == 1:
            c, s = np.cos(th2), np.sin(th2)
            out = b2
        else:
            c, s = np.cos(th3), np.sin(th3)
            out = b3
        for rr in range(2):
            r = 0 if rr == 0 else 2
            p0 = r0v[i, r, 0] * c - r0v[i, r, 2] * s
            p1 = r0v[i, r, 1]
            p2 = r0v[i, r, 0] * s + r0v[i, r, 2] * c
            rd0 = p0 * rd[0, 0] + p1 * rd[1, 0] + p2 * rd[2, 0]
            rd2 = p0 * rd[0, 2] + p1 * rd[1, 2] + p2 * rd[2, 2]
            out[rr, 0] = -rd2
            out[rr, 1] = rd0
    return rd, w


@njit(cache=True, inline="always")
def _blocks_grad(r0v, i, th, rd, dpre_rot, out):
    """Corner-block derivative of camera i w.r.t. its own y-angle."""
    c, s = np.cos(th), np.sin(th)
    for rr in range(2):
        r = 0 if rr == 0 else 2
        if dpre_rot:
            p0 = -r0v[i, r, 0] * s - r0v[i, r, 2] * c
            p1 = 0.0
            p2 = r0v[i, r, 0] * c - r0v[i, r, 2] * s
        else:
            p0 = r0v[i, r, 0] * c - r0v[i, r, 2] * s
            p1 = r0v[i, r, 1]
            p2 = r0v[i, r, 0] * s + r0v[i, r, 2] * c
        rd0 = p0 * rd[0, 0] + p1 * rd[1, 0] + p2 * rd[2, 0]
        rd2 = p0 * rd[0, 2] + p1 * rd[1, 2] + p2 * rd[2, 2]
        out[rr, 0] = -rd2
        out[rr, 1] = rd0


@njit(cache=True, inline="always")
def _rd_grads(dx, dz, w, gx, gz):
    wx = -dx / w
    wz = -dz / w
    gx[0, 0] = 0.0
    gx[0, 1] = -2 * dz * wx
    gx[0, 2] = 2 * dz
    gx[1, 0] = 2 * dz * wx
    gx[1, 1] = -4 * dx
    gx[1, 2] = -2 * w - 2 * dx * wx
    gx[2, 0] = 2 * dz
    gx[2, 1] = 2 * w + 2 * dx * wx
    gx[2, 2] = -4 * dx
    gz[0, 0] = -4 * dz
    gz[0, 1] = -2 * w - 2 * dz * wz
    gz[0, 2] = 2 * dx
    gz[1, 0] = 2 * w + 2 * dz * wz
    gz[1, 1] = -4 * dz
    gz[1, 2] = -2 * dx * wz
    gz[2, 0] = 2 * dx
    gz[2, 1] = 2 * dx * wz
    gz[2, 2] = 0.0


@njit(cache=True, inline="always")
def _corner_with(r0v, i, th, mat, out):
    """Corner block of camera i with an arbitrary right factor `mat`."""
    c, s = np.cos(th), np.sin(th)
    for rr in range(2):
        r = 0 if rr == 0 else 2
        p0 = r0v[i, r, 0] * c - r0v[i, r, 2] * s
        p1 = r0v[i, r, 1]
        p2 = r0v[i, r, 0] * s + r0v[i, r, 2] * c
        m0 = p0 * mat[0, 0] + p1 * mat[1, 0] + p2 * mat[2, 0]
        m2 = p0 * mat[0, 2] + p1 * mat[1, 2] + p2 * mat[2, 2]
        out[rr, 0] = -m2
        out[rr, 1] = m0


@njit(cache=True, inline="always")
def _pair_det(ba, bb, out):
    """out[a, b] = det([ba[a]; bb[b]]) for 2x2 row blocks."""
    for a in range(2):
        for b in range(2):
            out[a, b] = ba[a, 0] * bb[b, 1] - ba[a, 1] * bb[b, 0]


@njit(cache=True, inline="always")
def _tensor_from(d12, d13, t2, t3, out):
    q = 0
    for a in range(2):
        for b in range(2):
            for c in range(2):
                out[q] = -t2[b] * d13[a, c] + t3[c] * d12[a, b]
                q += 1


@njit(cache=True, inline="always")
def _varpro_t(r0v, tv, xk, b1, b2, b3, d12, d13):
    """Best-fit unit translation block for the slot's rotation parameters
    (the tensor is linear in the four translation entries)."""
    _blocks(r0v, xk[0], xk[1], xk[2], xk[3], b1, b2, b3)
    _pair_det(b1, b2, d12)
    _pair_det(b1, b3, d13)
    lmat = np.zeros((8, 4))
    q = 0
    for a in range(2):
        for b in range(2):
            for c in range(2):
                lmat[q, b] = -d13[a, c]
                lmat[q, 2 + c] = d12[a, b]
                q += 1
    proj = np.empty((8, 4))
    for col in range(4):
        dot = 0.0
        for rr in range(8):
            dot += tv[rr] * lmat[rr, col]
        for rr in range(8):
            proj[rr, col] = lmat[rr, col] - dot * tv[rr]
    gram = proj.T @ proj
    _evals, evecs = np.linalg.eigh(gram)
    for p in range(4):
        xk[4 + p] = evecs[p, 0]


@njit(cache=True, parallel=True, fastmath=True)
def lm_multistart(r0v, tv, x0, max_iters, converge_tol):
    """Levenberg iteration over all starts; returns (X, cost).

    r0v: (3,3,3) per-camera R0 @ Rv; tv: unit measured tensor (8,);
    x0: (K,8) start parameters with arbitrary t blocks (re-initialized here
    by a best-fit translation for each start's rotation parameters).
    """
    big_k = x0.shape[0]
    x = x0.copy()
    cost = np.empty(big_k)
    for k in prange(big_k):
        b1 = np.empty((2, 2))
        b2 = np.empty((2, 2))
        b3 = np.empty((2, 2))
        d12 = np.empty((2, 2))
        d13 = np.empty((2, 2))
        tloc = np.empty(8)
        gx3 = np.empty((3, 3))
        gz3 = np.empty((3, 3))
        db = np.empty((2, 2))
        db2 = np.empty((2, 2))
        dd = np.empty((2, 2))
        dd2 = np.empty((2, 2))
        jac = np.empty((8, 8))
        xk = x[k]
        _varpro_t(r0v, tv, xk, b1, b2, b3, d12, d13)
        lam = 1e-3
        # initial cost
        rd, w = _blocks(r0v, xk[0], xk[1], xk[2], xk[3], b1, b2, b3)
        _pair_det(b1, b2, d12)
        _pair_det(b1, b3, d13)
        _tensor_from(d12, d13, xk[4:6], xk[6:8], tloc)
        dot = 0.0
        for rr in range(8):
            dot += tloc[rr] * tv[rr]
        ck = 0.0
        for rr in range(8):
            resid = tloc[rr] - dot * tv[rr]
            ck += resid * resid
        xn = np.empty(8)
        r_vec = np.empty(8)
        lives = 1
        lcg = np.uint64(k * 2654435761 + 12345)
        for _ in range(max_iters):
            if ck < converge_tol:
                break
            rd, w = _blocks(r0v, xk[0], xk[1], xk[2], xk[3], b1, b2, b3)
            _pair_det(b1, b2, d12)
            _pair_det(b1, b3, d13)
            _tensor_from(d12, d13, xk[4:6], xk[6:8], tloc)
            dot = 0.0
            for rr in range(8):
                dot += tloc[rr] * tv[rr]
            for rr in range(8):
                r_vec[rr] = tloc[rr] - dot * tv[rr]
            # jacobian columns ------------------------------------------------
            # th2: d12 changes through camera 2
            _blocks_grad(r0v, 1, xk[0], rd, True, db)
            _pair_det(b1, db, dd)
            q = 0
            for a in range(2):
                for b in range(2):
                    for c in range(2):
                        jac[q, 0] = xk[6 + c] * dd[a, b]
                        q += 1
            # th3: d13 through camera 3
            _blocks_grad(r0v, 2, xk[1], rd, True, db)
            _pair_det(b1, db, dd)
            q = 0
            for a in range(2):
                for b in range(2):
                    for c in range(2):
                        jac[q, 1] = -xk[4 + b] * dd[a, c]
                        q += 1
            # dx, dz: all three blocks move
            _rd_grads(xk[2], xk[3], w, gx3, gz3)
            for p in range(2):
                gmat = gx3 if p == 0 else gz3
                _corner_with(r0v, 0, 0.0, gmat, db)      # dB1
                _corner_with(r0v, 1, xk[0], gmat, db2)   # dB2
                _pair_det(db, b2, dd)
                _pair_det(b1, db2, dd2)
                for a in range(2):
                    for b in range(2):
                        dd[a, b] += dd2[a, b]            # dd12
                _corner_with(r0v, 2, xk[1], gmat, db2)   # dB3
                _pair_det(db, b3, dd2)
                for a in range(2):
                    for b in range(2):
                        dd2[a, b] += (b1[a, 0] * db2[b, 1]
                                      - b1[a, 1] * db2[b, 0])  # dd13
                q = 0
                for a in range(2):
                    for b in range(2):
                        for c in range(2):
                            jac[q, 2 + p] = (-xk[4 + b] * dd2[a, c]
                                             + xk[6 + c] * dd[a, b])
                            q += 1
            # translation entries
            q = 0
            for a in range(2):
                for b in range(2):
                    for c in range(2):
                        jac[q, 4] = -d13[a, c] if b == 0 else 0.0
                        jac[q, 5] = -d13[a, c] if b == 1 else 0.0
                        jac[q, 6] = d12[a, b] if c == 0 else 0.0
                        jac[q, 7] = d12[a, b] if c == 1 else 0.0
                        q += 1
            # project the jacobian off tv
            for p in range(8):
                dot = 0.0
                for rr in range(8):
                    dot += tv[rr] * jac[rr, p]
                for rr in range(8):
                    jac[rr, p] -= dot * tv[rr]
            grad = jac.T @ r_vec
            hess = jac.T @ jac
            for p in range(8):
                hess[p, p] = hess[p, p] * (1.0 + lam) + 1e-14
            # in-place Cholesky solve (hess is SPD after damping)
            ok_chol = True
            for ii in range(8):
                for jj in range(ii):
                    acc = hess[ii, jj]
                    for kk in range(jj):
                        acc -= hess[ii, kk] * hess[jj, kk]
                    hess[ii, jj] = acc / hess[jj, jj]
                acc = hess[ii, ii]
                for kk in range(ii):
                    acc -= hess[ii, kk] * hess[ii, kk]
                if acc <= 0.0:
                    ok_chol = False
                    break
                hess[ii, ii] = np.sqrt(acc)
            if not ok_chol:
                lam = min(lam * 6.0, 1e10)
                continue
            for ii in range(8):
                acc = grad[ii]
                for kk in range(ii):
                    acc -= hess[ii, kk] * grad[kk]
                grad[ii] = acc / hess[ii, ii]
            for ii in range(7, -1, -1):
                acc = grad[ii]
                for kk in range(ii + 1, 8):
                    acc -= hess[kk, ii] * grad[kk]
                grad[ii] = acc / hess[ii, ii]
            for p in range(8):
                xn[p] = xk[p] - grad[p]
            rad = xn[2] * xn[2] + xn[3] * xn[3]
            if rad > 0.9999:
                sc = np.sqrt(0.9999 / rad)
                xn[2] *= sc
                xn[3] *= sc
            rd, w = _blocks(r0v, xn[0], xn[1], xn[2], xn[3], b1, b2, b3)
            _pair_det(b1, b2, d12)
            _pair_det(b1, b3, d13)
            _tensor_from(d12, d13, xn[4:6], xn[6:8], tloc)
            dot = 0.0
            for rr in range(8):
                dot += tloc[rr] * tv[rr]
            cn = 0.0
            for rr in range(8):
                resid = tloc[rr] - dot * tv[rr]
                cn += resid * resid
            if cn < ck:
                tn = np.sqrt(xn[4] ** 2 + xn[5] ** 2 + xn[6] ** 2 + xn[7] ** 2)
                if tn > 1e-12:
                    for p in range(4):
                        xn[4 + p] /= tn
                    cn /= tn * tn
                for p in range(8):
                    xk[p] = xn[p]
                ck = cn
                lam = max(lam * 0.25, 1e-12)
            else:
                lam = lam * 6.0
                if lam > 1e9:
                    if lives <= 0:
                        break
                    lives -= 1
                    # recycle the slot at a pseudo-random fresh start
                    draws = np.empty(4)
                    for p in range(4):
                        lcg = np.uint64(
                            np.uint64(6364136223846793005) * lcg
                            + np.uint64(1442695040888963407))
                        draws[p] = (np.float64(lcg >> np.uint64(11))
                                    / 9007199254740992.0)
                    xk[0] = (draws[0] * 2.0 - 1.0) * np.pi
                    xk[1] = (draws[1] * 2.0 - 1.0) * np.pi
                    radius = np.sqrt(draws[2]) * 0.999
                    xk[2] = radius * np.cos(draws[3] * 2.0 * np.pi)
                    xk[3] = radius * np.sin(draws[3] * 2.0 * np.pi)
                    _varpro_t(r0v, tv, xk, b1, b2, b3, d12, d13)
                    rd, w = _blocks(r0v, xk[0], xk[1], xk[2], xk[3],
                                    b1, b2, b3)
                    _pair_det(b1, b2, d12)
                    _pair_det(b1, b3, d13)
                    _tensor_from(d12, d13, xk[4:6], xk[6:8], tloc)
                    dot = 0.0
                    for rr in range(8):
                        dot += tloc[rr] * tv[rr]
                    ck = 0.0
                    for rr in range(8):
                        resid = tloc[rr] - dot * tv[rr]
                        ck += resid * resid
                    lam = 1e-3
        cost[k] = ck
    return x, cost


def tensor_of_params_batch(r0v: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Tensors for a (K, 8) parameter batch, vectorized."""
    x = np.atleast_2d(x)
    big_k = x.shape[0]
    w = np.sqrt(np.clip(1.0 - x[:, 2] ** 2 - x[:, 3] ** 2, 1e-12, None))
    dx, dz = x[:, 2], x[:, 3]
    rd = np.empty((big_k, 3, 3))
    rd[:, 0, 0] = 1 - 2 * dz * dz
    rd[:, 0, 1] = -2 * w * dz
    rd[:, 0, 2] = 2 * dx * dz
    rd[:, 1, 0] = 2 * w * dz
    rd[:, 1, 1] = 1 - 2 * dx * dx - 2 * dz * dz
    rd[:, 1, 2] = -2 * w * dx
    rd[:, 2, 0] = 2 * dx * dz
    rd[:, 2, 1] = 2 * w * dx
    rd[:, 2, 2] = 1 - 2 * dx * dx
    blocks = []
    for i in range(3):
        if i == 0:
            c = np.ones(big_k)
            s = np.zeros(big_k)
        else:
            c = np.cos(x[:, i - 1])
            s = np.sin(x[:, i - 1])
        ry = np.zeros((big_k, 3, 3))
        ry[:, 0, 0] = c
        ry[:, 0, 2] = s
        ry[:, 1, 1] = 1.0
        ry[:, 2, 0] = -s
        ry[:, 2, 2] = c
        rdi = np.einsum("ab,kbc,kcd->kad", r0v[i], ry, rd)
        b = np.empty((big_k, 2, 2))
        b[:, 0, 0] = -rdi[:, 0, 2]
        b[:, 0, 1] = rdi[:, 0, 0]
        b[:, 1, 0] = -rdi[:, 2, 2]
        b[:, 1, 1] = rdi[:, 2, 0]
        blocks.append(b)
    b1, b2, b3 = blocks
    d12 = np.einsum("ka,kb->kab", b1[:, :, 0], b2[:, :, 1]) - np.einsum(
        "ka,kb->kab", b1[:, :, 1], b2[:, :, 0])
    d13 = np.einsum("ka,kb->kab", b1[:, :, 0], b3[:, :, 1]) - np.einsum(
        "ka,kb->kab", b1[:, :, 1], b3[:, :, 0])
    t = (-np.einsum("kb,kac->kabc", x[:, 4:6], d13)
         + np.einsum("kc,kab->kabc", x[:, 6:8], d12))
    return t.reshape(big_k, 8)


def tensor_of_params(r0v: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Reference (numpy) tensor of a parameter vector; used by callers to
    gate acceptance and by tests to cross-check the kernel."""
    from .geometry import rot_y, quat_to_rot

    th = [0.0, x[0], x[1]]
    dx, dz = x[2], x[3]
    w = np.sqrt(max(1.0 - dx * dx - dz * dz, 1e-12))
    rd = quat_to_rot(np.array([w, dx, 0.0, dz]))
    ts = [np.zeros(2), x[4:6], x[6:8]]
    mats = []
    for i in range(3):
        rdi = r0v[i] @ rot_y(th[i]) @ rd
        mats.append(np.array([
            [-rdi[0, 2], rdi[0, 0], ts[i][0]],
            [-rdi[2, 2], rdi[2, 0], ts[i][1]],
        ]))
    t = np.empty(8)
    q = 0
    for a in range(2):
        for b in range(2):
            for c in range(2):
                t[q] = np.linalg.det(
                    np.vstack([mats[0][a], mats[1][b], mats[2][c]]))
                q += 1
    return t
