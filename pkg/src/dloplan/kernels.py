"""Hot numeric kernels, each with a compiled and a pure-numpy implementation.

Obstacle sets are passed packed: ``verts`` is an (V, 2) array of all
counter-clockwise vertices and ``starts`` an (n_obs + 1,) int64 array so that
obstacle ``k`` owns ``verts[starts[k]:starts[k + 1]]``.  The workspace
boundary ``[0, width] x [0, height]`` is handled as four half-planes.
"""
import math

import numpy as np

from dloplan._accel import USE_NUMBA, njit

GEO_EPS = 1e-9


# --------------------------------------------------------------------------
# point / convex polygon signed distance
# --------------------------------------------------------------------------

def polygon_sd_numpy(points, verts):
    """Signed distance and its gradient for many points against one polygon."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    v0 = verts
    v1 = np.roll(verts, -1, axis=0)
    e = v1 - v0
    elen = np.sqrt((e ** 2).sum(axis=1))
    normals = np.stack([e[:, 1], -e[:, 0]], axis=1) / elen[:, None]
    rel = p[:, None, :] - v0[None, :, :]                    # (P, V, 2)
    h = (rel * normals[None]).sum(axis=2)                   # (P, V)
    t = np.clip((rel * e[None]).sum(axis=2) / (elen ** 2)[None], 0.0, 1.0)
    closest = v0[None] + t[..., None] * e[None]
    diff = p[:, None, :] - closest
    d = np.sqrt((diff ** 2).sum(axis=2))
    kmin = np.argmin(d, axis=1)
    rows = np.arange(p.shape[0])
    dmin = d[rows, kmin]
    inside = (h <= 0.0).all(axis=1)
    kmax = np.argmax(h, axis=1)
    sd = np.where(inside, h[rows, kmax], dmin)
    safe = np.where(dmin > 0.0, dmin, 1.0)
    g_out = diff[rows, kmin] / safe[:, None]
    # On the boundary the outward normal of the touching edge is used.
    g_out = np.where((dmin > 0.0)[:, None], g_out, normals[kmax])
    grad = np.where(inside[:, None], normals[kmax], g_out)
    return sd, grad


@njit
def polygon_sd_numba(points, verts):
    npts = points.shape[0]
    nv = verts.shape[0]
    sd = np.empty(npts)
    grad = np.empty((npts, 2))
    for i in range(npts):
        px = points[i, 0]
        py = points[i, 1]
        hmax = -np.inf
        kmax = 0
        dmin = np.inf
        gx = 0.0
        gy = 0.0
        for k in range(nv):
            ax = verts[k, 0]
            ay = verts[k, 1]
            bx = verts[(k + 1) % nv, 0]
            by = verts[(k + 1) % nv, 1]
            ex = bx - ax
            ey = by - ay
            el2 = ex * ex + ey * ey
            el = math.sqrt(el2)
            h = ((px - ax) * ey - (py - ay) * ex) / el
            if h > hmax:
                hmax = h
                kmax = k
            t = ((px - ax) * ex + (py - ay) * ey) / el2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            dx = px - (ax + t * ex)
            dy = py - (ay + t * ey)
            d = math.sqrt(dx * dx + dy * dy)
            if d < dmin:
                dmin = d
                if d > 0.0:
                    gx = dx / d
                    gy = dy / d
                else:
                    gx = ey / el
                    gy = -ex / el
        ax = verts[kmax, 0]
        ay = verts[kmax, 1]
        ex = verts[(kmax + 1) % nv, 0] - ax
        ey = verts[(kmax + 1) % nv, 1] - ay
        el = math.sqrt(ex * ex + ey * ey)
        if hmax <= 0.0:
            sd[i] = hmax
            grad[i, 0] = ey / el
            grad[i, 1] = -ex / el
        else:
            sd[i] = dmin
            grad[i, 0] = gx
            grad[i, 1] = gy
    return sd, grad


def polygon_sd(points, verts):
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    verts = np.ascontiguousarray(verts, dtype=np.float64)
    if USE_NUMBA:
        return polygon_sd_numba(points, verts)
    return polygon_sd_numpy(points, verts)


# --------------------------------------------------------------------------
# clearance against a whole packed obstacle set plus the boundary
# --------------------------------------------------------------------------

def clearance_numpy(points, verts, starts, width, height, walls=True):
    """Minimum signed distance of each point and the gradient of that minimum."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    best = np.full(p.shape[0], np.inf)
    grad = np.zeros((p.shape[0], 2))
    if walls:
        wall_d = np.stack([p[:, 0], width - p[:, 0], p[:, 1], height - p[:, 1]], axis=1)
        wall_g = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        k = np.argmin(wall_d, axis=1)
        best = wall_d[np.arange(p.shape[0]), k]
        grad = wall_g[k].copy()
    for o in range(len(starts) - 1):
        sd, g = polygon_sd_numpy(p, verts[starts[o]:starts[o + 1]])
        better = sd < best
        best = np.where(better, sd, best)
        grad = np.where(better[:, None], g, grad)
    return best, grad


@njit
def clearance_numba(points, verts, starts, width, height, walls=True):
    npts = points.shape[0]
    best = np.full(npts, np.inf)
    grad = np.zeros((npts, 2))
    if walls:
        for i in range(npts):
            x = points[i, 0]
            y = points[i, 1]
            best[i] = x
            grad[i, 0] = 1.0
            grad[i, 1] = 0.0
            if width - x < best[i]:
                best[i] = width - x
                grad[i, 0] = -1.0
                grad[i, 1] = 0.0
            if y < best[i]:
                best[i] = y
                grad[i, 0] = 0.0
                grad[i, 1] = 1.0
            if height - y < best[i]:
                best[i] = height - y
                grad[i, 0] = 0.0
                grad[i, 1] = -1.0
    for o in range(starts.shape[0] - 1):
        sd, g = polygon_sd_numba(points, verts[starts[o]:starts[o + 1]])
        for i in range(npts):
            if sd[i] < best[i]:
                best[i] = sd[i]
                grad[i, 0] = g[i, 0]
                grad[i, 1] = g[i, 1]
    return best, grad


def clearance(points, verts, starts, width, height, walls=True):
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    if USE_NUMBA:
        return clearance_numba(points, verts, starts, float(width), float(height), walls)
    return clearance_numpy(points, verts, starts, width, height, walls)


# --------------------------------------------------------------------------
# segment versus obstacle set
# --------------------------------------------------------------------------

@njit
def _pt_seg_dist(px, py, ax, ay, bx, by):
    ex = bx - ax
    ey = by - ay
    el2 = ex * ex + ey * ey
    if el2 == 0.0:
        t = 0.0
    else:
        t = ((px - ax) * ex + (py - ay) * ey) / el2
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    dx = px - (ax + t * ex)
    dy = py - (ay + t * ey)
    return math.sqrt(dx * dx + dy * dy)


@njit
def _cross(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


@njit
def _segments_cross(ax, ay, bx, by, cx, cy, dx, dy):
    d1 = _cross(cx, cy, dx, dy, ax, ay)
    d2 = _cross(cx, cy, dx, dy, bx, by)
    d3 = _cross(ax, ay, bx, by, cx, cy)
    d4 = _cross(ax, ay, bx, by, dx, dy)
    return ((d1 > 0.0) != (d2 > 0.0)) and ((d3 > 0.0) != (d4 > 0.0)) and d1 != 0.0 and d2 != 0.0 \
        and d3 != 0.0 and d4 != 0.0


@njit
def _point_in_convex(px, py, verts):
    nv = verts.shape[0]
    for k in range(nv):
        ax = verts[k, 0]
        ay = verts[k, 1]
        bx = verts[(k + 1) % nv, 0]
        by = verts[(k + 1) % nv, 1]
        if (bx - ax) * (py - ay) - (by - ay) * (px - ax) < 0.0:
            return False
    return True


@njit
def segment_polygon_distance_numba(ax, ay, bx, by, verts):
    """Distance between segment ab and a convex polygon; 0 when they meet."""
    if _point_in_convex(ax, ay, verts) or _point_in_convex(bx, by, verts):
        return 0.0
    nv = verts.shape[0]
    best = np.inf
    for k in range(nv):
        cx = verts[k, 0]
        cy = verts[k, 1]
        dx = verts[(k + 1) % nv, 0]
        dy = verts[(k + 1) % nv, 1]
        if _segments_cross(ax, ay, bx, by, cx, cy, dx, dy):
            return 0.0
        d = _pt_seg_dist(cx, cy, ax, ay, bx, by)
        if d < best:
            best = d
        d = _pt_seg_dist(ax, ay, cx, cy, dx, dy)
        if d < best:
            best = d
        d = _pt_seg_dist(bx, by, cx, cy, dx, dy)
        if d < best:
            best = d
    return best


@njit
def segment_clearance_numba(ax, ay, bx, by, verts, starts, width, height, walls):
    best = np.inf
    if walls:
        best = min(ax, bx, width - ax, width - bx, ay, by, height - ay, height - by)
    for o in range(starts.shape[0] - 1):
        d = segment_polygon_distance_numba(ax, ay, bx, by, verts[starts[o]:starts[o + 1]])
        if d < best:
            best = d
    return best


def segment_polygon_distance_numpy(a, b, verts):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    v0 = verts
    v1 = np.roll(verts, -1, axis=0)
    e = v1 - v0
    cr = lambda o, p, q: (p[..., 0] - o[..., 0]) * (q[..., 1] - o[..., 1]) - (p[..., 1] - o[..., 1]) * (q[..., 0] - o[..., 0])
    for p in (a, b):
        if np.all(cr(v0, v1, p[None]) >= 0.0):
            return 0.0
    d1 = cr(v0, v1, a[None])
    d2 = cr(v0, v1, b[None])
    d3 = cr(a[None], b[None], v0)
    d4 = cr(a[None], b[None], v1)
    crossing = ((d1 > 0) != (d2 > 0)) & ((d3 > 0) != (d4 > 0)) & (d1 != 0) & (d2 != 0) & (d3 != 0) & (d4 != 0)
    if crossing.any():
        return 0.0

    def pt_seg(p, s0, s1):
        ev = s1 - s0
        l2 = (ev ** 2).sum(axis=-1)
        t = np.where(l2 > 0, ((p - s0) * ev).sum(axis=-1) / np.where(l2 > 0, l2, 1.0), 0.0)
        t = np.clip(t, 0.0, 1.0)
        return np.sqrt(((p - s0 - t[..., None] * ev) ** 2).sum(axis=-1))

    return float(min(pt_seg(v0, a[None], b[None]).min(), pt_seg(a[None], v0, v1).min(), pt_seg(b[None], v0, v1).min()))


def segment_clearance_numpy(a, b, verts, starts, width, height, walls=True):
    best = np.inf
    if walls:
        best = min(a[0], b[0], width - a[0], width - b[0], a[1], b[1], height - a[1], height - b[1])
    for o in range(len(starts) - 1):
        best = min(best, segment_polygon_distance_numpy(a, b, verts[starts[o]:starts[o + 1]]))
    return float(best)


def segment_clearance(a, b, verts, starts, width, height, walls=True):
    """Distance from segment ab to the nearest obstacle (0 if touching/crossing)."""
    if USE_NUMBA:
        return segment_clearance_numba(float(a[0]), float(a[1]), float(b[0]), float(b[1]),
                                       verts, starts, float(width), float(height), walls)
    return segment_clearance_numpy(np.asarray(a, float), np.asarray(b, float), verts, starts, width, height, walls)


@njit
def polyline_clearance_numba(pts, verts, starts, width, height, walls):
    best = np.inf
    for i in range(pts.shape[0] - 1):
        d = segment_clearance_numba(pts[i, 0], pts[i, 1], pts[i + 1, 0], pts[i + 1, 1],
                                    verts, starts, width, height, walls)
        if d < best:
            best = d
    return best


def polyline_clearance(pts, verts, starts, width, height, walls=True):
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    if USE_NUMBA:
        return polyline_clearance_numba(pts, verts, starts, float(width), float(height), walls)
    return min(segment_clearance_numpy(pts[i], pts[i + 1], verts, starts, width, height, walls)
               for i in range(len(pts) - 1))


# --------------------------------------------------------------------------
# sigmoid-weighted path interpolation
# --------------------------------------------------------------------------

def _log_sigmoid(u):
    return np.minimum(u, 0.0) - np.log1p(np.exp(-np.abs(u)))


def _sigmoid(u):
    e = np.exp(-np.abs(u))
    return np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_interp_numpy(wps, sig, a, q):
    """Weighted-segment interpolant and its derivative at parameters ``q``."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    x0 = wps[:-1]
    dx = (wps[1:] - wps[:-1]) / (sig[1:] - sig[:-1])[:, None]
    u1 = a * (q[:, None] - sig[None, :-1])
    u2 = a * (sig[None, 1:] - q[:, None])
    logw = _log_sigmoid(u1) + _log_sigmoid(u2)
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    xk = x0[None] + dx[None] * (q[:, None] - sig[None, :-1])[..., None]
    val = (w[..., None] * xk).sum(axis=1)
    dlogw = a * (_sigmoid(u2) - _sigmoid(u1))
    mean_dlogw = (w * dlogw).sum(axis=1)
    der = (w[..., None] * (dlogw[..., None] * xk + dx[None])).sum(axis=1) - val * mean_dlogw[:, None]
    return val, der


@njit
def sigmoid_interp_numba(wps, sig, a, q):
    nq = q.shape[0]
    m = wps.shape[0] - 1
    val = np.zeros((nq, 2))
    der = np.zeros((nq, 2))
    logw = np.empty(m)
    for i in range(nq):
        s = q[i]
        lmax = -np.inf
        for k in range(m):
            u1 = a * (s - sig[k])
            u2 = a * (sig[k + 1] - s)
            l1 = min(u1, 0.0) - math.log1p(math.exp(-abs(u1)))
            l2 = min(u2, 0.0) - math.log1p(math.exp(-abs(u2)))
            logw[k] = l1 + l2
            if logw[k] > lmax:
                lmax = logw[k]
        wsum = 0.0
        for k in range(m):
            logw[k] = math.exp(logw[k] - lmax)
            wsum += logw[k]
        vx = 0.0
        vy = 0.0
        gx = 0.0
        gy = 0.0
        mdl = 0.0
        for k in range(m):
            w = logw[k] / wsum
            ds = sig[k + 1] - sig[k]
            sx = (wps[k + 1, 0] - wps[k, 0]) / ds
            sy = (wps[k + 1, 1] - wps[k, 1]) / ds
            xk = wps[k, 0] + sx * (s - sig[k])
            yk = wps[k, 1] + sy * (s - sig[k])
            u1 = a * (s - sig[k])
            u2 = a * (sig[k + 1] - s)
            s1 = 1.0 / (1.0 + math.exp(-u1)) if u1 >= 0 else math.exp(u1) / (1.0 + math.exp(u1))
            s2 = 1.0 / (1.0 + math.exp(-u2)) if u2 >= 0 else math.exp(u2) / (1.0 + math.exp(u2))
            dl = a * (s2 - s1)
            vx += w * xk
            vy += w * yk
            gx += w * (dl * xk + sx)
            gy += w * (dl * yk + sy)
            mdl += w * dl
        val[i, 0] = vx
        val[i, 1] = vy
        der[i, 0] = gx - vx * mdl
        der[i, 1] = gy - vy * mdl
    return val, der


def sigmoid_interp(wps, sig, a, q):
    wps = np.ascontiguousarray(wps, dtype=np.float64)
    sig = np.ascontiguousarray(sig, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64).reshape(-1)
    if USE_NUMBA:
        return sigmoid_interp_numba(wps, sig, float(a), q)
    return sigmoid_interp_numpy(wps, sig, float(a), q)


# --------------------------------------------------------------------------
# inextensible chain equilibrium (feasible reduced-Newton descent)
# --------------------------------------------------------------------------

@njit
def _chain_gap(phi, link, target):
    gx = -target[0]
    gy = -target[1]
    for j in range(phi.shape[0]):
        gx += link * math.cos(phi[j])
        gy += link * math.sin(phi[j])
    return gx, gy


@njit
def _chain_energy(phi, stiffness):
    e = 0.0
    for j in range(phi.shape[0] - 1):
        d = phi[j + 1] - phi[j]
        e += 0.5 * stiffness * d * d
    return e


@njit
def _restore(phi, link, target, max_iter):
    """Min-norm Gauss-Newton on the closure constraint over interior angles."""
    nl = phi.shape[0]
    nf = nl - 2
    for _ in range(max_iter):
        gx, gy = _chain_gap(phi, link, target)
        gn = math.sqrt(gx * gx + gy * gy)
        if gn < 1e-14:
            return phi, gn
        jac = np.empty((2, nf))
        for j in range(nf):
            jac[0, j] = -link * math.sin(phi[j + 1])
            jac[1, j] = link * math.cos(phi[j + 1])
        jjt = jac @ jac.T
        det = jjt[0, 0] * jjt[1, 1] - jjt[0, 1] * jjt[1, 0]
        if abs(det) < 1e-18:
            return phi, gn
        ix0 = (jjt[1, 1] * gx - jjt[0, 1] * gy) / det
        ix1 = (-jjt[1, 0] * gx + jjt[0, 0] * gy) / det
        step = -(jac[0] * ix0 + jac[1] * ix1)
        t = 1.0
        accepted = False
        for _ls in range(30):
            trial = phi.copy()
            trial[1:nl - 1] += t * step
            tx, ty = _chain_gap(trial, link, target)
            if math.sqrt(tx * tx + ty * ty) < gn:
                phi = trial
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return phi, gn
    gx, gy = _chain_gap(phi, link, target)
    return phi, math.sqrt(gx * gx + gy * gy)


@njit
def chain_relax_kernel(phi0, link, target, stiffness, damping, tol, max_iter):
    """Minimise bending energy of a welded-end chain with fixed closure.

    ``phi0`` holds all link angles; the first and last are held fixed.
    Returns (phi, iterations, residual, gap, energy_trace).
    """
    phi = phi0.copy()
    nl = phi.shape[0]
    nf = nl - 2
    trace = np.full(max_iter + 1, np.nan)
    phi, gap = _restore(phi, link, target, 100)
    if gap > 1e-10:
        return phi, 0, np.inf, gap, trace
    mu = damping * 1e-3
    resid = np.inf
    it = 0
    energy = _chain_energy(phi, stiffness)
    trace[0] = energy
    for it in range(max_iter):
        jac = np.empty((2, nf))
        for j in range(nf):
            jac[0, j] = -link * math.sin(phi[j + 1])
            jac[1, j] = link * math.cos(phi[j + 1])
        grad = np.zeros(nf)
        for j in range(nf):
            jj = j + 1
            grad[j] = stiffness * (2.0 * phi[jj] - phi[jj - 1] - phi[jj + 1])
        # null-space basis of the constraint Jacobian
        u, s, vt = np.linalg.svd(jac)
        z = vt[2:].T.copy()
        jjt = jac @ jac.T
        lam = -np.linalg.solve(jjt, jac @ grad)
        pg = z.T @ grad
        resid = 0.0
        for j in range(pg.shape[0]):
            if abs(pg[j]) > resid:
                resid = abs(pg[j])
        if resid < tol:
            return phi, it, resid, gap, trace
        hess = np.zeros((nf, nf))
        for j in range(nf):
            hess[j, j] = 2.0 * stiffness - link * (lam[0] * math.cos(phi[j + 1]) + lam[1] * math.sin(phi[j + 1]))
            if j > 0:
                hess[j, j - 1] = -stiffness
                hess[j - 1, j] = -stiffness
        rh = z.T @ hess @ z
        w, vec = np.linalg.eigh(rh)
        shift = mu
        floor = 1e-6 * stiffness
        if w[0] + shift < floor:
            shift = floor - w[0]
        rh_inv_g = vec @ ((vec.T @ pg) / (w + shift))
        step = -(z @ rh_inv_g)
        t = 1.0
        accepted = False
        for _ls in range(40):
            trial = phi.copy()
            trial[1:nl - 1] += t * step
            trial, tg = _restore(trial, link, target, 20)
            if tg < 1e-12:
                e_trial = _chain_energy(trial, stiffness)
                if e_trial <= energy - 1e-4 * t * (pg @ rh_inv_g) or e_trial <= energy and t < 1e-6:
                    phi = trial
                    gap = tg
                    energy = e_trial
                    accepted = True
                    break
            t *= 0.5
        trace[it + 1] = energy
        mu *= 0.1
        if not accepted:
            return phi, it + 1, resid, gap, trace
    return phi, max_iter, resid, gap, trace


def chain_relax(phi0, link, target, stiffness, damping, tol=1e-11, max_iter=200):
    phi0 = np.ascontiguousarray(phi0, dtype=np.float64)
    target = np.ascontiguousarray(target, dtype=np.float64)
    return chain_relax_kernel(phi0, float(link), target, float(stiffness), float(damping), float(tol),
                              int(max_iter))
