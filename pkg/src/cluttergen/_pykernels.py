"""Pure-Python implementations of the hot kernels.

This module is the fallback used when the compiled ``_ckernels`` extension is
unavailable. Both modules expose the same functions with the same array
contracts and follow the same algorithms step for step, so results agree to
rounding.
"""
import math

import numpy as np

EDGE_TOL = 1e-4
FACE_TOL = 1e-4
WARM_TOL2 = 0.003 ** 2
RESTITUTION_THRESHOLD = 0.2
MAX_CONTACTS = 4


# ----------------------------------------------------------------------------
# ray casting
# ----------------------------------------------------------------------------

def raycast(origins, dirs, v0, e1, e2, offsets, boxes, chunk=4096):
    """Nearest hit of every ray against groups of triangles (Moller-Trumbore).

    Rays are culled per group against its bounding box before any triangle test.
    """
    nr = len(dirs)
    best_t = np.full(nr, np.inf)
    best_tri = np.full(nr, -1, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    for g in range(len(offsets) - 1):
        lo, hi = offsets[g], offsets[g + 1]
        if hi <= lo:
            continue
        with np.errstate(invalid="ignore"):
            ta = (boxes[g, :3] - origins) * inv
            tb = (boxes[g, 3:] - origins) * inv
        tmin = np.nanmax(np.minimum(ta, tb), axis=1)
        tmax = np.nanmin(np.maximum(ta, tb), axis=1)
        cand = np.nonzero((tmax >= np.maximum(tmin, 0.0)) & (tmin < best_t))[0]
        if len(cand) == 0:
            continue
        for s in range(0, len(cand), chunk):
            idx = cand[s:s + chunk]
            o = origins[idx][:, None, :]
            d = dirs[idx][:, None, :]
            a0, a1, a2 = v0[lo:hi][None], e1[lo:hi][None], e2[lo:hi][None]
            p = np.cross(d, a2)
            det = (a1 * p).sum(-1)
            with np.errstate(divide="ignore", invalid="ignore"):
                inv_det = 1.0 / det
                tv = o - a0
                u = (tv * p).sum(-1) * inv_det
                q = np.cross(tv, a1)
                v = (d * q).sum(-1) * inv_det
                t = (a2 * q).sum(-1) * inv_det
            ok = (np.abs(det) > 1e-14) & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-9)
            t = np.where(ok, t, np.inf)
            k = np.argmin(t, axis=1)
            tk = t[np.arange(len(idx)), k]
            better = tk < best_t[idx]
            best_t[idx[better]] = tk[better]
            best_tri[idx[better]] = k[better] + lo
    return best_t, best_tri


# ----------------------------------------------------------------------------
# oriented box vs triangles
# ----------------------------------------------------------------------------

def obb_tri_hits(box_c, box_ax, box_h, tris, is_target):
    """Separating-axis overlap of oriented boxes against triangles.

    Touching counts as overlap. Returns a (B, 2) uint8 array whose columns flag
    an overlap with any non-target triangle and with any target triangle.
    """
    out = np.zeros((len(box_c), 2), dtype=np.uint8)
    if len(tris) == 0:
        return out
    centers = tris.mean(axis=1)
    radii = np.linalg.norm(tris - centers[:, None], axis=2).max(axis=1)
    target = is_target.astype(bool)
    for b in range(len(box_c)):
        rb = float(np.linalg.norm(box_h[b]))
        near = np.nonzero(np.linalg.norm(centers - box_c[b], axis=1) <= rb + radii)[0]
        if len(near) == 0:
            continue
        ax = box_ax[b]
        h = box_h[b]
        v = (tris[near] - box_c[b]) @ ax.T  # triangle corners in box coordinates
        sep = np.zeros(len(near), dtype=bool)
        for k in range(3):
            sep |= (v[:, :, k].min(axis=1) > h[k]) | (v[:, :, k].max(axis=1) < -h[k])
        f0, f1, f2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 1], v[:, 0] - v[:, 2]
        normal = np.cross(f0, f1)
        axes = [normal]
        for f in (f0, f1, f2):
            for k in range(3):
                e = np.zeros(3)
                e[k] = 1.0
                axes.append(np.cross(e, f))
        for a in axes:
            p = (v * a[:, None, :]).sum(-1)
            r = (np.abs(a) * h).sum(-1)
            sep |= (p.min(axis=1) > r) | (p.max(axis=1) < -r)
        hit = near[~sep]
        if len(hit):
            out[b, 0] = 1 if (~target[hit]).any() else 0
            out[b, 1] = 1 if target[hit].any() else 0
    return out


# ----------------------------------------------------------------------------
# rigid-body step
# ----------------------------------------------------------------------------

def _quat_mat(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _basis(n):
    if abs(n[0]) < 0.57735:
        t1 = np.array([0.0, n[2], -n[1]])
    else:
        t1 = np.array([-n[2], 0.0, n[0]])
    t1 = t1 / math.sqrt(t1 @ t1)
    return t1, np.cross(n, t1)


def _closest_segments(p1, q1, p2, q2):
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    c = d1 @ r
    b = d1 @ d2
    denom = a * e - b * b
    s = min(max((b * f - c * e) / denom, 0.0), 1.0) if denom > 1e-18 else 0.0
    t = (b * s + f) / e
    if t < 0.0:
        t = 0.0
        s = min(max(-c / a, 0.0), 1.0)
    elif t > 1.0:
        t = 1.0
        s = min(max((b - c) / a, 0.0), 1.0)
    return p1 + d1 * s, p2 + d2 * t


def _reduce(points, depths, normal):
    t1, _ = _basis(normal)
    pts = np.array(points)
    i0 = int(np.argmax(pts @ t1))
    i1 = int(np.argmax(((pts - pts[i0]) ** 2).sum(1)))
    area = np.cross(pts[i1] - pts[i0], pts - pts[i0]) @ normal
    i2 = int(np.argmax(area))
    i3 = int(np.argmin(area))
    keep = []
    for i in (i0, i1, i2, i3):
        if i not in keep:
            keep.append(i)
    return [points[i] for i in keep], [depths[i] for i in keep]


def collide(a, b, wv, wn, wd, wu, xc, v_off, f_off, fptr, fvi, ev, e_dir, e_off, u_off, margin):
    """Contact manifold between convex bodies ``a`` and ``b`` (world frame).

    Returns ``(normal, points, depths)`` with the normal pointing from ``a`` to
    ``b`` and positive depth meaning penetration; empty lists when separated.
    """
    va = wv[v_off[a]:v_off[a + 1]]
    vb = wv[v_off[b]:v_off[b + 1]]

    s = (vb @ wn[f_off[a]:f_off[a + 1]].T).min(axis=0) - wd[f_off[a]:f_off[a + 1]]
    fa = int(np.argmax(s))
    sa = s[fa]
    fa += f_off[a]
    if sa > margin:
        return None, [], []
    s = (va @ wn[f_off[b]:f_off[b + 1]].T).min(axis=0) - wd[f_off[b]:f_off[b + 1]]
    fb = int(np.argmax(s))
    sb = s[fb]
    fb += f_off[b]
    if sb > margin:
        return None, [], []

    dc = xc[b] - xc[a]
    se = -np.inf
    best = None
    for ua in range(u_off[a], u_off[a + 1]):
        for ub in range(u_off[b], u_off[b + 1]):
            ax = np.cross(wu[ua], wu[ub])
            ln = math.sqrt(ax @ ax)
            if ln < 1e-6:
                continue
            ax = ax / ln
            if ax @ dc < 0:
                ax = -ax
            sep = (vb @ ax).min() - (va @ ax).max()
            if sep > se:
                se = sep
                best = (ua, ub, ax)
    if se > margin:
        return None, [], []

    if best is not None and se > max(sa, sb) + EDGE_TOL:
        ua, ub, n = best
        ea = [k for k in range(e_off[a], e_off[a + 1]) if e_dir[k] == ua]
        eb = [k for k in range(e_off[b], e_off[b + 1]) if e_dir[k] == ub]
        ka = max(ea, key=lambda k: n @ (wv[ev[k, 0]] + wv[ev[k, 1]]))
        kb = min(eb, key=lambda k: n @ (wv[ev[k, 0]] + wv[ev[k, 1]]))
        c1, c2 = _closest_segments(wv[ev[ka, 0]], wv[ev[ka, 1]], wv[ev[kb, 0]], wv[ev[kb, 1]])
        return n, [0.5 * (c1 + c2)], [-se]

    if sb > sa + FACE_TOL:
        ref, inc_body, flip = fb, a, True
    else:
        ref, inc_body, flip = fa, b, False
    nr = wn[ref]
    dr = wd[ref]
    inc = f_off[inc_body] + int(np.argmin(wn[f_off[inc_body]:f_off[inc_body + 1]] @ nr))
    poly = [wv[i] for i in fvi[fptr[inc]:fptr[inc + 1]]]
    ref_poly = [wv[i] for i in fvi[fptr[ref]:fptr[ref + 1]]]
    m = len(ref_poly)
    for k in range(m):
        p0 = ref_poly[k]
        side = np.cross(ref_poly[(k + 1) % m] - p0, nr)
        out = []
        prev = poly[-1]
        dp = side @ (prev - p0)
        for cur in poly:
            dcur = side @ (cur - p0)
            if dcur <= 0:
                if dp > 0:
                    out.append(prev + (cur - prev) * (dp / (dp - dcur)))
                out.append(cur)
            elif dp <= 0:
                out.append(prev + (cur - prev) * (dp / (dp - dcur)))
            prev = cur
            dp = dcur
        poly = out
        if not poly:
            break
    points, depths = [], []
    for q in poly:
        sep = nr @ q - dr
        if sep <= margin:
            points.append(q - 0.5 * sep * nr)
            depths.append(-sep)
    normal = -nr if flip else nr.copy()
    if len(points) > MAX_CONTACTS:
        points, depths = _reduce(points, depths, normal)
    return normal, points, depths


def step(pos, quat, vel, angv, com, inv_mass, inv_inertia, damping, dynamic, awake, sleep_count,
         hv, v_off, fn, fd, f_off, fptr, fvi, ev, e_dir, e_off, ud, u_off,
         c_pair, c_local, c_imp, c_count, out_pair, out_local, out_imp, fparams, iparams):
    """Advance the world arrays by one time step, in place.

    Returns the number of contacts written to the ``out_*`` cache arrays.
    """
    g = np.array(fparams[0:3])
    dt, mu, rest, slop, beta, margin, max_lin, max_ang, sleep_v, sleep_w = (float(x) for x in fparams[3:13])
    iterations, sleep_steps = int(iparams[0]), int(iparams[1])
    n = len(pos)

    rot = [_quat_mat(quat[i]) for i in range(n)]
    xc = np.array([pos[i] + rot[i] @ com[i] for i in range(n)]).reshape(n, 3)
    wv = np.empty_like(hv)
    wn = np.empty_like(fn)
    wd = np.empty_like(fd)
    wu = np.empty_like(ud)
    aabb = np.empty((n, 6))
    for i in range(n):
        sl = slice(v_off[i], v_off[i + 1])
        wv[sl] = hv[sl] @ rot[i].T + pos[i]
        sl = slice(f_off[i], f_off[i + 1])
        wn[sl] = fn[sl] @ rot[i].T
        wd[sl] = fd[sl] + wn[sl] @ pos[i]
        sl = slice(u_off[i], u_off[i + 1])
        wu[sl] = ud[sl] @ rot[i].T
        pts = wv[v_off[i]:v_off[i + 1]]
        aabb[i, :3] = pts.min(axis=0) - margin
        aabb[i, 3:] = pts.max(axis=0) + margin

    def overlap(i, j):
        return (aabb[i, 0] <= aabb[j, 3] and aabb[j, 0] <= aabb[i, 3]
                and aabb[i, 1] <= aabb[j, 4] and aabb[j, 1] <= aabb[i, 4]
                and aabb[i, 2] <= aabb[j, 5] and aabb[j, 2] <= aabb[i, 5])

    active = [bool(dynamic[i] and awake[i]) for i in range(n)]
    moving = [active[i] and (math.sqrt(vel[i] @ vel[i]) > sleep_v or math.sqrt(angv[i] @ angv[i]) > sleep_w)
              for i in range(n)]
    for j in range(n):
        if dynamic[j] and not awake[j]:
            for i in range(n):
                if moving[i] and overlap(i, j):
                    awake[j] = 1
                    sleep_count[j] = 0
                    break
    active = [bool(dynamic[i] and awake[i]) for i in range(n)]

    for i in range(n):
        if active[i]:
            vel[i] += g * dt
            vel[i] *= math.exp(-damping[i, 0] * dt)
            angv[i] *= math.exp(-damping[i, 1] * dt)

    im = np.zeros(n)
    inv_i = np.zeros((n, 3, 3))
    for i in range(n):
        if active[i]:
            im[i] = inv_mass[i]
            inv_i[i] = rot[i] @ inv_inertia[i] @ rot[i].T

    # narrow phase
    contacts = []  # (a, b, point, normal, depth)
    for i in range(n):
        for j in range(i + 1, n):
            if not (active[i] or active[j]) or not overlap(i, j):
                continue
            normal, points, depths = collide(i, j, wv, wn, wd, wu, xc, v_off, f_off, fptr, fvi,
                                             ev, e_dir, e_off, u_off, margin)
            for p, d in zip(points, depths):
                contacts.append((i, j, p, normal, d))

    m = len(contacts)
    used = [False] * c_count
    ca = [0] * m
    cb = [0] * m
    ra = [None] * m
    rb = [None] * m
    nrm = [None] * m
    t1s = [None] * m
    t2s = [None] * m
    mn = [0.0] * m
    mt1 = [0.0] * m
    mt2 = [0.0] * m
    tgt = [0.0] * m
    tgp = [0.0] * m
    ln = [0.0] * m
    lt1 = [0.0] * m
    lt2 = [0.0] * m
    lp = [0.0] * m
    touching = [False] * n
    for c, (i, j, p, normal, d) in enumerate(contacts):
        ca[c], cb[c] = i, j
        touching[i] = touching[j] = True
        local = rot[i].T @ (p - pos[i])
        out_pair[c, 0], out_pair[c, 1] = i, j
        out_local[c] = local
        for k in range(c_count):
            if not used[k] and c_pair[k, 0] == i and c_pair[k, 1] == j:
                diff = c_local[k] - local
                if diff @ diff < WARM_TOL2:
                    used[k] = True
                    ln[c], lt1[c], lt2[c] = float(c_imp[k, 0]), float(c_imp[k, 1]), float(c_imp[k, 2])
                    break
        r_a = p - xc[i]
        r_b = p - xc[j]
        t1, t2 = _basis(normal)
        ra[c], rb[c], nrm[c], t1s[c], t2s[c] = r_a, r_b, normal, t1, t2

        def eff(axis):
            ca_ = np.cross(r_a, axis)
            cb_ = np.cross(r_b, axis)
            k = im[i] + im[j] + ca_ @ (inv_i[i] @ ca_) + cb_ @ (inv_i[j] @ cb_)
            return 1.0 / k if k > 0 else 0.0

        mn[c], mt1[c], mt2[c] = eff(normal), eff(t1), eff(t2)
        if d < 0:
            tgt[c] = d / dt
        else:
            dv = vel[j] + np.cross(angv[j], r_b) - vel[i] - np.cross(angv[i], r_a)
            vn = dv @ normal
            tgt[c] = -rest * vn if (rest > 0 and vn < -RESTITUTION_THRESHOLD) else 0.0
        tgp[c] = beta * max(d - slop, 0.0) / dt

    def apply(c, imp, lin, ang):
        i, j = ca[c], cb[c]
        lin[i] -= imp * im[i]
        ang[i] -= inv_i[i] @ np.cross(ra[c], imp)
        lin[j] += imp * im[j]
        ang[j] += inv_i[j] @ np.cross(rb[c], imp)

    for c in range(m):
        apply(c, ln[c] * nrm[c] + lt1[c] * t1s[c] + lt2[c] * t2s[c], vel, angv)

    pv = np.zeros((n, 3))
    pw = np.zeros((n, 3))
    for _ in range(iterations):
        for c in range(m):
            i, j = ca[c], cb[c]
            lim = mu * ln[c]
            dv = vel[j] + np.cross(angv[j], rb[c]) - vel[i] - np.cross(angv[i], ra[c])
            lam = -mt1[c] * (dv @ t1s[c])
            new = min(max(lt1[c] + lam, -lim), lim)
            lam = new - lt1[c]
            lt1[c] = new
            apply(c, lam * t1s[c], vel, angv)
            dv = vel[j] + np.cross(angv[j], rb[c]) - vel[i] - np.cross(angv[i], ra[c])
            lam = -mt2[c] * (dv @ t2s[c])
            new = min(max(lt2[c] + lam, -lim), lim)
            lam = new - lt2[c]
            lt2[c] = new
            apply(c, lam * t2s[c], vel, angv)

            dv = vel[j] + np.cross(angv[j], rb[c]) - vel[i] - np.cross(angv[i], ra[c])
            lam = mn[c] * (tgt[c] - dv @ nrm[c])
            new = max(ln[c] + lam, 0.0)
            lam = new - ln[c]
            ln[c] = new
            apply(c, lam * nrm[c], vel, angv)

            dv = pv[j] + np.cross(pw[j], rb[c]) - pv[i] - np.cross(pw[i], ra[c])
            lam = mn[c] * (tgp[c] - dv @ nrm[c])
            new = max(lp[c] + lam, 0.0)
            lam = new - lp[c]
            lp[c] = new
            apply(c, lam * nrm[c], pv, pw)

    for c in range(m):
        out_imp[c, 0], out_imp[c, 1], out_imp[c, 2] = ln[c], lt1[c], lt2[c]

    for i in range(n):
        if not active[i]:
            continue
        sp = math.sqrt(vel[i] @ vel[i])
        if sp * dt > max_lin:
            vel[i] *= max_lin / (sp * dt)
        sp = math.sqrt(angv[i] @ angv[i])
        if sp * dt > max_ang:
            angv[i] *= max_ang / (sp * dt)
        x = xc[i] + (vel[i] + pv[i]) * dt
        if not touching[i]:
            x -= 0.5 * g * dt * dt
        w = angv[i] + pw[i]
        q = quat[i]
        dq = 0.5 * dt * np.array([
            -w[0] * q[1] - w[1] * q[2] - w[2] * q[3],
            w[0] * q[0] + w[1] * q[3] - w[2] * q[2],
            -w[0] * q[3] + w[1] * q[0] + w[2] * q[1],
            w[0] * q[2] - w[1] * q[1] + w[2] * q[0],
        ])
        q = q + dq
        q = q / math.sqrt(q @ q)
        quat[i] = q
        pos[i] = x - _quat_mat(q) @ com[i]

        if touching[i] and math.sqrt(vel[i] @ vel[i]) < sleep_v and math.sqrt(angv[i] @ angv[i]) < sleep_w:
            sleep_count[i] += 1
        else:
            sleep_count[i] = 0
        if sleep_count[i] >= sleep_steps:
            awake[i] = 0
            vel[i] = 0.0
            angv[i] = 0.0
    return m
