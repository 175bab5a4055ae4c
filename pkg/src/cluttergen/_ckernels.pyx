# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; mirrors ``_pykernels`` function for function."""
import numpy as np

from libc.math cimport sqrt, fabs, exp, INFINITY

cdef double EDGE_TOL = 1e-4
cdef double FACE_TOL = 1e-4
cdef double WARM_TOL2 = 0.003 * 0.003
cdef double RESTITUTION_THRESHOLD = 0.2
DEF MAX_CONTACTS = 4
DEF MAX_POLY = 256


cdef inline double dot3(const double* a, const double* b) noexcept nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


cdef inline void cross3(const double* a, const double* b, double* out) noexcept nogil:
    cdef double x = a[1] * b[2] - a[2] * b[1]
    cdef double y = a[2] * b[0] - a[0] * b[2]
    cdef double z = a[0] * b[1] - a[1] * b[0]
    out[0] = x
    out[1] = y
    out[2] = z


cdef inline void matvec(const double* m, const double* v, double* out) noexcept nogil:
    cdef double x = m[0] * v[0] + m[1] * v[1] + m[2] * v[2]
    cdef double y = m[3] * v[0] + m[4] * v[1] + m[5] * v[2]
    cdef double z = m[6] * v[0] + m[7] * v[1] + m[8] * v[2]
    out[0] = x
    out[1] = y
    out[2] = z


cdef inline void matTvec(const double* m, const double* v, double* out) noexcept nogil:
    cdef double x = m[0] * v[0] + m[3] * v[1] + m[6] * v[2]
    cdef double y = m[1] * v[0] + m[4] * v[1] + m[7] * v[2]
    cdef double z = m[2] * v[0] + m[5] * v[1] + m[8] * v[2]
    out[0] = x
    out[1] = y
    out[2] = z


cdef inline void quat_mat(const double* q, double* m) noexcept nogil:
    cdef double w = q[0], x = q[1], y = q[2], z = q[3]
    m[0] = 1 - 2 * (y * y + z * z)
    m[1] = 2 * (x * y - w * z)
    m[2] = 2 * (x * z + w * y)
    m[3] = 2 * (x * y + w * z)
    m[4] = 1 - 2 * (x * x + z * z)
    m[5] = 2 * (y * z - w * x)
    m[6] = 2 * (x * z - w * y)
    m[7] = 2 * (y * z + w * x)
    m[8] = 1 - 2 * (x * x + y * y)


cdef inline void basis(const double* n, double* t1, double* t2) noexcept nogil:
    cdef double ln
    if fabs(n[0]) < 0.57735:
        t1[0] = 0.0
        t1[1] = n[2]
        t1[2] = -n[1]
    else:
        t1[0] = -n[2]
        t1[1] = 0.0
        t1[2] = n[0]
    ln = sqrt(dot3(t1, t1))
    t1[0] /= ln
    t1[1] /= ln
    t1[2] /= ln
    cross3(n, t1, t2)


# ----------------------------------------------------------------------------
# ray casting
# ----------------------------------------------------------------------------

def raycast(const double[:, ::1] origins, const double[:, ::1] dirs, const double[:, ::1] v0,
            const double[:, ::1] e1, const double[:, ::1] e2, const long[::1] offsets,
            const double[:, ::1] boxes):
    cdef Py_ssize_t nr = dirs.shape[0]
    cdef Py_ssize_t ng = offsets.shape[0] - 1
    best_t_arr = np.full(nr, np.inf)
    best_tri_arr = np.full(nr, -1, dtype=np.int64)
    cdef double[::1] best_t = best_t_arr
    cdef long[::1] best_tri = best_tri_arr
    cdef Py_ssize_t r, g, k, a
    cdef double o[3]
    cdef double d[3]
    cdef double p[3]
    cdef double tv[3]
    cdef double q[3]
    cdef double inv, ta, tb, tmin, tmax, det, inv_det, u, v, t
    with nogil:
        for r in range(nr):
            for a in range(3):
                o[a] = origins[r, a]
                d[a] = dirs[r, a]
            for g in range(ng):
                if offsets[g + 1] <= offsets[g]:
                    continue
                tmin = -INFINITY
                tmax = INFINITY
                for a in range(3):
                    if d[a] != 0.0:
                        inv = 1.0 / d[a]
                        ta = (boxes[g, a] - o[a]) * inv
                        tb = (boxes[g, 3 + a] - o[a]) * inv
                        if ta > tb:
                            ta, tb = tb, ta
                        if ta > tmin:
                            tmin = ta
                        if tb < tmax:
                            tmax = tb
                    elif o[a] < boxes[g, a] or o[a] > boxes[g, 3 + a]:
                        tmin = INFINITY
                if not (tmax >= (tmin if tmin > 0.0 else 0.0)) or not (tmin < best_t[r]):
                    continue
                for k in range(offsets[g], offsets[g + 1]):
                    p[0] = d[1] * e2[k, 2] - d[2] * e2[k, 1]
                    p[1] = d[2] * e2[k, 0] - d[0] * e2[k, 2]
                    p[2] = d[0] * e2[k, 1] - d[1] * e2[k, 0]
                    det = e1[k, 0] * p[0] + e1[k, 1] * p[1] + e1[k, 2] * p[2]
                    if fabs(det) <= 1e-14:
                        continue
                    inv_det = 1.0 / det
                    tv[0] = o[0] - v0[k, 0]
                    tv[1] = o[1] - v0[k, 1]
                    tv[2] = o[2] - v0[k, 2]
                    u = dot3(tv, p) * inv_det
                    if u < 0.0 or u > 1.0:
                        continue
                    q[0] = tv[1] * e1[k, 2] - tv[2] * e1[k, 1]
                    q[1] = tv[2] * e1[k, 0] - tv[0] * e1[k, 2]
                    q[2] = tv[0] * e1[k, 1] - tv[1] * e1[k, 0]
                    v = dot3(d, q) * inv_det
                    if v < 0.0 or u + v > 1.0:
                        continue
                    t = (e2[k, 0] * q[0] + e2[k, 1] * q[1] + e2[k, 2] * q[2]) * inv_det
                    if t > 1e-9 and t < best_t[r]:
                        best_t[r] = t
                        best_tri[r] = k
    return best_t_arr, best_tri_arr


# ----------------------------------------------------------------------------
# oriented box vs triangles
# ----------------------------------------------------------------------------

cdef inline bint axis_separates(const double* a, double v[3][3], const double* h) noexcept nogil:
    cdef double p0 = dot3(a, v[0]), p1 = dot3(a, v[1]), p2 = dot3(a, v[2])
    cdef double lo = p0, hi = p0
    cdef double r = fabs(a[0]) * h[0] + fabs(a[1]) * h[1] + fabs(a[2]) * h[2]
    if p1 < lo: lo = p1
    if p1 > hi: hi = p1
    if p2 < lo: lo = p2
    if p2 > hi: hi = p2
    return lo > r or hi < -r


cdef bint tri_box_overlap(double v[3][3], const double* h) noexcept nogil:
    cdef int k, m
    cdef double f[3][3]
    cdef double a[3]
    cdef double e[3]
    for k in range(3):
        if (v[0][k] > h[k] and v[1][k] > h[k] and v[2][k] > h[k]):
            return False
        if (v[0][k] < -h[k] and v[1][k] < -h[k] and v[2][k] < -h[k]):
            return False
    for k in range(3):
        f[0][k] = v[1][k] - v[0][k]
        f[1][k] = v[2][k] - v[1][k]
        f[2][k] = v[0][k] - v[2][k]
    cross3(f[0], f[1], a)
    if axis_separates(a, v, h):
        return False
    for m in range(3):
        for k in range(3):
            e[0] = 0.0
            e[1] = 0.0
            e[2] = 0.0
            e[k] = 1.0
            cross3(e, f[m], a)
            if axis_separates(a, v, h):
                return False
    return True


def obb_tri_hits(const double[:, ::1] box_c, const double[:, :, ::1] box_ax, const double[:, ::1] box_h,
                 const double[:, :, ::1] tris, const unsigned char[::1] is_target):
    cdef Py_ssize_t nb = box_c.shape[0], nt = tris.shape[0]
    out_arr = np.zeros((nb, 2), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    centers_arr = np.ascontiguousarray(np.asarray(tris).mean(axis=1)) if nt else np.zeros((0, 3))
    radii_arr = (np.linalg.norm(np.asarray(tris) - centers_arr[:, None], axis=2).max(axis=1)
                 if nt else np.zeros(0))
    cdef const double[:, ::1] centers = centers_arr
    cdef const double[::1] radii = np.ascontiguousarray(radii_arr)
    cdef Py_ssize_t b, t, k, c
    cdef double rb, dx, dy, dz, lim
    cdef double v[3][3]
    cdef double rel[3]
    cdef double h[3]
    with nogil:
        for b in range(nb):
            h[0] = box_h[b, 0]
            h[1] = box_h[b, 1]
            h[2] = box_h[b, 2]
            rb = sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2])
            for t in range(nt):
                if out[b, is_target[t]]:
                    continue
                dx = centers[t, 0] - box_c[b, 0]
                dy = centers[t, 1] - box_c[b, 1]
                dz = centers[t, 2] - box_c[b, 2]
                lim = rb + radii[t]
                if dx * dx + dy * dy + dz * dz > lim * lim:
                    continue
                for c in range(3):
                    rel[0] = tris[t, c, 0] - box_c[b, 0]
                    rel[1] = tris[t, c, 1] - box_c[b, 1]
                    rel[2] = tris[t, c, 2] - box_c[b, 2]
                    for k in range(3):
                        v[c][k] = rel[0] * box_ax[b, k, 0] + rel[1] * box_ax[b, k, 1] + rel[2] * box_ax[b, k, 2]
                if tri_box_overlap(v, h):
                    out[b, is_target[t]] = 1
                    if out[b, 0] and out[b, 1]:
                        break
    return out_arr


# ----------------------------------------------------------------------------
# rigid-body step
# ----------------------------------------------------------------------------

cdef void closest_segments(const double* p1, const double* q1, const double* p2, const double* q2,
                           double* c1, double* c2) noexcept nogil:
    cdef double d1[3]
    cdef double d2[3]
    cdef double r[3]
    cdef int k
    for k in range(3):
        d1[k] = q1[k] - p1[k]
        d2[k] = q2[k] - p2[k]
        r[k] = p1[k] - p2[k]
    cdef double a = dot3(d1, d1), e = dot3(d2, d2), f = dot3(d2, r)
    cdef double c = dot3(d1, r), b = dot3(d1, d2)
    cdef double denom = a * e - b * b
    cdef double s, t
    if denom > 1e-18:
        s = (b * f - c * e) / denom
        s = 0.0 if s < 0.0 else (1.0 if s > 1.0 else s)
    else:
        s = 0.0
    t = (b * s + f) / e
    if t < 0.0:
        t = 0.0
        s = -c / a
        s = 0.0 if s < 0.0 else (1.0 if s > 1.0 else s)
    elif t > 1.0:
        t = 1.0
        s = (b - c) / a
        s = 0.0 if s < 0.0 else (1.0 if s > 1.0 else s)
    for k in range(3):
        c1[k] = p1[k] + d1[k] * s
        c2[k] = p2[k] + d2[k] * t


cdef int reduce_manifold(double[:, ::1] pts, double[::1] dep, int count, const double* normal) noexcept nogil:
    cdef double t1[3]
    cdef double t2[3]
    cdef double e[3]
    cdef double w[3]
    cdef double cr[3]
    cdef double best, val
    cdef int i, k, m, i0 = 0, i1 = 0, i2 = 0, i3 = 0, nk
    cdef int keep[4]
    cdef double kp[4][3]
    cdef double kd[4]
    basis(normal, t1, t2)
    best = -INFINITY
    for i in range(count):
        val = pts[i, 0] * t1[0] + pts[i, 1] * t1[1] + pts[i, 2] * t1[2]
        if val > best:
            best = val
            i0 = i
    best = -INFINITY
    for i in range(count):
        val = ((pts[i, 0] - pts[i0, 0]) ** 2 + (pts[i, 1] - pts[i0, 1]) ** 2
               + (pts[i, 2] - pts[i0, 2]) ** 2)
        if val > best:
            best = val
            i1 = i
    for k in range(3):
        e[k] = pts[i1, k] - pts[i0, k]
    best = -INFINITY
    val = INFINITY
    cdef double lowest = INFINITY
    for i in range(count):
        for k in range(3):
            w[k] = pts[i, k] - pts[i0, k]
        cross3(e, w, cr)
        val = dot3(cr, normal)
        if val > best:
            best = val
            i2 = i
        if val < lowest:
            lowest = val
            i3 = i
    cdef int cand[4]
    cdef bint seen
    cand[0] = i0
    cand[1] = i1
    cand[2] = i2
    cand[3] = i3
    nk = 0
    for m in range(4):
        seen = False
        for k in range(nk):
            if keep[k] == cand[m]:
                seen = True
        if not seen:
            keep[nk] = cand[m]
            nk += 1
    for k in range(nk):
        kp[k][0] = pts[keep[k], 0]
        kp[k][1] = pts[keep[k], 1]
        kp[k][2] = pts[keep[k], 2]
        kd[k] = dep[keep[k]]
    for k in range(nk):
        pts[k, 0] = kp[k][0]
        pts[k, 1] = kp[k][1]
        pts[k, 2] = kp[k][2]
        dep[k] = kd[k]
    return nk


cdef int collide(int a, int b, const double[:, ::1] wv, const double[:, ::1] wn, const double[::1] wd,
                 const double[:, ::1] wu, const double[:, ::1] xc, const long[::1] v_off,
                 const long[::1] f_off, const long[::1] fptr, const long[::1] fvi, const long[:, ::1] ev,
                 const long[::1] e_dir, const long[::1] e_off, const long[::1] u_off, double margin,
                 double* normal, double[:, ::1] pts, double[::1] dep,
                 double[:, ::1] poly, double[:, ::1] buf) noexcept nogil:
    cdef Py_ssize_t f, v, ua, ub, k, i, fa = -1, fb = -1, ref, inc, inc_body, m, npoly, nout
    cdef double s, sa = -INFINITY, sb = -INFINITY, se = -INFINITY, val, sep, mx, mn_, ln
    cdef double ax[3]
    cdef double best_ax[3]
    cdef double dc[3]
    cdef double nr[3]
    cdef double side[3]
    cdef double ed[3]
    cdef double c1[3]
    cdef double c2[3]
    cdef double dr, dp, dcur, frac
    cdef Py_ssize_t bua = -1, bub = -1, ka, kb
    cdef bint flip
    cdef int count

    for f in range(f_off[a], f_off[a + 1]):
        s = INFINITY
        for v in range(v_off[b], v_off[b + 1]):
            val = wn[f, 0] * wv[v, 0] + wn[f, 1] * wv[v, 1] + wn[f, 2] * wv[v, 2]
            if val < s:
                s = val
        s -= wd[f]
        if s > sa:
            sa = s
            fa = f
    if sa > margin:
        return 0
    for f in range(f_off[b], f_off[b + 1]):
        s = INFINITY
        for v in range(v_off[a], v_off[a + 1]):
            val = wn[f, 0] * wv[v, 0] + wn[f, 1] * wv[v, 1] + wn[f, 2] * wv[v, 2]
            if val < s:
                s = val
        s -= wd[f]
        if s > sb:
            sb = s
            fb = f
    if sb > margin:
        return 0

    for k in range(3):
        dc[k] = xc[b, k] - xc[a, k]
    for ua in range(u_off[a], u_off[a + 1]):
        for ub in range(u_off[b], u_off[b + 1]):
            cross3(&wu[ua, 0], &wu[ub, 0], ax)
            ln = sqrt(dot3(ax, ax))
            if ln < 1e-6:
                continue
            ax[0] /= ln
            ax[1] /= ln
            ax[2] /= ln
            if dot3(ax, dc) < 0:
                ax[0] = -ax[0]
                ax[1] = -ax[1]
                ax[2] = -ax[2]
            mn_ = INFINITY
            for v in range(v_off[b], v_off[b + 1]):
                val = dot3(&wv[v, 0], ax)
                if val < mn_:
                    mn_ = val
            mx = -INFINITY
            for v in range(v_off[a], v_off[a + 1]):
                val = dot3(&wv[v, 0], ax)
                if val > mx:
                    mx = val
            sep = mn_ - mx
            if sep > se:
                se = sep
                bua = ua
                bub = ub
                best_ax[0] = ax[0]
                best_ax[1] = ax[1]
                best_ax[2] = ax[2]
    if se > margin:
        return 0

    if bua >= 0 and se > (sa if sa > sb else sb) + EDGE_TOL:
        ka = -1
        mx = -INFINITY
        for k in range(e_off[a], e_off[a + 1]):
            if e_dir[k] == bua:
                val = (dot3(best_ax, &wv[ev[k, 0], 0]) + dot3(best_ax, &wv[ev[k, 1], 0]))
                if val > mx:
                    mx = val
                    ka = k
        kb = -1
        mn_ = INFINITY
        for k in range(e_off[b], e_off[b + 1]):
            if e_dir[k] == bub:
                val = (dot3(best_ax, &wv[ev[k, 0], 0]) + dot3(best_ax, &wv[ev[k, 1], 0]))
                if val < mn_:
                    mn_ = val
                    kb = k
        closest_segments(&wv[ev[ka, 0], 0], &wv[ev[ka, 1], 0], &wv[ev[kb, 0], 0], &wv[ev[kb, 1], 0], c1, c2)
        for k in range(3):
            normal[k] = best_ax[k]
            pts[0, k] = 0.5 * (c1[k] + c2[k])
        dep[0] = -se
        return 1

    if sb > sa + FACE_TOL:
        ref = fb
        inc_body = a
        flip = True
    else:
        ref = fa
        inc_body = b
        flip = False
    for k in range(3):
        nr[k] = wn[ref, k]
    dr = wd[ref]
    inc = f_off[inc_body]
    mn_ = INFINITY
    for f in range(f_off[inc_body], f_off[inc_body + 1]):
        val = dot3(&wn[f, 0], nr)
        if val < mn_:
            mn_ = val
            inc = f
    npoly = fptr[inc + 1] - fptr[inc]
    for i in range(npoly):
        for k in range(3):
            poly[i, k] = wv[fvi[fptr[inc] + i], k]
    m = fptr[ref + 1] - fptr[ref]
    for i in range(m):
        for k in range(3):
            ed[k] = wv[fvi[fptr[ref] + (i + 1) % m], k] - wv[fvi[fptr[ref] + i], k]
        cross3(ed, nr, side)
        nout = 0
        dp = 0.0
        for k in range(3):
            dp += side[k] * (poly[npoly - 1, k] - wv[fvi[fptr[ref] + i], k])
        for v in range(npoly):
            dcur = 0.0
            for k in range(3):
                dcur += side[k] * (poly[v, k] - wv[fvi[fptr[ref] + i], k])
            if dcur <= 0:
                if dp > 0 and nout < MAX_POLY:
                    frac = dp / (dp - dcur)
                    for k in range(3):
                        buf[nout, k] = poly[(v - 1 + npoly) % npoly, k] + (poly[v, k] - poly[(v - 1 + npoly) % npoly, k]) * frac
                    nout += 1
                if nout < MAX_POLY:
                    for k in range(3):
                        buf[nout, k] = poly[v, k]
                    nout += 1
            elif dp <= 0 and nout < MAX_POLY:
                frac = dp / (dp - dcur)
                for k in range(3):
                    buf[nout, k] = poly[(v - 1 + npoly) % npoly, k] + (poly[v, k] - poly[(v - 1 + npoly) % npoly, k]) * frac
                nout += 1
            dp = dcur
        npoly = nout
        for v in range(npoly):
            for k in range(3):
                poly[v, k] = buf[v, k]
        if npoly == 0:
            break
    count = 0
    for v in range(npoly):
        sep = dot3(nr, &poly[v, 0]) - dr
        if sep <= margin:
            for k in range(3):
                pts[count, k] = poly[v, k] - 0.5 * sep * nr[k]
            dep[count] = -sep
            count += 1
    for k in range(3):
        normal[k] = -nr[k] if flip else nr[k]
    if count > MAX_CONTACTS:
        count = reduce_manifold(pts, dep, count, normal)
    return count


def collide_pair(int a, int b, wv, wn, wd, wu, xc, v_off, f_off, fptr, fvi, ev, e_dir, e_off, u_off,
                 double margin):
    """Python-visible wrapper around the narrow phase (used by tests)."""
    pts = np.zeros((MAX_POLY, 3))
    dep = np.zeros(MAX_POLY)
    poly = np.zeros((MAX_POLY, 3))
    buf = np.zeros((MAX_POLY, 3))
    cdef double normal[3]
    cdef int count = collide(a, b, wv, wn, wd, wu, xc, v_off, f_off, fptr, fvi, ev, e_dir, e_off, u_off,
                             margin, normal, pts, dep, poly, buf)
    if count == 0:
        return None, [], []
    return (np.array([normal[0], normal[1], normal[2]]), [pts[i].copy() for i in range(count)],
            [float(dep[i]) for i in range(count)])


cdef inline void apply_impulse(int i, int j, const double* imp, const double* ra, const double* rb,
                               double[:, ::1] lin, double[:, ::1] ang, const double[::1] im,
                               const double[:, :, ::1] inv_i) noexcept nogil:
    cdef double t[3]
    cdef double u[3]
    cdef int k
    for k in range(3):
        lin[i, k] -= imp[k] * im[i]
        lin[j, k] += imp[k] * im[j]
    cross3(ra, imp, t)
    matvec(&inv_i[i, 0, 0], t, u)
    for k in range(3):
        ang[i, k] -= u[k]
    cross3(rb, imp, t)
    matvec(&inv_i[j, 0, 0], t, u)
    for k in range(3):
        ang[j, k] += u[k]


cdef inline double rel_dot(int i, int j, const double* ra, const double* rb, const double[:, ::1] lin,
                           const double[:, ::1] ang, const double* axis) noexcept nogil:
    cdef double wa[3]
    cdef double wb[3]
    cross3(&ang[i, 0], ra, wa)
    cross3(&ang[j, 0], rb, wb)
    return ((lin[j, 0] + wb[0] - lin[i, 0] - wa[0]) * axis[0]
            + (lin[j, 1] + wb[1] - lin[i, 1] - wa[1]) * axis[1]
            + (lin[j, 2] + wb[2] - lin[i, 2] - wa[2]) * axis[2])


cdef inline double eff_mass(int i, int j, const double* ra, const double* rb, const double* axis,
                            const double[::1] im, const double[:, :, ::1] inv_i) noexcept nogil:
    cdef double ca[3]
    cdef double cb[3]
    cdef double u[3]
    cdef double k
    cross3(ra, axis, ca)
    cross3(rb, axis, cb)
    k = im[i] + im[j]
    matvec(&inv_i[i, 0, 0], ca, u)
    k += dot3(ca, u)
    matvec(&inv_i[j, 0, 0], cb, u)
    k += dot3(cb, u)
    return 1.0 / k if k > 0 else 0.0


def step(double[:, ::1] pos, double[:, ::1] quat, double[:, ::1] vel, double[:, ::1] angv,
         const double[:, ::1] com, const double[::1] inv_mass, const double[:, :, ::1] inv_inertia,
         const double[:, ::1] damping, const unsigned char[::1] dynamic, unsigned char[::1] awake,
         long[::1] sleep_count,
         const double[:, ::1] hv, const long[::1] v_off, const double[:, ::1] fn, const double[::1] fd,
         const long[::1] f_off, const long[::1] fptr, const long[::1] fvi, const long[:, ::1] ev,
         const long[::1] e_dir, const long[::1] e_off, const double[:, ::1] ud, const long[::1] u_off,
         const long[:, ::1] c_pair, const double[:, ::1] c_local, const double[:, ::1] c_imp, long c_count,
         long[:, ::1] out_pair, double[:, ::1] out_local, double[:, ::1] out_imp,
         const double[::1] fparams, const long[::1] iparams):
    cdef Py_ssize_t n = pos.shape[0]
    cdef double g[3]
    g[0] = fparams[0]
    g[1] = fparams[1]
    g[2] = fparams[2]
    cdef double dt = fparams[3], mu = fparams[4], rest = fparams[5], slop = fparams[6]
    cdef double beta = fparams[7], margin = fparams[8], max_lin = fparams[9], max_ang = fparams[10]
    cdef double sleep_v = fparams[11], sleep_w = fparams[12]
    cdef long iterations = iparams[0], sleep_steps = iparams[1]
    cdef Py_ssize_t cap = out_pair.shape[0]

    rot_arr = np.empty((n, 3, 3))
    xc_arr = np.empty((n, 3))
    wv_arr = np.empty((hv.shape[0], 3))
    wn_arr = np.empty((fn.shape[0], 3))
    wd_arr = np.empty(fd.shape[0])
    wu_arr = np.empty((ud.shape[0], 3))
    aabb_arr = np.empty((n, 6))
    im_arr = np.zeros(n)
    inv_i_arr = np.zeros((n, 3, 3))
    pv_arr = np.zeros((n, 3))
    pw_arr = np.zeros((n, 3))
    active_arr = np.zeros(n, dtype=np.uint8)
    moving_arr = np.zeros(n, dtype=np.uint8)
    touching_arr = np.zeros(n, dtype=np.uint8)
    used_arr = np.zeros(max(c_count, 1), dtype=np.uint8)
    cdef double[:, :, ::1] rot = rot_arr
    cdef double[:, ::1] xc = xc_arr
    cdef double[:, ::1] wv = wv_arr
    cdef double[:, ::1] wn = wn_arr
    cdef double[::1] wd = wd_arr
    cdef double[:, ::1] wu = wu_arr
    cdef double[:, ::1] aabb = aabb_arr
    cdef double[::1] im = im_arr
    cdef double[:, :, ::1] inv_i = inv_i_arr
    cdef double[:, ::1] pv = pv_arr
    cdef double[:, ::1] pw = pw_arr
    cdef unsigned char[::1] active = active_arr
    cdef unsigned char[::1] moving = moving_arr
    cdef unsigned char[::1] touching = touching_arr
    cdef unsigned char[::1] used = used_arr

    # per-contact solver data
    c_ra_arr = np.empty((cap, 3))
    c_rb_arr = np.empty((cap, 3))
    c_n_arr = np.empty((cap, 3))
    c_t1_arr = np.empty((cap, 3))
    c_t2_arr = np.empty((cap, 3))
    c_s_arr = np.zeros((cap, 9))  # mn, mt1, mt2, tgt, tgp, ln, lt1, lt2, lp
    cdef double[:, ::1] c_ra = c_ra_arr
    cdef double[:, ::1] c_rb = c_rb_arr
    cdef double[:, ::1] c_n = c_n_arr
    cdef double[:, ::1] c_t1 = c_t1_arr
    cdef double[:, ::1] c_t2 = c_t2_arr
    cdef double[:, ::1] cs = c_s_arr
    pts_arr = np.zeros((MAX_POLY, 3))
    dep_arr = np.zeros(MAX_POLY)
    poly_arr = np.zeros((MAX_POLY, 3))
    buf_arr = np.zeros((MAX_POLY, 3))
    cdef double[:, ::1] pts = pts_arr
    cdef double[::1] dep = dep_arr
    cdef double[:, ::1] poly = poly_arr
    cdef double[:, ::1] buf = buf_arr

    cdef Py_ssize_t i, j, k, v, c, it, m = 0, cnt
    cdef double tmp[3]
    cdef double tmp2[3]
    cdef double m9[9]
    cdef double normal[3]
    cdef double local[3]
    cdef double imp[3]
    cdef double x[3]
    cdef double w[3]
    cdef double q[4]
    cdef double dq[4]
    cdef double lam, new, lim, sp, d, vn, qn, diff0, diff1, diff2, da, db

    with nogil:
        for i in range(n):
            quat_mat(&quat[i, 0], &rot[i, 0, 0])
            matvec(&rot[i, 0, 0], &com[i, 0], tmp)
            for k in range(3):
                xc[i, k] = pos[i, k] + tmp[k]
            for k in range(3):
                aabb[i, k] = INFINITY
                aabb[i, 3 + k] = -INFINITY
            for v in range(v_off[i], v_off[i + 1]):
                matvec(&rot[i, 0, 0], &hv[v, 0], tmp)
                for k in range(3):
                    wv[v, k] = tmp[k] + pos[i, k]
                    if wv[v, k] < aabb[i, k]:
                        aabb[i, k] = wv[v, k]
                    if wv[v, k] > aabb[i, 3 + k]:
                        aabb[i, 3 + k] = wv[v, k]
            for k in range(3):
                aabb[i, k] -= margin
                aabb[i, 3 + k] += margin
            for v in range(f_off[i], f_off[i + 1]):
                matvec(&rot[i, 0, 0], &fn[v, 0], &wn[v, 0])
                wd[v] = fd[v] + dot3(&wn[v, 0], &pos[i, 0])
            for v in range(u_off[i], u_off[i + 1]):
                matvec(&rot[i, 0, 0], &ud[v, 0], &wu[v, 0])

        for i in range(n):
            active[i] = dynamic[i] and awake[i]
            moving[i] = active[i] and (sqrt(dot3(&vel[i, 0], &vel[i, 0])) > sleep_v
                                       or sqrt(dot3(&angv[i, 0], &angv[i, 0])) > sleep_w)
        for j in range(n):
            if dynamic[j] and not awake[j]:
                for i in range(n):
                    if moving[i] and (aabb[i, 0] <= aabb[j, 3] and aabb[j, 0] <= aabb[i, 3]
                                      and aabb[i, 1] <= aabb[j, 4] and aabb[j, 1] <= aabb[i, 4]
                                      and aabb[i, 2] <= aabb[j, 5] and aabb[j, 2] <= aabb[i, 5]):
                        awake[j] = 1
                        sleep_count[j] = 0
                        break
        for i in range(n):
            active[i] = dynamic[i] and awake[i]

        for i in range(n):
            if active[i]:
                da = exp(-damping[i, 0] * dt)
                db = exp(-damping[i, 1] * dt)
                for k in range(3):
                    vel[i, k] += g[k] * dt
                    vel[i, k] *= da
                    angv[i, k] *= db
                im[i] = inv_mass[i]
                # R * I^-1 * R^T
                for k in range(3):
                    for v in range(3):
                        m9[3 * k + v] = (inv_inertia[i, k, 0] * rot[i, v, 0] + inv_inertia[i, k, 1] * rot[i, v, 1]
                                         + inv_inertia[i, k, 2] * rot[i, v, 2])
                for k in range(3):
                    for v in range(3):
                        inv_i[i, k, v] = rot[i, k, 0] * m9[v] + rot[i, k, 1] * m9[3 + v] + rot[i, k, 2] * m9[6 + v]

        for i in range(n):
            for j in range(i + 1, n):
                if not (active[i] or active[j]):
                    continue
                if not (aabb[i, 0] <= aabb[j, 3] and aabb[j, 0] <= aabb[i, 3]
                        and aabb[i, 1] <= aabb[j, 4] and aabb[j, 1] <= aabb[i, 4]
                        and aabb[i, 2] <= aabb[j, 5] and aabb[j, 2] <= aabb[i, 5]):
                    continue
                cnt = collide(i, j, wv, wn, wd, wu, xc, v_off, f_off, fptr, fvi, ev, e_dir, e_off, u_off,
                              margin, normal, pts, dep, poly, buf)
                for v in range(cnt):
                    if m >= cap:
                        break
                    c = m
                    m += 1
                    touching[i] = 1
                    touching[j] = 1
                    for k in range(3):
                        tmp[k] = pts[v, k] - pos[i, k]
                    matTvec(&rot[i, 0, 0], tmp, local)
                    out_pair[c, 0] = i
                    out_pair[c, 1] = j
                    for k in range(3):
                        out_local[c, k] = local[k]
                    for k in range(c_count):
                        if not used[k] and c_pair[k, 0] == i and c_pair[k, 1] == j:
                            diff0 = c_local[k, 0] - local[0]
                            diff1 = c_local[k, 1] - local[1]
                            diff2 = c_local[k, 2] - local[2]
                            if diff0 * diff0 + diff1 * diff1 + diff2 * diff2 < WARM_TOL2:
                                used[k] = 1
                                cs[c, 5] = c_imp[k, 0]
                                cs[c, 6] = c_imp[k, 1]
                                cs[c, 7] = c_imp[k, 2]
                                break
                    for k in range(3):
                        c_ra[c, k] = pts[v, k] - xc[i, k]
                        c_rb[c, k] = pts[v, k] - xc[j, k]
                        c_n[c, k] = normal[k]
                    basis(normal, &c_t1[c, 0], &c_t2[c, 0])
                    cs[c, 0] = eff_mass(i, j, &c_ra[c, 0], &c_rb[c, 0], normal, im, inv_i)
                    cs[c, 1] = eff_mass(i, j, &c_ra[c, 0], &c_rb[c, 0], &c_t1[c, 0], im, inv_i)
                    cs[c, 2] = eff_mass(i, j, &c_ra[c, 0], &c_rb[c, 0], &c_t2[c, 0], im, inv_i)
                    d = dep[v]
                    if d < 0:
                        cs[c, 3] = d / dt
                    else:
                        vn = rel_dot(i, j, &c_ra[c, 0], &c_rb[c, 0], vel, angv, normal)
                        cs[c, 3] = -rest * vn if (rest > 0 and vn < -RESTITUTION_THRESHOLD) else 0.0
                    cs[c, 4] = beta * (d - slop if d - slop > 0.0 else 0.0) / dt

        for c in range(m):
            i = out_pair[c, 0]
            j = out_pair[c, 1]
            for k in range(3):
                imp[k] = cs[c, 5] * c_n[c, k] + cs[c, 6] * c_t1[c, k] + cs[c, 7] * c_t2[c, k]
            apply_impulse(i, j, imp, &c_ra[c, 0], &c_rb[c, 0], vel, angv, im, inv_i)

        for it in range(iterations):
            for c in range(m):
                i = out_pair[c, 0]
                j = out_pair[c, 1]
                lim = mu * cs[c, 5]
                lam = -cs[c, 1] * rel_dot(i, j, &c_ra[c, 0], &c_rb[c, 0], vel, angv, &c_t1[c, 0])
                new = cs[c, 6] + lam
                new = -lim if new < -lim else (lim if new > lim else new)
                lam = new - cs[c, 6]
                cs[c, 6] = new
                for k in range(3):
                    imp[k] = lam * c_t1[c, k]
                apply_impulse(i, j, imp, &c_ra[c, 0], &c_rb[c, 0], vel, angv, im, inv_i)
                lam = -cs[c, 2] * rel_dot(i, j, &c_ra[c, 0], &c_rb[c, 0], vel, angv, &c_t2[c, 0])
                new = cs[c, 7] + lam
                new = -lim if new < -lim else (lim if new > lim else new)
                lam = new - cs[c, 7]
                cs[c, 7] = new
                for k in range(3):
                    imp[k] = lam * c_t2[c, k]
                apply_impulse(i, j, imp, &c_ra[c, 0], &c_rb[c, 0], vel, angv, im, inv_i)

                lam = cs[c, 0] * (cs[c, 3] - rel_dot(i, j, &c_ra[c, 0], &c_rb[c, 0], vel, angv, &c_n[c, 0]))
                new = cs[c, 5] + lam
                if new < 0.0:
                    new = 0.0
                lam = new - cs[c, 5]
                cs[c, 5] = new
                for k in range(3):
                    imp[k] = lam * c_n[c, k]
                apply_impulse(i, j, imp, &c_ra[c, 0], &c_rb[c, 0], vel, angv, im, inv_i)

                lam = cs[c, 0] * (cs[c, 4] - rel_dot(i, j, &c_ra[c, 0], &c_rb[c, 0], pv, pw, &c_n[c, 0]))
                new = cs[c, 8] + lam
                if new < 0.0:
                    new = 0.0
                lam = new - cs[c, 8]
                cs[c, 8] = new
                for k in range(3):
                    imp[k] = lam * c_n[c, k]
                apply_impulse(i, j, imp, &c_ra[c, 0], &c_rb[c, 0], pv, pw, im, inv_i)

        for c in range(m):
            out_imp[c, 0] = cs[c, 5]
            out_imp[c, 1] = cs[c, 6]
            out_imp[c, 2] = cs[c, 7]

        for i in range(n):
            if not active[i]:
                continue
            sp = sqrt(dot3(&vel[i, 0], &vel[i, 0]))
            if sp * dt > max_lin:
                for k in range(3):
                    vel[i, k] *= max_lin / (sp * dt)
            sp = sqrt(dot3(&angv[i, 0], &angv[i, 0]))
            if sp * dt > max_ang:
                for k in range(3):
                    angv[i, k] *= max_ang / (sp * dt)
            for k in range(3):
                x[k] = xc[i, k] + (vel[i, k] + pv[i, k]) * dt
                if not touching[i]:
                    x[k] -= 0.5 * g[k] * dt * dt
                w[k] = angv[i, k] + pw[i, k]
            for k in range(4):
                q[k] = quat[i, k]
            dq[0] = 0.5 * dt * (-w[0] * q[1] - w[1] * q[2] - w[2] * q[3])
            dq[1] = 0.5 * dt * (w[0] * q[0] + w[1] * q[3] - w[2] * q[2])
            dq[2] = 0.5 * dt * (-w[0] * q[3] + w[1] * q[0] + w[2] * q[1])
            dq[3] = 0.5 * dt * (w[0] * q[2] - w[1] * q[1] + w[2] * q[0])
            for k in range(4):
                q[k] = q[k] + dq[k]
            qn = sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
            for k in range(4):
                q[k] = q[k] / qn
                quat[i, k] = q[k]
            quat_mat(q, m9)
            matvec(m9, &com[i, 0], tmp)
            for k in range(3):
                pos[i, k] = x[k] - tmp[k]

            if (touching[i] and sqrt(dot3(&vel[i, 0], &vel[i, 0])) < sleep_v
                    and sqrt(dot3(&angv[i, 0], &angv[i, 0])) < sleep_w):
                sleep_count[i] += 1
            else:
                sleep_count[i] = 0
            if sleep_count[i] >= sleep_steps:
                awake[i] = 0
                for k in range(3):
                    vel[i, k] = 0.0
                    angv[i, k] = 0.0
    return m
