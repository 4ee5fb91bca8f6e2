# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels for the chain dynamics inner loops.

Mirrors pushident.chain.dynamics formula for formula; any change here must be
matched there (the test suite cross-checks both backends on random states).
Status codes: 0 ok, 1 singular mass matrix, 2 settle timeout, 3 one-sided
contact violated.
"""

from libc.math cimport cos, sin, sqrt, fabs

DEF MAXN = 5      # max generalized coordinates (3-link chain)
DEF MAXL = 3      # max links
DEF NFRIC = 5     # friction sample points per link

cdef int STATUS_OK = 0
cdef int STATUS_SINGULAR = 1
cdef int STATUS_TIMEOUT = 2
cdef int STATUS_CONTACT = 3


cdef struct Params:
    int n
    int N
    double mu
    double g
    double lengths[MAXL]
    double widths[MAXL]
    double masses[MAXL]
    double izz[MAXL]
    double lim_lo[MAXL]
    double lim_hi[MAXL]


cdef void _unpack(double[::1] raw, Params* p) noexcept nogil:
    cdef int k
    p.n = <int> raw[0]
    p.N = p.n + 2
    p.mu = raw[1]
    p.g = raw[2]
    for k in range(p.n):
        p.lengths[k] = raw[3 + 4 * k]
        p.widths[k] = raw[3 + 4 * k + 1]
        p.masses[k] = raw[3 + 4 * k + 2]
        p.izz[k] = raw[3 + 4 * k + 3]
    for k in range(p.n - 1):
        p.lim_lo[k] = raw[3 + 4 * p.n + 2 * k]
        p.lim_hi[k] = raw[3 + 4 * p.n + 2 * k + 1]


cdef struct Frames:
    double phi[MAXL]
    double ax[MAXL][2]
    double coms[MAXL][2]
    double anchors[MAXL][2]
    double J[MAXL][2][MAXN]       # COM Jacobians
    double vel[MAXL][2]
    double omega[MAXL]


cdef void _frames(Params* p, double* q, Frames* f) noexcept nogil:
    cdef int k, i, col
    f.phi[0] = q[2]
    for k in range(1, p.n):
        f.phi[k] = f.phi[k - 1] + q[2 + k]
    for k in range(p.n):
        f.ax[k][0] = cos(f.phi[k])
        f.ax[k][1] = sin(f.phi[k])
    f.coms[0][0] = q[0]
    f.coms[0][1] = q[1]
    f.anchors[0][0] = q[0]
    f.anchors[0][1] = q[1]
    for k in range(1, p.n):
        f.anchors[k][0] = f.coms[k - 1][0] + 0.5 * p.lengths[k - 1] * f.ax[k - 1][0]
        f.anchors[k][1] = f.coms[k - 1][1] + 0.5 * p.lengths[k - 1] * f.ax[k - 1][1]
        f.coms[k][0] = f.anchors[k][0] + 0.5 * p.lengths[k] * f.ax[k][0]
        f.coms[k][1] = f.anchors[k][1] + 0.5 * p.lengths[k] * f.ax[k][1]
    for k in range(p.n):
        for i in range(2):
            for col in range(p.N):
                f.J[k][i][col] = 0.0
        f.J[k][0][0] = 1.0
        f.J[k][1][1] = 1.0
        for i in range(k + 1):
            col = 2 + i
            f.J[k][0][col] = -(f.coms[k][1] - f.anchors[i][1])
            f.J[k][1][col] = f.coms[k][0] - f.anchors[i][0]


cdef void _velocities(Params* p, double* qdot, Frames* f) noexcept nogil:
    cdef int k, c
    for k in range(p.n):
        f.vel[k][0] = 0.0
        f.vel[k][1] = 0.0
        for c in range(p.N):
            f.vel[k][0] += f.J[k][0][c] * qdot[c]
            f.vel[k][1] += f.J[k][1][c] * qdot[c]
        f.omega[k] = qdot[2]
        for c in range(1, k + 1):
            f.omega[k] += qdot[2 + c]


cdef void _mass_matrix(Params* p, Frames* f, double M[MAXN][MAXN]) noexcept nogil:
    cdef int i, j, k
    cdef double m, izz, si, sj
    for i in range(p.N):
        for j in range(p.N):
            M[i][j] = 0.0
    for k in range(p.n):
        m = p.masses[k]
        izz = p.izz[k]
        for i in range(p.N):
            # angular selector: 1 for alpha and theta_1..theta_k
            si = 1.0 if (i == 2 or (3 <= i <= 2 + k)) else 0.0
            for j in range(p.N):
                sj = 1.0 if (j == 2 or (3 <= j <= 2 + k)) else 0.0
                M[i][j] += m * (
                    f.J[k][0][i] * f.J[k][0][j] + f.J[k][1][i] * f.J[k][1][j]
                )
                if si != 0.0 and sj != 0.0:
                    M[i][j] += m * izz


cdef void _coriolis(Params* p, double* qdot, Frames* f, double* C) noexcept nogil:
    # Newton-Euler route: C = sum_k m_k J_k^T (Jdot_k qdot)
    cdef int k, i, j
    cdef double avel[MAXL][2]
    cdef double bias_x, bias_y, dvx, dvy, w
    for i in range(p.n):
        avel[i][0] = qdot[0]
        avel[i][1] = qdot[1]
        for j in range(i):
            # anchor i is a material point of link i-1: cols 2+j for j < i
            avel[i][0] += -(f.anchors[i][1] - f.anchors[j][1]) * qdot[2 + j]
            avel[i][1] += (f.anchors[i][0] - f.anchors[j][0]) * qdot[2 + j]
    for i in range(p.N):
        C[i] = 0.0
    for k in range(p.n):
        bias_x = 0.0
        bias_y = 0.0
        for i in range(k + 1):
            w = qdot[2 + i]
            dvx = f.vel[k][0] - avel[i][0]
            dvy = f.vel[k][1] - avel[i][1]
            bias_x += w * (-dvy)
            bias_y += w * dvx
        for i in range(p.N):
            C[i] += p.masses[k] * (f.J[k][0][i] * bias_x + f.J[k][1][i] * bias_y)


cdef void _friction(Params* p, Frames* f, double eps_stick, double* Qf) noexcept nogil:
    cdef int k, j, i
    cdef double off, relx, rely, vx, vy, speed, denom, scale, fx, fy
    cdef double ftx, fty, torque
    for i in range(p.N):
        Qf[i] = 0.0
    for k in range(p.n):
        scale = p.mu * (p.masses[k] / NFRIC) * p.g
        ftx = 0.0
        fty = 0.0
        torque = 0.0
        for j in range(NFRIC):
            off = (-0.5 + j * (1.0 / (NFRIC - 1))) * p.lengths[k]
            relx = off * f.ax[k][0]
            rely = off * f.ax[k][1]
            vx = f.vel[k][0] - f.omega[k] * rely
            vy = f.vel[k][1] + f.omega[k] * relx
            speed = sqrt(vx * vx + vy * vy)
            denom = speed if speed > eps_stick else eps_stick
            fx = -scale * vx / denom
            fy = -scale * vy / denom
            ftx += fx
            fty += fy
            torque += relx * fy - rely * fx
        for i in range(p.N):
            Qf[i] += f.J[k][0][i] * ftx + f.J[k][1][i] * fty
        Qf[2] += torque
        for i in range(1, k + 1):
            Qf[2 + i] += torque


cdef int _chol(int N, double M[MAXN][MAXN], double L[MAXN][MAXN]) noexcept nogil:
    cdef int i, j, k
    cdef double s
    for i in range(N):
        for j in range(i + 1):
            s = M[i][j]
            for k in range(j):
                s -= L[i][k] * L[j][k]
            if i == j:
                if s <= 0.0:
                    return 1
                L[i][i] = sqrt(s)
            else:
                L[i][j] = s / L[j][j]
    return 0


cdef void _chol_solve(int N, double L[MAXN][MAXN], double* b, double* x) noexcept nogil:
    cdef int i, k
    cdef double s
    cdef double y[MAXN]
    for i in range(N):
        s = b[i]
        for k in range(i):
            s -= L[i][k] * y[k]
        y[i] = s / L[i][i]
    for i in range(N - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, N):
            s -= L[k][i] * x[k]
        x[i] = s / L[i][i]


cdef int _factor_and_check(Params* p, double M[MAXN][MAXN], double L[MAXN][MAXN],
                           double Minv[MAXN][MAXN], double cond_limit) noexcept nogil:
    cdef int i, j
    cdef double e[MAXN]
    cdef double col[MAXN]
    cdef double norm_m, norm_inv, s
    if _chol(p.N, M, L):
        return STATUS_SINGULAR
    for j in range(p.N):
        for i in range(p.N):
            e[i] = 1.0 if i == j else 0.0
        _chol_solve(p.N, L, e, col)
        for i in range(p.N):
            Minv[i][j] = col[i]
    norm_m = 0.0
    norm_inv = 0.0
    for j in range(p.N):
        s = 0.0
        for i in range(p.N):
            s += fabs(M[i][j])
        if s > norm_m:
            norm_m = s
        s = 0.0
        for i in range(p.N):
            s += fabs(Minv[i][j])
        if s > norm_inv:
            norm_inv = s
    if norm_m * norm_inv > cond_limit:
        return STATUS_SINGULAR
    return STATUS_OK


cdef void _seg_closest(double* p0, double* d0, double* q0, double* d1,
                       double* ca, double* cb) noexcept nogil:
    cdef double rx = p0[0] - q0[0]
    cdef double ry = p0[1] - q0[1]
    cdef double a = d0[0] * d0[0] + d0[1] * d0[1]
    cdef double e = d1[0] * d1[0] + d1[1] * d1[1]
    cdef double fdot = d1[0] * rx + d1[1] * ry
    cdef double c = d0[0] * rx + d0[1] * ry
    cdef double b = d0[0] * d1[0] + d0[1] * d1[1]
    cdef double denom = a * e - b * b
    cdef double s, t
    if denom > 1e-14:
        s = (b * fdot - c * e) / denom
        if s < 0.0:
            s = 0.0
        elif s > 1.0:
            s = 1.0
    else:
        s = 0.0
    t = (b * s + fdot) / e if e > 1e-14 else 0.0
    if t < 0.0:
        t = 0.0
        s = (-c / a) if a > 1e-14 else 0.0
        if s < 0.0:
            s = 0.0
        elif s > 1.0:
            s = 1.0
    elif t > 1.0:
        t = 1.0
        s = ((b - c) / a) if a > 1e-14 else 0.0
        if s < 0.0:
            s = 0.0
        elif s > 1.0:
            s = 1.0
    ca[0] = p0[0] + s * d0[0]
    ca[1] = p0[1] + s * d0[1]
    cb[0] = q0[0] + t * d1[0]
    cb[1] = q0[1] + t * d1[1]


cdef int _resolve_limits(Params* p, double* q, double* qdot,
                         double cond_limit) noexcept nogil:
    cdef Frames f
    cdef double E[MAXL][MAXN]
    cdef int nrows = 0
    cdef int j, i, k, idx, status
    cdef double lo, hi
    cdef double M[MAXN][MAXN]
    cdef double L[MAXN][MAXN]
    cdef double Minv[MAXN][MAXN]
    cdef double pa0[2]
    cdef double pb0[2]
    cdef double da[2]
    cdef double db[2]
    cdef double ca[2]
    cdef double cb[2]
    cdef double nx, ny, dist, min_dist, relv, s
    cdef double Jpa[2][MAXN]
    cdef double Jpb[2][MAXN]
    cdef double G[MAXL][MAXL]
    cdef double rhs[MAXL]
    cdef double lam[MAXL]
    cdef double MinvET[MAXN][MAXL]

    for j in range(p.n - 1):
        lo = p.lim_lo[j]
        hi = p.lim_hi[j]
        idx = 3 + j
        if q[idx] < lo:
            q[idx] = lo
            if qdot[idx] < 0.0:
                for i in range(p.N):
                    E[nrows][i] = 0.0
                E[nrows][idx] = 1.0
                nrows += 1
        elif q[idx] > hi:
            q[idx] = hi
            if qdot[idx] > 0.0:
                for i in range(p.N):
                    E[nrows][i] = 0.0
                E[nrows][idx] = 1.0
                nrows += 1
    _frames(p, q, &f)
    if p.n >= 3:
        pa0[0] = f.coms[0][0] - 0.5 * p.lengths[0] * f.ax[0][0]
        pa0[1] = f.coms[0][1] - 0.5 * p.lengths[0] * f.ax[0][1]
        pb0[0] = f.coms[2][0] - 0.5 * p.lengths[2] * f.ax[2][0]
        pb0[1] = f.coms[2][1] - 0.5 * p.lengths[2] * f.ax[2][1]
        da[0] = p.lengths[0] * f.ax[0][0]
        da[1] = p.lengths[0] * f.ax[0][1]
        db[0] = p.lengths[2] * f.ax[2][0]
        db[1] = p.lengths[2] * f.ax[2][1]
        _seg_closest(pa0, da, pb0, db, ca, cb)
        min_dist = 0.5 * (p.widths[0] + p.widths[2])
        nx = cb[0] - ca[0]
        ny = cb[1] - ca[1]
        dist = sqrt(nx * nx + ny * ny)
        if dist < min_dist:
            if dist > 1e-9:
                nx /= dist
                ny /= dist
            else:
                nx = -f.ax[0][1]
                ny = f.ax[0][0]
            for i in range(p.N):
                Jpa[0][i] = 0.0
                Jpa[1][i] = 0.0
                Jpb[0][i] = 0.0
                Jpb[1][i] = 0.0
            Jpa[0][0] = 1.0
            Jpa[1][1] = 1.0
            Jpb[0][0] = 1.0
            Jpb[1][1] = 1.0
            Jpa[0][2] = -(ca[1] - f.anchors[0][1])
            Jpa[1][2] = ca[0] - f.anchors[0][0]
            for i in range(3):
                Jpb[0][2 + i] = -(cb[1] - f.anchors[i][1])
                Jpb[1][2 + i] = cb[0] - f.anchors[i][0]
            relv = 0.0
            for i in range(p.N):
                relv += (nx * (Jpb[0][i] - Jpa[0][i]) + ny * (Jpb[1][i] - Jpa[1][i])) * qdot[i]
            if relv < 0.0:
                for i in range(p.N):
                    E[nrows][i] = nx * (Jpb[0][i] - Jpa[0][i]) + ny * (Jpb[1][i] - Jpa[1][i])
                nrows += 1
    if nrows == 0:
        return STATUS_OK
    _mass_matrix(p, &f, M)
    status = _factor_and_check(p, M, L, Minv, cond_limit)
    if status != STATUS_OK:
        return status
    for i in range(p.N):
        for j in range(nrows):
            s = 0.0
            for k in range(p.N):
                s += Minv[i][k] * E[j][k]
            MinvET[i][j] = s
    for i in range(nrows):
        for j in range(nrows):
            s = 0.0
            for k in range(p.N):
                s += E[i][k] * MinvET[k][j]
            G[i][j] = s
        G[i][i] += 1e-12
        s = 0.0
        for k in range(p.N):
            s += E[i][k] * qdot[k]
        rhs[i] = -s
    # tiny dense solve via Gaussian elimination (nrows <= 3)
    cdef double piv, factor
    cdef int r, rr
    for r in range(nrows):
        piv = G[r][r]
        for rr in range(r + 1, nrows):
            factor = G[rr][r] / piv
            for k in range(r, nrows):
                G[rr][k] -= factor * G[r][k]
            rhs[rr] -= factor * rhs[r]
    for r in range(nrows - 1, -1, -1):
        s = rhs[r]
        for k in range(r + 1, nrows):
            s -= G[r][k] * lam[k]
        lam[r] = s / G[r][r]
    for i in range(p.N):
        s = 0.0
        for j in range(nrows):
            s += MinvET[i][j] * lam[j]
        qdot[i] += s
    return STATUS_OK


cdef int _step_once(Params* p, double* q, double* qdot, double* ext, double dt,
                    double eps_stick, double cond_limit) noexcept nogil:
    cdef Frames f
    cdef double M[MAXN][MAXN]
    cdef double L[MAXN][MAXN]
    cdef double Minv[MAXN][MAXN]
    cdef double C[MAXN]
    cdef double Qf[MAXN]
    cdef double rhs[MAXN]
    cdef double qddot[MAXN]
    cdef int i, j, status
    _frames(p, q, &f)
    _velocities(p, qdot, &f)
    _mass_matrix(p, &f, M)
    status = _factor_and_check(p, M, L, Minv, cond_limit)
    if status != STATUS_OK:
        return status
    _coriolis(p, qdot, &f, C)
    _friction(p, &f, eps_stick, Qf)
    for i in range(p.N):
        rhs[i] = Qf[i] - C[i]
        if ext != NULL:
            rhs[i] += ext[i]
    for i in range(p.N):
        qddot[i] = 0.0
        for j in range(p.N):
            qddot[i] += Minv[i][j] * rhs[j]
    for i in range(p.N):
        qdot[i] += dt * qddot[i]
        q[i] += dt * qdot[i]
    return _resolve_limits(p, q, qdot, cond_limit)


cdef int _settle_impl(Params* p, double* q, double* qdot, double dt, double tol,
                      int quiet_needed, int max_steps, double eps_stick,
                      double cond_limit) noexcept nogil:
    cdef int steps = 0, quiet = 0, status, i
    cdef double vmax
    while True:
        vmax = 0.0
        for i in range(p.N):
            if fabs(qdot[i]) > vmax:
                vmax = fabs(qdot[i])
        if vmax < tol:
            quiet += 1
            if quiet >= quiet_needed:
                for i in range(p.N):
                    qdot[i] = 0.0
                return steps
        else:
            quiet = 0
        if steps >= max_steps:
            return -STATUS_TIMEOUT
        status = _step_once(p, q, qdot, NULL, dt, eps_stick, cond_limit)
        if status != STATUS_OK:
            return -status
        steps += 1


cdef int _push_impl(Params* p, double* q, double* qdot, int link,
                    double local_offset, int side, double dirx, double diry,
                    double speed, int nsubsteps, double dt, double eps_stick,
                    double cond_limit) noexcept nogil:
    cdef Frames f
    cdef double M[MAXN][MAXN]
    cdef double L[MAXN][MAXN]
    cdef double Minv[MAXN][MAXN]
    cdef double C[MAXN]
    cdef double Qf[MAXN]
    cdef double freeqd[MAXN]
    cdef double jn[MAXN]
    cdef double Minvjn[MAXN]
    cdef double Jp[2][MAXN]
    cdef double p_start[2]
    cdef double pc[2]
    cdef double lat, travel, gap, vn, w, lam, s
    cdef int i, j, istep, status
    lat = side * 0.5 * p.widths[link]
    _frames(p, q, &f)
    p_start[0] = f.coms[link][0] + local_offset * f.ax[link][0] - lat * f.ax[link][1]
    p_start[1] = f.coms[link][1] + local_offset * f.ax[link][1] + lat * f.ax[link][0]
    travel = 0.0
    for istep in range(nsubsteps):
        _frames(p, q, &f)
        _velocities(p, qdot, &f)
        _mass_matrix(p, &f, M)
        status = _factor_and_check(p, M, L, Minv, cond_limit)
        if status != STATUS_OK:
            return status
        _coriolis(p, qdot, &f, C)
        _friction(p, &f, eps_stick, Qf)
        for i in range(p.N):
            s = 0.0
            for j in range(p.N):
                s += Minv[i][j] * (Qf[j] - C[j])
            freeqd[i] = qdot[i] + dt * s
        pc[0] = f.coms[link][0] + local_offset * f.ax[link][0] - lat * f.ax[link][1]
        pc[1] = f.coms[link][1] + local_offset * f.ax[link][1] + lat * f.ax[link][0]
        gap = (pc[0] - (p_start[0] + travel * dirx)) * dirx \
            + (pc[1] - (p_start[1] + travel * diry)) * diry
        if gap <= 1e-9:
            for i in range(p.N):
                Jp[0][i] = 0.0
                Jp[1][i] = 0.0
            Jp[0][0] = 1.0
            Jp[1][1] = 1.0
            for i in range(link + 1):
                Jp[0][2 + i] = -(pc[1] - f.anchors[i][1])
                Jp[1][2 + i] = pc[0] - f.anchors[i][0]
            for i in range(p.N):
                jn[i] = dirx * Jp[0][i] + diry * Jp[1][i]
            vn = 0.0
            for i in range(p.N):
                vn += jn[i] * freeqd[i]
            if vn < speed:
                for i in range(p.N):
                    s = 0.0
                    for j in range(p.N):
                        s += Minv[i][j] * jn[j]
                    Minvjn[i] = s
                w = 0.0
                for i in range(p.N):
                    w += jn[i] * Minvjn[i]
                lam = (speed - vn) / w
                if lam < 0.0:
                    return STATUS_CONTACT
                for i in range(p.N):
                    freeqd[i] += Minvjn[i] * lam
        for i in range(p.N):
            qdot[i] = freeqd[i]
            q[i] += dt * qdot[i]
        status = _resolve_limits(p, q, qdot, cond_limit)
        if status != STATUS_OK:
            return status
        travel += speed * dt
    return STATUS_OK


def step_n(double[::1] params, double[::1] q, double[::1] qdot, double[::1] ext,
           double dt, int nsteps, double eps_stick=1e-2, double cond_limit=1e12):
    """Advance nsteps dynamics steps in place; returns a status code."""
    cdef Params p
    _unpack(params, &p)
    cdef int i
    cdef int status = STATUS_OK
    with nogil:
        for i in range(nsteps):
            status = _step_once(&p, &q[0], &qdot[0], &ext[0], dt, eps_stick,
                                cond_limit)
            if status != STATUS_OK:
                break
    return status


def settle_loop(double[::1] params, double[::1] q, double[::1] qdot, double dt,
                double tol, int quiet_needed, int max_steps,
                double eps_stick=1e-2, double cond_limit=1e12):
    """Settle to equilibrium in place; returns steps taken or -status on error."""
    cdef Params p
    _unpack(params, &p)
    cdef int result
    with nogil:
        result = _settle_impl(&p, &q[0], &qdot[0], dt, tol, quiet_needed,
                              max_steps, eps_stick, cond_limit)
    return result


def push_window_loop(double[::1] params, double[::1] q, double[::1] qdot,
                     int link, double local_offset, int side,
                     double[::1] direction, double speed, int nsubsteps,
                     double dt, double eps_stick=1e-2, double cond_limit=1e12):
    """Velocity-imposed one-sided push for nsubsteps; returns a status code."""
    cdef Params p
    _unpack(params, &p)
    cdef int status
    cdef double dirx = direction[0], diry = direction[1]
    with nogil:
        status = _push_impl(&p, &q[0], &qdot[0], link, local_offset, side,
                            dirx, diry, speed, nsubsteps, dt, eps_stick,
                            cond_limit)
    return status
