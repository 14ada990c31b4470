"""Compiled kernels. Every parallel loop runs over independent nodes or atoms and
writes to its own slot, so results do not depend on the thread count."""

import math
import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numpy as np  # noqa: E402
from numba import njit, prange  # noqa: E402

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# -- pointwise building blocks ----------------------------------------------------------


@njit(cache=True)
def _bump(kind, z):
    if kind == 0:
        t = math.tanh(z)
        return t, 1.0 - t * t
    if kind == 1:
        return math.sin(z), math.cos(z)
    if kind == 2:
        return math.cos(z), -math.sin(z)
    e = math.exp(-z * z)
    return e, -2.0 * z * e


@njit(cache=True)
def expr_eval(tab, e, x, grad):
    """Value of expression ``e`` at ``x``; its gradient is added into ``grad``."""
    d = x.shape[0]
    v = tab.e_const[e]
    for i in range(d):
        qi = 0.0
        for j in range(d):
            qi += tab.e_quad[e, i, j] * x[j]
        v += tab.e_lin[e, i] * x[i] + x[i] * qi
        grad[i] += tab.e_lin[e, i] + 2.0 * qi
    for b in range(tab.b_owner.shape[0]):
        if tab.b_owner[b] != e:
            continue
        z = tab.b_z[b]
        for i in range(d):
            z += tab.b_w[b, i] * x[i]
        phi, dphi = _bump(tab.b_kind[b], z)
        v += tab.b_s[b] * phi
        for i in range(d):
            grad[i] += tab.b_s[b] * dphi * tab.b_w[b, i]
    return v


@njit(cache=True)
def _cell(x, lo, h, n):
    s = (x - lo) / h
    i = int(math.floor(s))
    if i < 0:
        i = 0
    elif i > n - 2:
        i = n - 2
    s -= i
    if s < 0.0:
        s = 0.0
    elif s > 1.0:
        s = 1.0
    return i, s


@njit(cache=True)
def _hermite_basis(s):
    s2 = s * s
    s3 = s2 * s
    return (
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
        6.0 * s2 - 6.0 * s,
        3.0 * s2 - 4.0 * s + 1.0,
        -6.0 * s2 + 6.0 * s,
        3.0 * s2 - 2.0 * s,
    )


@njit(cache=True)
def hermite_eval(field, lo, h, n, x, grad):
    """Cubic (1D) or bicubic (2D) Hermite interpolant of node values and derivatives."""
    if x.shape[0] == 1:
        i, s = _cell(x[0], lo[0], h[0], n[0])
        p0, p1, q0, q1, dp0, dp1, dq0, dq1 = _hermite_basis(s)
        hh = h[0]
        v = p0 * field[i, 0] + p1 * hh * field[i, 1] + q0 * field[i + 1, 0] + q1 * hh * field[i + 1, 1]
        grad[0] += (dp0 * field[i, 0] + dp1 * hh * field[i, 1] + dq0 * field[i + 1, 0] + dq1 * hh * field[i + 1, 1]) / hh
        return v
    i, s = _cell(x[0], lo[0], h[0], n[0])
    j, t = _cell(x[1], lo[1], h[1], n[1])
    hx = h[0]
    hy = h[1]
    n1 = n[1]
    a0, a1, b0, b1, da0, da1, db0, db1 = _hermite_basis(s)
    c0, c1, e0, e1, dc0, dc1, de0, de1 = _hermite_basis(t)
    v = 0.0
    gx = 0.0
    gy = 0.0
    for ci in range(2):
        if ci == 0:
            P0, P1, D0, D1 = a0, a1, da0, da1
        else:
            P0, P1, D0, D1 = b0, b1, db0, db1
        for cj in range(2):
            if cj == 0:
                Q0, Q1, E0, E1 = c0, c1, dc0, dc1
            else:
                Q0, Q1, E0, E1 = e0, e1, de0, de1
            node = (i + ci) * n1 + (j + cj)
            f0 = field[node, 0]
            fx = field[node, 1] * hx
            fy = field[node, 2] * hy
            fxy = field[node, 3] * hx * hy
            v += P0 * Q0 * f0 + P1 * Q0 * fx + P0 * Q1 * fy + P1 * Q1 * fxy
            gx += D0 * Q0 * f0 + D1 * Q0 * fx + D0 * Q1 * fy + D1 * Q1 * fxy
            gy += P0 * E0 * f0 + P1 * E0 * fx + P0 * E1 * fy + P1 * E1 * fxy
    grad[0] += gx / hx
    grad[1] += gy / hy
    return v


@njit(cache=True)
def _kernel_sum(kind, amp, scale, pts, w, x, grad):
    d = x.shape[0]
    v = 0.0
    inv = 1.0 / (scale * scale)
    for p in range(w.shape[0]):
        wp = w[p]
        if wp == 0.0:
            continue
        r2 = 0.0
        for i in range(d):
            dx = x[i] - pts[p, i]
            r2 += dx * dx
        if kind == 1:
            k = math.exp(-0.5 * r2 * inv)
            v += amp * wp * k
            for i in range(d):
                grad[i] -= amp * wp * k * inv * (x[i] - pts[p, i])
        elif kind == 2:
            r = math.sqrt(r2)
            v += amp * wp * r
            if r > 0.0:
                for i in range(d):
                    grad[i] += amp * wp * (x[i] - pts[p, i]) / r
        else:
            v += amp * wp * r2
            for i in range(d):
                grad[i] += 2.0 * amp * wp * (x[i] - pts[p, i])
    return v


@njit(cache=True)
def coupling_eval(tab, which, k, x, grad):
    """Running (``which=0``, slice ``k``) or terminal (``which=1``) coupling with gradient."""
    d = x.shape[0]
    for i in range(d):
        grad[i] = 0.0
    if which == 0:
        v = expr_eval(tab, 2, x, grad)
        mq = tab.run_mom[k, 0]
        v += tab.run_mom[k, 1]
        for i in range(d):
            v += mq * x[i] * x[i] + tab.run_mom[k, 2 + i] * x[i]
            grad[i] += 2.0 * mq * x[i] + tab.run_mom[k, 2 + i]
        if tab.run_mode == 1:
            v += _kernel_sum(tab.run_kind, tab.run_amp, tab.run_scale, tab.pts[k], tab.run_w, x, grad)
        elif tab.run_mode == 2:
            v += hermite_eval(tab.run_field[k], tab.grid_lo, tab.grid_h, tab.grid_n, x, grad)
        return v
    v = expr_eval(tab, 3, x, grad)
    mq = tab.term_mom[0]
    v += tab.term_mom[1]
    for i in range(d):
        v += mq * x[i] * x[i] + tab.term_mom[2 + i] * x[i]
        grad[i] += 2.0 * mq * x[i] + tab.term_mom[2 + i]
    if tab.term_mode == 1:
        v += _kernel_sum(tab.term_kind, tab.term_amp, tab.term_scale, tab.pts[tab.pts.shape[0] - 1], tab.term_w, x, grad)
    elif tab.term_mode == 2:
        v += hermite_eval(tab.term_field, tab.grid_lo, tab.grid_h, tab.grid_n, x, grad)
    return v


# -- path costs and the transcription objective -----------------------------------------


@njit(cache=True)
def path_objective(tab, x0, V, grad, X, Gx, B1):
    """Discrete cost of the path with velocities ``V`` from ``x0`` and its gradient in ``V``."""
    n, d = V.shape
    dt = tab.dt
    gb1 = np.zeros(d)
    gb2 = np.zeros(d)
    gf = np.zeros(d)
    for i in range(d):
        X[0, i] = x0[i]
    for k in range(n):
        for i in range(d):
            X[k + 1, i] = X[k, i] + dt * V[k, i]
    J = 0.0
    for k in range(n):
        for i in range(d):
            gb1[i] = 0.0
            gb2[i] = 0.0
        b1 = expr_eval(tab, 0, X[k], gb1)
        b2 = expr_eval(tab, 1, X[k], gb2)
        f = coupling_eval(tab, 0, k, X[k], gf)
        v2 = 0.0
        for i in range(d):
            v2 += V[k, i] * V[k, i]
        J += dt * (b1 * v2 + b2 + f)
        B1[k] = b1
        for i in range(d):
            Gx[k, i] = dt * (gb1[i] * v2 + gb2[i] + gf[i])
    J += coupling_eval(tab, 1, n, X[n], gf)
    lam = gf.copy()
    for k in range(n - 1, -1, -1):
        for i in range(d):
            grad[k, i] = dt * (2.0 * B1[k] * V[k, i] + lam[i])
            lam[i] += Gx[k, i]
    return J


@njit(cache=True)
def path_value(tab, path):
    """Left-endpoint cost of a path given by its node positions."""
    n = path.shape[0] - 1
    d = path.shape[1]
    dt = tab.dt
    g = np.zeros(d)
    J = 0.0
    for k in range(n):
        b1 = expr_eval(tab, 0, path[k], g)
        b2 = expr_eval(tab, 1, path[k], g)
        f = coupling_eval(tab, 0, k, path[k], g)
        v2 = 0.0
        for i in range(d):
            v = (path[k + 1, i] - path[k, i]) / dt
            v2 += v * v
        J += dt * (b1 * v2 + b2 + f)
    return J + coupling_eval(tab, 1, n, path[n], g)


@njit(parallel=True, cache=True)
def path_costs(tab, paths, out):
    for p in prange(paths.shape[0]):
        out[p] = path_value(tab, paths[p])


@njit(cache=True)
def _project(V, C):
    for k in range(V.shape[0]):
        r2 = 0.0
        for i in range(V.shape[1]):
            r2 += V[k, i] * V[k, i]
        if r2 > C * C:
            s = C / math.sqrt(r2)
            for i in range(V.shape[1]):
                V[k, i] *= s


@njit(cache=True)
def _pg_norm(V, G, C, W):
    for k in range(V.shape[0]):
        for i in range(V.shape[1]):
            W[k, i] = V[k, i] - G[k, i]
    _project(W, C)
    s = 0.0
    for k in range(V.shape[0]):
        for i in range(V.shape[1]):
            r = W[k, i] - V[k, i]
            s += r * r
    return math.sqrt(s)


@njit(cache=True)
def lbfgs_path(tab, x0, V, C, tol, max_iter, mem, h0):
    """Projected L-BFGS on the velocities of one path; ``V`` is overwritten.

    Returns ``(J, iterations, projected-gradient norm, converged)``.
    """
    n, d = V.shape
    m = n * d
    X = np.empty((n + 1, d))
    Gx = np.empty((n, d))
    B1 = np.empty(n)
    G = np.empty((n, d))
    Gt = np.empty((n, d))
    Vt = np.empty((n, d))
    W = np.empty((n, d))
    D = np.empty((n, d))
    S = np.zeros((mem, n, d))
    Y = np.zeros((mem, n, d))
    rho = np.zeros(mem)
    alpha = np.zeros(mem)
    _project(V, C)
    J = path_objective(tab, x0, V, G, X, Gx, B1)
    count = 0
    head = 0
    gamma = h0
    pg = _pg_norm(V, G, C, W)
    it = 0
    while it < max_iter and pg > tol:
        it += 1
        # two-loop recursion
        for k in range(n):
            for i in range(d):
                D[k, i] = -G[k, i]
        for c in range(count):
            j = (head - 1 - c) % mem
            a = 0.0
            for k in range(n):
                for i in range(d):
                    a += S[j, k, i] * D[k, i]
            a *= rho[j]
            alpha[j] = a
            for k in range(n):
                for i in range(d):
                    D[k, i] -= a * Y[j, k, i]
        for k in range(n):
            for i in range(d):
                D[k, i] *= gamma
        for c in range(count - 1, -1, -1):
            j = (head - 1 - c) % mem
            b = 0.0
            for k in range(n):
                for i in range(d):
                    b += Y[j, k, i] * D[k, i]
            b *= rho[j]
            for k in range(n):
                for i in range(d):
                    D[k, i] += (alpha[j] - b) * S[j, k, i]
        gd = 0.0
        for k in range(n):
            for i in range(d):
                gd += G[k, i] * D[k, i]
        if gd >= 0.0:
            for k in range(n):
                for i in range(d):
                    D[k, i] = -h0 * G[k, i]
        # backtracking Armijo search along the projected arc
        t = 1.0
        ok = False
        Jt = J
        for _ in range(60):
            for k in range(n):
                for i in range(d):
                    Vt[k, i] = V[k, i] + t * D[k, i]
            _project(Vt, C)
            gs = 0.0
            for k in range(n):
                for i in range(d):
                    gs += G[k, i] * (Vt[k, i] - V[k, i])
            Jt = path_objective(tab, x0, Vt, Gt, X, Gx, B1)
            if gs < 0.0 and Jt <= J + 1e-4 * gs + 1e-15 * abs(J):
                ok = True
                break
            t *= 0.5
        if not ok:
            if count > 0:
                count = 0
                gamma = h0
                continue
            break
        sy = 0.0
        yy = 0.0
        for k in range(n):
            for i in range(d):
                s = Vt[k, i] - V[k, i]
                y = Gt[k, i] - G[k, i]
                S[head, k, i] = s
                Y[head, k, i] = y
                sy += s * y
                yy += y * y
        if sy > 1e-14 * yy and yy > 0.0:
            rho[head] = 1.0 / sy
            gamma = sy / yy
            head = (head + 1) % mem
            if count < mem:
                count += 1
        for k in range(n):
            for i in range(d):
                V[k, i] = Vt[k, i]
                G[k, i] = Gt[k, i]
        J = Jt
        pg = _pg_norm(V, G, C, W)
    return J, it, pg, pg <= tol


@njit(parallel=True, cache=True)
def transcribe(tab, x0s, V, C, tol, max_iter, mem, h0, out_J, out_it, out_pg, out_ok):
    for p in prange(x0s.shape[0]):
        J, it, pg, ok = lbfgs_path(tab, x0s[p], V[p], C, tol, max_iter, mem, h0)
        out_J[p] = J
        out_it[p] = it
        out_pg[p] = pg
        out_ok[p] = ok


# -- semi-Lagrangian HJB sweep --------------------------------------------------------


@njit(cache=True)
def _interp1(u, lo, h, n, x):
    top = lo + (n - 1) * h
    clamped = False
    if x < lo:
        x = lo
        clamped = True
    elif x > top:
        x = top
        clamped = True
    i, s = _cell(x, lo, h, n)
    return (1.0 - s) * u[i] + s * u[i + 1], clamped


@njit(cache=True)
def _interp2(u, lo0, lo1, h0, h1, n0, n1, x0, x1):
    clamped = False
    top0 = lo0 + (n0 - 1) * h0
    top1 = lo1 + (n1 - 1) * h1
    if x0 < lo0:
        x0 = lo0
        clamped = True
    elif x0 > top0:
        x0 = top0
        clamped = True
    if x1 < lo1:
        x1 = lo1
        clamped = True
    elif x1 > top1:
        x1 = top1
        clamped = True
    i, s = _cell(x0, lo0, h0, n0)
    j, t = _cell(x1, lo1, h1, n1)
    a = i * n1 + j
    b = (i + 1) * n1 + j
    v = (1.0 - s) * ((1.0 - t) * u[a] + t * u[a + 1]) + s * ((1.0 - t) * u[b] + t * u[b + 1])
    return v, clamped


@njit(cache=True)
def _golden1(u, lo, h, n, x, dt, b1, a_lo, a_hi, iters):
    c = a_hi - GOLDEN * (a_hi - a_lo)
    e = a_lo + GOLDEN * (a_hi - a_lo)
    fc = dt * b1 * c * c + _interp1(u, lo, h, n, x + c * dt)[0]
    fe = dt * b1 * e * e + _interp1(u, lo, h, n, x + e * dt)[0]
    for _ in range(iters):
        if fc < fe:
            a_hi = e
            e = c
            fe = fc
            c = a_hi - GOLDEN * (a_hi - a_lo)
            fc = dt * b1 * c * c + _interp1(u, lo, h, n, x + c * dt)[0]
        else:
            a_lo = c
            c = e
            fc = fe
            e = a_lo + GOLDEN * (a_hi - a_lo)
            fe = dt * b1 * e * e + _interp1(u, lo, h, n, x + e * dt)[0]
    if fc <= fe:
        return c, fc
    return e, fe


@njit(parallel=True, cache=True)
def hjb_1d(tab, lo, h, n, C, K, refine, core_lo, core_hi, U, A, clamps, core_clamps):
    """Backward sweep; ``U`` is ``(n_t+1, n)``, ``A`` is ``(n_t, n, 1)``."""
    nt = U.shape[0] - 1
    dt = tab.dt
    lo0 = lo[0]
    h0 = h[0]
    n0 = n[0]
    for i in prange(n0):
        x = np.empty(1)
        g = np.empty(1)
        x[0] = lo0 + i * h0
        U[nt, i] = coupling_eval(tab, 1, nt, x, g)
    step = C / K
    for k in range(nt - 1, -1, -1):
        u = U[k + 1]
        for i in prange(n0):
            x = np.empty(1)
            g = np.zeros(1)
            xi = lo0 + i * h0
            x[0] = xi
            b1 = expr_eval(tab, 0, x, g)
            b2 = expr_eval(tab, 1, x, g)
            f = coupling_eval(tab, 0, k, x, g)
            best = np.inf
            besta = 0.0
            for j in range(2 * K + 1):
                a = C * (j - K) / K
                val = dt * b1 * a * a + _interp1(u, lo0, h0, n0, xi + a * dt)[0]
                if val < best:
                    best = val
                    besta = a
            if refine > 0:
                ra, rv = _golden1(u, lo0, h0, n0, xi, dt, b1, max(-C, besta - step), min(C, besta + step), refine)
                if rv < best:
                    best = rv
                    besta = ra
            U[k, i] = best + dt * (b2 + f)
            A[k, i, 0] = besta
            cl = _interp1(u, lo0, h0, n0, xi + besta * dt)[1]
            if cl:
                clamps[k, i] = 1
                if core_lo[0] <= xi <= core_hi[0]:
                    core_clamps[k, i] = 1


@njit(cache=True)
def _obj2(u, lo, h, n, x0, x1, dt, b1, a0, a1):
    return dt * b1 * (a0 * a0 + a1 * a1) + _interp2(u, lo[0], lo[1], h[0], h[1], n[0], n[1], x0 + a0 * dt, x1 + a1 * dt)[0]


@njit(cache=True)
def _golden2(u, lo, h, n, x0, x1, dt, b1, a0, a1, axis, a_lo, a_hi, iters):
    c = a_hi - GOLDEN * (a_hi - a_lo)
    e = a_lo + GOLDEN * (a_hi - a_lo)
    if axis == 0:
        fc = _obj2(u, lo, h, n, x0, x1, dt, b1, c, a1)
        fe = _obj2(u, lo, h, n, x0, x1, dt, b1, e, a1)
    else:
        fc = _obj2(u, lo, h, n, x0, x1, dt, b1, a0, c)
        fe = _obj2(u, lo, h, n, x0, x1, dt, b1, a0, e)
    for _ in range(iters):
        if fc < fe:
            a_hi = e
            e = c
            fe = fc
            c = a_hi - GOLDEN * (a_hi - a_lo)
            if axis == 0:
                fc = _obj2(u, lo, h, n, x0, x1, dt, b1, c, a1)
            else:
                fc = _obj2(u, lo, h, n, x0, x1, dt, b1, a0, c)
        else:
            a_lo = c
            c = e
            fc = fe
            e = a_lo + GOLDEN * (a_hi - a_lo)
            if axis == 0:
                fe = _obj2(u, lo, h, n, x0, x1, dt, b1, e, a1)
            else:
                fe = _obj2(u, lo, h, n, x0, x1, dt, b1, a0, e)
    if fc <= fe:
        return c, fc
    return e, fe


@njit(parallel=True, cache=True)
def hjb_2d(tab, lo, h, n, C, K, refine, core_lo, core_hi, U, A, clamps, core_clamps):
    """Backward sweep on a 2D grid; nodes flattened row-major, velocities in the disc |a| <= C."""
    nt = U.shape[0] - 1
    dt = tab.dt
    n0 = n[0]
    n1 = n[1]
    nn = n0 * n1
    for q in prange(nn):
        x = np.empty(2)
        g = np.empty(2)
        x[0] = lo[0] + (q // n1) * h[0]
        x[1] = lo[1] + (q % n1) * h[1]
        U[nt, q] = coupling_eval(tab, 1, nt, x, g)
    step = C / K
    C2 = C * C * (1.0 + 1e-12)
    for k in range(nt - 1, -1, -1):
        u = U[k + 1]
        for q in prange(nn):
            x = np.empty(2)
            g = np.zeros(2)
            x0 = lo[0] + (q // n1) * h[0]
            x1 = lo[1] + (q % n1) * h[1]
            x[0] = x0
            x[1] = x1
            b1 = expr_eval(tab, 0, x, g)
            b2 = expr_eval(tab, 1, x, g)
            f = coupling_eval(tab, 0, k, x, g)
            best = np.inf
            b0 = 0.0
            bb = 0.0
            for j0 in range(2 * K + 1):
                a0 = C * (j0 - K) / K
                for j1 in range(2 * K + 1):
                    a1 = C * (j1 - K) / K
                    if a0 * a0 + a1 * a1 > C2:
                        continue
                    val = _obj2(u, lo, h, n, x0, x1, dt, b1, a0, a1)
                    if val < best:
                        best = val
                        b0 = a0
                        bb = a1
            if refine > 0:
                r = math.sqrt(max(C * C - bb * bb, 0.0))
                ra, rv = _golden2(u, lo, h, n, x0, x1, dt, b1, b0, bb, 0, max(-r, b0 - step), min(r, b0 + step), refine)
                if rv < best:
                    best = rv
                    b0 = ra
                r = math.sqrt(max(C * C - b0 * b0, 0.0))
                ra, rv = _golden2(u, lo, h, n, x0, x1, dt, b1, b0, bb, 1, max(-r, bb - step), min(r, bb + step), refine)
                if rv < best:
                    best = rv
                    bb = ra
            U[k, q] = best + dt * (b2 + f)
            A[k, q, 0] = b0
            A[k, q, 1] = bb
            cl = _interp2(u, lo[0], lo[1], h[0], h[1], n0, n1, x0 + b0 * dt, x1 + bb * dt)[1]
            if cl:
                clamps[k, q] = 1
                if core_lo[0] <= x0 <= core_hi[0] and core_lo[1] <= x1 <= core_hi[1]:
                    core_clamps[k, q] = 1


# -- characteristics ------------------------------------------------------------------


@njit(parallel=True, cache=True)
def characteristics(A, lo, h, n, dt, x0s, paths, clamps):
    """Explicit Euler along the interpolated feedback, clamped to the grid box."""
    nt = A.shape[0]
    d = x0s.shape[1]
    for p in prange(x0s.shape[0]):
        x = x0s[p].copy()
        for i in range(d):
            paths[p, 0, i] = x[i]
        cnt = 0
        for k in range(nt):
            a = np.empty(d)
            if d == 1:
                a[0] = _interp1(A[k, :, 0], lo[0], h[0], n[0], x[0])[0]
            else:
                for i in range(d):
                    a[i] = _interp2(A[k, :, i], lo[0], lo[1], h[0], h[1], n[0], n[1], x[0], x[1])[0]
            for i in range(d):
                x[i] = x[i] + dt * a[i]
                top = lo[i] + (n[i] - 1) * h[i]
                if x[i] < lo[i]:
                    x[i] = lo[i]
                    cnt += 1
                elif x[i] > top:
                    x[i] = top
                    cnt += 1
                paths[p, k + 1, i] = x[i]
        clamps[p] = cnt


# -- kernel fields on the space grid ----------------------------------------------------


@njit(parallel=True, cache=True)
def build_field(amp, scale, pts, w, lo, h, n, out):
    """Gaussian interaction and its derivatives at grid nodes for every slice of ``pts``."""
    S = pts.shape[0]
    d = pts.shape[2]
    nn = out.shape[1]
    inv = 1.0 / (scale * scale)
    for job in prange(S * nn):
        s = job // nn
        q = job % nn
        if d == 1:
            x = lo[0] + q * h[0]
            v = 0.0
            gx = 0.0
            for p in range(w.shape[0]):
                dx = x - pts[s, p, 0]
                k = w[p] * math.exp(-0.5 * dx * dx * inv)
                v += k
                gx -= k * inv * dx
            out[s, q, 0] = amp * v
            out[s, q, 1] = amp * gx
        else:
            n1 = n[1]
            x0 = lo[0] + (q // n1) * h[0]
            x1 = lo[1] + (q % n1) * h[1]
            v = 0.0
            g0 = 0.0
            g1 = 0.0
            g01 = 0.0
            for p in range(w.shape[0]):
                d0 = x0 - pts[s, p, 0]
                d1 = x1 - pts[s, p, 1]
                k = w[p] * math.exp(-0.5 * (d0 * d0 + d1 * d1) * inv)
                v += k
                g0 -= k * inv * d0
                g1 -= k * inv * d1
                g01 += k * inv * inv * d0 * d1
            out[s, q, 0] = amp * v
            out[s, q, 1] = amp * g0
            out[s, q, 2] = amp * g1
            out[s, q, 3] = amp * g01


@njit(parallel=True, cache=True)
def coupling_batch(tab, which, k, X, val, grad):
    for q in prange(X.shape[0]):
        val[q] = coupling_eval(tab, which, k, X[q], grad[q])


# -- shortest paths for dual certificates -----------------------------------------------


@njit(cache=True)
def bellman_ford(n_nodes, src, dst, wt, dist):
    """Shortest distances from a virtual source joined to every node with weight 0.

    Returns True when a negative cycle exists.
    """
    for v in range(n_nodes):
        dist[v] = 0.0
    for _ in range(n_nodes + 1):
        changed = False
        for e in range(src.shape[0]):
            nd = dist[src[e]] + wt[e]
            if nd < dist[dst[e]] - 1e-13 * (1.0 + abs(nd)):
                dist[dst[e]] = nd
                changed = True
        if not changed:
            return False
    return True
