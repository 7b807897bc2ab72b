"""Compiled inner loops.

The metric arrives as a postfix program (see ``expr.compile_metric``) and is
evaluated with second-order forward jets, so Christoffel symbols and their
first derivatives are analytic.  With ``fd_step > 0`` the jets are bypassed
and derivatives come from central differences of the metric values instead.

Status codes returned by the integrators: 0 ok, 1 left the chart, 2 non-finite
state (domain error in the metric or a singular metric).
"""

import math

import numpy as np
from numba import njit

from .expr import (
    OP_ADD,
    OP_CONST,
    OP_DIV,
    OP_FUNC,
    OP_MUL,
    OP_NEG,
    OP_POW,
    OP_STORE,
    OP_SUB,
    OP_VAR,
)

F_SIN = OP_FUNC["sin"]
F_COS = OP_FUNC["cos"]
F_TAN = OP_FUNC["tan"]
F_SINH = OP_FUNC["sinh"]
F_COSH = OP_FUNC["cosh"]
F_TANH = OP_FUNC["tanh"]
F_EXP = OP_FUNC["exp"]
F_LOG = OP_FUNC["log"]
F_SQRT = OP_FUNC["sqrt"]
F_ABS = OP_FUNC["abs"]
F_RECIP = 99
F_POWK = 98

OK, LEFT_CHART, NONFINITE = 0, 1, 2


@njit(cache=True, error_model="numpy", inline="always")
def _unary(code, a, k):
    """Value, first and second derivative of a scalar function at ``a``."""
    nan = np.nan
    if code == F_SIN:
        s = math.sin(a)
        return s, math.cos(a), -s
    if code == F_COS:
        c = math.cos(a)
        return c, -math.sin(a), -c
    if code == F_TAN:
        t = math.tan(a)
        s2 = 1.0 + t * t
        return t, s2, 2.0 * t * s2
    if code == F_SINH:
        s = math.sinh(a)
        c = math.cosh(a)
        return s, c, s
    if code == F_COSH:
        s = math.sinh(a)
        c = math.cosh(a)
        return c, s, c
    if code == F_TANH:
        t = math.tanh(a)
        s2 = 1.0 - t * t
        return t, s2, -2.0 * t * s2
    if code == F_EXP:
        e = math.exp(a)
        return e, e, e
    if code == F_LOG:
        if a <= 0.0:
            return nan, nan, nan
        return math.log(a), 1.0 / a, -1.0 / (a * a)
    if code == F_SQRT:
        if a < 0.0:
            return nan, nan, nan
        s = math.sqrt(a)
        if s == 0.0:
            return 0.0, np.inf, -np.inf
        return s, 0.5 / s, -0.25 / (s * a)
    if code == F_ABS:
        if a > 0.0:
            return a, 1.0, 0.0
        if a < 0.0:
            return -a, -1.0, 0.0
        return 0.0, 0.0, 0.0
    if code == F_RECIP:
        if a == 0.0:
            return nan, nan, nan
        r = 1.0 / a
        return r, -r * r, 2.0 * r * r * r
    if code == F_POWK:
        if a < 0.0 and k != math.floor(k):
            return nan, nan, nan
        f = a**k
        d1 = 0.0 if k == 0.0 else k * a ** (k - 1.0)
        d2 = 0.0 if (k == 0.0 or k == 1.0) else k * (k - 1.0) * a ** (k - 2.0)
        return f, d1, d2
    return nan, nan, nan


@njit(cache=True, error_model="numpy")
def eval_metric(ops, args, slot_i, slot_j, n, x, order, vs, gs, hs, g, dg, d2g):
    """Evaluate g (and dg[k,i,j] = d_k g_ij, d2g[k,m,i,j]) at x via jets.

    Jet updates are written out inline: calling helpers that take the jet
    arrays makes numba keep them in memory across the whole dispatch loop,
    which costs more than the arithmetic itself.
    """
    sp = 0
    for pc in range(ops.shape[0]):
        op = ops[pc]
        if op == OP_CONST or op == OP_VAR:
            vs[sp] = args[pc] if op == OP_CONST else x[int(args[pc])]
            if order >= 1:
                for p in range(n):
                    gs[sp, p] = 0.0
                if op == OP_VAR:
                    gs[sp, int(args[pc])] = 1.0
            if order >= 2:
                for p in range(n):
                    for q in range(n):
                        hs[sp, p, q] = 0.0
            sp += 1
        elif op == OP_ADD or op == OP_SUB:
            sgn = 1.0 if op == OP_ADD else -1.0
            a = sp - 2
            b = sp - 1
            vs[a] += sgn * vs[b]
            if order >= 1:
                for p in range(n):
                    gs[a, p] += sgn * gs[b, p]
            if order >= 2:
                for p in range(n):
                    for q in range(n):
                        hs[a, p, q] += sgn * hs[b, p, q]
            sp -= 1
        elif op == OP_NEG:
            a = sp - 1
            vs[a] = -vs[a]
            if order >= 1:
                for p in range(n):
                    gs[a, p] = -gs[a, p]
            if order >= 2:
                for p in range(n):
                    for q in range(n):
                        hs[a, p, q] = -hs[a, p, q]
        elif op == OP_STORE:
            s = int(args[pc])
            i = slot_i[s]
            j = slot_j[s]
            a = sp - 1
            g[i, j] = vs[a]
            g[j, i] = vs[a]
            if order >= 1:
                for p in range(n):
                    dg[p, i, j] = gs[a, p]
                    dg[p, j, i] = gs[a, p]
            if order >= 2:
                for p in range(n):
                    for q in range(n):
                        d2g[p, q, i, j] = hs[a, p, q]
                        d2g[p, q, j, i] = hs[a, p, q]
            sp -= 1
        else:
            # unary phase (on the top, or on the base for division and powers)
            # followed by an optional multiply with the exponent / numerator
            code = op
            k = 0.0
            top = sp - 1
            mul = False
            post_exp = False
            if op == OP_DIV:
                code = F_RECIP
                mul = True
            elif op == OP_MUL:
                code = -1
                mul = True
            elif op == OP_POW:
                b = sp - 1
                const_exp = True
                if order >= 1:
                    for p in range(n):
                        if gs[b, p] != 0.0:
                            const_exp = False
                if order >= 2:
                    for p in range(n):
                        for q in range(n):
                            if hs[b, p, q] != 0.0:
                                const_exp = False
                top = sp - 2
                if const_exp:
                    code = F_POWK
                    k = vs[b]
                else:
                    # a^b = exp(b log a)
                    code = F_LOG
                    mul = True
                    post_exp = True
                sp -= 1
            if code >= 0:
                f, d1, d2 = _unary(code, vs[top], k)
                if order >= 2:
                    for p in range(n):
                        for q in range(n):
                            hs[top, p, q] = d2 * gs[top, p] * gs[top, q] + d1 * hs[top, p, q]
                if order >= 1:
                    for p in range(n):
                        gs[top, p] = d1 * gs[top, p]
                vs[top] = f
            if mul:
                if op == OP_POW:
                    dst = top
                    src = top + 1
                else:
                    dst = sp - 2
                    src = sp - 1
                    sp -= 1
                a0 = vs[dst]
                b0 = vs[src]
                if order >= 2:
                    for p in range(n):
                        for q in range(n):
                            hs[dst, p, q] = (
                                hs[dst, p, q] * b0
                                + gs[dst, p] * gs[src, q]
                                + gs[dst, q] * gs[src, p]
                                + a0 * hs[src, p, q]
                            )
                if order >= 1:
                    for p in range(n):
                        gs[dst, p] = gs[dst, p] * b0 + a0 * gs[src, p]
                vs[dst] = a0 * b0
            if post_exp:
                f, d1, d2 = _unary(F_EXP, vs[top], 0.0)
                if order >= 2:
                    for p in range(n):
                        for q in range(n):
                            hs[top, p, q] = d2 * gs[top, p] * gs[top, q] + d1 * hs[top, p, q]
                if order >= 1:
                    for p in range(n):
                        gs[top, p] = d1 * gs[top, p]
                vs[top] = f


@njit(cache=True, error_model="numpy")
def eval_metric2(ops, args, slot_i, slot_j, x, order, J, g, dg, d2g):
    """Two-dimensional specialisation of ``eval_metric`` with jets packed as
    J[s] = (v, d_0, d_1, d_00, d_01, d_11)."""
    sp = 0
    for pc in range(ops.shape[0]):
        op = ops[pc]
        if op == OP_CONST:
            J[sp, 0] = args[pc]
            J[sp, 1] = 0.0
            J[sp, 2] = 0.0
            J[sp, 3] = 0.0
            J[sp, 4] = 0.0
            J[sp, 5] = 0.0
            sp += 1
        elif op == OP_VAR:
            c = int(args[pc])
            J[sp, 0] = x[c]
            J[sp, 1] = 1.0 if c == 0 else 0.0
            J[sp, 2] = 1.0 if c == 1 else 0.0
            J[sp, 3] = 0.0
            J[sp, 4] = 0.0
            J[sp, 5] = 0.0
            sp += 1
        elif op == OP_ADD:
            a = sp - 2
            for e in range(6):
                J[a, e] += J[a + 1, e]
            sp -= 1
        elif op == OP_SUB:
            a = sp - 2
            for e in range(6):
                J[a, e] -= J[a + 1, e]
            sp -= 1
        elif op == OP_NEG:
            a = sp - 1
            for e in range(6):
                J[a, e] = -J[a, e]
        elif op == OP_STORE:
            s = int(args[pc])
            i = slot_i[s]
            j = slot_j[s]
            a = sp - 1
            g[i, j] = J[a, 0]
            g[j, i] = J[a, 0]
            if order >= 1:
                dg[0, i, j] = J[a, 1]
                dg[0, j, i] = J[a, 1]
                dg[1, i, j] = J[a, 2]
                dg[1, j, i] = J[a, 2]
            if order >= 2:
                d2g[0, 0, i, j] = J[a, 3]
                d2g[0, 0, j, i] = J[a, 3]
                d2g[0, 1, i, j] = J[a, 4]
                d2g[0, 1, j, i] = J[a, 4]
                d2g[1, 0, i, j] = J[a, 4]
                d2g[1, 0, j, i] = J[a, 4]
                d2g[1, 1, i, j] = J[a, 5]
                d2g[1, 1, j, i] = J[a, 5]
            sp -= 1
        else:
            code = op
            k = 0.0
            top = sp - 1
            mul = False
            post_exp = False
            if op == OP_DIV:
                code = F_RECIP
                mul = True
            elif op == OP_MUL:
                code = -1
                mul = True
            elif op == OP_POW:
                b = sp - 1
                top = sp - 2
                if J[b, 1] == 0.0 and J[b, 2] == 0.0 and J[b, 3] == 0.0 and J[b, 4] == 0.0 and J[b, 5] == 0.0:
                    code = F_POWK
                    k = J[b, 0]
                else:
                    code = F_LOG
                    mul = True
                    post_exp = True
                sp -= 1
            if code >= 0:
                f, d1, d2 = _unary(code, J[top, 0], k)
                g0 = J[top, 1]
                g1 = J[top, 2]
                J[top, 0] = f
                J[top, 1] = d1 * g0
                J[top, 2] = d1 * g1
                J[top, 3] = d2 * g0 * g0 + d1 * J[top, 3]
                J[top, 4] = d2 * g0 * g1 + d1 * J[top, 4]
                J[top, 5] = d2 * g1 * g1 + d1 * J[top, 5]
            if mul:
                if op == OP_POW:
                    d = top
                    s = top + 1
                else:
                    d = sp - 2
                    s = sp - 1
                    sp -= 1
                a0 = J[d, 0]
                a1 = J[d, 1]
                a2 = J[d, 2]
                b0 = J[s, 0]
                b1 = J[s, 1]
                b2 = J[s, 2]
                J[d, 0] = a0 * b0
                J[d, 1] = a1 * b0 + a0 * b1
                J[d, 2] = a2 * b0 + a0 * b2
                J[d, 3] = J[d, 3] * b0 + 2.0 * a1 * b1 + a0 * J[s, 3]
                J[d, 4] = J[d, 4] * b0 + a1 * b2 + a2 * b1 + a0 * J[s, 4]
                J[d, 5] = J[d, 5] * b0 + 2.0 * a2 * b2 + a0 * J[s, 5]
            if post_exp:
                f, d1, d2 = _unary(F_EXP, J[top, 0], 0.0)
                g0 = J[top, 1]
                g1 = J[top, 2]
                J[top, 0] = f
                J[top, 1] = d1 * g0
                J[top, 2] = d1 * g1
                J[top, 3] = d2 * g0 * g0 + d1 * J[top, 3]
                J[top, 4] = d2 * g0 * g1 + d1 * J[top, 4]
                J[top, 5] = d2 * g1 * g1 + d1 * J[top, 5]


@njit(cache=True, error_model="numpy")
def _invert(a, out, n, m):
    """Gauss-Jordan inverse with partial pivoting; returns False if singular."""
    for i in range(n):
        for j in range(n):
            m[i, j] = a[i, j]
            m[i, n + j] = 1.0 if i == j else 0.0
    for c in range(n):
        piv = c
        best = abs(m[c, c])
        for r in range(c + 1, n):
            if abs(m[r, c]) > best:
                best = abs(m[r, c])
                piv = r
        if not best > 0.0:
            return False
        if piv != c:
            for j in range(2 * n):
                tmp = m[c, j]
                m[c, j] = m[piv, j]
                m[piv, j] = tmp
        inv_p = 1.0 / m[c, c]
        for j in range(2 * n):
            m[c, j] *= inv_p
        for r in range(n):
            if r != c:
                f = m[r, c]
                if f != 0.0:
                    for j in range(2 * n):
                        m[r, j] -= f * m[c, j]
    for i in range(n):
        for j in range(n):
            out[i, j] = m[i, n + j]
    return True


@njit(cache=True, error_model="numpy")
def make_workspace(n, stack):
    vs = np.empty(stack)
    gs = np.empty((stack, n))
    hs = np.empty((stack, n, n))
    g = np.zeros((n, n))
    dg = np.zeros((n, n, n))
    d2g = np.zeros((n, n, n, n))
    ginv = np.empty((n, n))
    S = np.empty((n, n, n))
    dginv = np.empty((n, n, n))
    m = np.empty((n, 2 * n))
    jets = np.empty((stack, 6))
    return vs, gs, hs, g, dg, d2g, ginv, S, dginv, m, jets


@njit(cache=True, error_model="numpy")
def _fd_derivs(ops, args, slot_i, slot_j, n, x, order, fd_step, vs, gs, hs, g, dg, d2g):
    """Central differences of the metric values with step fd_step * max(1, |x|_inf)."""
    eval_metric(ops, args, slot_i, slot_j, n, x, 0, vs, gs, hs, g, dg, d2g)
    if order == 0:
        return
    xmax = 1.0
    for k in range(n):
        if abs(x[k]) > xmax:
            xmax = abs(x[k])
    h = fd_step * xmax
    gp = np.empty((n, n))
    gm = np.empty((n, n))
    xp = x.copy()
    dummy1 = np.empty((n, n, n))
    dummy2 = np.empty((n, n, n, n))
    for k in range(n):
        xp[k] = x[k] + h
        eval_metric(ops, args, slot_i, slot_j, n, xp, 0, vs, gs, hs, gp, dummy1, dummy2)
        xp[k] = x[k] - h
        eval_metric(ops, args, slot_i, slot_j, n, xp, 0, vs, gs, hs, gm, dummy1, dummy2)
        xp[k] = x[k]
        for i in range(n):
            for j in range(n):
                dg[k, i, j] = (gp[i, j] - gm[i, j]) / (2.0 * h)
    if order >= 2:
        g0 = g.copy()
        for k in range(n):
            for m in range(k, n):
                if k == m:
                    xp[k] = x[k] + h
                    eval_metric(ops, args, slot_i, slot_j, n, xp, 0, vs, gs, hs, gp, dummy1, dummy2)
                    xp[k] = x[k] - h
                    eval_metric(ops, args, slot_i, slot_j, n, xp, 0, vs, gs, hs, gm, dummy1, dummy2)
                    xp[k] = x[k]
                    for i in range(n):
                        for j in range(n):
                            d2g[k, k, i, j] = (gp[i, j] - 2.0 * g0[i, j] + gm[i, j]) / (h * h)
                else:
                    acc = np.zeros((n, n))
                    for sk in (-1.0, 1.0):
                        for sm in (-1.0, 1.0):
                            xp[k] = x[k] + sk * h
                            xp[m] = x[m] + sm * h
                            eval_metric(ops, args, slot_i, slot_j, n, xp, 0, vs, gs, hs, gp, dummy1, dummy2)
                            for i in range(n):
                                for j in range(n):
                                    acc[i, j] += sk * sm * gp[i, j]
                    xp[k] = x[k]
                    xp[m] = x[m]
                    for i in range(n):
                        for j in range(n):
                            d2g[k, m, i, j] = acc[i, j] / (4.0 * h * h)
                            d2g[m, k, i, j] = d2g[k, m, i, j]


@njit(cache=True, error_model="numpy")
def _metric_derivs(ops, args, slot_i, slot_j, n, x, order, fd_step, ws):
    vs, gs, hs, g, dg, d2g = ws[0], ws[1], ws[2], ws[3], ws[4], ws[5]
    if fd_step <= 0.0 and n == 2:
        eval_metric2(ops, args, slot_i, slot_j, x, order, ws[10], g, dg, d2g)
    elif fd_step <= 0.0:
        eval_metric(ops, args, slot_i, slot_j, n, x, order, vs, gs, hs, g, dg, d2g)
    else:
        _fd_derivs(ops, args, slot_i, slot_j, n, x, order, fd_step, vs, gs, hs, g, dg, d2g)


@njit(cache=True, error_model="numpy")
def christoffel(ops, args, slot_i, slot_j, n, x, order, fd_step, gam, dgam, ws):
    """Gamma[k,i,j] and (order 2) dGamma[m,k,i,j] = d_m Gamma^k_ij.  Returns False if singular."""
    if n == 2 and fd_step <= 0.0:
        return christoffel2(ops, args, slot_i, slot_j, x, order, ws[10], ws[3], ws[4], ws[5], gam, dgam)
    _metric_derivs(ops, args, slot_i, slot_j, n, x, order, fd_step, ws)
    g, dg, d2g, ginv, S, dginv, mwork = ws[3], ws[4], ws[5], ws[6], ws[7], ws[8], ws[9]
    if not _invert(g, ginv, n, mwork):
        return False
    # S[l,i,j] = d_i g_jl + d_j g_il - d_l g_ij
    for l in range(n):
        for i in range(n):
            for j in range(n):
                S[l, i, j] = dg[i, j, l] + dg[j, i, l] - dg[l, i, j]
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                acc = 0.0
                for l in range(n):
                    acc += ginv[k, l] * S[l, i, j]
                gam[k, i, j] = 0.5 * acc
                gam[k, j, i] = 0.5 * acc
    if order >= 2:
        # d_m g^{kl} = -g^{ka} d_m g_ab g^{bl}
        for m in range(n):
            for k in range(n):
                for l in range(n):
                    acc = 0.0
                    for a in range(n):
                        for b in range(n):
                            acc += ginv[k, a] * dg[m, a, b] * ginv[b, l]
                    dginv[m, k, l] = -acc
        for m in range(n):
            for k in range(n):
                for i in range(n):
                    for j in range(i, n):
                        acc = 0.0
                        for l in range(n):
                            dS = d2g[m, i, j, l] + d2g[m, j, i, l] - d2g[m, l, i, j]
                            acc += dginv[m, k, l] * S[l, i, j] + ginv[k, l] * dS
                        dgam[m, k, i, j] = 0.5 * acc
                        dgam[m, k, j, i] = 0.5 * acc
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if not math.isfinite(gam[k, i, j]):
                    return False
    return True


@njit(cache=True, error_model="numpy")
def christoffel2(ops, args, slot_i, slot_j, x, order, J, g, dg, d2g, gam, dgam):
    """``christoffel`` for two-dimensional analytic metrics, with the inverse written out."""
    eval_metric2(ops, args, slot_i, slot_j, x, order, J, g, dg, d2g)
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    if not (det != 0.0 and math.isfinite(det)):
        return False
    i00 = g[1, 1] / det
    i01 = -g[0, 1] / det
    i11 = g[0, 0] / det
    h00 = 0.5 * i00
    h01 = 0.5 * i01
    h11 = 0.5 * i11
    # S[l,i,j] = d_i g_jl + d_j g_il - d_l g_ij, symmetric in (i, j)
    s000 = dg[0, 0, 0]
    s011 = 2.0 * dg[1, 1, 0] - dg[0, 1, 1]
    s001 = dg[1, 0, 0]
    s100 = 2.0 * dg[0, 0, 1] - dg[1, 0, 0]
    s111 = dg[1, 1, 1]
    s101 = dg[0, 1, 1]
    gam[0, 0, 0] = h00 * s000 + h01 * s100
    gam[0, 0, 1] = h00 * s001 + h01 * s101
    gam[0, 1, 1] = h00 * s011 + h01 * s111
    gam[1, 0, 0] = h01 * s000 + h11 * s100
    gam[1, 0, 1] = h01 * s001 + h11 * s101
    gam[1, 1, 1] = h01 * s011 + h11 * s111
    for k in range(2):
        gam[k, 1, 0] = gam[k, 0, 1]
        for i in range(2):
            for j in range(2):
                if not math.isfinite(gam[k, i, j]):
                    return False
    if order >= 2:
        for m in range(2):
            # d_m g^{kl} = -g^{ka} d_m g_ab g^{bl}
            a00 = dg[m, 0, 0]
            a01 = dg[m, 0, 1]
            a11 = dg[m, 1, 1]
            t00 = i00 * a00 + i01 * a01
            t01 = i00 * a01 + i01 * a11
            t10 = i01 * a00 + i11 * a01
            t11 = i01 * a01 + i11 * a11
            e00 = -(t00 * i00 + t01 * i01)
            e01 = -(t00 * i01 + t01 * i11)
            e11 = -(t10 * i01 + t11 * i11)
            for i in range(2):
                for j in range(i, 2):
                    d0 = d2g[m, i, j, 0] + d2g[m, j, i, 0] - d2g[m, 0, i, j]
                    d1 = d2g[m, i, j, 1] + d2g[m, j, i, 1] - d2g[m, 1, i, j]
                    s0 = dg[i, j, 0] + dg[j, i, 0] - dg[0, i, j]
                    s1 = dg[i, j, 1] + dg[j, i, 1] - dg[1, i, j]
                    v0 = 0.5 * (e00 * s0 + e01 * s1 + i00 * d0 + i01 * d1)
                    v1 = 0.5 * (e01 * s0 + e11 * s1 + i01 * d0 + i11 * d1)
                    dgam[m, 0, i, j] = v0
                    dgam[m, 0, j, i] = v0
                    dgam[m, 1, i, j] = v1
                    dgam[m, 1, j, i] = v1
    return True


@njit(cache=True, error_model="numpy")
def _inside(x, lo, hi, n):
    for k in range(n):
        if not (x[k] > lo[k] and x[k] < hi[k]):
            return False
    return True


@njit(cache=True, error_model="numpy")
def _geo_rhs(ops, args, slot_i, slot_j, n, fd_step, x, v, dx, dv, gam, dgam, ws):
    if n == 2 and fd_step <= 0.0:
        ok = christoffel2(ops, args, slot_i, slot_j, x, 1, ws[10], ws[3], ws[4], ws[5], gam, dgam)
    else:
        ok = christoffel(ops, args, slot_i, slot_j, n, x, 1, fd_step, gam, dgam, ws)
    for k in range(n):
        dx[k] = v[k]
        acc = 0.0
        for i in range(n):
            for j in range(n):
                acc += gam[k, i, j] * v[i] * v[j]
        dv[k] = -acc
    return ok


@njit(cache=True, error_model="numpy")
def _speed2(ops, args, slot_i, slot_j, n, x, v, ws):
    _metric_derivs(ops, args, slot_i, slot_j, n, x, 0, 0.0, ws)
    g = ws[3]
    acc = 0.0
    for i in range(n):
        for j in range(n):
            acc += g[i, j] * v[i] * v[j]
    return acc


@njit(cache=True, error_model="numpy")
def integrate_geodesic(ops, args, slot_i, slot_j, n, stack, fd_step, x0, v0, length, h, renorm, lo, hi, ts, xs, vs, acc):
    """Classical RK4 with fixed step h and a shorter final step.

    Fills ts, xs, vs, acc (acceleration at nodes).  Returns (count, status, t_exit)
    where count is the number of stored samples.
    """
    nsteps = ts.shape[0] - 1
    ws = make_workspace(n, stack)
    x = x0.copy()
    v = v0.copy()
    gam = np.empty((n, n, n))
    dgam = np.empty((n, n, n, n))
    k1x = np.empty(n)
    k1v = np.empty(n)
    k2x = np.empty(n)
    k2v = np.empty(n)
    k3x = np.empty(n)
    k3v = np.empty(n)
    k4x = np.empty(n)
    k4v = np.empty(n)
    xt = np.empty(n)
    vt = np.empty(n)
    t = 0.0
    ts[0] = 0.0
    for k in range(n):
        xs[0, k] = x[k]
        vs[0, k] = v[k]
    if not _geo_rhs(ops, args, slot_i, slot_j, n, fd_step, x, v, k1x, k1v, gam, dgam, ws):
        return 1, NONFINITE, 0.0
    for k in range(n):
        acc[0, k] = k1v[k]
    for s in range(nsteps):
        hs = h if s < nsteps - 1 else length - h * (nsteps - 1)
        for k in range(n):
            xt[k] = x[k] + 0.5 * hs * k1x[k]
            vt[k] = v[k] + 0.5 * hs * k1v[k]
        ok = _geo_rhs(ops, args, slot_i, slot_j, n, fd_step, xt, vt, k2x, k2v, gam, dgam, ws)
        for k in range(n):
            xt[k] = x[k] + 0.5 * hs * k2x[k]
            vt[k] = v[k] + 0.5 * hs * k2v[k]
        ok = _geo_rhs(ops, args, slot_i, slot_j, n, fd_step, xt, vt, k3x, k3v, gam, dgam, ws) and ok
        for k in range(n):
            xt[k] = x[k] + hs * k3x[k]
            vt[k] = v[k] + hs * k3v[k]
        ok = _geo_rhs(ops, args, slot_i, slot_j, n, fd_step, xt, vt, k4x, k4v, gam, dgam, ws) and ok
        for k in range(n):
            x[k] += hs / 6.0 * (k1x[k] + 2.0 * k2x[k] + 2.0 * k3x[k] + k4x[k])
            v[k] += hs / 6.0 * (k1v[k] + 2.0 * k2v[k] + 2.0 * k3v[k] + k4v[k])
        t = h * s + hs
        finite = ok
        for k in range(n):
            if not (math.isfinite(x[k]) and math.isfinite(v[k])):
                finite = False
        if not finite:
            return s + 1, NONFINITE, t
        if not _inside(x, lo, hi, n):
            return s + 1, LEFT_CHART, t
        if renorm:
            sp2 = _speed2(ops, args, slot_i, slot_j, n, x, v, ws)
            sc = 1.0 / math.sqrt(sp2)
            for k in range(n):
                v[k] *= sc
        if not _geo_rhs(ops, args, slot_i, slot_j, n, fd_step, x, v, k1x, k1v, gam, dgam, ws):
            return s + 1, NONFINITE, t
        ts[s + 1] = t
        for k in range(n):
            xs[s + 1, k] = x[k]
            vs[s + 1, k] = v[k]
            acc[s + 1, k] = k1v[k]
    return nsteps + 1, OK, t


@njit(cache=True, error_model="numpy", inline="always")
def _var_rhs(ops, args, slot_i, slot_j, n, fd_step, x, v, X, V, dx, dv, dX, dV, gam, dgam, ws):
    if n == 2 and fd_step <= 0.0:
        ok = christoffel2(ops, args, slot_i, slot_j, x, 2, ws[10], ws[3], ws[4], ws[5], gam, dgam)
    else:
        ok = christoffel(ops, args, slot_i, slot_j, n, x, 2, fd_step, gam, dgam, ws)
    for k in range(n):
        dx[k] = v[k]
        acc = 0.0
        for i in range(n):
            for j in range(n):
                acc += gam[k, i, j] * v[i] * v[j]
        dv[k] = -acc
    # A[k,m] = sum_ij dGamma[m,k,i,j] v^i v^j ; B[k,j] = 2 sum_i Gamma[k,i,j] v^i
    for k in range(n):
        for c in range(n):
            dX[k, c] = V[k, c]
    for k in range(n):
        for c in range(n):
            acc = 0.0
            for m in range(n):
                a_km = 0.0
                for i in range(n):
                    for j in range(n):
                        a_km += dgam[m, k, i, j] * v[i] * v[j]
                acc += a_km * X[m, c]
            for j in range(n):
                b_kj = 0.0
                for i in range(n):
                    b_kj += gam[k, i, j] * v[i]
                acc += 2.0 * b_kj * V[j, c]
            dV[k, c] = -acc
    return ok


@njit(cache=True, error_model="numpy")
def integrate_variational(
    ops, args, slot_i, slot_j, n, stack, fd_step, x0, v0, X0, V0, length, h, lo, hi, ts, xs, vs, Xs, Vs
):
    """RK4 on the geodesic flow together with its linearisation (matrix Jacobi fields)."""
    nsteps = ts.shape[0] - 1
    ws = make_workspace(n, stack)
    x = x0.copy()
    v = v0.copy()
    X = X0.copy()
    V = V0.copy()
    gam = np.empty((n, n, n))
    dgam = np.empty((n, n, n, n))
    kx = np.empty((4, n))
    kv = np.empty((4, n))
    kX = np.empty((4, n, n))
    kV = np.empty((4, n, n))
    xt = np.empty(n)
    vt = np.empty(n)
    Xt = np.empty((n, n))
    Vt = np.empty((n, n))
    ts[0] = 0.0
    xs[0] = x
    vs[0] = v
    Xs[0] = X
    Vs[0] = V
    t = 0.0
    for s in range(nsteps):
        hs = h if s < nsteps - 1 else length - h * (nsteps - 1)
        ok = True
        for st in range(4):
            if st == 0:
                c = 0.0
            elif st == 3:
                c = hs
            else:
                c = 0.5 * hs
            for k in range(n):
                if st == 0:
                    xt[k] = x[k]
                    vt[k] = v[k]
                else:
                    xt[k] = x[k] + c * kx[st - 1, k]
                    vt[k] = v[k] + c * kv[st - 1, k]
                for m in range(n):
                    if st == 0:
                        Xt[k, m] = X[k, m]
                        Vt[k, m] = V[k, m]
                    else:
                        Xt[k, m] = X[k, m] + c * kX[st - 1, k, m]
                        Vt[k, m] = V[k, m] + c * kV[st - 1, k, m]
            ok = (
                _var_rhs(
                    ops, args, slot_i, slot_j, n, fd_step, xt, vt, Xt, Vt, kx[st], kv[st], kX[st], kV[st], gam, dgam, ws
                )
                and ok
            )
        finite = ok
        for k in range(n):
            x[k] += hs / 6.0 * (kx[0, k] + 2.0 * kx[1, k] + 2.0 * kx[2, k] + kx[3, k])
            v[k] += hs / 6.0 * (kv[0, k] + 2.0 * kv[1, k] + 2.0 * kv[2, k] + kv[3, k])
            if not (math.isfinite(x[k]) and math.isfinite(v[k])):
                finite = False
            for m in range(n):
                X[k, m] += hs / 6.0 * (kX[0, k, m] + 2.0 * kX[1, k, m] + 2.0 * kX[2, k, m] + kX[3, k, m])
                V[k, m] += hs / 6.0 * (kV[0, k, m] + 2.0 * kV[1, k, m] + 2.0 * kV[2, k, m] + kV[3, k, m])
                if not (math.isfinite(X[k, m]) and math.isfinite(V[k, m])):
                    finite = False
        t = h * s + hs
        if not finite:
            return s + 1, NONFINITE, t
        if not _inside(x, lo, hi, n):
            return s + 1, LEFT_CHART, t
        ts[s + 1] = t
        xs[s + 1] = x
        vs[s + 1] = v
        Xs[s + 1] = X
        Vs[s + 1] = V
    return nsteps + 1, OK, t


@njit(cache=True, error_model="numpy")
def metric_point(ops, args, slot_i, slot_j, n, stack, x, order, fd_step):
    ws = make_workspace(n, stack)
    _metric_derivs(ops, args, slot_i, slot_j, n, x, order, fd_step, ws)
    return ws[3].copy(), ws[4].copy(), ws[5].copy()


@njit(cache=True, error_model="numpy")
def christoffel_point(ops, args, slot_i, slot_j, n, stack, x, order, fd_step):
    gam = np.zeros((n, n, n))
    dgam = np.zeros((n, n, n, n))
    ws = make_workspace(n, stack)
    ok = christoffel(ops, args, slot_i, slot_j, n, x, order, fd_step, gam, dgam, ws)
    return ok, gam, dgam
