"""Numba-compiled numeric kernels.

Expression programs produced by :func:`flowbox.expr.compile_bank` are
interpreted by a small stack machine *inside* the kernels, so every
kernel is compiled exactly once per process no matter which control
system it runs.  All flow kernels integrate autonomous fields of the
form ::

    ydot = sum_k coeff[k] * ghat_k(y),     ghat_k = (gtilde_k, e_k)

over unit time with fixed-step RK4 (these are the straightening flows),
optionally carrying first-order sensitivity information alongside:

* ``flow``          -- the point flow only
* ``flow_jacobian`` -- full derivative of the flow w.r.t. the initial
                       point, plus optional sensitivity columns for the
                       frozen coefficient vector (``param_sign``)
* ``flow_pull``     -- inverse of the flow differential (K' = -K J),
                       used to push covectors/drifts through the inverse
                       straightening map in a single pass
* ``flow_push``     -- pushforward of one tangent vector (v' = J v)

Field evaluations use only the first ``n + m`` environment slots, so the
``env`` buffers here are sized ``n + m`` and the g-programs must not
reference ordinary-control variables (the loader guarantees that).

Status codes: 0 = ok, 1 = domain error inside a field evaluation.
Batched kernels keep going after an element fails; callers inspect the
status vector.  No fastmath anywhere: results are bit-reproducible.
"""

import math

import numba
import numpy as np

from .expr import (OP_ADD, OP_CONST, OP_COS, OP_DIV, OP_EXP, OP_LOG, OP_MUL,
                   OP_NEG, OP_POW, OP_SIN, OP_SQRT, OP_SUB, OP_TANH, OP_VAR)

_C, _V, _ADD, _SUB, _MUL, _DIV, _POW, _NEG = (
    OP_CONST, OP_VAR, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW, OP_NEG)
_SIN, _COS, _EXP, _LOG, _SQRT, _TANH = (
    OP_SIN, OP_COS, OP_EXP, OP_LOG, OP_SQRT, OP_TANH)


@numba.njit(cache=True)
def _run(code, consts, start, end, env, stack):
    """Interpret one program; returns (value, ok)."""
    sp = -1
    for pc in range(start, end):
        op = code[pc, 0]
        arg = code[pc, 1]
        if op == _C:
            sp += 1
            stack[sp] = consts[arg]
        elif op == _V:
            sp += 1
            stack[sp] = env[arg]
        elif op == _NEG:
            stack[sp] = -stack[sp]
        elif op == _SIN:
            stack[sp] = math.sin(stack[sp])
        elif op == _COS:
            stack[sp] = math.cos(stack[sp])
        elif op == _EXP:
            stack[sp] = math.exp(stack[sp])
        elif op == _LOG:
            if stack[sp] <= 0.0:
                return 0.0, False
            stack[sp] = math.log(stack[sp])
        elif op == _SQRT:
            if stack[sp] < 0.0:
                return 0.0, False
            stack[sp] = math.sqrt(stack[sp])
        elif op == _TANH:
            stack[sp] = math.tanh(stack[sp])
        else:
            b = stack[sp]
            sp -= 1
            a = stack[sp]
            if op == _ADD:
                stack[sp] = a + b
            elif op == _SUB:
                stack[sp] = a - b
            elif op == _MUL:
                stack[sp] = a * b
            elif op == _DIV:
                if b == 0.0:
                    return 0.0, False
                stack[sp] = a / b
            else:
                stack[sp] = math.pow(a, b)
        if not math.isfinite(stack[sp]):
            return 0.0, False
    return stack[0], True


@numba.njit(cache=True)
def eval_programs(code, starts, consts, env2, out, status):
    """Evaluate every program of a bank at each environment row."""
    B = env2.shape[0]
    P = starts.shape[0] - 1
    stack = np.empty(64, np.float64)
    for b in range(B):
        status[b] = 0
        env = env2[b]
        for p in range(P):
            val, ok = _run(code, consts, starts[p], starts[p + 1], env, stack)
            if not ok:
                status[b] = 1
                val = 0.0
            out[b, p] = val


@numba.njit(cache=True)
def _gvalues(gcode, gstarts, gconsts, n, m, env, stack, gbuf):
    """gbuf[k, j] = gtilde_k^j(y) with y already copied into env."""
    for k in range(m):
        base = k * n
        for j in range(n):
            val, ok = _run(gcode, gconsts, gstarts[base + j],
                           gstarts[base + j + 1], env, stack)
            if not ok:
                return False
            gbuf[k, j] = val
    return True


@numba.njit(cache=True)
def _jacobian(dcode, dstarts, dconsts, n, m, coeff, env, stack, jbuf):
    """jbuf[i, c] = sum_k coeff[k] * d gtilde_k^i / d y_c (top n rows)."""
    N = n + m
    for i in range(n):
        for c in range(N):
            jbuf[i, c] = 0.0
    for k in range(m):
        ck = coeff[k]
        if ck == 0.0:
            continue
        for i in range(n):
            base = (k * n + i) * N
            for c in range(N):
                val, ok = _run(dcode, dconsts, dstarts[base + c],
                               dstarts[base + c + 1], env, stack)
                if not ok:
                    return False
                jbuf[i, c] += ck * val
    return True


@numba.njit(cache=True)
def flow(gcode, gstarts, gconsts, n, m, y0, coeff, steps, y_out, status):
    """Unit-time RK4 flow of sum_k coeff[b,k] * ghat_k from y0[b]."""
    B = y0.shape[0]
    N = n + m
    dt = 1.0 / steps
    stack = np.empty(64, np.float64)
    env = np.empty(N, np.float64)
    y = np.empty(N, np.float64)
    yt = np.empty(N, np.float64)
    ks = np.empty((4, N), np.float64)
    gbuf = np.empty((m, n), np.float64)
    for b in range(B):
        for i in range(N):
            y[i] = y0[b, i]
        c = coeff[b]
        ok = True
        for _ in range(steps):
            for stage in range(4):
                if stage == 0:
                    for i in range(N):
                        yt[i] = y[i]
                elif stage == 1 or stage == 2:
                    for i in range(N):
                        yt[i] = y[i] + 0.5 * dt * ks[stage - 1, i]
                else:
                    for i in range(N):
                        yt[i] = y[i] + dt * ks[2, i]
                for i in range(N):
                    env[i] = yt[i]
                ok = _gvalues(gcode, gstarts, gconsts, n, m, env, stack, gbuf)
                if not ok:
                    break
                for j in range(n):
                    acc = 0.0
                    for k in range(m):
                        acc += c[k] * gbuf[k, j]
                    ks[stage, j] = acc
                for k in range(m):
                    ks[stage, n + k] = c[k]
            if not ok:
                break
            for i in range(N):
                y[i] = y[i] + (dt / 6.0) * (ks[0, i] + 2.0 * ks[1, i]
                                            + 2.0 * ks[2, i] + ks[3, i])
        status[b] = 0 if ok else 1
        for i in range(N):
            y_out[b, i] = y[i]


@numba.njit(cache=True)
def flow_jacobian(gcode, gstarts, gconsts, dcode, dstarts, dconsts,
                  n, m, y0, coeff, param_sign, steps, y_out, m_out, status):
    """Flow plus full sensitivity matrix M(1) = d y(1) / d y(0).

    With ``param_sign`` nonzero, the columns n..n+m-1 of M accumulate in
    addition the sensitivity to the frozen coefficient vector, scaled by
    ``param_sign`` (dM[:, n+k] picks up param_sign * ghat_k(y)).  That
    models maps where one variable sets both the initial z-slot and the
    coefficient: the straightening map (coeff = -z) uses param_sign = -1,
    and then M(1) is the total Jacobian of (x, z) -> y(1).  Note the
    bottom m rows of that total Jacobian come out identically zero
    because the z-block of y(1) is constant; callers that want the
    Jacobian of (x, z) -> (xi, z) replace them with (0 | I).
    """
    B = y0.shape[0]
    N = n + m
    dt = 1.0 / steps
    stack = np.empty(64, np.float64)
    env = np.empty(N, np.float64)
    y = np.empty(N, np.float64)
    yt = np.empty(N, np.float64)
    M = np.empty((N, N), np.float64)
    Mt = np.empty((N, N), np.float64)
    ky = np.empty((4, N), np.float64)
    kM = np.empty((4, N, N), np.float64)
    gbuf = np.empty((m, n), np.float64)
    jbuf = np.empty((n, N), np.float64)
    for b in range(B):
        for i in range(N):
            y[i] = y0[b, i]
            for jj in range(N):
                M[i, jj] = 1.0 if i == jj else 0.0
        c = coeff[b]
        ok = True
        for _ in range(steps):
            for stage in range(4):
                if stage == 0:
                    for i in range(N):
                        yt[i] = y[i]
                        for jj in range(N):
                            Mt[i, jj] = M[i, jj]
                else:
                    w = 0.5 * dt if stage < 3 else dt
                    src = stage - 1
                    for i in range(N):
                        yt[i] = y[i] + w * ky[src, i]
                        for jj in range(N):
                            Mt[i, jj] = M[i, jj] + w * kM[src, i, jj]
                for i in range(N):
                    env[i] = yt[i]
                ok = _gvalues(gcode, gstarts, gconsts, n, m, env, stack, gbuf)
                if ok:
                    ok = _jacobian(dcode, dstarts, dconsts, n, m, c, env,
                                   stack, jbuf)
                if not ok:
                    break
                for j in range(n):
                    acc = 0.0
                    for k in range(m):
                        acc += c[k] * gbuf[k, j]
                    ky[stage, j] = acc
                for k in range(m):
                    ky[stage, n + k] = c[k]
                for i in range(n):
                    for jj in range(N):
                        acc = 0.0
                        for sidx in range(N):
                            acc += jbuf[i, sidx] * Mt[sidx, jj]
                        kM[stage, i, jj] = acc
                for i in range(n, N):
                    for jj in range(N):
                        kM[stage, i, jj] = 0.0
                if param_sign != 0.0:
                    for k in range(m):
                        for i in range(n):
                            kM[stage, i, n + k] += param_sign * gbuf[k, i]
                        kM[stage, n + k, n + k] += param_sign
            if not ok:
                break
            for i in range(N):
                y[i] = y[i] + (dt / 6.0) * (ky[0, i] + 2.0 * ky[1, i]
                                            + 2.0 * ky[2, i] + ky[3, i])
                for jj in range(N):
                    M[i, jj] = M[i, jj] + (dt / 6.0) * (
                        kM[0, i, jj] + 2.0 * kM[1, i, jj]
                        + 2.0 * kM[2, i, jj] + kM[3, i, jj])
        status[b] = 0 if ok else 1
        for i in range(N):
            y_out[b, i] = y[i]
            for jj in range(N):
                m_out[b, i, jj] = M[i, jj]


@numba.njit(cache=True)
def flow_pull(gcode, gstarts, gconsts, dcode, dstarts, dconsts,
              n, m, y0, coeff, steps, y_out, k_out, status):
    """Flow carrying K(1) = N(1)^(-1), the inverse flow differential.

    K' = -K J(y), K(0) = I.  Because the time reversal of this flow is
    the flow with the same frozen coefficients and opposite sign, K(1)
    is exactly the differential of the *reverse* flow map at y(1); its
    bottom m rows stay (0 | I) identically.
    """
    B = y0.shape[0]
    N = n + m
    dt = 1.0 / steps
    stack = np.empty(64, np.float64)
    env = np.empty(N, np.float64)
    y = np.empty(N, np.float64)
    yt = np.empty(N, np.float64)
    K = np.empty((N, N), np.float64)
    Kt = np.empty((N, N), np.float64)
    ky = np.empty((4, N), np.float64)
    kK = np.empty((4, N, N), np.float64)
    gbuf = np.empty((m, n), np.float64)
    jbuf = np.empty((n, N), np.float64)
    for b in range(B):
        for i in range(N):
            y[i] = y0[b, i]
            for jj in range(N):
                K[i, jj] = 1.0 if i == jj else 0.0
        c = coeff[b]
        ok = True
        for _ in range(steps):
            for stage in range(4):
                if stage == 0:
                    for i in range(N):
                        yt[i] = y[i]
                        for jj in range(N):
                            Kt[i, jj] = K[i, jj]
                else:
                    w = 0.5 * dt if stage < 3 else dt
                    src = stage - 1
                    for i in range(N):
                        yt[i] = y[i] + w * ky[src, i]
                        for jj in range(N):
                            Kt[i, jj] = K[i, jj] + w * kK[src, i, jj]
                for i in range(N):
                    env[i] = yt[i]
                ok = _gvalues(gcode, gstarts, gconsts, n, m, env, stack, gbuf)
                if ok:
                    ok = _jacobian(dcode, dstarts, dconsts, n, m, c, env,
                                   stack, jbuf)
                if not ok:
                    break
                for j in range(n):
                    acc = 0.0
                    for k in range(m):
                        acc += c[k] * gbuf[k, j]
                    ky[stage, j] = acc
                for k in range(m):
                    ky[stage, n + k] = c[k]
                # (K J)[r, cc] only sees the top n rows of J
                for r in range(N):
                    for cc in range(N):
                        acc = 0.0
                        for sidx in range(n):
                            acc += Kt[r, sidx] * jbuf[sidx, cc]
                        kK[stage, r, cc] = -acc
            if not ok:
                break
            for i in range(N):
                y[i] = y[i] + (dt / 6.0) * (ky[0, i] + 2.0 * ky[1, i]
                                            + 2.0 * ky[2, i] + ky[3, i])
                for jj in range(N):
                    K[i, jj] = K[i, jj] + (dt / 6.0) * (
                        kK[0, i, jj] + 2.0 * kK[1, i, jj]
                        + 2.0 * kK[2, i, jj] + kK[3, i, jj])
        status[b] = 0 if ok else 1
        for i in range(N):
            y_out[b, i] = y[i]
            for jj in range(N):
                k_out[b, i, jj] = K[i, jj]


@numba.njit(cache=True)
def flow_push(gcode, gstarts, gconsts, dcode, dstarts, dconsts,
              n, m, y0, coeff, v0, steps, y_out, v_out, status):
    """Flow pushing one tangent vector along: v' = J(y) v."""
    B = y0.shape[0]
    N = n + m
    dt = 1.0 / steps
    stack = np.empty(64, np.float64)
    env = np.empty(N, np.float64)
    y = np.empty(N, np.float64)
    yt = np.empty(N, np.float64)
    v = np.empty(N, np.float64)
    vt = np.empty(N, np.float64)
    ky = np.empty((4, N), np.float64)
    kv = np.empty((4, N), np.float64)
    gbuf = np.empty((m, n), np.float64)
    jbuf = np.empty((n, N), np.float64)
    for b in range(B):
        for i in range(N):
            y[i] = y0[b, i]
            v[i] = v0[b, i]
        c = coeff[b]
        ok = True
        for _ in range(steps):
            for stage in range(4):
                if stage == 0:
                    for i in range(N):
                        yt[i] = y[i]
                        vt[i] = v[i]
                else:
                    w = 0.5 * dt if stage < 3 else dt
                    src = stage - 1
                    for i in range(N):
                        yt[i] = y[i] + w * ky[src, i]
                        vt[i] = v[i] + w * kv[src, i]
                for i in range(N):
                    env[i] = yt[i]
                ok = _gvalues(gcode, gstarts, gconsts, n, m, env, stack, gbuf)
                if ok:
                    ok = _jacobian(dcode, dstarts, dconsts, n, m, c, env,
                                   stack, jbuf)
                if not ok:
                    break
                for j in range(n):
                    acc = 0.0
                    for k in range(m):
                        acc += c[k] * gbuf[k, j]
                    ky[stage, j] = acc
                for k in range(m):
                    ky[stage, n + k] = c[k]
                for i in range(n):
                    acc = 0.0
                    for sidx in range(N):
                        acc += jbuf[i, sidx] * vt[sidx]
                    kv[stage, i] = acc
                for i in range(n, N):
                    kv[stage, i] = 0.0
            if not ok:
                break
            for i in range(N):
                y[i] = y[i] + (dt / 6.0) * (ky[0, i] + 2.0 * ky[1, i]
                                            + 2.0 * ky[2, i] + ky[3, i])
                v[i] = v[i] + (dt / 6.0) * (kv[0, i] + 2.0 * kv[1, i]
                                            + 2.0 * kv[2, i] + kv[3, i])
        status[b] = 0 if ok else 1
        for i in range(N):
            y_out[b, i] = y[i]
            v_out[b, i] = v[i]


def warmup():
    """Force-compile every kernel on a trivial one-field system."""
    code = np.array([[OP_CONST, 0]], dtype=np.int32)
    starts = np.array([0, 1], dtype=np.int32)
    consts = np.array([1.0])
    dcode = np.array([[OP_CONST, 0], [OP_CONST, 0]], dtype=np.int32)
    dstarts = np.array([0, 1, 2], dtype=np.int32)
    dconsts = np.array([0.0])
    y0 = np.zeros((1, 2))
    coeff = np.ones((1, 1))
    status = np.zeros(1, dtype=np.int64)
    out = np.empty((1, 1))
    eval_programs(code, starts, consts, np.zeros((1, 2)), out, status)
    y1 = np.empty((1, 2))
    flow(code, starts, consts, 1, 1, y0, coeff, 10, y1, status)
    M = np.empty((1, 2, 2))
    flow_jacobian(code, starts, consts, dcode, dstarts, dconsts,
                  1, 1, y0, coeff, -1.0, 10, y1, M, status)
    flow_pull(code, starts, consts, dcode, dstarts, dconsts,
              1, 1, y0, coeff, 10, y1, M, status)
    v = np.empty((1, 2))
    flow_push(code, starts, consts, dcode, dstarts, dconsts,
              1, 1, y0, coeff, np.ones((1, 2)), 10, y1, v, status)
