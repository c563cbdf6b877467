"""Pure numpy Euler-Maruyama loop, vectorised over ensemble members.

Same contract and the same floating-point operation order as the compiled
``_em_ext.integrate``, so both backends produce identical numbers.
"""
import numpy as np


def _lap(Lc, x):
    n = Lc.shape[0]
    out = np.empty_like(x)
    for i in range(n):
        acc = np.zeros(x.shape[0])
        for j in range(n):
            if Lc[i, j] != 0.0:
                acc = acc + Lc[i, j] * x[:, j]
        out[:, i] = acc
    return out


def _control(X, p):
    n, m = p.n, p.m
    xi = X[:, 5 * n + m:6 * n + m]
    eta = X[:, 6 * n + m:]
    return (-p.K * (X[:, :n] - eta) + p.Q * _lap(p.Lc, xi)) + p.Vstar


def integrate(X, dW, step0, nsteps, dt, stride, rec, rec0, status, fail_step, p):
    n, m = p.n, p.m
    D = X.shape[1]
    oV, oI, oY, oXi, oEta = n, 2 * n, 2 * n + m, 5 * n + m, 6 * n + m
    live = status == 0
    f = np.empty_like(X)
    for s in range(nsteps + 1):
        step = step0 + s
        if not live.any():
            break
        if step % stride == 0:
            row = step // stride - rec0
            if 0 <= row < rec.shape[1]:
                u = _control(X, p)
                rec[live, row, :D] = X[live]
                rec[live, row, D:] = u[live]
        if s == nsteps:
            break
        bad = live & ~np.all(X[:, oV:oV + n] > p.v_min, axis=1)
        if bad.any():
            status[bad] = 1
            fail_step[bad] = step
            live &= ~bad
        Ig, V, I = X[:, :n], X[:, oV:oV + n], X[:, oI:oI + m]
        Ih, Ph, Gh = X[:, oY:oY + n], X[:, oY + n:oY + 2 * n], X[:, oY + 2 * n:oXi]
        eta = X[:, oEta:]
        u = _control(X, p)
        qI = p.Q * Ig
        AI = np.zeros((X.shape[0], n))
        for k in range(m):
            AI[:, p.pos[k]] = AI[:, p.pos[k]] + I[:, k]
            AI[:, p.neg[k]] = AI[:, p.neg[k]] - I[:, k]
        f[:, :n] = (u - V) * p.Lg_inv
        with np.errstate(divide="ignore", invalid="ignore"):
            load = (p.G + Gh) * V + p.Ist + Ih + (p.P + Ph) / V
        f[:, oV:oI] = ((Ig + AI) - load) * p.Cg_inv
        f[:, oXi:oEta] = -_lap(p.Lc, qI) * p.txi_inv
        f[:, oEta:] = (Ig - eta) * p.teta_inv
        f[:, oI:oY] = (-(V[:, p.pos] - V[:, p.neg]) - p.R * I) * p.L_inv
        Y = X[:, oY:oXi]
        f[:, oY:oXi] = -p.mu * Y
        with np.errstate(over="ignore", invalid="ignore"):
            new_Y = (Y + f[:, oY:oXi] * dt) + (p.sig * Y) * dW[:, s, :]
            new_rest = X + f * dt
        new_rest[:, oY:oXi] = new_Y
        X[live] = new_rest[live]
        bad = live & ~np.all(np.isfinite(X), axis=1)
        if bad.any():
            status[bad] = 2
            fail_step[bad] = step + 1
            live &= ~bad
