"""Pure-Python tape engine with the same surface as the compiled core.

This backend exists so the package works without a C toolchain and so the
compiled kernels have an independent reference in the benchmark. It is one to
three orders of magnitude slower; correctness tests run against both.

All arithmetic goes through numpy (including scalars) so that tape values and
the recordless "plain" helpers in this module stay bit-identical to each
other, mirroring the guarantee the compiled core makes.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

OP_NAMES = (
    "const", "var", "add", "sub", "mul", "div", "neg", "sin", "cos", "tan",
    "atan2", "exp", "log", "sqrt", "clamp", "select", "sum", "dot",
    "tanh", "sigmoid", "softplus", "affine", "ew", "feat", "wrap",
)
_TAG = {name: i for i, name in enumerate(OP_NAMES)}

_E_GEN, _E_LINC, _E_LINP, _E_EW = 0, 1, 2, 3

EW_ADD = 0
EW_SUB = 1
EW_MUL = 2
EW_TANH = 3
EW_SIGM = 4
EW_SOFTPLUS = 5
EW_RSUBC = 6
EW_ADDC = 7
EW_MULC = 8
EW_CLAMP = 9
EW_SIN = 10
EW_COS = 11


def _sigm_np(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus_np(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x > 0.0
    out[pos] = x[pos] + np.log1p(np.exp(-x[pos]))
    out[~pos] = np.log1p(np.exp(x[~pos]))
    return out


def _obs_np(ego, dest, road, neigh):
    ex, ey, yaw, spd = ego[0], ego[1], ego[2], ego[3]
    c = np.cos(yaw)
    s = np.sin(yaw)
    nr = road.shape[0]
    nn = neigh.shape[0]
    out = np.zeros(3 + 2 * nr + 5 * nn, dtype=np.float64)
    out[0] = spd
    dx = dest[0] - ex
    dy = dest[1] - ey
    out[1] = c * dx + s * dy
    out[2] = -s * dx + c * dy
    o = 3
    for k in range(nr):
        dx = road[k, 0] - ex
        dy = road[k, 1] - ey
        out[o] = c * dx + s * dy
        out[o + 1] = -s * dx + c * dy
        o += 2
    for j in range(nn):
        if neigh[j, 4] != 0.0:
            dx = neigh[j, 0] - ex
            dy = neigh[j, 1] - ey
            out[o] = c * dx + s * dy
            out[o + 1] = -s * dx + c * dy
            out[o + 2] = neigh[j, 2]
            d = neigh[j, 3] - yaw
            out[o + 3] = np.arctan2(np.sin(d), np.cos(d))
            out[o + 4] = 1.0
        o += 5
    return out


def _bicycle_np(s, acc, steer, dt, wheelbase, vmax):
    x, y, yaw, v = s[0], s[1], s[2], s[3]
    c = np.cos(yaw)
    si = np.sin(yaw)
    out = np.empty(4, dtype=np.float64)
    out[0] = x + (v * c) * dt
    out[1] = y + (v * si) * dt
    yw = yaw + ((v * np.tan(steer)) / wheelbase) * dt
    out[2] = np.arctan2(np.sin(yw), np.cos(yw))
    out[3] = min(max(v + acc * dt, 0.0), vmax)
    return out


class Record:
    """Append-only reverse-mode tape over scalar float64 nodes."""

    def __init__(self):
        self._cap = 1024
        self._val = np.zeros(self._cap, dtype=np.float64)
        self._adj = np.zeros(self._cap, dtype=np.float64)
        self._tag = np.zeros(self._cap, dtype=np.uint8)
        self._n = 0
        self._entries = []

    # -- growth / low level --------------------------------------------------

    def _grow(self, need):
        cap = self._cap
        while cap < need:
            cap *= 2
        for name in ("_val", "_adj", "_tag"):
            old = getattr(self, name)
            new = np.zeros(cap, dtype=old.dtype)
            new[: self._n] = old[: self._n]
            setattr(self, name, new)
        self._cap = cap

    def _node(self, tag, v):
        if self._n >= self._cap:
            self._grow(self._n + 1)
        v = np.float64(v)
        if not np.isfinite(v):
            raise OverflowError(
                "non-finite value at node %d (%s)" % (self._n, OP_NAMES[tag]))
        self._val[self._n] = v
        self._tag[self._n] = tag
        self._n += 1
        return self._n - 1

    def _block(self, tag, vals):
        vals = np.asarray(vals, dtype=np.float64)
        n = vals.shape[0]
        if self._n + n > self._cap:
            self._grow(self._n + n)
        bad = ~np.isfinite(vals)
        if bad.any():
            raise OverflowError(
                "non-finite value at node %d (%s)"
                % (self._n + int(np.argmax(bad)), OP_NAMES[tag]))
        base = self._n
        self._val[base: base + n] = vals
        self._tag[base: base + n] = tag
        self._n += n
        return base

    def _check(self, i):
        i = int(i)
        if i < 0 or i >= self._n:
            raise IndexError(
                "node ref %d out of range (record has %d nodes)"
                % (i, self._n))
        return i

    def _gen(self, tag, v, srcs, partials):
        out = self._node(tag, v)
        self._entries.append((_E_GEN, out,
                              np.asarray(srcs, dtype=np.int64),
                              np.asarray(partials, dtype=np.float64)))
        return out

    # -- introspection ---------------------------------------------------------

    @property
    def n(self):
        return self._n

    @property
    def entry_count(self):
        return len(self._entries)

    @property
    def edge_count(self):
        total = 0
        for e in self._entries:
            if e[0] == _E_GEN:
                total += len(e[2])
            elif e[0] in (_E_LINC, _E_LINP):
                total += len(e[4])
        return total

    def node_tag(self, i):
        return OP_NAMES[self._tag[self._check(i)]]

    def reset(self):
        self._n = 0
        self._entries.clear()

    def value(self, i):
        return float(self._val[self._check(i)])

    def values_block(self, i0, n):
        self._check(i0)
        if n < 0 or i0 + n > self._n:
            raise IndexError("block out of range")
        return self._val[i0: i0 + n].copy()

    def adjoint(self, i):
        return float(self._adj[self._check(i)])

    def adjoints_block(self, i0, n):
        self._check(i0)
        if n < 0 or i0 + n > self._n:
            raise IndexError("block out of range")
        return self._adj[i0: i0 + n].copy()

    # -- leaves ----------------------------------------------------------------

    def const(self, v):
        return self._node(_TAG["const"], v)

    def var(self, v):
        return self._node(_TAG["var"], v)

    def const_block(self, a):
        return self._block(_TAG["const"], a)

    def var_block(self, a):
        return self._block(_TAG["var"], a)

    # -- scalar primitives -------------------------------------------------------

    def add(self, a, b):
        a, b = self._check(a), self._check(b)
        return self._gen(_TAG["add"], self._val[a] + self._val[b],
                         (a, b), (1.0, 1.0))

    def sub(self, a, b):
        a, b = self._check(a), self._check(b)
        return self._gen(_TAG["sub"], self._val[a] - self._val[b],
                         (a, b), (1.0, -1.0))

    def mul(self, a, b):
        a, b = self._check(a), self._check(b)
        return self._gen(_TAG["mul"], self._val[a] * self._val[b],
                         (a, b), (self._val[b], self._val[a]))

    def div(self, a, b):
        a, b = self._check(a), self._check(b)
        vb = self._val[b]
        if vb == 0.0:
            raise ZeroDivisionError("div by zero at node %d" % b)
        va = self._val[a]
        return self._gen(_TAG["div"], va / vb, (a, b),
                         (1.0 / vb, -va / (vb * vb)))

    def neg(self, a):
        a = self._check(a)
        return self._gen(_TAG["neg"], -self._val[a], (a,), (-1.0,))

    def sin(self, a):
        a = self._check(a)
        return self._gen(_TAG["sin"], np.sin(self._val[a]), (a,),
                         (np.cos(self._val[a]),))

    def cos(self, a):
        a = self._check(a)
        return self._gen(_TAG["cos"], np.cos(self._val[a]), (a,),
                         (-np.sin(self._val[a]),))

    def tan(self, a):
        a = self._check(a)
        t = np.tan(self._val[a])
        return self._gen(_TAG["tan"], t, (a,), (1.0 + t * t,))

    def atan2(self, y, x):
        y, x = self._check(y), self._check(x)
        vy, vx = self._val[y], self._val[x]
        d = vx * vx + vy * vy
        if d == 0.0:
            raise ZeroDivisionError("atan2 at origin (nodes %d, %d)" % (y, x))
        return self._gen(_TAG["atan2"], np.arctan2(vy, vx), (y, x),
                         (vx / d, -vy / d))

    def exp(self, a):
        a = self._check(a)
        e = np.exp(self._val[a])
        return self._gen(_TAG["exp"], e, (a,), (e,))

    def log(self, a):
        a = self._check(a)
        v = self._val[a]
        if v <= 0.0:
            raise ValueError("log domain error at node %d (value %r)"
                             % (a, float(v)))
        return self._gen(_TAG["log"], np.log(v), (a,), (1.0 / v,))

    def sqrt(self, a):
        a = self._check(a)
        v = self._val[a]
        if v < 0.0:
            raise ValueError("sqrt domain error at node %d (value %r)"
                             % (a, float(v)))
        s = np.sqrt(v)
        return self._gen(_TAG["sqrt"], s, (a,),
                         (0.5 / s if s > 0.0 else np.inf,))

    def clamp(self, a, lo, hi):
        a = self._check(a)
        if not lo <= hi:
            raise ValueError("clamp bounds inverted (lo=%r hi=%r)" % (lo, hi))
        v = self._val[a]
        # boundary counts as inside
        return self._gen(_TAG["clamp"], min(max(v, lo), hi), (a,),
                         (1.0 if lo <= v <= hi else 0.0,))

    def select(self, c, a, b):
        c, a, b = self._check(c), self._check(a), self._check(b)
        take_a = self._val[c] != 0.0
        v = self._val[a] if take_a else self._val[b]
        return self._gen(_TAG["select"], v, (c, a, b),
                         (0.0, 1.0 if take_a else 0.0,
                          0.0 if take_a else 1.0))

    def sum(self, ids):
        if len(ids) < 1:
            raise ValueError("sum needs at least one input")
        ids = [self._check(i) for i in ids]
        vals = self._val[np.asarray(ids, dtype=np.int64)]
        acc = np.float64(0.0)
        for v in vals:  # fixed left-to-right order, matches compiled core
            acc = acc + v
        return self._gen(_TAG["sum"], acc, ids, np.ones(len(ids)))

    def dot(self, xs, ys):
        if len(xs) < 1 or len(xs) != len(ys):
            raise ValueError("dot needs equal-length nonempty inputs")
        xs = [self._check(i) for i in xs]
        ys = [self._check(i) for i in ys]
        acc = np.float64(0.0)
        for a, b in zip(xs, ys):
            acc = acc + self._val[a] * self._val[b]
        srcs = []
        parts = []
        for a, b in zip(xs, ys):
            srcs += [a, b]
            parts += [self._val[b], self._val[a]]
        return self._gen(_TAG["dot"], acc, srcs, parts)

    def tanh(self, a):
        a = self._check(a)
        t = np.tanh(self._val[a])
        return self._gen(_TAG["tanh"], t, (a,), (1.0 - t * t,))

    def sigmoid(self, a):
        a = self._check(a)
        s = _sigm_np(self._val[a])
        return self._gen(_TAG["sigmoid"], s, (a,), (s * (1.0 - s),))

    def softplus(self, a):
        a = self._check(a)
        v = self._val[a]
        return self._gen(_TAG["softplus"], _softplus_np(v), (a,),
                         (_sigm_np(v),))

    def wrap(self, a):
        """Angle wrap to (-pi, pi]; a shift, so the gradient is exactly 1."""
        a = self._check(a)
        v = self._val[a]
        return self._gen(_TAG["wrap"], np.arctan2(np.sin(v), np.cos(v)), (a,),
                         (1.0,))

    # -- block kernels -------------------------------------------------------------

    def ew(self, op, a0, n, b0=-1, aux=0.0, aux2=0.0):
        a0 = int(a0)
        if a0 < 0 or a0 + n > self._n:
            raise IndexError("ew input block out of range")
        x = self._val[a0: a0 + n]
        if op in (EW_ADD, EW_SUB, EW_MUL):
            b0 = int(b0)
            if b0 < 0 or b0 + n > self._n:
                raise IndexError("ew second block out of range")
            y = self._val[b0: b0 + n]
            v = {EW_ADD: x + y, EW_SUB: x - y, EW_MUL: x * y}[op]
        elif op == EW_TANH:
            v = np.tanh(x)
        elif op == EW_SIGM:
            v = _sigm_np(x)
        elif op == EW_SOFTPLUS:
            v = _softplus_np(x)
        elif op == EW_RSUBC:
            v = aux - x
        elif op == EW_ADDC:
            v = x + aux
        elif op == EW_MULC:
            v = x * aux
        elif op == EW_CLAMP:
            v = np.clip(x, aux, aux2)
        elif op == EW_SIN:
            v = np.sin(x)
        elif op == EW_COS:
            v = np.cos(x)
        else:
            raise ValueError("unknown ew op %d" % op)
        out0 = self._block(_TAG["ew"], v)
        self._entries.append((_E_EW, out0, int(n), int(op), a0, int(b0),
                              float(aux), float(aux2)))
        return out0

    def linear_const(self, x_ids, W, b):
        """out = W @ gather(x_ids) + b with W, b treated as constants.

        Borrows W and b; the caller must not mutate them while this record
        is alive.
        """
        x_ids = np.asarray(x_ids, dtype=np.int64)
        nout, nin = W.shape
        if x_ids.shape[0] != nin:
            raise ValueError("x_ids length %d != W.shape[1] %d"
                             % (x_ids.shape[0], nin))
        if x_ids.min(initial=0) < 0 or x_ids.max(initial=-1) >= self._n:
            raise IndexError("gather ids out of range")
        x = self._val[x_ids]
        v = W @ x
        if b is not None:
            v = v + b
        out0 = self._block(_TAG["affine"], v)
        self._entries.append((_E_LINC, out0, nout, nin, x_ids, W))
        return out0

    def linear_param(self, x_ids, wbase, bbase, nout, nin):
        """out = W @ gather(x_ids) + b with W rows on tape at wbase."""
        x_ids = np.asarray(x_ids, dtype=np.int64)
        if x_ids.shape[0] != nin:
            raise ValueError("x_ids length mismatch")
        wbase, bbase = int(wbase), int(bbase)
        if wbase < 0 or wbase + nout * nin > self._n:
            raise IndexError("weight block out of range")
        if bbase >= 0 and bbase + nout > self._n:
            raise IndexError("bias block out of range")
        if x_ids.min(initial=0) < 0 or x_ids.max(initial=-1) >= self._n:
            raise IndexError("gather ids out of range")
        x = self._val[x_ids]
        Wv = self._val[wbase: wbase + nout * nin].reshape(nout, nin)
        v = Wv @ x
        if bbase >= 0:
            v = v + self._val[bbase: bbase + nout]
        out0 = self._block(_TAG["affine"], v)
        self._entries.append((_E_LINP, out0, nout, nin, x_ids, wbase, bbase))
        return out0

    def gru(self, gx0, gh0, h0, nh):
        """Gated-unit combine over stacked [r; z; n] pre-activation blocks."""
        pre_r = self.ew(EW_ADD, gx0, nh, gh0)
        r = self.ew(EW_SIGM, pre_r, nh)
        pre_z = self.ew(EW_ADD, gx0 + nh, nh, gh0 + nh)
        z = self.ew(EW_SIGM, pre_z, nh)
        m = self.ew(EW_MUL, r, nh, gh0 + 2 * nh)
        pre_n = self.ew(EW_ADD, gx0 + 2 * nh, nh, m)
        n_ = self.ew(EW_TANH, pre_n, nh)
        omz = self.ew(EW_RSUBC, z, nh, aux=1.0)
        t1 = self.ew(EW_MUL, omz, nh, n_)
        t2 = self.ew(EW_MUL, z, nh, h0)
        return self.ew(EW_ADD, t1, nh, t2)

    def observation(self, exi, eyi, eyawi, espdi, dest, road, neigh):
        """Ego-frame feature block; returns (obs0, width)."""
        exi, eyi = self._check(exi), self._check(eyi)
        eyawi, espdi = self._check(eyawi), self._check(espdi)
        ego = self._val[[exi, eyi, eyawi, espdi]]
        vals = _obs_np(ego, dest, road, neigh)
        out0 = self._block(_TAG["feat"], vals)
        c = np.cos(ego[2])
        s = np.sin(ego[2])
        ent = self._entries
        ent.append((_E_GEN, out0, np.array([espdi]), np.array([1.0])))
        nr = road.shape[0]
        o = out0 + 1
        for k in range(nr + 1):
            lx, ly = self._val[o], self._val[o + 1]
            ent.append((_E_GEN, o, np.array([exi, eyi, eyawi]),
                        np.array([-c, -s, ly])))
            ent.append((_E_GEN, o + 1, np.array([exi, eyi, eyawi]),
                        np.array([s, -c, -lx])))
            o += 2
        for j in range(neigh.shape[0]):
            if neigh[j, 4] != 0.0:
                lx, ly = self._val[o], self._val[o + 1]
                ent.append((_E_GEN, o, np.array([exi, eyi, eyawi]),
                            np.array([-c, -s, ly])))
                ent.append((_E_GEN, o + 1, np.array([exi, eyi, eyawi]),
                            np.array([s, -c, -lx])))
                ent.append((_E_GEN, o + 3, np.array([eyawi]),
                            np.array([-1.0])))
            o += 5
        return out0, len(vals)

    def bicycle(self, xi, yi, yawi, vi, ai, di, dt, wheelbase, vmax):
        """One kinematic bicycle step from primitive nodes; returns 4 ids."""
        dtc = self.const(dt)
        c = self.cos(yawi)
        s = self.sin(yawi)
        xn = self.add(xi, self.mul(self.mul(vi, c), dtc))
        yn = self.add(yi, self.mul(self.mul(vi, s), dtc))
        wbc = self.const(wheelbase)
        t6 = self.div(self.mul(vi, self.tan(di)), wbc)
        yawn = self.wrap(self.add(yawi, self.mul(t6, dtc)))
        vn = self.clamp(self.add(vi, self.mul(ai, dtc)), 0.0, vmax)
        return xn, yn, yawn, vn

    # -- backward ------------------------------------------------------------------

    def backward(self, root):
        """Reverse sweep seeding d(root)/d(root) = 1. Re-runnable."""
        root = self._check(root)
        adj = self._adj
        val = self._val
        adj[: self._n] = 0.0
        adj[root] = 1.0
        for e in reversed(self._entries):
            kind = e[0]
            if kind == _E_GEN:
                g = adj[e[1]]
                if g != 0.0:
                    np.add.at(adj, e[2], e[3] * g)
            elif kind == _E_LINC:
                _, out0, nout, nin, x_ids, W = e
                gy = adj[out0: out0 + nout]
                np.add.at(adj, x_ids, W.T @ gy)
            elif kind == _E_LINP:
                _, out0, nout, nin, x_ids, wbase, bbase = e
                gy = adj[out0: out0 + nout]
                Wv = val[wbase: wbase + nout * nin].reshape(nout, nin)
                np.add.at(adj, x_ids, Wv.T @ gy)
                adj[wbase: wbase + nout * nin] += np.outer(gy, val[x_ids]
                                                           ).ravel()
                if bbase >= 0:
                    adj[bbase: bbase + nout] += gy
            else:  # _E_EW
                _, out0, n, op, a0, b0, aux, aux2 = e
                g = adj[out0: out0 + n]
                if op == EW_ADD:
                    adj[a0: a0 + n] += g
                    adj[b0: b0 + n] += g
                elif op == EW_SUB:
                    adj[a0: a0 + n] += g
                    adj[b0: b0 + n] -= g
                elif op == EW_MUL:
                    adj[a0: a0 + n] += val[b0: b0 + n] * g
                    adj[b0: b0 + n] += val[a0: a0 + n] * g
                elif op == EW_TANH:
                    y = val[out0: out0 + n]
                    adj[a0: a0 + n] += (1.0 - y * y) * g
                elif op == EW_SIGM:
                    y = val[out0: out0 + n]
                    adj[a0: a0 + n] += y * (1.0 - y) * g
                elif op == EW_SOFTPLUS:
                    adj[a0: a0 + n] += _sigm_np(val[a0: a0 + n]) * g
                elif op == EW_RSUBC:
                    adj[a0: a0 + n] -= g
                elif op == EW_ADDC:
                    adj[a0: a0 + n] += g
                elif op == EW_MULC:
                    adj[a0: a0 + n] += aux * g
                elif op == EW_CLAMP:
                    x = val[a0: a0 + n]
                    inside = (x >= aux) & (x <= aux2)
                    adj[a0: a0 + n] += np.where(inside, g, 0.0)
                elif op == EW_SIN:
                    adj[a0: a0 + n] += np.cos(val[a0: a0 + n]) * g
                elif op == EW_COS:
                    adj[a0: a0 + n] -= np.sin(val[a0: a0 + n]) * g
        bad = ~np.isfinite(adj[: self._n])
        if bad.any():
            raise ValueError("non-finite adjoint at node %d"
                             % int(np.argmax(bad)))


# -- recordless forward helpers ------------------------------------------------

def obs_build_plain(ego, dest, road, neigh):
    return _obs_np(np.asarray(ego, dtype=np.float64), dest, road, neigh)


def bicycle_plain(s, acc, steer, dt, wheelbase, vmax):
    return _bicycle_np(np.asarray(s, dtype=np.float64), acc, steer, dt,
                       wheelbase, vmax)


def policy_forward_plain(W1, b1, W2, b2, Wx, bx, Wh, bh, Wo, bo, h, obs):
    """Returns (raw head outputs, new hidden). Same bits as the tape path."""
    if obs.shape[0] != W1.shape[1] or h.shape[0] != W2.shape[0]:
        raise ValueError("policy input shape mismatch")
    e1 = np.tanh(W1 @ obs + b1)
    e2 = np.tanh(W2 @ e1 + b2)
    gx = Wx @ e2 + bx
    gh = Wh @ h + bh
    nh = h.shape[0]
    r = _sigm_np(gx[:nh] + gh[:nh])
    z = _sigm_np(gx[nh: 2 * nh] + gh[nh: 2 * nh])
    n = np.tanh(gx[2 * nh:] + r * gh[2 * nh:])
    hn = (1.0 - z) * n + z * h
    return Wo @ hn + bo, hn


def mlp2_forward_plain(W1, b1, W2, b2, x):
    """Two-layer tanh perceptron; returns raw output (classifier logits)."""
    if x.shape[0] != W1.shape[1]:
        raise ValueError("input shape mismatch")
    return W2 @ np.tanh(W1 @ x + b1) + b2


def clampd(x, lo, hi):
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


def sigmoid_plain(x):
    return float(_sigm_np(np.float64(x)))


def softplus_plain(x):
    return float(_softplus_np(np.float64(x)))
