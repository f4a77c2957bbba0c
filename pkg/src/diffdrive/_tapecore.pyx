# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tape engine.

A Record is an append-only list of scalar nodes (64-bit values) plus a list of
entries describing how to push adjoints backward. Scalar primitives store one
edge (source index, local partial) per input; fused block entries (linear
layer, elementwise block, GRU combine, observation features, bicycle step)
cover whole vectors with one entry so the hot loops run in C.

The recordless "plain" forward helpers at the bottom share the same inner C
routines as the tape emitters, so a value computed on tape is bit-identical to
the value computed without one. Keep it that way: the planner's collapse
contract (K=1, T=1, no gradient refinement == plain policy rollout) depends
on it, and the extension is compiled with -ffp-contract=off for the same
reason.
"""

from libc.math cimport sin, cos, tan, atan2, exp, log, sqrt, tanh, log1p
from libc.math cimport isfinite
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memset

import numpy as np

BACKEND = "compiled"

# Scalar primitive tags. The first block is the public contract surface; the
# tags past T_DOT are fused conveniences with exact analytic partials.
T_CONST = 0
T_VAR = 1
T_ADD = 2
T_SUB = 3
T_MUL = 4
T_DIV = 5
T_NEG = 6
T_SIN = 7
T_COS = 8
T_TAN = 9
T_ATAN2 = 10
T_EXP = 11
T_LOG = 12
T_SQRT = 13
T_CLAMP = 14
T_SELECT = 15
T_SUM = 16
T_DOT = 17
T_TANH = 18
T_SIGMOID = 19
T_SOFTPLUS = 20
T_AFFINE = 21
T_EW = 22
T_FEAT = 23
T_WRAP = 24

OP_NAMES = (
    "const", "var", "add", "sub", "mul", "div", "neg", "sin", "cos", "tan",
    "atan2", "exp", "log", "sqrt", "clamp", "select", "sum", "dot",
    "tanh", "sigmoid", "softplus", "affine", "ew", "feat", "wrap",
)

# Entry kinds.
DEF E_GEN = 0
DEF E_LINC = 1
DEF E_LINP = 2
DEF E_EW = 3

# Elementwise block ops.
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

DEF _EW_ADD = 0
DEF _EW_SUB = 1
DEF _EW_MUL = 2
DEF _EW_TANH = 3
DEF _EW_SIGM = 4
DEF _EW_SOFTPLUS = 5
DEF _EW_RSUBC = 6
DEF _EW_ADDC = 7
DEF _EW_MULC = 8
DEF _EW_CLAMP = 9
DEF _EW_SIN = 10
DEF _EW_COS = 11


cdef inline double _sigmoid(double x) noexcept nogil:
    cdef double e
    if x >= 0.0:
        e = exp(-x)
        return 1.0 / (1.0 + e)
    e = exp(x)
    return e / (1.0 + e)


cdef inline double _softplus(double x) noexcept nogil:
    if x > 0.0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _clampd(double x, double lo, double hi) noexcept nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


cdef void _linear(const double* W, const double* b, const double* x,
                  double* out, Py_ssize_t nout, Py_ssize_t nin) noexcept nogil:
    # out = W @ x + b, fixed accumulation order (bias first, ascending i).
    cdef Py_ssize_t j, i
    cdef double acc
    cdef const double* row
    for j in range(nout):
        acc = b[j] if b != NULL else 0.0
        row = W + j * nin
        for i in range(nin):
            acc = acc + row[i] * x[i]
        out[j] = acc


cdef void _gru_combine(const double* gx, const double* gh, const double* h,
                       double* hn, Py_ssize_t nh) noexcept nogil:
    # gx, gh are the stacked [r; z; n] pre-activations from the input and
    # hidden linear maps. Same formula order as the tape EW chain.
    cdef Py_ssize_t i
    cdef double r, z, n
    for i in range(nh):
        r = _sigmoid(gx[i] + gh[i])
        z = _sigmoid(gx[nh + i] + gh[nh + i])
        n = tanh(gx[2 * nh + i] + r * gh[2 * nh + i])
        hn[i] = (1.0 - z) * n + z * h[i]


cdef void _obs_values(const double* ego, const double* dest,
                      const double* road, Py_ssize_t nr,
                      const double* neigh, Py_ssize_t nn,
                      double* out) noexcept nogil:
    # Feature layout: [speed, dest_local(2), road_local(2*nr),
    #                  per neighbor (relx, rely, speed, heading_delta, valid)]
    cdef double ex = ego[0], ey = ego[1], yaw = ego[2], spd = ego[3]
    cdef double c = cos(yaw), s = sin(yaw)
    cdef double dx, dy
    cdef Py_ssize_t k, j, o
    out[0] = spd
    dx = dest[0] - ex
    dy = dest[1] - ey
    out[1] = c * dx + s * dy
    out[2] = -s * dx + c * dy
    o = 3
    for k in range(nr):
        dx = road[2 * k] - ex
        dy = road[2 * k + 1] - ey
        out[o] = c * dx + s * dy
        out[o + 1] = -s * dx + c * dy
        o += 2
    for j in range(nn):
        if neigh[5 * j + 4] != 0.0:
            dx = neigh[5 * j] - ex
            dy = neigh[5 * j + 1] - ey
            out[o] = c * dx + s * dy
            out[o + 1] = -s * dx + c * dy
            out[o + 2] = neigh[5 * j + 2]
            out[o + 3] = atan2(sin(neigh[5 * j + 3] - yaw),
                               cos(neigh[5 * j + 3] - yaw))
            out[o + 4] = 1.0
        else:
            out[o] = 0.0
            out[o + 1] = 0.0
            out[o + 2] = 0.0
            out[o + 3] = 0.0
            out[o + 4] = 0.0
        o += 5


cdef class Record:
    """Append-only reverse-mode tape over scalar float64 nodes."""

    cdef double* val
    cdef double* adj
    cdef unsigned char* tag
    cdef Py_ssize_t n_nodes, cap_nodes

    cdef unsigned char* ek
    cdef int* eo
    cdef int* en
    cdef int* em
    cdef long long* ea
    cdef long long* eb
    cdef long long* ec
    cdef double* ef
    cdef double* eg
    cdef Py_ssize_t n_ent, cap_ent

    cdef int* esrc
    cdef double* ew_
    cdef Py_ssize_t n_edges, cap_edges

    cdef double* tmp
    cdef double* tmp2
    cdef Py_ssize_t cap_tmp

    cdef list _refs

    def __cinit__(self):
        self.cap_nodes = 8192
        self.cap_ent = 4096
        self.cap_edges = 32768
        self.cap_tmp = 1024
        self.val = <double*> malloc(self.cap_nodes * sizeof(double))
        self.adj = <double*> malloc(self.cap_nodes * sizeof(double))
        self.tag = <unsigned char*> malloc(self.cap_nodes)
        self.ek = <unsigned char*> malloc(self.cap_ent)
        self.eo = <int*> malloc(self.cap_ent * sizeof(int))
        self.en = <int*> malloc(self.cap_ent * sizeof(int))
        self.em = <int*> malloc(self.cap_ent * sizeof(int))
        self.ea = <long long*> malloc(self.cap_ent * sizeof(long long))
        self.eb = <long long*> malloc(self.cap_ent * sizeof(long long))
        self.ec = <long long*> malloc(self.cap_ent * sizeof(long long))
        self.ef = <double*> malloc(self.cap_ent * sizeof(double))
        self.eg = <double*> malloc(self.cap_ent * sizeof(double))
        self.esrc = <int*> malloc(self.cap_edges * sizeof(int))
        self.ew_ = <double*> malloc(self.cap_edges * sizeof(double))
        self.tmp = <double*> malloc(self.cap_tmp * sizeof(double))
        self.tmp2 = <double*> malloc(self.cap_tmp * sizeof(double))
        if (self.val == NULL or self.adj == NULL or self.tag == NULL
                or self.ek == NULL or self.eo == NULL or self.en == NULL
                or self.em == NULL or self.ea == NULL or self.eb == NULL
                or self.ec == NULL or self.ef == NULL or self.eg == NULL
                or self.esrc == NULL or self.ew_ == NULL or self.tmp == NULL
                or self.tmp2 == NULL):
            raise MemoryError
        self.n_nodes = 0
        self.n_ent = 0
        self.n_edges = 0
        self._refs = []

    def __dealloc__(self):
        free(self.val); free(self.adj); free(self.tag)
        free(self.ek); free(self.eo); free(self.en); free(self.em)
        free(self.ea); free(self.eb); free(self.ec); free(self.ef)
        free(self.eg)
        free(self.esrc); free(self.ew_)
        free(self.tmp); free(self.tmp2)

    # -- growth ------------------------------------------------------------

    cdef int _grow_nodes(self, Py_ssize_t need) except -1:
        cdef Py_ssize_t cap = self.cap_nodes
        while cap < need:
            cap *= 2
        self.val = <double*> realloc(self.val, cap * sizeof(double))
        self.adj = <double*> realloc(self.adj, cap * sizeof(double))
        self.tag = <unsigned char*> realloc(self.tag, cap)
        if self.val == NULL or self.adj == NULL or self.tag == NULL:
            raise MemoryError
        self.cap_nodes = cap
        return 0

    cdef int _grow_ent(self, Py_ssize_t need) except -1:
        cdef Py_ssize_t cap = self.cap_ent
        while cap < need:
            cap *= 2
        self.ek = <unsigned char*> realloc(self.ek, cap)
        self.eo = <int*> realloc(self.eo, cap * sizeof(int))
        self.en = <int*> realloc(self.en, cap * sizeof(int))
        self.em = <int*> realloc(self.em, cap * sizeof(int))
        self.ea = <long long*> realloc(self.ea, cap * sizeof(long long))
        self.eb = <long long*> realloc(self.eb, cap * sizeof(long long))
        self.ec = <long long*> realloc(self.ec, cap * sizeof(long long))
        self.ef = <double*> realloc(self.ef, cap * sizeof(double))
        self.eg = <double*> realloc(self.eg, cap * sizeof(double))
        if (self.ek == NULL or self.eo == NULL or self.en == NULL
                or self.em == NULL or self.ea == NULL or self.eb == NULL
                or self.ec == NULL or self.ef == NULL or self.eg == NULL):
            raise MemoryError
        self.cap_ent = cap
        return 0

    cdef int _grow_edges(self, Py_ssize_t need) except -1:
        cdef Py_ssize_t cap = self.cap_edges
        while cap < need:
            cap *= 2
        self.esrc = <int*> realloc(self.esrc, cap * sizeof(int))
        self.ew_ = <double*> realloc(self.ew_, cap * sizeof(double))
        if self.esrc == NULL or self.ew_ == NULL:
            raise MemoryError
        self.cap_edges = cap
        return 0

    cdef int _grow_tmp(self, Py_ssize_t need) except -1:
        cdef Py_ssize_t cap = self.cap_tmp
        while cap < need:
            cap *= 2
        self.tmp = <double*> realloc(self.tmp, cap * sizeof(double))
        self.tmp2 = <double*> realloc(self.tmp2, cap * sizeof(double))
        if self.tmp == NULL or self.tmp2 == NULL:
            raise MemoryError
        self.cap_tmp = cap
        return 0

    # -- low-level append --------------------------------------------------

    cdef Py_ssize_t _node(self, int tag, double v) except -1:
        if self.n_nodes >= self.cap_nodes:
            self._grow_nodes(self.n_nodes + 1)
        if not isfinite(v):
            raise OverflowError(
                "non-finite value at node %d (%s)"
                % (self.n_nodes, OP_NAMES[tag]))
        self.val[self.n_nodes] = v
        self.tag[self.n_nodes] = <unsigned char> tag
        self.n_nodes += 1
        return self.n_nodes - 1

    cdef Py_ssize_t _entry(self, int kind, Py_ssize_t out0, int nout,
                           int m, long long a, long long b, long long c,
                           double f, double g) except -1:
        if self.n_ent >= self.cap_ent:
            self._grow_ent(self.n_ent + 1)
        cdef Py_ssize_t e = self.n_ent
        self.ek[e] = <unsigned char> kind
        self.eo[e] = <int> out0
        self.en[e] = nout
        self.em[e] = m
        self.ea[e] = a
        self.eb[e] = b
        self.ec[e] = c
        self.ef[e] = f
        self.eg[e] = g
        self.n_ent += 1
        return e

    cdef long long _reserve_edges(self, Py_ssize_t n) except -1:
        if self.n_edges + n > self.cap_edges:
            self._grow_edges(self.n_edges + n)
        cdef long long ofs = self.n_edges
        self.n_edges += n
        return ofs

    cdef inline Py_ssize_t _check(self, Py_ssize_t i) except -1:
        if i < 0 or i >= self.n_nodes:
            raise IndexError("node ref %d out of range (record has %d nodes)"
                             % (i, self.n_nodes))
        return i

    cdef Py_ssize_t _gen1(self, int tag, double v, Py_ssize_t a,
                          double pa) except -1:
        cdef Py_ssize_t out = self._node(tag, v)
        cdef long long ofs = self._reserve_edges(1)
        self.esrc[ofs] = <int> a
        self.ew_[ofs] = pa
        self._entry(E_GEN, out, 1, 0, ofs, 0, 0, 0.0, 0.0)
        return out

    cdef Py_ssize_t _gen2(self, int tag, double v, Py_ssize_t a, double pa,
                          Py_ssize_t b, double pb) except -1:
        cdef Py_ssize_t out = self._node(tag, v)
        cdef long long ofs = self._reserve_edges(2)
        self.esrc[ofs] = <int> a
        self.ew_[ofs] = pa
        self.esrc[ofs + 1] = <int> b
        self.ew_[ofs + 1] = pb
        self._entry(E_GEN, out, 2, 0, ofs, 0, 0, 0.0, 0.0)
        return out

    # -- introspection -----------------------------------------------------

    @property
    def n(self):
        return self.n_nodes

    @property
    def entry_count(self):
        return self.n_ent

    @property
    def edge_count(self):
        return self.n_edges

    def node_tag(self, Py_ssize_t i):
        self._check(i)
        return OP_NAMES[self.tag[i]]

    def reset(self):
        """Drop all nodes and entries; capacity is kept for reuse."""
        self.n_nodes = 0
        self.n_ent = 0
        self.n_edges = 0
        del self._refs[:]

    def value(self, Py_ssize_t i):
        self._check(i)
        return self.val[i]

    def values_block(self, Py_ssize_t i0, Py_ssize_t n):
        self._check(i0)
        if n < 0 or i0 + n > self.n_nodes:
            raise IndexError("block out of range")
        out = np.empty(n, dtype=np.float64)
        cdef double[::1] o = out
        cdef Py_ssize_t k
        for k in range(n):
            o[k] = self.val[i0 + k]
        return out

    def adjoint(self, Py_ssize_t i):
        self._check(i)
        return self.adj[i]

    def adjoints_block(self, Py_ssize_t i0, Py_ssize_t n):
        self._check(i0)
        if n < 0 or i0 + n > self.n_nodes:
            raise IndexError("block out of range")
        out = np.empty(n, dtype=np.float64)
        cdef double[::1] o = out
        cdef Py_ssize_t k
        for k in range(n):
            o[k] = self.adj[i0 + k]
        return out

    # -- leaves ------------------------------------------------------------

    def const(self, double v):
        return self._node(T_CONST, v)

    def var(self, double v):
        return self._node(T_VAR, v)

    def const_block(self, double[::1] a):
        cdef Py_ssize_t base = self.n_nodes, k, n = a.shape[0]
        for k in range(n):
            self._node(T_CONST, a[k])
        return base

    def var_block(self, double[::1] a):
        cdef Py_ssize_t base = self.n_nodes, k, n = a.shape[0]
        for k in range(n):
            self._node(T_VAR, a[k])
        return base

    # -- scalar primitives ---------------------------------------------------

    def add(self, Py_ssize_t a, Py_ssize_t b):
        self._check(a); self._check(b)
        return self._gen2(T_ADD, self.val[a] + self.val[b], a, 1.0, b, 1.0)

    def sub(self, Py_ssize_t a, Py_ssize_t b):
        self._check(a); self._check(b)
        return self._gen2(T_SUB, self.val[a] - self.val[b], a, 1.0, b, -1.0)

    def mul(self, Py_ssize_t a, Py_ssize_t b):
        self._check(a); self._check(b)
        return self._gen2(T_MUL, self.val[a] * self.val[b],
                          a, self.val[b], b, self.val[a])

    def div(self, Py_ssize_t a, Py_ssize_t b):
        self._check(a); self._check(b)
        cdef double vb = self.val[b]
        if vb == 0.0:
            raise ZeroDivisionError("div by zero at node %d" % b)
        cdef double va = self.val[a]
        return self._gen2(T_DIV, va / vb, a, 1.0 / vb, b, -va / (vb * vb))

    def neg(self, Py_ssize_t a):
        self._check(a)
        return self._gen1(T_NEG, -self.val[a], a, -1.0)

    def sin(self, Py_ssize_t a):
        self._check(a)
        return self._gen1(T_SIN, sin(self.val[a]), a, cos(self.val[a]))

    def cos(self, Py_ssize_t a):
        self._check(a)
        return self._gen1(T_COS, cos(self.val[a]), a, -sin(self.val[a]))

    def tan(self, Py_ssize_t a):
        self._check(a)
        cdef double t = tan(self.val[a])
        return self._gen1(T_TAN, t, a, 1.0 + t * t)

    def atan2(self, Py_ssize_t y, Py_ssize_t x):
        self._check(y); self._check(x)
        cdef double vy = self.val[y], vx = self.val[x]
        cdef double d = vx * vx + vy * vy
        if d == 0.0:
            raise ZeroDivisionError("atan2 at origin (nodes %d, %d)" % (y, x))
        return self._gen2(T_ATAN2, atan2(vy, vx), y, vx / d, x, -vy / d)

    def exp(self, Py_ssize_t a):
        self._check(a)
        cdef double e = exp(self.val[a])
        return self._gen1(T_EXP, e, a, e)

    def log(self, Py_ssize_t a):
        self._check(a)
        cdef double v = self.val[a]
        if v <= 0.0:
            raise ValueError("log domain error at node %d (value %r)"
                             % (a, v))
        return self._gen1(T_LOG, log(v), a, 1.0 / v)

    def sqrt(self, Py_ssize_t a):
        self._check(a)
        cdef double v = self.val[a]
        if v < 0.0:
            raise ValueError("sqrt domain error at node %d (value %r)"
                             % (a, v))
        cdef double s = sqrt(v)
        # partial at exactly 0 is +inf; backward skips it unless a nonzero
        # adjoint actually reaches the node, which then reports non-finite.
        return self._gen1(T_SQRT, s, a, 0.5 / s if s > 0.0 else np.inf)

    def clamp(self, Py_ssize_t a, double lo, double hi):
        self._check(a)
        if not lo <= hi:
            raise ValueError("clamp bounds inverted (lo=%r hi=%r)" % (lo, hi))
        cdef double v = self.val[a]
        # boundary counts as inside: adjoint passes when lo <= v <= hi
        return self._gen1(T_CLAMP, _clampd(v, lo, hi), a,
                          1.0 if lo <= v <= hi else 0.0)

    def select(self, Py_ssize_t c, Py_ssize_t a, Py_ssize_t b):
        self._check(c); self._check(a); self._check(b)
        cdef bint take_a = self.val[c] != 0.0
        cdef double v = self.val[a] if take_a else self.val[b]
        cdef Py_ssize_t out = self._node(T_SELECT, v)
        cdef long long ofs = self._reserve_edges(3)
        self.esrc[ofs] = <int> c
        self.ew_[ofs] = 0.0
        self.esrc[ofs + 1] = <int> a
        self.ew_[ofs + 1] = 1.0 if take_a else 0.0
        self.esrc[ofs + 2] = <int> b
        self.ew_[ofs + 2] = 0.0 if take_a else 1.0
        self._entry(E_GEN, out, 3, 0, ofs, 0, 0, 0.0, 0.0)
        return out

    def sum(self, ids):
        cdef Py_ssize_t n = len(ids)
        if n < 1:
            raise ValueError("sum needs at least one input")
        cdef double acc = 0.0
        cdef Py_ssize_t k, i
        for k in range(n):
            i = self._check(ids[k])
            acc += self.val[i]
        cdef Py_ssize_t out = self._node(T_SUM, acc)
        cdef long long ofs = self._reserve_edges(n)
        for k in range(n):
            self.esrc[ofs + k] = <int> (<Py_ssize_t> ids[k])
            self.ew_[ofs + k] = 1.0
        self._entry(E_GEN, out, <int> n, 0, ofs, 0, 0, 0.0, 0.0)
        return out

    def dot(self, xs, ys):
        cdef Py_ssize_t n = len(xs)
        if n < 1 or len(ys) != n:
            raise ValueError("dot needs equal-length nonempty inputs")
        cdef double acc = 0.0
        cdef Py_ssize_t k, a, b
        for k in range(n):
            a = self._check(xs[k])
            b = self._check(ys[k])
            acc += self.val[a] * self.val[b]
        cdef Py_ssize_t out = self._node(T_DOT, acc)
        cdef long long ofs = self._reserve_edges(2 * n)
        for k in range(n):
            a = xs[k]
            b = ys[k]
            self.esrc[ofs + 2 * k] = <int> a
            self.ew_[ofs + 2 * k] = self.val[b]
            self.esrc[ofs + 2 * k + 1] = <int> b
            self.ew_[ofs + 2 * k + 1] = self.val[a]
        self._entry(E_GEN, out, <int> (2 * n), 0, ofs, 0, 0, 0.0, 0.0)
        return out

    def tanh(self, Py_ssize_t a):
        self._check(a)
        cdef double t = tanh(self.val[a])
        return self._gen1(T_TANH, t, a, 1.0 - t * t)

    def sigmoid(self, Py_ssize_t a):
        self._check(a)
        cdef double s = _sigmoid(self.val[a])
        return self._gen1(T_SIGMOID, s, a, s * (1.0 - s))

    def softplus(self, Py_ssize_t a):
        self._check(a)
        return self._gen1(T_SOFTPLUS, _softplus(self.val[a]), a,
                          _sigmoid(self.val[a]))

    def wrap(self, Py_ssize_t a):
        """Angle wrap to (-pi, pi]; a shift, so the gradient is exactly 1."""
        self._check(a)
        cdef double v = self.val[a]
        return self._gen1(T_WRAP, atan2(sin(v), cos(v)), a, 1.0)

    # -- block kernels -------------------------------------------------------

    cdef Py_ssize_t _ew_impl(self, int op, Py_ssize_t a0, Py_ssize_t n,
                             Py_ssize_t b0, double aux, double aux2) except -1:
        if a0 < 0 or a0 + n > self.n_nodes:
            raise IndexError("ew input block out of range")
        if op in (_EW_ADD, _EW_SUB, _EW_MUL):
            if b0 < 0 or b0 + n > self.n_nodes:
                raise IndexError("ew second block out of range")
        if self.n_nodes + n > self.cap_nodes:
            self._grow_nodes(self.n_nodes + n)
        cdef Py_ssize_t out0 = self.n_nodes
        cdef Py_ssize_t i
        cdef double v = 0.0, x
        for i in range(n):
            x = self.val[a0 + i]
            if op == _EW_ADD:
                v = x + self.val[b0 + i]
            elif op == _EW_SUB:
                v = x - self.val[b0 + i]
            elif op == _EW_MUL:
                v = x * self.val[b0 + i]
            elif op == _EW_TANH:
                v = tanh(x)
            elif op == _EW_SIGM:
                v = _sigmoid(x)
            elif op == _EW_SOFTPLUS:
                v = _softplus(x)
            elif op == _EW_RSUBC:
                v = aux - x
            elif op == _EW_ADDC:
                v = x + aux
            elif op == _EW_MULC:
                v = x * aux
            elif op == _EW_CLAMP:
                v = _clampd(x, aux, aux2)
            elif op == _EW_SIN:
                v = sin(x)
            elif op == _EW_COS:
                v = cos(x)
            else:
                raise ValueError("unknown ew op %d" % op)
            if not isfinite(v):
                raise OverflowError("non-finite value at node %d (ew %d)"
                                    % (self.n_nodes + i, op))
            self.val[self.n_nodes + i] = v
            self.tag[self.n_nodes + i] = T_EW
        self.n_nodes += n
        self._entry(E_EW, out0, <int> n, op, a0, b0, 0, aux, aux2)
        return out0

    def ew(self, int op, Py_ssize_t a0, Py_ssize_t n, Py_ssize_t b0=-1,
           double aux=0.0, double aux2=0.0):
        return self._ew_impl(op, a0, n, b0, aux, aux2)

    def linear_const(self, int[::1] x_ids, double[:, ::1] W, b):
        """out = W @ gather(x_ids) + b with W, b treated as constants.

        Borrows W and b (no copy); the caller must not mutate them while
        this record is alive, or a re-run backward would see torn partials.
        """
        cdef Py_ssize_t nout = W.shape[0], nin = W.shape[1]
        if x_ids.shape[0] != nin:
            raise ValueError("x_ids length %d != W.shape[1] %d"
                             % (x_ids.shape[0], nin))
        cdef double[::1] bm
        cdef const double* bp = NULL
        if b is not None:
            bm = b
            if bm.shape[0] != nout:
                raise ValueError("bias length mismatch")
            bp = &bm[0]
        cdef Py_ssize_t i
        for i in range(nin):
            self._check(x_ids[i])
        if nin > self.cap_tmp:
            self._grow_tmp(nin)
        for i in range(nin):
            self.tmp[i] = self.val[x_ids[i]]
        if self.n_nodes + nout > self.cap_nodes:
            self._grow_nodes(self.n_nodes + nout)
        cdef Py_ssize_t out0 = self.n_nodes
        _linear(&W[0, 0], bp, self.tmp, self.val + out0, nout, nin)
        for i in range(nout):
            if not isfinite(self.val[out0 + i]):
                raise OverflowError("non-finite value at node %d (affine)"
                                    % (out0 + i))
            self.tag[out0 + i] = T_AFFINE
        self.n_nodes += nout
        cdef long long gofs = self._reserve_edges(nin)
        for i in range(nin):
            self.esrc[gofs + i] = x_ids[i]
            self.ew_[gofs + i] = 0.0
        # keep the arrays alive; entries store raw pointers
        self._refs.append(W.base if W.base is not None else np.asarray(W))
        if b is not None:
            self._refs.append(b)
        self._entry(E_LINC, out0, <int> nout, <int> nin, gofs,
                    <long long> <size_t> &W[0, 0],
                    <long long> <size_t> bp, 0.0, 0.0)
        return out0

    def linear_param(self, int[::1] x_ids, Py_ssize_t wbase, Py_ssize_t bbase,
                     Py_ssize_t nout, Py_ssize_t nin):
        """out = W @ gather(x_ids) + b where W rows live on the tape at
        wbase (row-major, nout*nin nodes) and b at bbase (-1: no bias)."""
        if x_ids.shape[0] != nin:
            raise ValueError("x_ids length mismatch")
        if wbase < 0 or wbase + nout * nin > self.n_nodes:
            raise IndexError("weight block out of range")
        if bbase >= 0 and bbase + nout > self.n_nodes:
            raise IndexError("bias block out of range")
        cdef Py_ssize_t i, j
        for i in range(nin):
            self._check(x_ids[i])
        if nin > self.cap_tmp:
            self._grow_tmp(nin)
        for i in range(nin):
            self.tmp[i] = self.val[x_ids[i]]
        if self.n_nodes + nout > self.cap_nodes:
            self._grow_nodes(self.n_nodes + nout)
        cdef Py_ssize_t out0 = self.n_nodes
        cdef double acc
        for j in range(nout):
            acc = self.val[bbase + j] if bbase >= 0 else 0.0
            for i in range(nin):
                acc = acc + self.val[wbase + j * nin + i] * self.tmp[i]
            if not isfinite(acc):
                raise OverflowError("non-finite value at node %d (affine)"
                                    % (out0 + j))
            self.val[out0 + j] = acc
            self.tag[out0 + j] = T_AFFINE
        self.n_nodes += nout
        cdef long long gofs = self._reserve_edges(nin)
        for i in range(nin):
            self.esrc[gofs + i] = x_ids[i]
            self.ew_[gofs + i] = 0.0
        self._entry(E_LINP, out0, <int> nout, <int> nin, gofs,
                    wbase, bbase, 0.0, 0.0)
        return out0

    def gru(self, Py_ssize_t gx0, Py_ssize_t gh0, Py_ssize_t h0,
            Py_ssize_t nh):
        """Gated-unit combine over stacked [r; z; n] pre-activation blocks."""
        cdef Py_ssize_t pre_r = self._ew_impl(_EW_ADD, gx0, nh, gh0, 0, 0)
        cdef Py_ssize_t r = self._ew_impl(_EW_SIGM, pre_r, nh, -1, 0, 0)
        cdef Py_ssize_t pre_z = self._ew_impl(_EW_ADD, gx0 + nh, nh, gh0 + nh,
                                              0, 0)
        cdef Py_ssize_t z = self._ew_impl(_EW_SIGM, pre_z, nh, -1, 0, 0)
        cdef Py_ssize_t m = self._ew_impl(_EW_MUL, r, nh, gh0 + 2 * nh, 0, 0)
        cdef Py_ssize_t pre_n = self._ew_impl(_EW_ADD, gx0 + 2 * nh, nh, m,
                                              0, 0)
        cdef Py_ssize_t n_ = self._ew_impl(_EW_TANH, pre_n, nh, -1, 0, 0)
        cdef Py_ssize_t omz = self._ew_impl(_EW_RSUBC, z, nh, -1, 1.0, 0)
        cdef Py_ssize_t t1 = self._ew_impl(_EW_MUL, omz, nh, n_, 0, 0)
        cdef Py_ssize_t t2 = self._ew_impl(_EW_MUL, z, nh, h0, 0, 0)
        return self._ew_impl(_EW_ADD, t1, nh, t2, 0, 0)

    def observation(self, Py_ssize_t exi, Py_ssize_t eyi, Py_ssize_t eyawi,
                    Py_ssize_t espdi, double[::1] dest, double[:, ::1] road,
                    double[:, ::1] neigh):
        """Ego-frame feature block; returns (obs0, width).

        road: (R, 2) absolute points, already selected and ordered.
        neigh: (An, 5) rows [x, y, speed, yaw, valid], invalid rows ignored.
        """
        self._check(exi); self._check(eyi)
        self._check(eyawi); self._check(espdi)
        cdef Py_ssize_t nr = road.shape[0], nn = neigh.shape[0]
        if road.shape[1] != 2 or neigh.shape[1] != 5:
            raise ValueError("bad road/neighbor shapes")
        cdef Py_ssize_t width = 3 + 2 * nr + 5 * nn
        cdef double ego[4]
        ego[0] = self.val[exi]
        ego[1] = self.val[eyi]
        ego[2] = self.val[eyawi]
        ego[3] = self.val[espdi]
        if width > self.cap_tmp:
            self._grow_tmp(width)
        _obs_values(ego, &dest[0], &road[0, 0] if nr > 0 else NULL, nr,
                    &neigh[0, 0] if nn > 0 else NULL, nn, self.tmp)
        if self.n_nodes + width > self.cap_nodes:
            self._grow_nodes(self.n_nodes + width)
        cdef Py_ssize_t out0 = self.n_nodes
        cdef Py_ssize_t i
        for i in range(width):
            if not isfinite(self.tmp[i]):
                raise OverflowError("non-finite value at node %d (feat)"
                                    % (out0 + i))
            self.val[out0 + i] = self.tmp[i]
            self.tag[out0 + i] = T_FEAT
        self.n_nodes += width
        # edges
        cdef double c = cos(ego[2]), s = sin(ego[2])
        cdef long long ofs
        cdef Py_ssize_t o = out0
        # speed feature
        ofs = self._reserve_edges(1)
        self.esrc[ofs] = <int> espdi
        self.ew_[ofs] = 1.0
        self._entry(E_GEN, o, 1, 0, ofs, 0, 0, 0.0, 0.0)
        o += 1
        cdef double lx, ly
        cdef Py_ssize_t k
        for k in range(nr + 1):
            lx = self.val[o]
            ly = self.val[o + 1]
            ofs = self._reserve_edges(3)
            self.esrc[ofs] = <int> exi
            self.ew_[ofs] = -c
            self.esrc[ofs + 1] = <int> eyi
            self.ew_[ofs + 1] = -s
            self.esrc[ofs + 2] = <int> eyawi
            self.ew_[ofs + 2] = ly
            self._entry(E_GEN, o, 3, 0, ofs, 0, 0, 0.0, 0.0)
            ofs = self._reserve_edges(3)
            self.esrc[ofs] = <int> exi
            self.ew_[ofs] = s
            self.esrc[ofs + 1] = <int> eyi
            self.ew_[ofs + 1] = -c
            self.esrc[ofs + 2] = <int> eyawi
            self.ew_[ofs + 2] = -lx
            self._entry(E_GEN, o + 1, 3, 0, ofs, 0, 0, 0.0, 0.0)
            o += 2
        for k in range(nn):
            if neigh[k, 4] != 0.0:
                lx = self.val[o]
                ly = self.val[o + 1]
                ofs = self._reserve_edges(3)
                self.esrc[ofs] = <int> exi
                self.ew_[ofs] = -c
                self.esrc[ofs + 1] = <int> eyi
                self.ew_[ofs + 1] = -s
                self.esrc[ofs + 2] = <int> eyawi
                self.ew_[ofs + 2] = ly
                self._entry(E_GEN, o, 3, 0, ofs, 0, 0, 0.0, 0.0)
                ofs = self._reserve_edges(3)
                self.esrc[ofs] = <int> exi
                self.ew_[ofs] = s
                self.esrc[ofs + 1] = <int> eyi
                self.ew_[ofs + 1] = -c
                self.esrc[ofs + 2] = <int> eyawi
                self.ew_[ofs + 2] = -lx
                self._entry(E_GEN, o + 1, 3, 0, ofs, 0, 0, 0.0, 0.0)
                # speed feature is a constant of the neighbor; heading delta
                # depends on ego yaw with partial -1
                ofs = self._reserve_edges(1)
                self.esrc[ofs] = <int> eyawi
                self.ew_[ofs] = -1.0
                self._entry(E_GEN, o + 3, 1, 0, ofs, 0, 0, 0.0, 0.0)
            o += 5
        return out0, width

    def bicycle(self, Py_ssize_t xi, Py_ssize_t yi, Py_ssize_t yawi,
                Py_ssize_t vi, Py_ssize_t ai, Py_ssize_t di,
                double dt, double wheelbase, double vmax):
        """One kinematic bicycle step from primitive nodes; returns 4 ids.

        Position integrates the pre-step speed; speed clamps to [0, vmax];
        yaw wraps to (-pi, pi].
        """
        cdef Py_ssize_t dtc = self.const(dt)
        cdef Py_ssize_t c = self.cos(yawi)
        cdef Py_ssize_t s = self.sin(yawi)
        cdef Py_ssize_t t1 = self.mul(vi, c)
        cdef Py_ssize_t t2 = self.mul(t1, dtc)
        cdef Py_ssize_t xn = self.add(xi, t2)
        cdef Py_ssize_t t3 = self.mul(vi, s)
        cdef Py_ssize_t t4 = self.mul(t3, dtc)
        cdef Py_ssize_t yn = self.add(yi, t4)
        cdef Py_ssize_t tn = self.tan(di)
        cdef Py_ssize_t t5 = self.mul(vi, tn)
        cdef Py_ssize_t wbc = self.const(wheelbase)
        cdef Py_ssize_t t6 = self.div(t5, wbc)
        cdef Py_ssize_t t7 = self.mul(t6, dtc)
        cdef Py_ssize_t yw = self.add(yawi, t7)
        cdef Py_ssize_t yawn = self.wrap(yw)
        cdef Py_ssize_t t8 = self.mul(ai, dtc)
        cdef Py_ssize_t t9 = self.add(vi, t8)
        cdef Py_ssize_t vn = self.clamp(t9, 0.0, vmax)
        return xn, yn, yawn, vn

    # -- backward ------------------------------------------------------------

    def backward(self, Py_ssize_t root):
        """Reverse sweep seeding d(root)/d(root) = 1. Re-runnable."""
        self._check(root)
        cdef Py_ssize_t n = self.n_nodes
        memset(self.adj, 0, n * sizeof(double))
        self.adj[root] = 1.0
        cdef Py_ssize_t e, i, j, nout, nin, a0, b0
        cdef long long ofs
        cdef int kind, op
        cdef double g, x, y
        cdef const double* W
        cdef double* gy
        cdef Py_ssize_t out0, wbase, bbase
        for e in range(self.n_ent - 1, -1, -1):
            kind = self.ek[e]
            out0 = self.eo[e]
            if kind == E_GEN:
                g = self.adj[out0]
                if g != 0.0:
                    ofs = self.ea[e]
                    nout = self.en[e]  # edge count for generic entries
                    for i in range(nout):
                        self.adj[self.esrc[ofs + i]] += self.ew_[ofs + i] * g
            elif kind == E_LINC:
                nout = self.en[e]
                nin = self.em[e]
                ofs = self.ea[e]
                W = <const double*> <size_t> self.eb[e]
                if nin > self.cap_tmp:
                    self._grow_tmp(nin)
                memset(self.tmp, 0, nin * sizeof(double))
                for j in range(nout):
                    g = self.adj[out0 + j]
                    if g != 0.0:
                        for i in range(nin):
                            self.tmp[i] += W[j * nin + i] * g
                for i in range(nin):
                    self.adj[self.esrc[ofs + i]] += self.tmp[i]
            elif kind == E_LINP:
                nout = self.en[e]
                nin = self.em[e]
                ofs = self.ea[e]
                wbase = self.eb[e]
                bbase = self.ec[e]
                if nin > self.cap_tmp:
                    self._grow_tmp(nin)
                memset(self.tmp, 0, nin * sizeof(double))
                for i in range(nin):
                    self.tmp2[i] = self.val[self.esrc[ofs + i]]
                for j in range(nout):
                    g = self.adj[out0 + j]
                    if g != 0.0:
                        for i in range(nin):
                            self.tmp[i] += self.val[wbase + j * nin + i] * g
                            self.adj[wbase + j * nin + i] += self.tmp2[i] * g
                        if bbase >= 0:
                            self.adj[bbase + j] += g
                for i in range(nin):
                    self.adj[self.esrc[ofs + i]] += self.tmp[i]
            else:  # E_EW
                nout = self.en[e]
                op = self.em[e]
                a0 = self.ea[e]
                b0 = self.eb[e]
                if op == _EW_ADD:
                    for i in range(nout):
                        g = self.adj[out0 + i]
                        self.adj[a0 + i] += g
                        self.adj[b0 + i] += g
                elif op == _EW_SUB:
                    for i in range(nout):
                        g = self.adj[out0 + i]
                        self.adj[a0 + i] += g
                        self.adj[b0 + i] -= g
                elif op == _EW_MUL:
                    for i in range(nout):
                        g = self.adj[out0 + i]
                        if g != 0.0:
                            self.adj[a0 + i] += self.val[b0 + i] * g
                            self.adj[b0 + i] += self.val[a0 + i] * g
                elif op == _EW_TANH:
                    for i in range(nout):
                        g = self.adj[out0 + i]
                        if g != 0.0:
                            y = self.val[out0 + i]
                            self.adj[a0 + i] += (1.0 - y * y) * g
                elif op == _EW_SIGM:
                    for i in range(nout):
                        g = self.adj[out0 + i]
                        if g != 0.0:
                            y = self.val[out0 + i]
                            self.adj[a0 + i] += y * (1.0 - y) * g
                elif op == _EW_SOFTPLUS:
                    for i in range(nout):
                        g = self.adj[out0 + i]
                        if g != 0.0:
                            self.adj[a0 + i] += _sigmoid(self.val[a0 + i]) * g
                elif op == _EW_RSUBC:
                    for i in range(nout):
                        self.adj[a0 + i] -= self.adj[out0 + i]
                elif op == _EW_ADDC:
                    for i in range(nout):
                        self.adj[a0 + i] += self.adj[out0 + i]
                elif op == _EW_MULC:
                    for i in range(nout):
                        self.adj[a0 + i] += self.ef[e] * self.adj[out0 + i]
                elif op == _EW_CLAMP:
                    for i in range(nout):
                        g = self.adj[out0 + i]
                        if g != 0.0:
                            x = self.val[a0 + i]
                            if self.ef[e] <= x <= self.eg[e]:
                                self.adj[a0 + i] += g
                elif op == _EW_SIN:
                    for i in range(nout):
                        g = self.adj[out0 + i]
                        if g != 0.0:
                            self.adj[a0 + i] += cos(self.val[a0 + i]) * g
                elif op == _EW_COS:
                    for i in range(nout):
                        g = self.adj[out0 + i]
                        if g != 0.0:
                            self.adj[a0 + i] -= sin(self.val[a0 + i]) * g
        for i in range(n):
            if not isfinite(self.adj[i]):
                raise ValueError("non-finite adjoint at node %d" % i)


# -- recordless forward helpers (shared inner routines) ----------------------

def obs_build_plain(double[::1] ego, double[::1] dest, double[:, ::1] road,
                    double[:, ::1] neigh):
    cdef Py_ssize_t nr = road.shape[0], nn = neigh.shape[0]
    out = np.empty(3 + 2 * nr + 5 * nn, dtype=np.float64)
    cdef double[::1] o = out
    _obs_values(&ego[0], &dest[0], &road[0, 0] if nr > 0 else NULL, nr,
                &neigh[0, 0] if nn > 0 else NULL, nn, &o[0])
    return out


def bicycle_plain(double[::1] s, double acc, double steer, double dt,
                  double wheelbase, double vmax):
    cdef double x = s[0], y = s[1], yaw = s[2], v = s[3]
    out = np.empty(4, dtype=np.float64)
    cdef double[::1] o = out
    cdef double c = cos(yaw), si = sin(yaw), yw
    o[0] = x + (v * c) * dt
    o[1] = y + (v * si) * dt
    yw = yaw + ((v * tan(steer)) / wheelbase) * dt
    o[2] = atan2(sin(yw), cos(yw))
    o[3] = _clampd(v + acc * dt, 0.0, vmax)
    return out


def scene_rows(double[:, ::1] AG, Py_ssize_t[::1] sel, unsigned char[::1] ok,
               double[:, ::1] pts, Py_ssize_t[:, ::1] idx,
               double[:, ::1] dests, Py_ssize_t n_road, Py_ssize_t n_neigh):
    """Road/neighbor selection plus observation rows for a batch of agents.

    AG rows hold (x, y, speed, yaw) for every agent in the scene; sel picks
    the observed agents, one per output row. idx carries each row's
    candidate road point ids from the spatial index (over-fetched), reduced
    here to the n_road nearest by squared distance with ties broken by
    point id, which is the (polyline, point) rank. Neighbor slots fill with
    the nearest valid other agents, ties broken by agent index, zeros when
    fewer exist. Returns (road, neigh, obs) float64 arrays.
    """
    cdef Py_ssize_t B = sel.shape[0], k = idx.shape[1], n = AG.shape[0]
    cdef Py_ssize_t obs_dim = 3 + 2 * n_road + 5 * n_neigh
    road = np.empty((B, n_road, 2), dtype=np.float64)
    neigh = np.zeros((B, n_neigh, 5), dtype=np.float64)
    obs = np.empty((B, obs_dim), dtype=np.float64)
    cdef double[:, :, ::1] rv = road
    cdef double[:, :, ::1] nv = neigh
    cdef double[:, ::1] ov = obs
    cdef Py_ssize_t kc = k if k > 0 else 1
    cdef Py_ssize_t nc = n_neigh if n_neigh > 0 else 1
    cdef double* d2buf = <double*> malloc(kc * sizeof(double))
    cdef Py_ssize_t* ordbuf = <Py_ssize_t*> malloc(kc * sizeof(Py_ssize_t))
    cdef double* sd = <double*> malloc(nc * sizeof(double))
    cdef Py_ssize_t* sj = <Py_ssize_t*> malloc(nc * sizeof(Py_ssize_t))
    if d2buf == NULL or ordbuf == NULL or sd == NULL or sj == NULL:
        free(d2buf); free(ordbuf); free(sd); free(sj)
        raise MemoryError()
    cdef Py_ssize_t r, i, c, j, p, q, t, src, pid, count
    cdef double px, py, dx, dy, d2c
    cdef double ego[4]
    with nogil:
        for r in range(B):
            i = sel[r]
            px = AG[i, 0]
            py = AG[i, 1]
            for c in range(k):
                pid = idx[r, c]
                dx = pts[pid, 0] - px
                dy = pts[pid, 1] - py
                d2buf[c] = dx * dx + dy * dy
            # insertion sort of candidate slots by (distance, point id)
            for c in range(k):
                p = c
                while p > 0 and (
                        d2buf[ordbuf[p - 1]] > d2buf[c] or
                        (d2buf[ordbuf[p - 1]] == d2buf[c] and
                         idx[r, ordbuf[p - 1]] > idx[r, c])):
                    ordbuf[p] = ordbuf[p - 1]
                    p -= 1
                ordbuf[p] = c
            for t in range(n_road):
                src = ordbuf[t if t < k else k - 1]
                pid = idx[r, src]
                rv[r, t, 0] = pts[pid, 0]
                rv[r, t, 1] = pts[pid, 1]
            count = 0
            for j in range(n):
                if j == i or ok[j] == 0:
                    continue
                dx = AG[j, 0] - px
                dy = AG[j, 1] - py
                d2c = dx * dx + dy * dy
                p = count
                while p > 0 and d2c < sd[p - 1]:
                    p -= 1
                if p < n_neigh:
                    q = count if count < n_neigh else n_neigh - 1
                    while q > p:
                        sd[q] = sd[q - 1]
                        sj[q] = sj[q - 1]
                        q -= 1
                    sd[p] = d2c
                    sj[p] = j
                    if count < n_neigh:
                        count += 1
            for t in range(count):
                j = sj[t]
                nv[r, t, 0] = AG[j, 0]
                nv[r, t, 1] = AG[j, 1]
                nv[r, t, 2] = AG[j, 2]
                nv[r, t, 3] = AG[j, 3]
                nv[r, t, 4] = 1.0
            ego[0] = px
            ego[1] = py
            ego[2] = AG[i, 3]
            ego[3] = AG[i, 2]
            _obs_values(ego, &dests[r, 0], &rv[r, 0, 0] if n_road > 0
                        else NULL, n_road, &nv[r, 0, 0] if n_neigh > 0
                        else NULL, n_neigh, &ov[r, 0])
    free(d2buf)
    free(ordbuf)
    free(sd)
    free(sj)
    return road, neigh, obs


def policy_forward_plain(double[:, ::1] W1, double[::1] b1,
                         double[:, ::1] W2, double[::1] b2,
                         double[:, ::1] Wx, double[::1] bx,
                         double[:, ::1] Wh, double[::1] bh,
                         double[:, ::1] Wo, double[::1] bo,
                         double[::1] h, double[::1] obs):
    """Returns (raw head outputs, new hidden). Same bits as the tape path."""
    cdef Py_ssize_t nin = W1.shape[1], nh = W2.shape[0], no = Wo.shape[0]
    cdef Py_ssize_t n1 = W1.shape[0], i
    if obs.shape[0] != nin or h.shape[0] != nh:
        raise ValueError("policy input shape mismatch")
    e1 = np.empty(n1, dtype=np.float64)
    e2 = np.empty(nh, dtype=np.float64)
    gx = np.empty(3 * nh, dtype=np.float64)
    gh = np.empty(3 * nh, dtype=np.float64)
    hn = np.empty(nh, dtype=np.float64)
    out = np.empty(no, dtype=np.float64)
    cdef double[::1] e1m = e1, e2m = e2, gxm = gx, ghm = gh
    cdef double[::1] hnm = hn, om = out
    _linear(&W1[0, 0], &b1[0], &obs[0], &e1m[0], n1, nin)
    for i in range(n1):
        e1m[i] = tanh(e1m[i])
    _linear(&W2[0, 0], &b2[0], &e1m[0], &e2m[0], nh, n1)
    for i in range(nh):
        e2m[i] = tanh(e2m[i])
    _linear(&Wx[0, 0], &bx[0], &e2m[0], &gxm[0], 3 * nh, nh)
    _linear(&Wh[0, 0], &bh[0], &h[0], &ghm[0], 3 * nh, nh)
    _gru_combine(&gxm[0], &ghm[0], &h[0], &hnm[0], nh)
    _linear(&Wo[0, 0], &bo[0], &hnm[0], &om[0], no, nh)
    return out, hn


def mlp2_forward_plain(double[:, ::1] W1, double[::1] b1,
                       double[:, ::1] W2, double[::1] b2, double[::1] x):
    """Two-layer tanh perceptron; returns raw output (classifier logits)."""
    cdef Py_ssize_t nh = W1.shape[0], nin = W1.shape[1], no = W2.shape[0]
    cdef Py_ssize_t i
    if x.shape[0] != nin:
        raise ValueError("input shape mismatch")
    hbuf = np.empty(nh, dtype=np.float64)
    out = np.empty(no, dtype=np.float64)
    cdef double[::1] hm = hbuf, om = out
    _linear(&W1[0, 0], &b1[0], &x[0], &hm[0], nh, nin)
    for i in range(nh):
        hm[i] = tanh(hm[i])
    _linear(&W2[0, 0], &b2[0], &hm[0], &om[0], no, nh)
    return out


def clampd(double x, double lo, double hi):
    return _clampd(x, lo, hi)


def sigmoid_plain(double x):
    return _sigmoid(x)


def softplus_plain(double x):
    return _softplus(x)
