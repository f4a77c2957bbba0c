"""Reverse-mode automatic differentiation on an explicit tape.

A Record holds scalar float64 nodes appended by primitive operations; each
node caches its forward value. backward(root) runs one reverse sweep and
accumulates d(root)/d(node) into per-node adjoints, deterministically, and
can be re-run. Records are independent: build and differentiate as many as
you like concurrently as long as each is used from one thread.

Primitive set: const, var, add, sub, mul, div, neg, sin, cos, tan, atan2,
exp, log, sqrt, clamp, select, sum, dot. Conventions that matter:

- clamp passes the adjoint unchanged when the input is inside the bounds,
  boundary included, and blocks it outside;
- select(cond, a, b) routes the adjoint to the chosen branch only (cond
  gets a zero partial);
- wrap (angle normalization to (-pi, pi]) is a single fused node with
  partial exactly 1 everywhere.

The engine also provides fused helpers (tanh, sigmoid, softplus, linear
layers, elementwise blocks, a gated recurrent unit combine, the ego-frame
feature block, and the bicycle step) that append regular nodes with exact
analytic partials; finite-difference tests cover every one of them.
"""

from __future__ import annotations

import math

import numpy as np

from diffdrive import backend

# Names accepted by emit(); maps to Record methods.
PRIMITIVES = (
    "const", "var", "add", "sub", "mul", "div", "neg", "sin", "cos", "tan",
    "atan2", "exp", "log", "sqrt", "clamp", "select", "sum", "dot",
)


def new_record(core=None):
    """Fresh empty Record on the active (or an explicit) engine."""
    return (core or backend.core).Record()


def emit(rec, op, inputs=(), *, value=None, lo=None, hi=None):
    """Append one primitive by name; returns the new node ref.

    const/var take value=; clamp takes lo=/hi=; sum takes a sequence of
    refs; dot takes (xs, ys); everything else takes positional refs.
    """
    if op not in PRIMITIVES:
        raise ValueError("unknown primitive %r" % op)
    if op in ("const", "var"):
        if value is None:
            raise ValueError("%s needs value=" % op)
        return getattr(rec, op)(value)
    if op == "clamp":
        (a,) = inputs
        if lo is None or hi is None:
            raise ValueError("clamp needs lo= and hi=")
        return rec.clamp(a, lo, hi)
    if op == "sum":
        return rec.sum(list(inputs))
    if op == "dot":
        xs, ys = inputs
        return rec.dot(list(xs), list(ys))
    return getattr(rec, op)(*inputs)


def grad_check(f, point, step=1e-6, core=None):
    """Max relative error between tape gradients and central differences.

    f(rec, refs) -> root ref builds the expression on a fresh record from
    variable nodes at the given point. Relative error per input i is
    |analytic_i - fd_i| / max(1, |analytic_i|).
    """
    point = [float(x) for x in point]
    rec = new_record(core)
    refs = [rec.var(x) for x in point]
    root = f(rec, refs)
    rec.backward(root)
    analytic = [rec.adjoint(r) for r in refs]

    def value_at(shifted):
        r2 = new_record(core)
        rs = [r2.var(x) for x in shifted]
        return r2.value(f(r2, rs))

    worst = 0.0
    for i in range(len(point)):
        plus = list(point)
        minus = list(point)
        plus[i] += step
        minus[i] -= step
        fd = (value_at(plus) - value_at(minus)) / (2.0 * step)
        err = abs(analytic[i] - fd) / max(1.0, abs(analytic[i]))
        worst = max(worst, err)
    return worst


def wrap_angle(theta):
    """Wrap a float angle to (-pi, pi]; plain (non-tape) version."""
    return math.atan2(math.sin(theta), math.cos(theta))


def finite_or_raise(x, what="value"):
    arr = np.asarray(x)
    if not np.all(np.isfinite(arr)):
        raise OverflowError("non-finite %s" % what)
    return x
