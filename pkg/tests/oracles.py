"""Symbolic reference values (sympy), independent of the package code."""

import numpy as np
import sympy as sp

x, y = sp.symbols("x y", positive=True)
X = (x, y)

ARONSSON = x ** sp.Rational(4, 3) - y ** sp.Rational(4, 3)
QUADRATIC = (x**2 + y**2) / 2


def radial(p, n=2):
    r = sp.sqrt(x**2 + y**2)
    if p == n:
        return sp.log(r)
    return r ** sp.Rational(p - n, p - 1)


def gradient(f):
    return sp.Matrix([sp.diff(f, v) for v in X])


def hessian(f):
    return sp.hessian(f, X)


def tangential(f):
    """``Du (x) Du : D^2u`` for a scalar expression."""
    g, H = gradient(f), hessian(f)
    return sp.simplify((g.T * H * g)[0])


def p_laplacian_expanded(f, p):
    g, H = gradient(f), hessian(f)
    return sp.simplify((p - 2) * (g.T * H * g)[0] + (g.T * g)[0] * H.trace())


def at(expr, point):
    return float(sp.N(expr.subs(dict(zip(X, point))), 30))


def vec_at(mat, point):
    return np.array([float(sp.N(e.subs(dict(zip(X, point))), 30)) for e in mat], dtype=float)


def grad_sq_gradient(f):
    g = gradient(f)
    return gradient(sp.expand((g.T * g)[0]))
