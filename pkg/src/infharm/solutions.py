"""Analytic test corpus with closed-form derivatives, and bump perturbations.

Every member evaluates on arrays of points with shape ``(..., n)`` and
returns values ``(..., N)``, gradients ``(..., N, n)`` and hessians
``(..., N, n, n)``.
"""

from __future__ import annotations

import numpy as np

from .errors import SupportViolationError
from .grid import GridDomain, GridMap, sample_analytic

__all__ = [
    "AnalyticSolution",
    "Linear",
    "Aronsson",
    "RadialPHarmonic",
    "HarmonicPolynomial",
    "ExpSine",
    "Quadratic",
    "ComplexSquare",
    "Embedded",
    "Perturbed",
    "bump",
    "corpus",
    "make_solution",
    "perturb",
    "cross_validate",
]


class AnalyticSolution:
    """Base class; subclasses fill in ``value``, ``gradient`` and ``hessian``."""

    id: str = "abstract"
    solution_class: str = "none"
    singular_set: str = "none"

    def __init__(self, n: int, N: int, /, **params):
        self.n = n
        self.N = N
        self.params = params

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def hessian(self, x):
        raise NotImplementedError

    def singular(self, x) -> np.ndarray:
        """Points where the value or gradient is undefined."""
        return np.zeros(np.shape(x)[:-1], dtype=bool)

    def hessian_singular(self, x) -> np.ndarray:
        """Points where the classical hessian does not exist."""
        return self.singular(x)

    def describe(self) -> dict:
        params = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v)
                  for k, v in self.params.items()}
        return {"id": self.id, "n": self.n, "N": self.N, "params": params,
                "class": self.solution_class, "singular_set": self.singular_set}


class Linear(AnalyticSolution):
    """Affine map ``u(x) = b + a x`` with ``a`` of shape ``(N, n)``."""

    id = "linear"
    solution_class = "infinity_harmonic"

    def __init__(self, a=(1.0, 0.0), b=None):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.zeros(a.shape[0]) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
        super().__init__(a.shape[1], a.shape[0], a=a, b=b)
        self.a, self.b = a, b

    def value(self, x):
        return np.asarray(x, float) @ self.a.T + self.b

    def gradient(self, x):
        return np.broadcast_to(self.a, np.shape(x)[:-1] + self.a.shape).copy()

    def hessian(self, x):
        return np.zeros(np.shape(x)[:-1] + (self.N, self.n, self.n))


class Aronsson(AnalyticSolution):
    """``u(x, y) = x^{4/3} - y^{4/3}``: C^{1,1/3}, hessian singular on the axes."""

    id = "aronsson"
    solution_class = "infinity_harmonic"
    singular_set = "hessian blows up on the coordinate axes"

    def __init__(self):
        super().__init__(2, 1)

    def value(self, x):
        x = np.asarray(x, float)
        return (np.abs(x[..., 0]) ** (4 / 3) - np.abs(x[..., 1]) ** (4 / 3))[..., None]

    def gradient(self, x):
        x = np.asarray(x, float)
        g = np.stack([4 / 3 * np.cbrt(x[..., 0]), -4 / 3 * np.cbrt(x[..., 1])], axis=-1)
        return g[..., None, :]

    def hessian(self, x):
        x = np.asarray(x, float)
        H = np.zeros(x.shape[:-1] + (1, 2, 2))
        with np.errstate(divide="ignore"):
            H[..., 0, 0, 0] = 4 / 9 * np.abs(x[..., 0]) ** (-2 / 3)
            H[..., 0, 1, 1] = -4 / 9 * np.abs(x[..., 1]) ** (-2 / 3)
        return H

    def hessian_singular(self, x):
        x = np.asarray(x, float)
        return (x[..., 0] == 0) | (x[..., 1] == 0)


class RadialPHarmonic(AnalyticSolution):
    """Fundamental radial solution: ``|x|^k`` with ``k = (p-n)/(p-1)``, or ``log|x|`` when ``p = n``."""

    id = "radial"
    singular_set = "origin"

    def __init__(self, p: float = 4.0, n: int = 2):
        super().__init__(n, 1, p=float(p), n=int(n))
        self.p = float(p)
        self.solution_class = f"p_harmonic({self.p:g})"
        self.log = np.isclose(self.p, n)
        self.k = 0.0 if self.log else (self.p - n) / (self.p - 1.0)

    def value(self, x):
        r = np.linalg.norm(np.asarray(x, float), axis=-1)
        with np.errstate(divide="ignore"):
            v = np.log(r) if self.log else r**self.k
        return v[..., None]

    def gradient(self, x):
        x = np.asarray(x, float)
        r = np.linalg.norm(x, axis=-1)[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            g = x / r**2 if self.log else self.k * r ** (self.k - 2) * x
        return g[..., None, :]

    def hessian(self, x):
        x = np.asarray(x, float)
        r = np.linalg.norm(x, axis=-1)[..., None, None]
        eye = np.eye(self.n)
        with np.errstate(divide="ignore", invalid="ignore"):
            xx = x[..., :, None] * x[..., None, :] / r**2
            if self.log:
                H = (eye - 2 * xx) / r**2
            else:
                H = self.k * r ** (self.k - 2) * (eye + (self.k - 2) * xx)
        return H[..., None, :, :]

    def singular(self, x):
        return np.linalg.norm(np.asarray(x, float), axis=-1) == 0


class HarmonicPolynomial(AnalyticSolution):
    """``u = Re (x + i y)^m`` in the plane (``m = 2`` gives ``x^2 - y^2``)."""

    id = "harmonic_poly"
    solution_class = "harmonic"

    def __init__(self, m: int = 2):
        super().__init__(2, 1, m=int(m))
        self.m = int(m)

    def _z(self, x):
        x = np.asarray(x, float)
        return x[..., 0] + 1j * x[..., 1]

    def value(self, x):
        return np.real(self._z(x) ** self.m)[..., None]

    def gradient(self, x):
        w = self.m * self._z(x) ** (self.m - 1)
        return np.stack([w.real, -w.imag], axis=-1)[..., None, :]

    def hessian(self, x):
        m = self.m
        w = m * (m - 1) * self._z(x) ** (m - 2) if m >= 2 else np.zeros_like(self._z(x))
        H = np.empty(w.shape + (1, 2, 2))
        H[..., 0, 0, 0] = w.real
        H[..., 0, 0, 1] = H[..., 0, 1, 0] = -w.imag
        H[..., 0, 1, 1] = -w.real
        return H


class ExpSine(AnalyticSolution):
    """``u = exp(x) sin(y)``, a non-polynomial harmonic function."""

    id = "exp_sine"
    solution_class = "harmonic"

    def __init__(self):
        super().__init__(2, 1)

    def value(self, x):
        x = np.asarray(x, float)
        return (np.exp(x[..., 0]) * np.sin(x[..., 1]))[..., None]

    def gradient(self, x):
        x = np.asarray(x, float)
        e = np.exp(x[..., 0])
        return np.stack([e * np.sin(x[..., 1]), e * np.cos(x[..., 1])], axis=-1)[..., None, :]

    def hessian(self, x):
        x = np.asarray(x, float)
        e = np.exp(x[..., 0])
        s, c = e * np.sin(x[..., 1]), e * np.cos(x[..., 1])
        H = np.empty(x.shape[:-1] + (1, 2, 2))
        H[..., 0, 0, 0], H[..., 0, 1, 1] = s, -s
        H[..., 0, 0, 1] = H[..., 0, 1, 0] = c
        return H


class Quadratic(AnalyticSolution):
    """``u = |x|^2 / 2``; not infinity-harmonic (``Delta_inf u = |x|^2``)."""

    id = "quadratic"

    def __init__(self, n: int = 2):
        super().__init__(int(n), 1, n=int(n))

    def value(self, x):
        x = np.asarray(x, float)
        return 0.5 * np.sum(x * x, axis=-1)[..., None]

    def gradient(self, x):
        return np.asarray(x, float)[..., None, :].copy()

    def hessian(self, x):
        return np.broadcast_to(np.eye(self.n), np.shape(x)[:-1] + (1, self.n, self.n)).copy()


class ComplexSquare(AnalyticSolution):
    """Vectorial map ``z^2 / 2 = ((x^2 - y^2)/2, x y)``."""

    id = "complex_square"

    def __init__(self):
        super().__init__(2, 2)

    def value(self, x):
        x = np.asarray(x, float)
        return np.stack([(x[..., 0] ** 2 - x[..., 1] ** 2) / 2, x[..., 0] * x[..., 1]], axis=-1)

    def gradient(self, x):
        x = np.asarray(x, float)
        a, b = x[..., 0], x[..., 1]
        return np.stack([np.stack([a, -b], -1), np.stack([b, a], -1)], axis=-2)

    def hessian(self, x):
        H = np.zeros(np.shape(x)[:-1] + (2, 2, 2))
        H[..., 0, 0, 0], H[..., 0, 1, 1] = 1.0, -1.0
        H[..., 1, 0, 1] = H[..., 1, 1, 0] = 1.0
        return H


class Embedded(AnalyticSolution):
    """Scalar member placed in the first component: ``u = (f, 0, ..., 0)``."""

    id = "embedded"

    def __init__(self, base: AnalyticSolution | str = "aronsson", N: int = 2, **base_params):
        base = make_solution(base, **base_params) if isinstance(base, str) else base
        if base.N != 1:
            raise ValueError("embedded base must be scalar")
        super().__init__(base.n, int(N), base=base.id, N=int(N), **base.params)
        self.base = base
        self.solution_class = base.solution_class
        self.singular_set = base.singular_set

    def _pad(self, arr, axis_len_after):
        pad = np.zeros(arr.shape[:-1 - axis_len_after] + (self.N - 1,) + arr.shape[arr.ndim - axis_len_after:])
        return np.concatenate([arr, pad], axis=arr.ndim - 1 - axis_len_after)

    def value(self, x):
        return self._pad(self.base.value(x), 0)

    def gradient(self, x):
        return self._pad(self.base.gradient(x), 1)

    def hessian(self, x):
        return self._pad(self.base.hessian(x), 2)

    def singular(self, x):
        return self.base.singular(x)

    def hessian_singular(self, x):
        return self.base.hessian_singular(x)


def _bump_profile(s):
    """``phi(s) = exp(1 - 1/(1-s))`` for ``s = |z|^2 < 1`` and its first two s-derivatives."""
    s = np.asarray(s, float)
    inside = s < 1.0
    q = np.where(inside, 1.0 - s, 1.0)
    phi = np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)
    d1 = np.where(inside, -phi / q**2, 0.0)
    d2 = np.where(inside, phi / q**4 - 2.0 * phi / q**3, 0.0)
    return phi, d1, d2


def bump(x, center, radius: float) -> np.ndarray:
    """Smooth bump equal to 1 at ``center`` and exactly 0 outside the ball."""
    z = (np.asarray(x, float) - np.asarray(center, float)) / radius
    return _bump_profile(np.sum(z * z, axis=-1))[0]


class Perturbed(AnalyticSolution):
    """``u + amplitude * bump`` added to every component (or one of them)."""

    id = "perturbed"

    def __init__(self, base: AnalyticSolution | str, center, radius: float, amplitude: float,
                 component: int | None = None, **base_params):
        base = make_solution(base, **base_params) if isinstance(base, str) else base
        super().__init__(base.n, base.N, base=base.id, center=list(map(float, center)),
                         radius=float(radius), amplitude=float(amplitude), component=component)
        self.base = base
        self.center = np.asarray(center, float)
        self.radius = float(radius)
        self.amplitude = float(amplitude)
        self.component = component
        self.singular_set = base.singular_set

    def _weights(self):
        w = np.ones(self.N)
        if self.component is not None:
            w = np.zeros(self.N)
            w[self.component] = 1.0
        return self.amplitude * w

    def _parts(self, x):
        z = (np.asarray(x, float) - self.center) / self.radius
        return z, _bump_profile(np.sum(z * z, axis=-1))

    def value(self, x):
        _, (phi, _, _) = self._parts(x)
        return self.base.value(x) + phi[..., None] * self._weights()

    def gradient(self, x):
        z, (_, d1, _) = self._parts(x)
        dphi = (2.0 * d1[..., None] * z) / self.radius
        return self.base.gradient(x) + self._weights()[:, None] * dphi[..., None, :]

    def hessian(self, x):
        z, (_, d1, d2) = self._parts(x)
        zz = z[..., :, None] * z[..., None, :]
        ddphi = (4.0 * d2[..., None, None] * zz + 2.0 * d1[..., None, None] * np.eye(self.n)) / self.radius**2
        return self.base.hessian(x) + self._weights()[:, None, None] * ddphi[..., None, :, :]

    def singular(self, x):
        return self.base.singular(x)

    def hessian_singular(self, x):
        return self.base.hessian_singular(x)


_REGISTRY = {
    cls.id: cls
    for cls in (Linear, Aronsson, RadialPHarmonic, HarmonicPolynomial, ExpSine,
                Quadratic, ComplexSquare, Embedded, Perturbed)
}


def make_solution(id: str, **params) -> AnalyticSolution:
    """Instantiate a registered corpus member by id."""
    try:
        cls = _REGISTRY[id]
    except KeyError:
        raise KeyError(f"unknown corpus member {id!r}; known: {sorted(_REGISTRY)}") from None
    return cls(**params)


def corpus() -> list[AnalyticSolution]:
    """Default instances of every corpus member."""
    return [
        Linear(a=[[1.0, 0.0]]),
        Linear(a=[[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]], b=[1.0, 0.0, -2.0]),
        Aronsson(),
        RadialPHarmonic(p=4.0, n=2),
        RadialPHarmonic(p=2.0, n=2),
        RadialPHarmonic(p=3.0, n=3),
        HarmonicPolynomial(2),
        HarmonicPolynomial(3),
        ExpSine(),
        Quadratic(2),
        ComplexSquare(),
        Embedded("aronsson", N=2),
        Perturbed(Aronsson(), center=(1.5, 1.5), radius=0.15, amplitude=0.1),
    ]


def cross_validate(sol: AnalyticSolution, points, spacings) -> dict:
    """Compare closed-form derivatives with centered differences of ``value``.

    Returns max errors per spacing and the observed orders between
    consecutive spacings, for gradient and hessian.
    """
    points = np.atleast_2d(np.asarray(points, float))
    g_exact, H_exact = sol.gradient(points), sol.hessian(points)
    g_err, h_err = [], []
    eye = np.eye(sol.n)
    for h in spacings:
        g = np.empty_like(g_exact)
        H = np.empty_like(H_exact)
        f0 = sol.value(points)
        for i in range(sol.n):
            fp, fm = sol.value(points + h * eye[i]), sol.value(points - h * eye[i])
            g[..., i] = (fp - fm) / (2 * h)
            H[..., i, i] = (fp - 2 * f0 + fm) / h**2
            for j in range(i + 1, sol.n):
                e = h * (eye[i] + eye[j])
                f = h * (eye[i] - eye[j])
                v = (sol.value(points + e) - sol.value(points + f)
                     - sol.value(points - f) + sol.value(points - e)) / (4 * h * h)
                H[..., i, j] = H[..., j, i] = v
        g_err.append(float(np.max(np.abs(g - g_exact))))
        h_err.append(float(np.max(np.abs(H - H_exact))))

    def orders(err):
        return [float(np.log(err[k] / err[k + 1]) / np.log(spacings[k] / spacings[k + 1]))
                if err[k + 1] > 0 and err[k] > 0 else float("inf")
                for k in range(len(err) - 1)]

    return {"gradient_error": g_err, "hessian_error": h_err,
            "gradient_order": orders(g_err), "hessian_order": orders(h_err)}


def perturb(u: AnalyticSolution | GridMap, center, radius: float, amplitude: float,
            domain: GridDomain | None = None, component: int | None = None) -> GridMap:
    """Add ``amplitude * bump`` to ``u``.

    Values outside the bump support are returned bit-for-bit unchanged. When
    ``u`` is analytic the result keeps an analytic source so exact
    derivatives stay available.
    """
    if isinstance(u, AnalyticSolution):
        if domain is None:
            raise ValueError("domain is required to perturb an analytic solution")
        base = sample_analytic(u, domain)
    else:
        base, domain = u, u.domain
    center = np.asarray(center, float)
    if center.shape != (domain.n,) or radius <= 0:
        raise SupportViolationError("bump center/radius malformed")
    if np.any(center - radius < domain.lower) or np.any(center + radius > domain.upper):
        raise SupportViolationError("bump support leaves the domain")
    if amplitude == 0:
        return base
    phi = bump(domain.points, center, radius)
    w = np.ones(base.N) if component is None else np.eye(base.N)[component]
    inside = (phi > 0)[..., None] & (w > 0)
    vals = np.where(inside, base.values + amplitude * phi[..., None] * w, base.values)
    source = None
    if base.source is not None:
        source = Perturbed(base.source, center, radius, amplitude, component=component)
    return GridMap(domain, vals, source=source)
