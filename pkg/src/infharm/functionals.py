"""Supremal and integral gradient energies, argmax sets and variation profiles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SubdomainError
from .grid import GridMap, SubdomainSpec, node_mask

__all__ = [
    "AffineMap",
    "ArgmaxSet",
    "VariationProfile",
    "DEFAULT_ARGMAX_TOL",
    "default_t_grid",
    "grad_sq",
    "sup_energy",
    "integral_energy",
    "argmax_set",
    "sublevel_neighborhood",
    "variation_profile",
]

DEFAULT_ARGMAX_TOL = 1e-6
_SUBLEVEL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``A(z) = b + G (z - x0)`` with ``G`` of shape ``(N, n)``.

    ``provenance`` records how a family member was generated (family tag,
    sign, ``xi``, anchor node, hessian candidate); it is empty for maps
    built by hand.
    """

    base_point: np.ndarray
    offset: np.ndarray
    gradient: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.gradient, dtype=float))
        b = np.atleast_1d(np.asarray(self.offset, dtype=float))
        x0 = np.atleast_1d(np.asarray(self.base_point, dtype=float))
        if G.shape != (b.size, x0.size):
            raise ValueError(f"gradient {G.shape} incompatible with offset {b.shape} and base point {x0.shape}")
        object.__setattr__(self, "gradient", G)
        object.__setattr__(self, "offset", b)
        object.__setattr__(self, "base_point", x0)

    @classmethod
    def constant(cls, value, n: int, provenance: dict | None = None) -> "AffineMap":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.zeros(n), value, np.zeros((value.size, n)), dict(provenance or {}))

    @property
    def is_constant(self) -> bool:
        return not np.any(self.gradient)

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.offset + (z - self.base_point) @ self.gradient.T

    def scaled(self, lam: float) -> "AffineMap":
        """``lam * A``; ``xi`` in the provenance is rescaled accordingly."""
        prov = dict(self.provenance)
        if "xi" in prov and prov["xi"] is not None:
            prov["xi"] = (np.asarray(prov["xi"], float) * lam).tolist()
        return AffineMap(self.base_point, lam * self.offset, lam * self.gradient, prov)

    def to_dict(self) -> dict:
        return {
            "base_point": self.base_point.tolist(),
            "offset": self.offset.tolist(),
            "gradient": self.gradient.tolist(),
            "provenance": _plain(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AffineMap":
        G = np.atleast_2d(np.asarray(d["gradient"], dtype=float))
        N, n = G.shape
        return cls(d.get("base_point", np.zeros(n)), d.get("offset", np.zeros(N)), G,
                   dict(d.get("provenance", {})))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass(frozen=True, eq=False)
class ArgmaxSet:
    """Nodes of the closed subdomain where ``|Du|`` is within ``rel_tol`` of its max.

    ``sup_value`` is the max of ``|Du|`` (not squared). Boundary nodes of the
    subdomain are included.
    """

    subdomain: SubdomainSpec | None
    sup_value: float
    nodes: np.ndarray
    rel_tol: float


@dataclass(frozen=True, eq=False)
class VariationProfile:
    """``h(t) = max|Du + t DA|^2 - max|Du|^2`` sampled on ``t_grid``."""

    t_grid: np.ndarray
    values: np.ndarray
    dini_lower: float
    argmax_nodes: np.ndarray

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.t_grid)

    @property
    def convexity_margin(self) -> float:
        """Smallest increment of consecutive divided slopes (>= 0 for convex data)."""
        s = self.slopes
        return float(np.min(np.diff(s))) if s.size > 1 else 0.0

    @property
    def dini_margin(self) -> float:
        """``min_k h(t_k) - dini_lower * t_k``."""
        return float(np.min(self.values - self.dini_lower * self.t_grid))

    def summary(self) -> dict:
        return {
            "dini_lower": self.dini_lower,
            "convexity_margin": self.convexity_margin,
            "dini_margin": self.dini_margin,
            "h0": float(self.values[0]),
            "argmax_nodes": self.argmax_nodes.tolist(),
        }


def default_t_grid() -> np.ndarray:
    return np.concatenate([[0.0], 2.0 ** np.arange(-20, 1)])


def grad_sq(u: GridMap) -> np.ndarray:
    """Flat array of ``|Du|^2`` (Frobenius norm squared) per node."""
    g = u.flat_grad()
    return np.einsum("kai,kai->k", g, g)


def sup_energy(u: GridMap, subdomain: SubdomainSpec | None = None) -> float:
    """``max |Du|^2`` over the nodes of the subdomain (whole grid when None)."""
    idx = node_mask(u.domain, subdomain)
    return float(np.max(grad_sq(u)[idx]))


def _trapezoid_weights(res: int, h: float) -> np.ndarray:
    w = np.full(res, h)
    w[0] = w[-1] = h / 2
    if res == 1:
        w[:] = 0.0
    return w


def integral_energy(u: GridMap, subdomain: SubdomainSpec | None = None, p: float = 2.0) -> float:
    """Trapezoidal integral of ``|Du|^p``.

    For a box the rule runs over the tensor sub-grid of nodes it contains; a
    ball uses the full-grid trapezoid weights masked to its nodes (first
    order at the curved edge).
    """
    if not p > 1:
        raise ConfigError(f"p must exceed 1, got {p}")
    dom = u.domain
    integrand = (grad_sq(u) ** (p / 2)).reshape(dom.shape)
    if subdomain is None or subdomain.kind == "box":
        idx = node_mask(dom, subdomain)
        multi = dom.multi_index(idx)
        lo, hi = multi.min(axis=0), multi.max(axis=0)
        sl = tuple(slice(a, b + 1) for a, b in zip(lo, hi))
        sub = integrand[sl]
        weights = [_trapezoid_weights(sub.shape[i], dom.spacing[i]) for i in range(dom.n)]
    else:
        idx = node_mask(dom, subdomain)
        sub = np.where(subdomain.mask(dom), integrand, 0.0)
        weights = [_trapezoid_weights(dom.shape[i], dom.spacing[i]) for i in range(dom.n)]
    W = weights[0]
    for w in weights[1:]:
        W = np.multiply.outer(W, w)
    return float(np.sum(W * sub))


def argmax_set(u: GridMap, subdomain: SubdomainSpec | None = None,
               rel_tol: float = DEFAULT_ARGMAX_TOL) -> ArgmaxSet:
    """Nodes where ``|Du| >= (1 - rel_tol) max |Du|`` over the subdomain."""
    idx = node_mask(u.domain, subdomain)
    norms = np.sqrt(grad_sq(u)[idx])
    top = float(norms.max())
    keep = idx[norms >= (1.0 - rel_tol) * top]
    return ArgmaxSet(subdomain, top, keep, float(rel_tol))


def sublevel_neighborhood(u: GridMap, x: int, eps: float) -> np.ndarray:
    """Nodes ``y`` with ``|Du(y)| < |Du(x)|`` and ``|y - x| < eps``.

    The strict inequality carries a relative tolerance of 1e-12 so that
    roundoff in constant-gradient maps does not create spurious members.
    """
    dom = u.domain
    xp = dom.coordinates(int(x))
    dist_to_boundary = float(np.min(np.minimum(xp - dom.lower, dom.upper - xp)))
    if not eps < dist_to_boundary:
        raise SubdomainError(f"eps={eps} reaches the boundary (distance {dist_to_boundary})")
    pts = dom.flat_points()
    norms = np.sqrt(grad_sq(u))
    near = np.linalg.norm(pts - xp, axis=1) < eps
    lower = norms < norms[int(x)] * (1.0 - _SUBLEVEL_TOL)
    return np.flatnonzero(near & lower)


def variation_profile(u: GridMap, A: AffineMap, subdomain: SubdomainSpec | None = None,
                      t_grid=None, rel_tol: float = 0.0) -> VariationProfile:
    """Sample ``h(t)`` and the lower bound ``max_{argmax} 2 Du : DA`` of its right Dini derivative.

    ``h`` is evaluated as ``max_y (|Du(y)|^2 - S + 2t Du(y):DA + t^2 |DA|^2)``
    with ``S = max |Du|^2``, so ``h(0) = 0`` holds exactly. The argmax used
    for the Dini bound defaults to the exact discrete maximizers.
    """
    t = default_t_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or t[0] != 0 or np.any(np.diff(t) <= 0):
        raise ConfigError("t_grid must start at 0 and increase strictly")
    idx = node_mask(u.domain, subdomain)
    g = u.flat_grad()[idx]
    G = A.gradient
    if G.shape != g.shape[1:]:
        raise ValueError(f"variation gradient {G.shape} does not match Du {g.shape[1:]}")
    sq = np.einsum("kai,kai->k", g, g)
    S = sq.max()
    base = sq - S
    dot = np.einsum("kai,ai->k", g, G)
    gg = float(np.sum(G * G))
    values = np.array([np.max(base + 2.0 * tk * dot + tk * tk * gg) for tk in t])
    values[0] = np.max(base)
    top = sq >= (1.0 - rel_tol) ** 2 * S
    dini = float(np.max(2.0 * dot[top]))
    return VariationProfile(t, values, dini, idx[top])
