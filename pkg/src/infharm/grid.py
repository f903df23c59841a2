"""Regular grids, gridded maps and finite-difference derivatives.

A map ``u : Omega -> R^N`` on an ``n``-dimensional box is stored as an array
of shape ``(*resolution, N)`` in ``ij`` (row-major) order, so the flat node
index of a multi-index ``k`` is ``numpy.ravel_multi_index(k, resolution)``.
Derivative fields carry the derivative slots last:

* gradient field: ``(*resolution, N, n)`` with ``G[..., a, i] = D_i u_a``
* hessian field:  ``(*resolution, N, n, n)`` with ``H[..., a, i, j] = D_ij u_a``
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np
from .errors import (
    EmptySubdomainError,
    InvalidDomainError,
    SingularityError,
    StencilError,
    StepError,
    SubdomainError,
)

__all__ = [
    "GridDomain",
    "SubdomainSpec",
    "GridMap",
    "Jet",
    "build_domain",
    "sample_analytic",
    "gradient_field",
    "hessian_field",
    "difference_quotient",
    "restrict",
    "DEFAULT_BLOWUP",
]

DEFAULT_BLOWUP = 1.0e6
# hessian stencils reach at most three nodes inward; 64 bounds their coefficient sums
_ROUNDOFF_FACTOR = 64.0


@dataclass(frozen=True)
class GridDomain:
    """Tensor-product grid on the box ``prod_i [a_i, b_i]``."""

    bounds: tuple[tuple[float, float], ...]
    resolution: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.resolution)

    @property
    def spacing(self) -> np.ndarray:
        lo, hi = self.lower, self.upper
        return (hi - lo) / (np.asarray(self.resolution, dtype=float) - 1.0)

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds], dtype=float)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.resolution)

    def axis_coordinates(self, axis: int) -> np.ndarray:
        k = np.arange(self.resolution[axis], dtype=float)
        return self.bounds[axis][0] + k * self.spacing[axis]

    def coordinates(self, flat) -> np.ndarray:
        """Coordinates ``x_i = a_i + k_i h_i`` of nodes given by flat index."""
        return self.lower + self.multi_index(flat) * self.spacing

    @cached_property
    def points(self) -> np.ndarray:
        """All node coordinates, shape ``(*resolution, n)``."""
        axes = [self.axis_coordinates(i) for i in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def flat_points(self) -> np.ndarray:
        return self.points.reshape(-1, self.n)

    def multi_index(self, flat) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(flat), self.shape), axis=-1)

    def flat_index(self, multi) -> np.ndarray:
        multi = np.asarray(multi)
        return np.ravel_multi_index(tuple(multi.T), self.shape)

    def nearest_node(self, x) -> int:
        k = np.rint((np.asarray(x, dtype=float) - self.lower) / self.spacing).astype(int)
        k = np.clip(k, 0, np.asarray(self.resolution) - 1)
        return int(np.ravel_multi_index(tuple(k), self.shape))

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for axis in range(self.n):
            sl = [slice(None)] * self.n
            sl[axis] = 0
            mask[tuple(sl)] = True
            sl[axis] = -1
            mask[tuple(sl)] = True
        return mask

    def interior_band(self, width: float) -> np.ndarray:
        """Boolean mask of nodes at distance >= ``width`` from the boundary."""
        pts = self.points
        d = np.minimum(pts - self.lower, self.upper - pts).min(axis=-1)
        return d >= width - 1e-12 * float(self.spacing.max())

    def contains(self, x, closed: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        tol = 1e-12 * float(self.spacing.max())
        if closed:
            return np.all((x >= self.lower - tol) & (x <= self.upper + tol), axis=-1)
        return np.all((x > self.lower) & (x < self.upper), axis=-1)

    def to_dict(self) -> dict:
        return {"bounds": [list(b) for b in self.bounds], "resolution": list(self.resolution)}


def build_domain(bounds, resolution) -> GridDomain:
    """Validate and build a :class:`GridDomain`.

    ``bounds`` is a sequence of ``(a_i, b_i)`` pairs; ``resolution`` the node
    count per axis (an int is broadcast to every axis).
    """
    try:
        bounds = tuple((float(a), float(b)) for a, b in bounds)
    except (TypeError, ValueError) as exc:
        raise InvalidDomainError(f"malformed bounds {bounds!r}") from exc
    n = len(bounds)
    if not 1 <= n <= 3:
        raise InvalidDomainError(f"dimension {n} not supported (1 <= n <= 3)")
    if np.isscalar(resolution):
        resolution = (resolution,) * n
    resolution = tuple(int(r) for r in resolution)
    if len(resolution) != n:
        raise InvalidDomainError("bounds and resolution disagree in dimension")
    for (a, b), r in zip(bounds, resolution):
        if not (np.isfinite(a) and np.isfinite(b)) or not a < b:
            raise InvalidDomainError(f"degenerate bounds ({a}, {b})")
        if r < 2:
            raise InvalidDomainError(f"resolution {r} < 2")
    return GridDomain(bounds, resolution)


@dataclass(frozen=True)
class SubdomainSpec:
    """Closed box or ball ``Omega'`` that must sit inside the open grid domain.

    ``extent`` holds half-widths for a box and a single radius for a ball.
    """

    kind: str
    center: tuple[float, ...]
    extent: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("box", "ball"):
            raise SubdomainError(f"unknown subdomain kind {self.kind!r}")
        object.__setattr__(self, "center", tuple(float(c) for c in np.ravel(self.center)))
        object.__setattr__(self, "extent", tuple(float(e) for e in np.ravel(self.extent)))
        if any(e < 0 for e in self.extent):
            raise SubdomainError("negative extent")

    @classmethod
    def box(cls, lower, upper) -> "SubdomainSpec":
        lower, upper = np.asarray(lower, float), np.asarray(upper, float)
        return cls("box", tuple((lower + upper) / 2), tuple((upper - lower) / 2))

    @classmethod
    def ball(cls, center, radius: float) -> "SubdomainSpec":
        return cls("ball", tuple(np.ravel(center)), (float(radius),))

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center) - self._halfwidths()

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.center) + self._halfwidths()

    def _halfwidths(self) -> np.ndarray:
        if self.kind == "ball":
            return np.full(len(self.center), self.extent[0])
        return np.asarray(self.extent)

    def margin(self, domain: GridDomain) -> float:
        """Distance from the closed subdomain to the boundary of ``domain``."""
        if len(self.center) != domain.n:
            raise SubdomainError("subdomain dimension does not match the domain")
        lo = self.lower - domain.lower
        hi = domain.upper - self.upper
        return float(min(lo.min(), hi.min()))

    def mask(self, domain: GridDomain) -> np.ndarray:
        pts = domain.points
        tol = 1e-9 * float(domain.spacing.min())
        c = np.asarray(self.center)
        if self.kind == "box":
            return np.all(np.abs(pts - c) <= np.asarray(self.extent) + tol, axis=-1)
        return np.linalg.norm(pts - c, axis=-1) <= self.extent[0] + tol

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": list(self.center), "extent": list(self.extent)}

    @classmethod
    def from_dict(cls, d: dict) -> "SubdomainSpec":
        if "lower" in d:
            return cls.box(d["lower"], d["upper"])
        return cls(d["kind"], tuple(d["center"]), tuple(np.ravel(d["extent"])))


@dataclass(frozen=True, eq=False)
class GridMap:
    """Sampled map ``u : Omega -> R^N``.

    ``source`` optionally records the analytic object the values were sampled
    from; the diffuse-hessian pipeline uses it to evaluate gradients off-grid
    and the hessian mask uses its declared singular set.
    """

    domain: GridDomain
    values: np.ndarray
    source: Any = field(default=None, repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape == self.domain.shape:
            vals = vals[..., None]
        if vals.shape[:-1] != self.domain.shape:
            raise InvalidDomainError(
                f"value array of shape {vals.shape} does not match resolution {self.domain.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise SingularityError("grid map contains non-finite values")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def N(self) -> int:
        return self.values.shape[-1]

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def flat_values(self) -> np.ndarray:
        return self.values.reshape(-1, self.N)

    @cached_property
    def grad(self) -> np.ndarray:
        """Cached :func:`gradient_field`."""
        g = gradient_field(self)
        g.setflags(write=False)
        return g

    def flat_grad(self) -> np.ndarray:
        return self.grad.reshape(-1, self.N, self.n)

    def with_values(self, values, source=None) -> "GridMap":
        return GridMap(self.domain, values, source)


@dataclass(frozen=True)
class Jet:
    """First and second derivative data at one point.

    The hessian is stored symmetrized in its last two indices.
    """

    point: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray
    hessian_valid: bool = True

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.gradient, dtype=float))
        h = np.asarray(self.hessian, dtype=float)
        if h.ndim == 2:
            h = h[None]
        if h.shape != g.shape + (g.shape[1],):
            raise ValueError(f"hessian shape {h.shape} incompatible with gradient {g.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient in jet")
        h = 0.5 * (h + np.swapaxes(h, -1, -2))
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        object.__setattr__(self, "gradient", g)
        object.__setattr__(self, "hessian", h)

    @property
    def N(self) -> int:
        return self.gradient.shape[0]

    @property
    def n(self) -> int:
        return self.gradient.shape[1]


def sample_analytic(descriptor, domain: GridDomain, acknowledge_singular: bool = False,
                    **params) -> GridMap:
    """Evaluate an analytic solution at every node of ``domain``.

    ``descriptor`` is either an analytic solution object or a registered
    corpus id (extra keyword arguments are forwarded as parameters).
    """
    from .solutions import AnalyticSolution, make_solution

    sol = descriptor if isinstance(descriptor, AnalyticSolution) else make_solution(descriptor, **params)
    if sol.n != domain.n:
        raise InvalidDomainError(f"solution {sol.id!r} has n={sol.n}, domain has n={domain.n}")
    pts = domain.points
    bad = sol.singular(pts)
    if np.any(bad) and not acknowledge_singular:
        where = pts[bad][0]
        raise SingularityError(f"{sol.id}: node {where.tolist()} lies on the declared singular set")
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = sol.value(pts)
    if not np.all(np.isfinite(vals)):
        raise SingularityError(f"{sol.id}: non-finite value on the declared singular set")
    return GridMap(domain, vals, source=sol)


def _check_stencil(domain: GridDomain, need: int = 3):
    if min(domain.resolution) < need:
        raise StencilError(f"resolution {domain.resolution} too small: need >= {need} per axis")


def gradient_field(u: GridMap) -> np.ndarray:
    """Second-order accurate gradient, shape ``(*resolution, N, n)``.

    Central differences in the interior, second-order one-sided stencils on
    the boundary (``numpy.gradient`` with ``edge_order=2``).
    """
    _check_stencil(u.domain)
    h = u.domain.spacing
    parts = np.gradient(u.values, *h, axis=tuple(range(u.n)), edge_order=2)
    if u.n == 1:
        parts = [parts]
    return np.stack(parts, axis=-1)


def _second_difference(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    f = np.moveaxis(f, axis, 0)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / h**2
    if f.shape[0] >= 4:
        out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h**2
        out[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / h**2
    else:
        # three nodes: the only available stencil; exact for quadratics
        out[0] = out[-1] = out[1]
    return np.moveaxis(out, 0, axis)


def hessian_field(u: GridMap, blowup: float = DEFAULT_BLOWUP) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference hessian and validity mask.

    Returns
    -------
    hessian : ndarray, shape ``(*resolution, N, n, n)``
        Central second differences on the diagonal, nested second-order
        first differences for mixed partials, symmetrized exactly.
    valid : ndarray of bool, shape ``resolution``
        False where any component exceeds ``blowup`` in magnitude, or where
        the node lies on the declared hessian-singular set of ``u.source``.

    Notes
    -----
    Entries below the rounding-error bound ``64 eps max|u_a| / (h_i h_j)``,
    with the max of each component taken over the whole grid, are set to
    zero; they carry no information and would otherwise leave roundoff of
    size ``eps |u| / h^2`` on affine data.
    """
    _check_stencil(u.domain)
    n, h = u.n, u.domain.spacing
    vals = u.values
    H = np.empty(u.domain.shape + (u.N, n, n))
    for i in range(n):
        H[..., i, i] = _second_difference(vals, h[i], i)
        for j in range(i + 1, n):
            dj = np.gradient(vals, h[j], axis=j, edge_order=2)
            dij = np.gradient(dj, h[i], axis=i, edge_order=2)
            di = np.gradient(vals, h[i], axis=i, edge_order=2)
            dji = np.gradient(di, h[j], axis=j, edge_order=2)
            H[..., i, j] = dij
            H[..., j, i] = dji
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    scale = np.abs(vals).reshape(-1, u.N).max(axis=0)
    floor = _ROUNDOFF_FACTOR * np.finfo(float).eps * scale[:, None, None] / np.multiply.outer(h, h)
    H[np.abs(H) <= floor] = 0.0
    valid = np.all(np.abs(H) <= blowup, axis=(-3, -2, -1))
    if u.source is not None and hasattr(u.source, "hessian_singular"):
        valid &= ~u.source.hessian_singular(u.domain.points)
    return H, valid


def difference_quotient(F: np.ndarray, domain: GridDomain, axis: int, step: float) -> np.ndarray:
    """Forward difference quotient ``(F(x + h e_axis) - F(x)) / h`` of a grid field.

    ``F`` has the grid shape as leading axes. Shifted points outside the
    domain take the value zero (zero extension off ``Omega``). ``step`` must
    be a nonzero integer multiple of the spacing along ``axis``.
    """
    hx = float(domain.spacing[axis])
    cells = step / hx
    k = int(round(cells))
    if step == 0 or k == 0 or abs(cells - k) > 1e-9 * max(1.0, abs(cells)):
        raise StepError(f"step {step} is not a nonzero multiple of the spacing {hx}")
    F = np.asarray(F, dtype=float)
    shifted = np.zeros_like(F)
    src = [slice(None)] * F.ndim
    dst = [slice(None)] * F.ndim
    if k > 0:
        src[axis], dst[axis] = slice(k, None), slice(None, -k)
    else:
        src[axis], dst[axis] = slice(None, k), slice(-k, None)
    shifted[tuple(dst)] = F[tuple(src)]
    return (shifted - F) / step


def restrict(u: GridMap | GridDomain, subdomain: SubdomainSpec) -> np.ndarray:
    """Sorted flat indices of the nodes inside the closed subdomain."""
    domain = u.domain if isinstance(u, GridMap) else u
    if subdomain.margin(domain) <= 0:
        raise SubdomainError(f"{subdomain} is not compactly contained in the grid domain")
    idx = np.flatnonzero(subdomain.mask(domain).ravel())
    if idx.size == 0:
        raise EmptySubdomainError(f"{subdomain} contains no grid node")
    return idx


def node_mask(domain: GridDomain, subdomain: SubdomainSpec | None) -> np.ndarray:
    """Flat indices for ``subdomain``, or every node when it is None."""
    if subdomain is None:
        return np.arange(domain.node_count)
    return restrict(domain, subdomain)
