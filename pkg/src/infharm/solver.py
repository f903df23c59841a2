"""Discrete p-Dirichlet energy minimization with fixed boundary values.

The energy is the exact integral of ``|Du|^p`` for the piecewise-linear
interpolant on simplices. Every grid cell is split along all ``2^n n!``
monotone vertex paths (each corner paired with each axis ordering); each
path is a simplex on which the gradient is a vector of edge differences.
Averaging over all of them keeps the stencil symmetric under reflections.
Minimization is by Newton or gradient steps with Armijo backtracking, so
the logged energy never increases.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError
from .grid import GridDomain, GridMap

__all__ = ["SolverConfig", "SolveResult", "p_harmonic_solve", "p_continuation", "p_energy",
           "coons_interpolant"]


@dataclass(frozen=True)
class SolverConfig:
    """Solver parameters.

    ``tol`` bounds the energy decrease of an accepted step and ``gtol`` the
    max-norm of the free gradient; either stops the iteration. ``reg_eps``
    regularizes ``|g|`` as ``sqrt(|g|^2 + eps^2)`` for ``p < 2`` only.
    """

    p: float = 2.0
    tol: float = 1e-14
    gtol: float = 1e-11
    max_iter: int = 200
    step_rule: str = "newton"
    reg_eps: float = 1e-8
    armijo: float = 1e-4
    max_backtracks: int = 60

    def __post_init__(self):
        if not (np.isfinite(self.p) and self.p > 1):
            raise ConfigError(f"p must be finite and > 1, got {self.p}")
        if not (self.tol > 0 and self.gtol > 0):
            raise ConfigError("tolerances must be positive")
        if self.step_rule not in ("newton", "gradient"):
            raise ConfigError(f"unknown step rule {self.step_rule!r}")
        if self.max_iter < 0:
            raise ConfigError("max_iter must be nonnegative")


@dataclass(frozen=True, eq=False)
class SolveResult:
    u: GridMap
    energies: list
    converged: bool
    iterations: int
    regularization: float | None
    message: str
    steps: list = field(default_factory=list)

    def log(self) -> dict:
        return {"energies": list(self.energies), "converged": self.converged,
                "iterations": self.iterations, "regularization": self.regularization,
                "message": self.message, "steps": list(self.steps)}


def _simplex_operator(domain: GridDomain):
    """Sparse map from nodal values to simplex gradients, and the simplex volume."""
    n, h, shape = domain.n, domain.spacing, domain.shape
    cells = np.stack(np.meshgrid(*[np.arange(r - 1) for r in shape], indexing="ij"), -1).reshape(-1, n)
    rows, cols, vals = [], [], []
    row = 0
    for corner in itertools.product((0, 1), repeat=n):
        corner = np.asarray(corner)
        direction = 1 - 2 * corner
        for perm in itertools.permutations(range(n)):
            v = cells + corner
            for axis in perm:
                w = v.copy()
                w[:, axis] += direction[axis]
                r = row + np.arange(len(cells)) * n + axis
                scale = direction[axis] / h[axis]
                rows += [r, r]
                cols += [np.ravel_multi_index(tuple(w.T), shape), np.ravel_multi_index(tuple(v.T), shape)]
                vals += [np.full(len(cells), scale), np.full(len(cells), -scale)]
                v = w
            row += len(cells) * n
    G = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(row, domain.node_count))
    volume = float(np.prod(h)) / (math.factorial(n) * 2**n)
    return G, volume


def _energy_terms(g: np.ndarray, p: float, eps: float):
    """Per-simplex density, its gradient weight and the hessian blocks."""
    sq = np.sum(g * g, axis=1)
    r2 = sq + eps * eps
    dens = r2 ** (p / 2)
    a = p * r2 ** (p / 2 - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.where(r2 > 0, p * (p - 2) * r2 ** (p / 2 - 2), 0.0)
    return dens, a, b


def p_energy(u: GridMap, p: float, reg_eps: float = 0.0) -> float:
    """Piecewise-linear ``int |Du|^p`` over the whole grid."""
    G, vol = _simplex_operator(u.domain)
    g = (G @ u.values[..., 0].ravel()).reshape(-1, u.n)
    return float(vol * np.sum(_energy_terms(g, p, reg_eps)[0]))


def coons_interpolant(values: np.ndarray) -> np.ndarray:
    """Transfinite (boolean-sum multilinear) interpolation of face values into the box.

    Only entries on the boundary faces of ``values`` are read.
    """
    f = np.asarray(values, dtype=float)
    n = f.ndim
    t = [np.linspace(0.0, 1.0, s) for s in f.shape]

    def project(arr, axes):
        for axis in axes:
            lo = np.take(arr, [0], axis=axis)
            hi = np.take(arr, [-1], axis=axis)
            shape = [1] * n
            shape[axis] = -1
            s = t[axis].reshape(shape)
            arr = (1 - s) * lo + s * hi
        return arr

    out = np.zeros_like(f)
    for k in range(1, n + 1):
        for axes in itertools.combinations(range(n), k):
            out = out + (-1) ** (k + 1) * np.broadcast_to(project(f, axes), f.shape)
    return out


def p_harmonic_solve(domain: GridDomain, boundary, config: SolverConfig | None = None,
                     free_mask=None, initial=None) -> SolveResult:
    """Minimize the p-energy with values fixed off ``free_mask``.

    Parameters
    ----------
    domain : GridDomain
    boundary : GridMap or analytic solution
        Scalar data; only values at fixed nodes are used.
    config : SolverConfig
    free_mask : array of bool, optional
        Free nodes; defaults to every non-boundary node.
    initial : GridMap, optional
        Starting values for free nodes; defaults to the transfinite
        interpolant of the boundary faces.

    Returns
    -------
    SolveResult
        ``converged`` is False when ``max_iter`` was reached first.
    """
    cfg = config or SolverConfig()
    if not isinstance(boundary, GridMap):
        from .grid import sample_analytic
        boundary = sample_analytic(boundary, domain, acknowledge_singular=free_mask is not None)
    if boundary.N != 1:
        raise ConfigError("the solver handles scalar maps only")
    if boundary.domain != domain:
        raise ConfigError("boundary data lives on a different grid")
    data = boundary.values[..., 0]
    free = ~domain.boundary_mask() if free_mask is None else np.asarray(free_mask, bool) & ~domain.boundary_mask()
    if initial is not None:
        x = np.array(initial.values[..., 0], dtype=float)
    else:
        x = coons_interpolant(data)
    x = np.where(free, x, data).ravel()
    free = free.ravel()
    fidx = np.flatnonzero(free)

    p = float(cfg.p)
    eps = cfg.reg_eps if p < 2 else 0.0
    G, vol = _simplex_operator(domain)
    n = domain.n
    Gf = G[:, fidx].tocsc()
    lap = (Gf.T @ Gf).tocsc()
    lap = lap / abs(lap.diagonal()).max()

    def evaluate(vec):
        g = (G @ vec).reshape(-1, n)
        dens, a, b = _energy_terms(g, p, eps)
        return vol * dens.sum(), g, a, b

    E, g, a, b = evaluate(x)
    energies, steps = [float(E)], []
    converged, message, it = False, "max_iter reached", 0
    for it in range(1, cfg.max_iter + 1):
        flux = (vol * a[:, None] * g).ravel()
        grad = Gf.T @ flux
        if np.max(np.abs(grad), initial=0.0) <= cfg.gtol:
            converged, message, it = True, "gradient tolerance", it - 1
            break
        direction, rule = None, "gradient"
        if cfg.step_rule == "newton":
            blocks = vol * (a[:, None, None] * np.eye(n) + b[:, None, None] * g[:, :, None] * g[:, None, :])
            Hf = (Gf.T @ _block_diag(blocks) @ Gf).tocsc()
            # tiny Laplacian shift keeps the system nonsingular where Du = 0 and p > 2
            shift = 1e-12 * max(abs(Hf.diagonal()).max(), 1e-300)
            try:
                d = spla.spsolve(Hf + shift * lap, -grad)
                if np.all(np.isfinite(d)) and grad @ d < 0:
                    direction, rule = d, "newton"
            except RuntimeError:
                pass
        if direction is None:
            direction = -grad / max(1.0, float(np.linalg.norm(grad)))
        slope = float(grad @ direction)
        t, accepted = 1.0, False
        for _ in range(cfg.max_backtracks):
            trial = x.copy()
            trial[fidx] += t * direction
            E_new, g_new, a_new, b_new = evaluate(trial)
            if E_new <= E + cfg.armijo * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted or E_new > E:
            converged, message = True, "no further decrease"
            it -= 1
            break
        decrease = E - E_new
        x, E, g, a, b = trial, E_new, g_new, a_new, b_new
        energies.append(float(E))
        steps.append({"rule": rule, "t": t})
        if decrease < cfg.tol:
            converged, message = True, "energy tolerance"
            break
    u = GridMap(domain, x.reshape(domain.shape))
    return SolveResult(u, energies, converged, it, eps if eps > 0 else None, message, steps)


def _block_diag(blocks: np.ndarray) -> sp.csr_matrix:
    m, n, _ = blocks.shape
    r = (np.arange(m)[:, None, None] * n + np.arange(n)[None, :, None]).repeat(n, axis=2)
    c = (np.arange(m)[:, None, None] * n + np.arange(n)[None, None, :]).repeat(n, axis=1)
    return sp.csr_matrix((blocks.ravel(), (r.ravel(), c.ravel())), shape=(m * n, m * n))


def p_continuation(domain: GridDomain, boundary, p_list, config: SolverConfig | None = None,
                   free_mask=None) -> list[SolveResult]:
    """Solve for each ``p`` in increasing order, warm-starting from the previous output.

    Diagnostic only: no convergence in ``p`` is claimed.
    """
    p_list = list(p_list)
    if any(b <= a for a, b in zip(p_list, p_list[1:])):
        raise ConfigError("p_list must be increasing")
    base = config or SolverConfig()
    out, prev = [], None
    for p in p_list:
        cfg = SolverConfig(**{**base.__dict__, "p": float(p)})
        res = p_harmonic_solve(domain, boundary, cfg, free_mask, initial=prev)
        out.append(res)
        prev = res.u
    return out
