"""Empirical diffuse hessians from difference quotients of the gradient.

At a node ``x`` and a step ``s`` the sample is the tensor
``T[a, i, j] = (D_j u_a(x + s_i e_i) - D_j u_a(x)) / s_i`` symmetrized in
``(i, j)``, where the gradient is extended by zero off the closed domain.
Samples whose Frobenius norm exceeds the blow-up threshold ``M`` are
recorded as mass at infinity.

Steps are given as multiples of the grid spacing ("cells"). When the map
carries an analytic source the gradient is evaluated in closed form, so any
positive multiple is allowed; otherwise the discrete gradient field is used
and only integer multiples are commensurate with the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import StepError
from .grid import DEFAULT_BLOWUP, GridMap
from .operators import DEFAULT_RANK_TOL, OperatorId, apply_operator
from .solutions import bump

__all__ = [
    "HessianSampleSet",
    "HessianSupport",
    "TensorBump",
    "FieldCheck",
    "default_schedule",
    "hessian_samples",
    "support_estimate",
    "d_solution_residual",
    "integral_criterion",
    "d_solution_field_check",
]


def default_schedule(u: GridMap) -> np.ndarray:
    """``8 * 2^-v`` cells for ``v = 0..6``, or ``8, 4, 2, 1`` cells without an analytic source."""
    if u.source is not None:
        return 8.0 * 2.0 ** -np.arange(7)
    return np.array([8.0, 4.0, 2.0, 1.0])


def _validate_schedule(u: GridMap, cells) -> np.ndarray:
    cells = np.atleast_1d(np.asarray(cells, dtype=float))
    if cells.ndim != 1 or cells.size == 0 or np.any(cells <= 0) or np.any(np.diff(cells) >= 0):
        raise StepError("step schedule must be positive and strictly decreasing")
    if u.source is None:
        k = np.rint(cells)
        if np.any(np.abs(cells - k) > 1e-9 * np.maximum(1.0, cells)):
            raise StepError("steps must be integer multiples of the spacing for grid-only maps")
    return cells


@dataclass(frozen=True, eq=False)
class HessianSampleSet:
    """Difference-quotient hessians at one node along a step schedule."""

    node: int
    point: np.ndarray
    gradient: np.ndarray
    cells: np.ndarray
    steps: np.ndarray
    samples: np.ndarray
    at_infinity: np.ndarray
    asymmetry: np.ndarray
    spacing: np.ndarray
    blowup: float

    @property
    def N(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True, eq=False)
class HessianSupport:
    """Finite atoms with weights, plus the mass at infinity."""

    atoms: np.ndarray
    weights: np.ndarray
    infinity_weight: float
    cluster_eps: float
    tail: int = 0

    @property
    def trivial(self) -> bool:
        return len(self.atoms) == 0

    def to_dict(self) -> dict:
        return {
            "atoms": [a.ravel().tolist() for a in self.atoms],
            "weights": self.weights.tolist(),
            "infinity_weight": self.infinity_weight,
            "cluster_eps": self.cluster_eps,
            "tail": self.tail,
        }


@dataclass(frozen=True)
class TensorBump:
    """Test function on tensor space: 1 within ``inner`` of ``center``, zero beyond ``radius``."""

    center: np.ndarray
    radius: float
    inner: float = 0.0

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        C = np.asarray(self.center, dtype=float)
        axes = tuple(range(X.ndim - C.ndim, X.ndim))
        d = np.sqrt(np.sum((X - C) ** 2, axis=axes))
        s = np.maximum(d - self.inner, 0.0) / (self.radius - self.inner)
        return bump(s[..., None], np.zeros(1), 1.0)


def _gradient_at(u: GridMap, points: np.ndarray) -> np.ndarray:
    """Closed-form gradient with zero extension outside the closed domain."""
    inside = u.domain.contains(points)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = u.source.gradient(points)
    return np.where(inside[..., None, None], g, 0.0)


def _sample_nodes(u: GridMap, nodes: np.ndarray, cells: np.ndarray):
    """Raw quotients for many nodes: returns Du(x) ``(m, N, n)`` and ``T`` ``(m, k, N, n, n)``."""
    dom = u.domain
    n, h = dom.n, dom.spacing
    nodes = np.asarray(nodes, dtype=np.int64)
    pts = dom.coordinates(nodes)
    T = np.empty((len(nodes), len(cells), u.N, n, n))
    if u.source is not None:
        g0 = _gradient_at(u, pts)
        for v, c in enumerate(cells):
            for i in range(n):
                s = c * h[i]
                shifted = pts.copy()
                shifted[:, i] += s
                T[:, v, :, i, :] = (_gradient_at(u, shifted) - g0) / s
    else:
        grad = u.flat_grad()
        g0 = grad[nodes]
        multi = dom.multi_index(nodes)
        res = np.asarray(dom.resolution)
        for v, c in enumerate(cells):
            k = int(round(c))
            for i in range(n):
                m = multi.copy()
                m[:, i] += k
                inside = m[:, i] < res[i]
                m[:, i] = np.minimum(m[:, i], res[i] - 1)
                shifted = np.where(inside[:, None, None], grad[dom.flat_index(m)], 0.0)
                T[:, v, :, i, :] = (shifted - g0) / (k * h[i])
    return g0, T


def _finish(T: np.ndarray):
    sym = 0.5 * (T + np.swapaxes(T, -1, -2))
    asym = 0.5 * np.sqrt(np.sum((T - np.swapaxes(T, -1, -2)) ** 2, axis=(-3, -2, -1)))
    return sym, asym


def hessian_samples(u: GridMap, x: int, step_schedule=None,
                    blowup: float = DEFAULT_BLOWUP) -> HessianSampleSet:
    """Difference quotients of ``Du`` at node ``x`` for each step of the schedule.

    Parameters
    ----------
    u : GridMap
    x : int
        Flat node index.
    step_schedule : array_like, optional
        Strictly decreasing step lengths in units of the grid spacing.
    blowup : float
        Samples with Frobenius norm above this value are flagged at infinity.
    """
    cells = _validate_schedule(u, default_schedule(u) if step_schedule is None else step_schedule)
    g0, T = _sample_nodes(u, np.array([int(x)]), cells)
    sym, asym = _finish(T[0])
    with np.errstate(invalid="ignore", over="ignore"):
        norms = np.sqrt(np.sum(sym**2, axis=(-3, -2, -1)))
    flagged = ~(norms <= blowup)
    dom = u.domain
    return HessianSampleSet(int(x), dom.coordinates(int(x)), g0[0], cells,
                            np.outer(cells, dom.spacing), sym, flagged, asym,
                            dom.spacing.copy(), float(blowup))


def _tail_count(k: int, tail_fraction: float) -> int:
    return max(1, min(k, math.ceil(tail_fraction * k)))


def support_estimate(S: HessianSampleSet, cluster_eps: float | None = None,
                     tail_fraction: float = 0.5) -> HessianSupport:
    """Greedy clustering of the finest-step samples.

    The ``ceil(tail_fraction * k)`` smallest steps form the tail. Finite
    tail samples are visited from the finest step outward; each either
    joins the first atom within ``cluster_eps`` (Frobenius distance) or
    seeds a new atom. Atoms are their seed samples, so they are pairwise
    more than ``cluster_eps`` apart. Weights are occupancy fractions of the
    tail and the flagged fraction is the mass at infinity.
    """
    k = len(S.cells)
    if k < 3:
        raise StepError("support estimation needs at least three steps")
    eps = 10.0 * float(S.spacing.max()) if cluster_eps is None else float(cluster_eps)
    tail = _tail_count(k, tail_fraction)
    order = np.arange(k - 1, k - 1 - tail, -1)
    return _cluster(S.samples[order], S.at_infinity[order], eps)


def _cluster(samples: np.ndarray, flagged: np.ndarray, eps: float) -> HessianSupport:
    """Greedy clustering of samples ordered finest first."""
    atoms, counts = [], []
    for X, bad in zip(samples, flagged):
        if bad:
            continue
        for a, A in enumerate(atoms):
            if np.sqrt(np.sum((X - A) ** 2)) <= eps:
                counts[a] += 1
                break
        else:
            atoms.append(X)
            counts.append(1)
    tail = len(samples)
    shape = (0,) + samples.shape[1:]
    return HessianSupport(np.array(atoms) if atoms else np.zeros(shape),
                          np.asarray(counts, dtype=float) / tail,
                          float(np.count_nonzero(flagged)) / tail, eps, tail)


def _gradient_of(u: GridMap, x: int) -> np.ndarray:
    if u.source is not None:
        return _gradient_at(u, u.domain.coordinates(int(x))[None])[0]
    return u.flat_grad()[int(x)]


def d_solution_residual(u: GridMap, op, x: int, support: HessianSupport,
                        rank_tol: float = DEFAULT_RANK_TOL) -> float:
    """``max_X |op(Du(x), X)|`` over the finite atoms; 0 when there are none."""
    if support.trivial:
        return 0.0
    Du = _gradient_of(u, x)
    vals = apply_operator(OperatorId.parse(op), np.broadcast_to(Du, (len(support.atoms),) + Du.shape),
                          support.atoms, rank_tol)
    return float(np.max(np.linalg.norm(vals, axis=-1)))


def integral_criterion(u: GridMap, op, x: int, samples: HessianSampleSet, phi: TensorBump,
                       tail_fraction: float = 0.5, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Mean of ``phi(X) op(Du(x), X)`` over the tail samples.

    Samples at infinity contribute zero, as ``phi`` vanishes there.
    """
    k = len(samples.cells)
    tail = _tail_count(k, tail_fraction)
    sel = np.arange(k - tail, k)
    finite = sel[~samples.at_infinity[sel]]
    out = np.zeros(samples.N)
    if finite.size == 0:
        return out
    X = samples.samples[finite]
    w = phi(X)
    hit = w > 0
    if not np.any(hit):
        return out
    Du = samples.gradient
    vals = apply_operator(OperatorId.parse(op), np.broadcast_to(Du, (int(hit.sum()),) + Du.shape),
                          X[hit], rank_tol)
    return (w[hit][:, None] * vals).sum(axis=0) / tail


@dataclass(frozen=True, eq=False)
class FieldCheck:
    """Per-node D-residuals and the discrete almost-everywhere verdict."""

    nodes: np.ndarray
    residuals: np.ndarray
    infinity_weight: np.ndarray
    atom_counts: np.ndarray
    threshold: float
    kappa: float
    exceptional_fraction: float
    passed: bool
    supports: list = field(default_factory=list, repr=False)

    @property
    def trivial(self) -> np.ndarray:
        """Nodes whose support has no finite atom."""
        return self.atom_counts == 0

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "nodes": int(self.nodes.size),
            "trivial_nodes": int(np.count_nonzero(self.trivial)),
            "max_residual": float(self.residuals.max()) if self.residuals.size else 0.0,
            "exceptional_fraction": self.exceptional_fraction,
            "threshold": self.threshold,
            "kappa": self.kappa,
        }


def _default_nodes(u: GridMap, cells: np.ndarray) -> np.ndarray:
    """Nodes whose forward shifts stay on the grid, one node away from the lower faces."""
    dom = u.domain
    reach = int(math.ceil(float(cells.max())))
    ok = np.ones(dom.shape, dtype=bool)
    for axis in range(dom.n):
        k = np.arange(dom.resolution[axis])
        sel = (k >= 1) & (k <= dom.resolution[axis] - 2 - reach)
        shape = [1] * dom.n
        shape[axis] = -1
        ok &= sel.reshape(shape)
    return np.flatnonzero(ok.ravel())


def d_solution_field_check(u: GridMap, op, node_set=None, schedule=None, threshold: float = 1e-3,
                           kappa: float = 0.01, cluster_eps: float | None = None,
                           tail_fraction: float = 0.5, blowup: float = DEFAULT_BLOWUP,
                           rank_tol: float = DEFAULT_RANK_TOL, keep_supports: bool = False) -> FieldCheck:
    """Samples, support and D-residual at every node of ``node_set``.

    The verdict passes when the residual exceeds ``threshold`` on at most a
    fraction ``kappa`` of the nodes with at least one finite atom. Nodes
    whose support is entirely at infinity are trivially satisfied and are
    excluded from the fraction.
    """
    cells = _validate_schedule(u, default_schedule(u) if schedule is None else schedule)
    if len(cells) < 3:
        raise StepError("support estimation needs at least three steps")
    op = OperatorId.parse(op)
    nodes = _default_nodes(u, cells) if node_set is None else np.asarray(node_set, dtype=np.int64)
    eps = 10.0 * float(u.domain.spacing.max()) if cluster_eps is None else float(cluster_eps)
    k = len(cells)
    tail = _tail_count(k, tail_fraction)
    g0, T = _sample_nodes(u, nodes, cells)
    sym, _ = _finish(T[:, k - tail:][:, ::-1])
    with np.errstate(invalid="ignore", over="ignore"):
        norms = np.sqrt(np.sum(sym**2, axis=(-3, -2, -1)))
    flagged = ~(norms <= blowup)
    inf_w = flagged.sum(axis=1) / tail
    finest = sym[:, 0]
    with np.errstate(invalid="ignore", over="ignore"):
        dist = np.sqrt(np.sum((sym - finest[:, None]) ** 2, axis=(-3, -2, -1)))
    simple = ~flagged.any(axis=1) & np.all(dist <= eps, axis=1)

    residuals = np.zeros(len(nodes))
    counts = np.zeros(len(nodes), dtype=int)
    supports = [None] * len(nodes)
    if np.any(simple):
        vals = apply_operator(op, g0[simple], finest[simple], rank_tol)
        residuals[simple] = np.linalg.norm(vals, axis=-1)
        counts[simple] = 1
    for m in np.flatnonzero(~simple):
        sup = _cluster(sym[m], flagged[m], eps)
        supports[m] = sup
        counts[m] = len(sup.atoms)
        if counts[m]:
            Du = np.broadcast_to(g0[m], (counts[m],) + g0[m].shape)
            vals = apply_operator(op, Du, sup.atoms, rank_tol)
            residuals[m] = float(np.max(np.linalg.norm(vals, axis=-1)))
    if keep_supports:
        for m in np.flatnonzero(simple):
            supports[m] = HessianSupport(finest[m][None], np.ones(1), 0.0, eps, tail)
    active = counts > 0
    bad = np.count_nonzero(residuals[active] > threshold)
    frac = bad / max(1, int(np.count_nonzero(active)))
    return FieldCheck(nodes, residuals, inf_w, counts, float(threshold), float(kappa), float(frac),
                      bool(frac <= kappa), supports if keep_supports else [])
