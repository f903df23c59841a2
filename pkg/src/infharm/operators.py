"""Pointwise infinity-Laplacian and p-Laplacian operators.

Every operator has a jet form (one point, validated) and a batched array
form working on stacks of gradients ``(..., N, n)`` and hessians
``(..., N, n, n)``. The batched forms are what the field routines use.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidJetError
from .grid import DEFAULT_BLOWUP, GridMap, Jet, hessian_field

__all__ = [
    "OperatorId",
    "ProjectionResult",
    "DEFAULT_RANK_TOL",
    "orth_projection",
    "projection_batch",
    "tangential_batch",
    "normal_batch",
    "apply_operator",
    "infinity_tangential",
    "infinity_normal",
    "infinity_full",
    "p_laplacian_expanded",
    "p_laplacian_divergence",
    "residual_field",
    "gradient_norm_minima",
]

DEFAULT_RANK_TOL = 1e-10

_TAGS = ("infinity_full", "infinity_tangential", "infinity_normal", "p_laplacian_expanded")


@dataclass(frozen=True)
class OperatorId:
    """Operator selector; ``p`` is only meaningful for the p-Laplacian."""

    tag: str
    p: float | None = None

    def __post_init__(self):
        if self.tag not in _TAGS:
            raise ConfigError(f"unknown operator {self.tag!r}; expected one of {_TAGS}")
        if self.tag == "p_laplacian_expanded":
            if self.p is None or not np.isfinite(self.p) or self.p <= 1:
                raise ConfigError(f"p-Laplacian needs finite p > 1, got {self.p!r}")
            object.__setattr__(self, "p", float(self.p))
        elif self.p is not None:
            raise ConfigError(f"{self.tag} takes no exponent")

    @classmethod
    def parse(cls, spec) -> "OperatorId":
        """Accept an ``OperatorId``, a dict, or strings like ``"p_laplacian_expanded(4)"``."""
        if isinstance(spec, OperatorId):
            return spec
        if isinstance(spec, dict):
            return cls(spec["tag"], spec.get("p"))
        m = re.fullmatch(r"\s*(\w+)\s*(?:\(\s*([^)]+)\s*\))?\s*", str(spec))
        if not m:
            raise ConfigError(f"cannot parse operator {spec!r}")
        p = float(m.group(2)) if m.group(2) else None
        return cls(m.group(1), p)

    def __str__(self):
        return self.tag if self.p is None else f"{self.tag}({self.p:g})"


@dataclass(frozen=True)
class ProjectionResult:
    matrix: np.ndarray
    rank_of_range: int


def projection_batch(Du: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL):
    """Projections onto ``R(Du)^perp`` for a stack of ``(N, n)`` matrices.

    Returns the projections ``(..., N, N)`` and the ranks ``(...)``.
    """
    Du = np.asarray(Du, dtype=float)
    N = Du.shape[-2]
    U, s, _ = np.linalg.svd(Du, full_matrices=False)
    smax = s[..., :1]
    keep = (s > rank_tol * smax) & (smax > 0)
    Q = U * keep[..., None, :]
    P = np.eye(N) - Q @ np.swapaxes(Q, -1, -2)
    P = 0.5 * (P + np.swapaxes(P, -1, -2))
    return P, keep.sum(axis=-1)


def orth_projection(Du, rank_tol: float = DEFAULT_RANK_TOL) -> ProjectionResult:
    """``[Du]^perp = I - Q Q^T`` with ``Q`` an SVD basis of the range of ``Du``."""
    Du = np.atleast_2d(np.asarray(Du, dtype=float))
    P, r = projection_batch(Du, rank_tol)
    return ProjectionResult(P, int(r))


def tangential_batch(Du: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``(Du (x) Du : D^2u)_a = sum D_i u_a D_j u_b D_ij u_b``."""
    w = np.einsum("...bij,...bj->...i", H, Du)
    return np.einsum("...ai,...i->...a", Du, w)


def normal_batch(Du: np.ndarray, H: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """``|Du|^2 [Du]^perp Delta u``."""
    lap = np.trace(H, axis1=-2, axis2=-1)
    P, _ = projection_batch(Du, rank_tol)
    sq = np.sum(Du * Du, axis=(-2, -1))
    return sq[..., None] * np.einsum("...ab,...b->...a", P, lap)


def apply_operator(op: OperatorId, Du: np.ndarray, H: np.ndarray,
                   rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Evaluate ``op`` on stacked gradients and hessians; output ``(..., N)``."""
    op = OperatorId.parse(op)
    Du, H = np.asarray(Du, float), np.asarray(H, float)
    if op.tag == "infinity_tangential":
        return tangential_batch(Du, H)
    if op.tag == "infinity_normal":
        return normal_batch(Du, H, rank_tol)
    if op.tag == "infinity_full":
        return tangential_batch(Du, H) + normal_batch(Du, H, rank_tol)
    sq = np.sum(Du * Du, axis=(-2, -1))
    lap = np.trace(H, axis1=-2, axis2=-1)
    return (op.p - 2.0) * tangential_batch(Du, H) + sq[..., None] * lap


def _check(j: Jet):
    if not j.hessian_valid:
        raise InvalidJetError(f"hessian at {j.point.tolist()} is flagged invalid")


def infinity_tangential(j: Jet) -> np.ndarray:
    _check(j)
    return tangential_batch(j.gradient, j.hessian)


def infinity_normal(j: Jet, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    _check(j)
    return normal_batch(j.gradient, j.hessian, rank_tol)


def infinity_full(j: Jet, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Full infinity-Laplacian system, tangential plus normal part."""
    _check(j)
    return tangential_batch(j.gradient, j.hessian) + normal_batch(j.gradient, j.hessian, rank_tol)


def p_laplacian_expanded(j: Jet, p: float) -> np.ndarray:
    """``((p-2) Du (x) Du + |Du|^2 I) : D^2u``."""
    _check(j)
    return apply_operator(OperatorId("p_laplacian_expanded", p), j.gradient, j.hessian)


def p_laplacian_divergence(Du: np.ndarray, H: np.ndarray, p: float) -> np.ndarray:
    """``div(|Du|^{p-2} Du) = |Du|^{p-4}`` times the expanded form.

    The value is NaN (not applicable) where ``Du = 0`` and ``p < 4``.
    """
    Du, H = np.asarray(Du, float), np.asarray(H, float)
    expanded = apply_operator(OperatorId("p_laplacian_expanded", p), Du, H)
    norm = np.sqrt(np.sum(Du * Du, axis=(-2, -1)))
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = norm ** (p - 4.0)
    if p < 4:
        factor = np.where(norm > 0, factor, np.nan)
    return factor[..., None] * expanded


def residual_field(u: GridMap, op, rank_tol: float = DEFAULT_RANK_TOL,
                   blowup: float = DEFAULT_BLOWUP) -> tuple[np.ndarray, np.ndarray]:
    """Nodewise Euclidean norm of ``op`` on the discrete jets of ``u``.

    Returns
    -------
    residual : ndarray, shape ``resolution``
        NaN where the hessian is invalid.
    valid : ndarray of bool
    """
    H, valid = hessian_field(u, blowup)
    with np.errstate(invalid="ignore", over="ignore"):
        vals = apply_operator(op, u.grad, H, rank_tol)
    res = np.linalg.norm(vals, axis=-1)
    valid = valid & np.isfinite(res)
    return np.where(valid, res, np.nan), valid


def gradient_norm_minima(u: GridMap, subdomain=None) -> np.ndarray:
    """Flat indices of discrete local minima of ``|Du|`` away from the grid boundary.

    A diagnostic for the hypothesis that ``|Du|`` has no interior minima;
    it cannot certify the continuum statement.
    """
    from .grid import node_mask

    g = np.sqrt(np.sum(u.grad**2, axis=(-2, -1)))
    is_min = ~u.domain.boundary_mask()
    for axis in range(u.n):
        for shift in (1, -1):
            is_min &= g <= np.roll(g, shift, axis=axis)
    idx = np.flatnonzero(is_min.ravel())
    return np.intersect1d(idx, node_mask(u.domain, subdomain))
