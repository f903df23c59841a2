"""Affine variation families and the sup-norm minimality test.

A family is anchored at the argmax set of ``|Du|`` over a subdomain. Each
anchor carries hessian candidates ``X_x`` (tensors of shape ``(N, n, n)``)
supplied by a candidate source; members are affine maps whose gradient is
built from ``Du(x)``, ``X_x`` and a scaling ``xi``. Minimality is tested by
comparing ``max |Du + lam DA|`` with ``max |Du|`` over the subdomain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import null_space

from .errors import ConfigError, InvalidJetError
from .functionals import (
    DEFAULT_ARGMAX_TOL,
    AffineMap,
    ArgmaxSet,
    argmax_set,
    grad_sq,
)
from .grid import DEFAULT_BLOWUP, GridDomain, GridMap, SubdomainSpec, hessian_field, node_mask
from .operators import DEFAULT_RANK_TOL, projection_batch

__all__ = [
    "FAMILY_TAGS",
    "VariationFamily",
    "NormalMatrixSpace",
    "VariationalReport",
    "Verdict",
    "BoxSampler",
    "default_xi",
    "default_vector_xi",
    "default_lambdas",
    "analytic_candidates",
    "discrete_candidates",
    "fixed_candidates",
    "scalar_infinity_family",
    "scalar_p_family",
    "c2_tangent_family",
    "vector_tangential_family",
    "normal_matrix_space",
    "vector_normal_family",
    "minimality_check",
    "characterization_verdict",
    "build_family",
]

FAMILY_TAGS = (
    "A_plus_inf",
    "A_minus_inf",
    "A_inf_c2",
    "A_plus_p",
    "A_minus_p",
    "A_tangential",
    "A_normal",
)

# per anchor: (flat node index, coordinates) -> stack of (N, n, n) tensors
Candidates = Callable[[int, np.ndarray], np.ndarray]


def default_xi(sign: int | None = None) -> np.ndarray:
    """``{+-2^k : k = -3..3}``, restricted to one sign when ``sign`` is given."""
    mags = 2.0 ** np.arange(-3, 4)
    xi = np.concatenate([mags, -mags])
    if sign is not None:
        xi = xi[np.sign(xi) == np.sign(sign)]
    return xi


def default_vector_xi(N: int) -> np.ndarray:
    """``+-2^k e_a`` for every component ``a``, shape ``(14 N, N)``."""
    xi = default_xi()
    return np.concatenate([np.outer(xi, e) for e in np.eye(N)])


def default_lambdas() -> np.ndarray:
    return np.concatenate([[0.0], 2.0 ** np.arange(-10, 3)])


def analytic_candidates(solution) -> Candidates:
    """Closed-form hessian at the anchor; none where it is declared singular."""

    def candidates(node: int, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)[None]
        if np.any(solution.hessian_singular(x)):
            return np.zeros((0, solution.N, solution.n, solution.n))
        return solution.hessian(x)

    candidates.source = "analytic"
    return candidates


def discrete_candidates(u: GridMap, blowup: float = DEFAULT_BLOWUP) -> Candidates:
    """Finite-difference hessian at the anchor node; none where it is flagged invalid."""
    H, valid = hessian_field(u, blowup)
    H = H.reshape((-1,) + H.shape[u.n:])
    valid = valid.ravel()

    def candidates(node: int, x: np.ndarray) -> np.ndarray:
        return H[node][None] if valid[node] else H[:0]

    candidates.source = "discrete"
    return candidates


def fixed_candidates(tensors) -> Candidates:
    """The same candidate tensors at every anchor."""
    T = np.asarray(tensors, dtype=float)
    if T.ndim == 2:
        T = T[None, None]
    elif T.ndim == 3:
        T = T[None]
    T = 0.5 * (T + np.swapaxes(T, -1, -2))

    def candidates(node: int, x: np.ndarray) -> np.ndarray:
        return T

    candidates.source = "fixed"
    return candidates


def _as_candidates(c) -> Candidates:
    return c if callable(c) else fixed_candidates(c)


@dataclass(frozen=True, eq=False)
class VariationFamily:
    """Sampled members of one designated affine-variation set."""

    tag: str
    members: list
    subdomain: SubdomainSpec | None
    argmax: ArgmaxSet
    anchor_gradients: dict = field(default_factory=dict)
    candidate_count: int = 0
    candidate_source: str = "unknown"
    p: float | None = None
    sign: int | None = None

    def __len__(self):
        return len(self.members)

    def gradient_rule(self, Du: np.ndarray, X: np.ndarray, xi) -> np.ndarray:
        """Gradient of the member generated by ``(Du(x), X_x, xi)``."""
        return _gradient_rule(self.tag, Du, X, xi, self.p)

    def admits(self, A: AffineMap, rtol: float = 1e-12) -> bool:
        """Membership by provenance arithmetic.

        Constant maps are always admitted. A nonconstant map must name an
        anchor of the argmax set, a ``xi`` of the family's sign and a hessian
        candidate, and its gradient must equal the rule applied to them.
        """
        if A.is_constant:
            return True
        prov = A.provenance
        if prov.get("family") != self.tag or prov.get("anchor") not in set(self.argmax.nodes.tolist()):
            return False
        if self.tag == "A_normal":
            return False
        xi = np.asarray(prov["xi"], dtype=float)
        if self.sign is not None and np.any(np.sign(xi) * self.sign < 0):
            return False
        Du = self.anchor_gradients[prov["anchor"]]
        X = np.asarray(prov["candidate"], dtype=float)
        G = self.gradient_rule(Du, X, xi)
        return bool(np.allclose(G, A.gradient, rtol=rtol, atol=rtol * (1 + np.abs(G).max())))


def _gradient_rule(tag: str, Du: np.ndarray, X: np.ndarray, xi, p: float | None = None) -> np.ndarray:
    N, n = Du.shape
    if tag in ("A_plus_inf", "A_minus_inf"):
        return float(xi) * (X[0] @ Du[0])[None, :]
    if tag in ("A_plus_p", "A_minus_p"):
        M = (p - 2.0) * X[0] + np.trace(X[0]) * np.eye(n)
        return float(xi) * (M @ Du[0])[None, :]
    if tag == "A_inf_c2":
        d = 2.0 * np.einsum("bji,bj->i", X, Du)
        return np.outer(np.broadcast_to(np.asarray(xi, float), (N,)), d)
    if tag == "A_tangential":
        v = np.einsum("bji,bj->i", X, Du)
        return np.outer(np.asarray(xi, float), v)
    raise ConfigError(f"no gradient rule for family {tag!r}")


def _anchors(u: GridMap, subdomain, rel_tol) -> tuple[ArgmaxSet, dict]:
    am = argmax_set(u, subdomain, rel_tol)
    if am.nodes.size == 0:
        raise ConfigError("empty argmax set")
    g = u.flat_grad()
    return am, {int(k): g[k].copy() for k in am.nodes}


def _provenance(tag, sign, xi, node, x, X, source, **extra) -> dict:
    prov = {
        "family": tag,
        "sign": sign,
        "xi": None if xi is None else np.asarray(xi, float).tolist(),
        "anchor": int(node),
        "anchor_point": np.asarray(x, float).tolist(),
        "candidate": np.asarray(X, float).tolist(),
        "candidate_source": source,
    }
    prov.update(extra)
    return prov


def _candidate_family(tag, u, subdomain, candidates, xi_samples, sign=None, p=None,
                      rel_tol=DEFAULT_ARGMAX_TOL) -> VariationFamily:
    am, grads = _anchors(u, subdomain, rel_tol)
    cand = _as_candidates(candidates)
    source = getattr(cand, "source", "custom")
    dom = u.domain
    members = [AffineMap.constant(np.zeros(u.N), u.n, {"family": tag, "constant": True})]
    count = 0
    for node in am.nodes:
        x = dom.coordinates(int(node))
        Du = grads[int(node)]
        Xs = np.asarray(cand(int(node), x), dtype=float)
        count += len(Xs)
        for c, X in enumerate(Xs):
            X = 0.5 * (X + np.swapaxes(X, -1, -2))
            for xi in xi_samples:
                G = _gradient_rule(tag, Du, X, xi, p)
                prov = _provenance(tag, sign, xi, node, x, X, source, candidate_index=c)
                members.append(AffineMap(x, np.zeros(u.N), G, prov))
    return VariationFamily(tag, members, subdomain, am, grads, count, source, p, sign)


def _require_scalar(u: GridMap):
    if u.N != 1:
        raise ConfigError("this family is defined for scalar maps (N = 1)")


def scalar_infinity_family(u: GridMap, subdomain, sign: int, candidates, xi_samples=None,
                           rel_tol: float = DEFAULT_ARGMAX_TOL) -> VariationFamily:
    """Members with ``DA = xi X_x Du(x)``, ``xi`` of the given sign."""
    _require_scalar(u)
    sign = 1 if sign > 0 else -1
    xi = default_xi(sign) if xi_samples is None else np.asarray(xi_samples, float)
    xi = xi[np.sign(xi) * sign >= 0]
    tag = "A_plus_inf" if sign > 0 else "A_minus_inf"
    return _candidate_family(tag, u, subdomain, candidates, xi, sign=sign, rel_tol=rel_tol)


def scalar_p_family(u: GridMap, subdomain, p: float, sign: int, candidates, xi_samples=None,
                    rel_tol: float = DEFAULT_ARGMAX_TOL) -> VariationFamily:
    """Members with ``DA = xi ((p-2) X_x + tr(X_x) I) Du(x)``."""
    _require_scalar(u)
    if not (np.isfinite(p) and p > 1):
        raise ConfigError(f"p must be finite and > 1, got {p}")
    sign = 1 if sign > 0 else -1
    xi = default_xi(sign) if xi_samples is None else np.asarray(xi_samples, float)
    xi = xi[np.sign(xi) * sign >= 0]
    tag = "A_plus_p" if sign > 0 else "A_minus_p"
    return _candidate_family(tag, u, subdomain, candidates, xi, sign=sign, p=float(p), rel_tol=rel_tol)


def c2_tangent_family(u: GridMap, subdomain, xi_samples=None, blowup: float = DEFAULT_BLOWUP,
                      rel_tol: float = DEFAULT_ARGMAX_TOL) -> VariationFamily:
    """Members with rows ``xi_a D(|Du|^2)(x)``, the gradient of ``|Du|^2`` taken as ``2 D^2u Du``.

    Scalar ``xi`` samples act on every row; vector samples of length ``N``
    scale the rows separately.
    """
    H, valid = hessian_field(u, blowup)
    H = H.reshape((-1,) + H.shape[u.n:])
    valid = valid.ravel()
    if xi_samples is None:
        xi_samples = default_xi() if u.N == 1 else default_vector_xi(u.N)

    def candidates(node, x):
        if not valid[node]:
            raise InvalidJetError(f"hessian invalid at anchor {np.asarray(x).tolist()}")
        return H[node][None]

    candidates.source = "discrete"
    return _candidate_family("A_inf_c2", u, subdomain, candidates, list(xi_samples), rel_tol=rel_tol)


def vector_tangential_family(u: GridMap, subdomain, candidates, xi_samples=None,
                             rel_tol: float = DEFAULT_ARGMAX_TOL) -> VariationFamily:
    """Members with ``DA = xi (x) v``, ``v_i = sum_{b,j} X_{bji} D_j u_b(x)``."""
    xi = default_vector_xi(u.N) if xi_samples is None else np.atleast_2d(np.asarray(xi_samples, float))
    if xi.shape[1] != u.N:
        raise ConfigError(f"xi samples must be vectors of length N={u.N}")
    return _candidate_family("A_tangential", u, subdomain, candidates, list(xi), rel_tol=rel_tol)


@dataclass(frozen=True, eq=False)
class NormalMatrixSpace:
    """Affine space ``{X : Du(x):X = -(a (x) I):X_x}``.

    Stored as a particular solution ``X0`` plus an orthonormal basis
    (shape ``(k, N, n)``) of the homogeneous solutions. When ``Du(x)``
    vanishes the space is ``{0}``.
    """

    Du: np.ndarray
    X_x: np.ndarray
    a: np.ndarray
    X0: np.ndarray
    basis: np.ndarray
    rhs: float

    @property
    def is_trivial(self) -> bool:
        return self.basis.shape[0] == 0 and not np.any(self.X0)

    def element(self, coeffs=None) -> np.ndarray:
        if coeffs is None:
            return self.X0.copy()
        return self.X0 + np.tensordot(np.asarray(coeffs, float), self.basis, axes=1)

    def residual(self, X) -> float:
        """``|Du:X + (a (x) I):X_x|``."""
        return float(abs(np.sum(self.Du * X) - self.rhs))

    def contains(self, X, tol: float = 1e-10) -> bool:
        if self.basis.shape[0] == 0:
            return bool(np.all(np.abs(np.asarray(X) - self.X0) <= tol))
        return self.residual(X) <= tol


def normal_matrix_space(Du, X_x, a, rank_tol: float = DEFAULT_RANK_TOL) -> NormalMatrixSpace:
    """Parametrize the admissible gradients of normal variations."""
    Du = np.atleast_2d(np.asarray(Du, float))
    N, n = Du.shape
    X_x = np.asarray(X_x, float).reshape(N, n, n)
    a = np.atleast_1d(np.asarray(a, float))
    if not np.all(np.isfinite(a)):
        raise ConfigError("a must be finite")
    rhs = -float(a @ np.trace(X_x, axis1=1, axis2=2))
    norm_sq = float(np.sum(Du * Du))
    if np.sqrt(norm_sq) <= rank_tol:
        return NormalMatrixSpace(Du, X_x, a, np.zeros((N, n)), np.zeros((0, N, n)), rhs)
    X0 = (rhs / norm_sq) * Du
    B = null_space(Du.reshape(1, -1)).T.reshape(-1, N, n)
    return NormalMatrixSpace(Du, X_x, a, X0, B, rhs)


def vector_normal_family(u: GridMap, subdomain, candidates, normal_samples=(1.0,),
                         matrix_samples=(0.0, 1.0, -1.0), rank_tol: float = DEFAULT_RANK_TOL,
                         rel_tol: float = DEFAULT_ARGMAX_TOL) -> VariationFamily:
    """Members ``A(z) = n_x + N_x (z - x)``.

    ``n_x`` runs over ``{0}`` and the unit basis of ``R(Du(x))^perp`` times
    each magnitude in ``normal_samples``; ``N_x`` runs over ``X0`` and
    ``X0 + s b_k`` for each homogeneous basis element ``b_k`` and each
    nonzero ``s`` in ``matrix_samples``.
    """
    tag = "A_normal"
    am, grads = _anchors(u, subdomain, rel_tol)
    cand = _as_candidates(candidates)
    source = getattr(cand, "source", "custom")
    dom = u.domain
    members = [AffineMap.constant(np.zeros(u.N), u.n, {"family": tag, "constant": True})]
    count = 0
    for node in am.nodes:
        node = int(node)
        x = dom.coordinates(node)
        Du = grads[node]
        P, rank = projection_batch(Du, rank_tol)
        w, V = np.linalg.eigh(P)
        perp = V[:, w > 0.5].T
        directions = [np.zeros(u.N)] + [m * e for e in perp for m in normal_samples]
        Xs = np.asarray(cand(node, x), dtype=float)
        count += len(Xs)
        for c, X in enumerate(Xs):
            for d, nx in enumerate(directions):
                space = normal_matrix_space(Du, X, nx, rank_tol)
                mats = [(None, space.X0)]
                for k, b in enumerate(space.basis):
                    mats += [((k, float(s)), space.X0 + s * b) for s in matrix_samples if s != 0]
                for key, Nx in mats:
                    prov = _provenance(tag, None, None, node, x, X, source, candidate_index=c,
                                       normal=nx.tolist(), normal_index=d, matrix=key,
                                       range_rank=int(rank))
                    members.append(AffineMap(x, nx, Nx, prov))
    return VariationFamily(tag, members, subdomain, am, grads, count, source)


@dataclass(frozen=True)
class VariationalReport:
    family: str
    member: int
    anchor: int | None
    xi: object
    lam: float
    sup_norm: float
    varied_norm: float
    slack: float
    tol: float
    passed: bool

    def row(self) -> dict:
        return {
            "family": self.family,
            "member": self.member,
            "anchor": -1 if self.anchor is None else self.anchor,
            "xi": self.xi,
            "lambda": self.lam,
            "sup_norm": self.sup_norm,
            "varied_norm": self.varied_norm,
            "slack": self.slack,
            "tol": self.tol,
            "passed": self.passed,
        }


def minimality_check(u: GridMap, subdomain, family: VariationFamily, lambda_samples=None,
                     slack_rel_tol: float = 1e-8) -> list[VariationalReport]:
    """Slack ``max|Du + lam DA| - max|Du|`` over the subdomain for every member and ``lam``.

    The slack is computed as ``h / (sqrt(S + h) + sqrt(S))`` with
    ``h = max(|Du|^2 - S + 2 lam Du:DA + lam^2 |DA|^2)``, which is exact
    zero at ``lam = 0`` and free of cancellation for small ``lam``. A report
    passes when ``slack >= -slack_rel_tol (1 + S)``.
    """
    lams = default_lambdas() if lambda_samples is None else np.asarray(lambda_samples, float)
    idx = node_mask(u.domain, subdomain)
    g = u.flat_grad()[idx].reshape(len(idx), -1)
    sq = np.einsum("ki,ki->k", g, g)
    S = float(sq.max())
    base = sq - S
    rootS = np.sqrt(S)
    tol = slack_rel_tol * (1.0 + S)
    Gs = np.stack([A.gradient.ravel() for A in family.members])
    dots = g @ Gs.T
    norms = np.einsum("mi,mi->m", Gs, Gs)
    reports = []
    for m, A in enumerate(family.members):
        anchor = A.provenance.get("anchor")
        xi = A.provenance.get("xi")
        if xi is None and "normal_index" in A.provenance:
            xi = f"n{A.provenance['normal_index']}:{A.provenance['matrix']}"
        for lam in lams:
            if lam == 0.0 or norms[m] == 0.0:
                h = 0.0
            else:
                h = float(np.max(base + 2.0 * lam * dots[:, m] + lam * lam * norms[m]))
            slack = h / (np.sqrt(S + h) + rootS) if S + h > 0 else 0.0
            reports.append(VariationalReport(family.tag, m, anchor, xi, float(lam), float(rootS),
                                             float(np.sqrt(max(S + h, 0.0))), float(slack), tol,
                                             bool(slack >= -tol)))
    return reports


@dataclass(frozen=True, eq=False)
class Verdict:
    consistent: bool
    n_subdomains: int
    n_reports: int
    n_failed: int
    min_slack: float
    witness: dict | None
    candidate_counts: list
    reports: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {
            "consistent": self.consistent,
            "n_subdomains": self.n_subdomains,
            "n_reports": self.n_reports,
            "n_failed": self.n_failed,
            "min_slack": self.min_slack,
            "witness": self.witness,
            "candidate_counts": self.candidate_counts,
        }


class BoxSampler:
    """Random node-aligned boxes with a margin to the grid boundary.

    Box corners sit on grid nodes, at least ``margin_cells`` cells from the
    boundary, with every side spanning at least ``min_side_cells`` cells.
    """

    def __init__(self, domain: GridDomain, seed: int = 0, margin_cells: int = 2,
                 min_side_cells: int = 6, max_side_cells: int | None = None):
        self.domain = domain
        self.seed = seed
        self.margin = int(margin_cells)
        self.min_side = int(min_side_cells)
        self.max_side = max_side_cells
        room = np.asarray(domain.resolution) - 1 - 2 * self.margin
        if np.any(room < self.min_side) or self.margin < 1:
            raise ConfigError("grid too small for the requested margin and box size")
        self._rng = np.random.default_rng(seed)

    def __call__(self) -> SubdomainSpec:
        dom = self.domain
        lo_k, hi_k = [], []
        for axis in range(dom.n):
            last = dom.resolution[axis] - 1 - self.margin
            top = last - self.margin
            if self.max_side is not None:
                top = min(top, int(self.max_side))
            side = int(self._rng.integers(self.min_side, top + 1))
            start = int(self._rng.integers(self.margin, last - side + 1))
            lo_k.append(start)
            hi_k.append(start + side)
        h = dom.spacing
        lower = dom.lower + np.asarray(lo_k) * h
        upper = dom.lower + np.asarray(hi_k) * h
        return SubdomainSpec.box(lower, upper)

    def sample(self, count: int) -> list[SubdomainSpec]:
        return [self() for _ in range(count)]


def characterization_verdict(u: GridMap, subdomain_sampler, family_builder, lambda_samples=None,
                             n_subdomains: int = 50, slack_rel_tol: float = 1e-8,
                             keep_reports: bool = True) -> Verdict:
    """Run the minimality test over sampled subdomains.

    ``family_builder(u, subdomain)`` returns a family or a list of them.
    The verdict is consistent iff every report passes; the worst slack and
    its subdomain, member and ``lam`` are kept as the witness.
    """
    if n_subdomains < 1:
        raise ConfigError("at least one subdomain is required")
    subs = subdomain_sampler.sample(n_subdomains) if hasattr(subdomain_sampler, "sample") \
        else [subdomain_sampler() for _ in range(n_subdomains)]
    all_reports, counts = [], []
    worst, witness, failed, total = np.inf, None, 0, 0
    for s, sub in enumerate(subs):
        fams = family_builder(u, sub)
        fams = fams if isinstance(fams, (list, tuple)) else [fams]
        for fam in fams:
            counts.append({"subdomain": s, "family": fam.tag, "candidates": fam.candidate_count,
                           "members": len(fam), "anchors": int(fam.argmax.nodes.size)})
            reps = minimality_check(u, sub, fam, lambda_samples, slack_rel_tol)
            total += len(reps)
            for r in reps:
                failed += not r.passed
                if r.slack < worst:
                    worst = r.slack
                    witness = {"subdomain_index": s, "subdomain": sub.to_dict(),
                               "report": r.row(), "member": fam.members[r.member].to_dict()}
            if keep_reports:
                all_reports.extend((s, r) for r in reps)
    return Verdict(failed == 0, len(subs), total, failed, float(worst), witness, counts,
                   all_reports)


def build_family(tag: str, u: GridMap, subdomain, candidates=None, p: float | None = None,
                 xi_samples=None, rel_tol: float = DEFAULT_ARGMAX_TOL, **kw) -> VariationFamily:
    """Dispatch on the family tag."""
    if tag == "A_plus_inf":
        return scalar_infinity_family(u, subdomain, +1, candidates, xi_samples, rel_tol)
    if tag == "A_minus_inf":
        return scalar_infinity_family(u, subdomain, -1, candidates, xi_samples, rel_tol)
    if tag == "A_plus_p":
        return scalar_p_family(u, subdomain, p, +1, candidates, xi_samples, rel_tol)
    if tag == "A_minus_p":
        return scalar_p_family(u, subdomain, p, -1, candidates, xi_samples, rel_tol)
    if tag == "A_inf_c2":
        return c2_tangent_family(u, subdomain, xi_samples, rel_tol=rel_tol, **kw)
    if tag == "A_tangential":
        return vector_tangential_family(u, subdomain, candidates, xi_samples, rel_tol)
    if tag == "A_normal":
        return vector_normal_family(u, subdomain, candidates, rel_tol=rel_tol, **kw)
    raise ConfigError(f"unknown family {tag!r}; expected one of {FAMILY_TAGS}")
