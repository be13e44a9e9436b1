"""Proximal maps, group-ball projections, and weighted proximal solvers.

Group-structured vectors follow :class:`rnp.linops.GroupStructure`: a range
vector of length G*pi viewed as G contiguous groups.  For sym2x2 groups the
natural pairing is the matrix Frobenius inner product (off-diagonal counted
twice); every duality computation here uses that pairing through the
structure's component weights, while operators keep their plain l2 adjoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Rng
from .linops import GroupStructure, LinearOperator, operator_norm_sq
from .sketch import Preconditioner

__all__ = [
    "BoxConstraint",
    "SeparableProx",
    "IdentityProx",
    "BoxProx",
    "SoftThresholdProx",
    "SoftThresholdBoxProx",
    "soft_threshold",
    "project_box",
    "project_group_ball",
    "mixed_norm_value",
    "group_pairing",
    "weighted_op_norm_sq",
    "wpm_structured",
    "wpm_mixed_dual",
    "dual_exponent",
]


@dataclass(frozen=True)
class BoxConstraint:
    """Componentwise box [lo, hi]; use infinities for one-sided or no bounds."""

    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.lo) and math.isinf(self.hi)

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=np.float64), self.lo, self.hi)


def soft_threshold(x: np.ndarray, tau: float) -> np.ndarray:
    if tau < 0:
        raise ValueError("threshold must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def project_box(x: np.ndarray, box: BoxConstraint) -> np.ndarray:
    return box.project(x)


class SeparableProx:
    """Componentwise proximal map plus a diagonal Clarke-subdifferential element."""

    def __call__(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def slope(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class IdentityProx(SeparableProx):
    def __call__(self, u):
        return np.asarray(u, dtype=np.float64).copy()

    def slope(self, u):
        return np.ones_like(u)


class BoxProx(SeparableProx):
    def __init__(self, box: BoxConstraint):
        self.box = box

    def __call__(self, u):
        return self.box.project(u)

    def slope(self, u):
        # 0 on the active boundary keeps the Newton Jacobian PSD
        return ((u > self.box.lo) & (u < self.box.hi)).astype(np.float64)


class SoftThresholdProx(SeparableProx):
    def __init__(self, tau: float):
        if tau < 0:
            raise ValueError("threshold must be nonnegative")
        self.tau = tau

    def __call__(self, u):
        return soft_threshold(u, self.tau)

    def slope(self, u):
        return (np.abs(u) > self.tau).astype(np.float64)


class SoftThresholdBoxProx(SeparableProx):
    """prox of tau*|.| + indicator of a box (shrink, then clamp)."""

    def __init__(self, tau: float, box: BoxConstraint):
        self.inner = SoftThresholdProx(tau)
        self.box = box

    def __call__(self, u):
        return self.box.project(self.inner(u))

    def slope(self, u):
        s = self.inner(u)
        return self.inner.slope(u) * ((s > self.box.lo) & (s < self.box.hi))


def dual_exponent(phi) -> float:
    """psi with 1/phi + 1/psi = 1 for phi in {1, 2, inf}."""
    if phi == 1:
        return math.inf
    if phi == 2:
        return 2.0
    if phi == math.inf:
        return 1.0
    raise ValueError(f"phi must be 1, 2, or inf, got {phi}")


# ---------------------------------------------------------------------------
# Group geometry
# ---------------------------------------------------------------------------


def _sym_eig(groups: np.ndarray):
    """Closed-form eigenpairs of [[v11, v12], [v12, v22]] rows; lam1 >= lam2."""
    mean = 0.5 * (groups[:, 0] + groups[:, 1])
    delta = 0.5 * (groups[:, 0] - groups[:, 1])
    radius = np.hypot(delta, groups[:, 2])
    return mean + radius, mean - radius, delta, radius


def _sym_rebuild(c1: np.ndarray, c2: np.ndarray, delta: np.ndarray,
                 radius: np.ndarray, v12: np.ndarray) -> np.ndarray:
    avg = 0.5 * (c1 + c2)
    dif = 0.5 * (c1 - c2)
    scale = np.divide(dif, radius, out=np.zeros_like(dif), where=radius > 0)
    out = np.empty((c1.size, 3))
    out[:, 0] = avg + scale * delta
    out[:, 1] = avg - scale * delta
    out[:, 2] = scale * v12
    return out


def _project_linf_rows(q: np.ndarray) -> np.ndarray:
    return np.clip(q, -1.0, 1.0)


def _project_l2_rows(q: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(q, axis=1, keepdims=True)
    return q / np.maximum(norms, 1.0)


def _project_l1_rows(q: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto the l1 unit ball (sort-based)."""
    a = np.abs(q)
    inside = a.sum(axis=1) <= 1.0
    s = np.sort(a, axis=1)[:, ::-1]
    cums = np.cumsum(s, axis=1)
    counts = np.arange(1, q.shape[1] + 1)
    active = s * counts > cums - 1.0
    rho = active.sum(axis=1)
    theta = (cums[np.arange(q.shape[0]), rho - 1] - 1.0) / rho
    out = np.sign(q) * np.maximum(a - theta[:, None], 0.0)
    out[inside] = q[inside]
    return out


_ROW_PROJECTIONS = {math.inf: _project_linf_rows, 2.0: _project_l2_rows, 1.0: _project_l1_rows}


def project_group_ball(q: np.ndarray, phi, structure: GroupStructure) -> np.ndarray:
    """Per-group projection onto the unit ball of the psi-norm dual to phi.

    Vector groups project in the Euclidean geometry; sym2x2 groups project
    their eigenvalue pair (a Schatten-psi projection, which is also the
    Frobenius-metric projection).
    """
    psi = dual_exponent(phi)
    project_rows = _ROW_PROJECTIONS[psi]
    groups = structure.as_groups(np.asarray(q, dtype=np.float64))
    if structure.kind in ("scalar", "vector"):
        return project_rows(groups).ravel()
    lam1, lam2, delta, radius = _sym_eig(groups)
    pair = project_rows(np.column_stack([lam1, lam2]))
    return _sym_rebuild(pair[:, 0], pair[:, 1], delta, radius, groups[:, 2]).ravel()


def _group_norms(groups: np.ndarray, phi, kind: str) -> np.ndarray:
    if kind == "sym2x2":
        lam1, lam2, _, _ = _sym_eig(groups)
        groups = np.column_stack([np.abs(lam1), np.abs(lam2)])  # singular values
    if phi == 1:
        return np.abs(groups).sum(axis=1)
    if phi == 2:
        return np.linalg.norm(groups, axis=1)
    if phi == math.inf:
        return np.abs(groups).max(axis=1)
    raise ValueError(f"phi must be 1, 2, or inf, got {phi}")


def mixed_norm_value(v: np.ndarray, phi, structure: GroupStructure) -> float:
    """Sum over groups of the per-group phi-norm (Schatten for sym2x2)."""
    return float(_group_norms(structure.as_groups(v), phi, structure.kind).sum())


def group_pairing(q: np.ndarray, v: np.ndarray, structure: GroupStructure) -> float:
    """<Q, V> under the group pairing (Frobenius for sym2x2 groups)."""
    w = np.tile(structure.component_weights, structure.group_count)
    return float(np.dot(np.asarray(q) * w, v))


def weighted_op_norm_sq(op: LinearOperator, structure: GroupStructure,
                        iters: int, rng: Rng) -> float:
    """lambda_max of L' W L where W carries the group component weights."""
    sqrt_w = np.sqrt(np.tile(structure.component_weights, structure.group_count))
    weighted = LinearOperator(op.domain_dim, op.range_dim,
                              lambda x: sqrt_w * op.apply(x),
                              lambda y: op.adjoint(sqrt_w * y))
    return operator_norm_sq(weighted, iters, rng)


# ---------------------------------------------------------------------------
# Weighted proximal mappings
# ---------------------------------------------------------------------------


def wpm_structured(prox_d: SeparableProx, x: np.ndarray, ubar: np.ndarray,
                   sign: int = 1, tol: float = 1e-10,
                   max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Proximal map in the metric W = I + sign * Ubar Ubar'.

    Solves the r-dimensional root problem
        Ubar'(x - prox_d(x - sign * Ubar gamma)) + gamma = 0
    by semismooth Newton with the generalized Jacobian
    I + sign * Ubar' diag(slope) Ubar, falling back to damped fixed-point
    steps whenever a Newton candidate fails to shrink the residual.
    Returns (prox value, gamma).
    """
    x = np.asarray(x, dtype=np.float64)
    ubar = np.asarray(ubar, dtype=np.float64)
    r = ubar.shape[1] if ubar.ndim == 2 else 0
    if r == 0:
        return prox_d(x), np.zeros(0)
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    lip = 1.0 + float(np.linalg.eigvalsh(ubar.T @ ubar).max())

    def state(gamma):
        inner = x - sign * (ubar @ gamma)
        u = prox_d(inner)
        resid = ubar.T @ (x - u) + gamma
        return inner, u, resid, float(np.linalg.norm(resid))

    gamma = np.zeros(r)
    inner, u, resid, res_norm = state(gamma)
    for _ in range(max_iter):
        if res_norm <= tol:
            return u, gamma
        slope = prox_d.slope(inner)
        jac = np.eye(r) + sign * (ubar.T @ (slope[:, None] * ubar))
        candidate = gamma - np.linalg.solve(jac, resid)
        cand_state = state(candidate)
        if cand_state[3] < res_norm:
            gamma, (inner, u, resid, res_norm) = candidate, cand_state
        else:
            gamma = gamma - resid / lip
            inner, u, resid, res_norm = state(gamma)
    raise RuntimeError(
        f"weighted prox did not converge in {max_iter} iterations (residual {res_norm:.3e})")


def wpm_mixed_dual(s: np.ndarray, lam_bar: float, L: LinearOperator,
                   structure: GroupStructure, phi,
                   pre: Preconditioner | None, box: BoxConstraint,
                   inner_tol: float = 1e-6, inner_max: int = 200,
                   q0: np.ndarray | None = None,
                   l_norm_sq: float | None = None,
                   wpm_tol: float = 1e-11) -> tuple[np.ndarray, np.ndarray, int]:
    """Mixed-norm weighted proximal map via accelerated ascent on its dual.

    Computes argmin_{x in box} 0.5*||x - s||_P^2 + lam_bar*||L x||_{1,phi}
    where P = I when ``pre`` is None.  The dual variable lives on the
    product of psi-norm unit balls; its gradient needs one box-projection
    in the P metric per iteration.  Stops once the relative primal change
    falls below inner_tol and the duality gap certifies the result within
    10*inner_tol*(1+|primal|), or at inner_max.  Returns (x, Q, iterations);
    pass Q back as ``q0`` to warm-start the next call.
    """
    s = np.asarray(s, dtype=np.float64)
    if lam_bar < 0:
        raise ValueError("lam_bar must be nonnegative")

    structured = pre is not None and pre.rank > 0

    def prox_p_box(v):
        if not structured:
            return box.project(v)
        u, _ = wpm_structured(BoxProx(box), v, pre.Ubar, 1, tol=wpm_tol)
        return u

    if lam_bar == 0.0:
        return prox_p_box(s), np.zeros(L.range_dim), 0

    if l_norm_sq is None:
        l_norm_sq = 1.05 * weighted_op_norm_sq(L, structure, 100, Rng(0x5EED))
    sigma = pre.sigma_max_pinv if pre is not None else 1.0
    step = 1.0 / (2.0 * lam_bar * lam_bar * l_norm_sq * sigma)
    comp_w = np.tile(structure.component_weights, structure.group_count)

    def pinv(v):
        return pre.apply_Pinv(v) if pre is not None else v

    def recover(dual):
        return prox_p_box(s - lam_bar * pinv(L.adjoint(comp_w * dual)))

    def gap_certified(dual, x_dual):
        lx = L.apply(x_dual)
        gap = lam_bar * (mixed_norm_value(lx, phi, structure)
                         - group_pairing(dual, lx, structure))
        diff = x_dual - s
        quad = 0.5 * float(np.dot(diff, pre.apply_P(diff) if pre is not None else diff))
        primal = quad + lam_bar * mixed_norm_value(lx, phi, structure)
        return gap <= 10.0 * inner_tol * (1.0 + abs(primal))

    q = np.zeros(L.range_dim) if q0 is None else np.asarray(q0, dtype=np.float64).copy()
    z = q.copy()
    t = 1.0
    x_prev = None
    used = 0
    for _ in range(inner_max):
        used += 1
        x = recover(z)
        grad = -2.0 * lam_bar * L.apply(x)
        q_next = project_group_ball(z - step * grad, phi, structure)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        z = q_next + ((t - 1.0) / t_next) * (q_next - q)
        q, t = q_next, t_next
        if x_prev is not None:
            if np.linalg.norm(x - x_prev) <= inner_tol * max(np.linalg.norm(x), 1e-300):
                x_final = recover(q)
                if gap_certified(q, x_final):
                    return x_final, q, used
        x_prev = x
    return recover(q), q, used
