"""Linear programs behind the reward bounds and penalty targets.

Single-resource LPs are fractional knapsacks and are solved greedily; the
network and polytope LPs go through a small dense two-phase simplex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Scenario

PIVOT_TOL = 1e-9


class LpInfeasible(ValueError):
    pass


class LpUnbounded(ValueError):
    pass


@dataclass(frozen=True)
class LpSolution:
    """Primal/dual solution of an acceptance-fraction LP.

    ``alpha_ij`` holds one array per class (one entry per allocation);
    ``alpha`` is the per-class total.  ``dual_u`` prices resources and
    ``dual_v`` prices the per-class caps ``sum_j alpha_ij <= caps_i``.
    """

    alpha_ij: tuple[np.ndarray, ...]
    value: float
    dual_u: np.ndarray
    dual_v: np.ndarray
    caps: np.ndarray
    rhs: np.ndarray  # effective capacity (b / shrink)

    @property
    def alpha(self) -> np.ndarray:
        return np.array([a.sum() for a in self.alpha_ij])

    @property
    def saturated(self) -> frozenset[int]:
        return frozenset(i for i, a in enumerate(self.alpha) if a >= self.caps[i] - 1e-12 and self.caps[i] > 0)

    @property
    def dual_value(self) -> float:
        return float(self.dual_u @ self.rhs + self.dual_v @ self.caps)


@dataclass(frozen=True)
class SimplexResult:
    x: np.ndarray
    value: float
    duals: np.ndarray  # one per constraint row (upper-bound rows appended last)
    iterations: int


def class_caps(sc: Scenario, horizon: float) -> np.ndarray:
    if horizon == math.inf:
        return np.ones(sc.m)
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    return -np.expm1(-sc.mu * horizon)


# --------------------------------------------------------------------------
# greedy knapsack
# --------------------------------------------------------------------------


def solve_knapsack(sc: Scenario, horizon: float = math.inf, shrink: float = 1.0) -> LpSolution:
    """Greedy fractional knapsack for the single-resource LPs.

    Classes are filled in nonincreasing reward-per-size order (ties to the
    lower index) against capacity ``b / shrink``; class ``i`` is capped at
    ``1 - exp(-mu_i * horizon)``.
    """
    if not sc.single_resource:
        raise ValueError("multi-resource scenario: use solve_network_lp")
    if shrink < 1:
        raise ValueError("shrink must be >= 1")
    b = sc.sizes()
    rho = sc.rho
    r = sc.reward
    caps = class_caps(sc, horizon)
    room = sc.capacity[0] / shrink
    ratio = r / b
    order = sorted(range(sc.m), key=lambda i: (-ratio[i], i))

    alpha = np.zeros(sc.m)
    u = 0.0
    last_full = None
    for i in order:
        need = b[i] * rho[i] * caps[i]
        if need <= room * (1 + 1e-12):
            alpha[i] = caps[i]
            room = max(room - need, 0.0)
            last_full = i
            continue
        # marginal class
        alpha[i] = room / (b[i] * rho[i])
        room = 0.0
        u = ratio[i]
        if alpha[i] <= 1e-15 and last_full is not None:
            # capacity ran out exactly at a class boundary
            u = ratio[last_full]
        break
    v = np.maximum(0.0, rho * (r - b * u))
    value = float(np.sum(r * rho * alpha))
    return LpSolution(
        alpha_ij=tuple(np.array([a]) for a in alpha),
        value=value,
        dual_u=np.array([u]),
        dual_v=v,
        caps=caps,
        rhs=np.array([sc.capacity[0] / shrink]),
    )


# --------------------------------------------------------------------------
# dense simplex
# --------------------------------------------------------------------------


def solve_simplex(c, A, d, ub=None, max_iter: int = 10_000) -> SimplexResult:
    """Maximize ``c @ x`` over ``A x <= d, 0 <= x <= ub``.

    Two-phase tableau simplex with Bland's rule.  Finite entries of ``ub``
    become explicit rows, so ``duals`` has ``len(d)`` entries followed by
    one entry per finite upper bound.
    """
    c = np.asarray(c, float)
    A = np.atleast_2d(np.asarray(A, float)).reshape(-1, c.size)
    d = np.asarray(d, float).reshape(-1)
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(d))):
        raise ValueError("LP data must be finite")
    n = c.size
    if ub is not None:
        ub = np.broadcast_to(np.asarray(ub, float), (n,))
        fin = np.nonzero(np.isfinite(ub))[0]
        if fin.size:
            A = np.vstack([A, np.eye(n)[fin]])
            d = np.concatenate([d, ub[fin]])
    m_rows = d.size

    # rows with negative rhs are negated and get an artificial variable
    flip = d < 0
    sign = np.where(flip, -1.0, 1.0)
    n_art = int(flip.sum())
    ncol = n + m_rows + n_art
    T = np.zeros((m_rows, ncol + 1))
    T[:, :n] = A * sign[:, None]
    T[:, n : n + m_rows] = np.diag(sign)
    art_cols = []
    basis = np.empty(m_rows, dtype=np.int64)
    k = 0
    for r in range(m_rows):
        if flip[r]:
            col = n + m_rows + k
            T[r, col] = 1.0
            art_cols.append(col)
            basis[r] = col
            k += 1
        else:
            basis[r] = n + r
    T[:, -1] = d * sign

    iters = 0
    if n_art:
        cost = np.zeros(ncol)
        cost[art_cols] = -1.0  # maximize -sum(artificials)
        iters += _simplex_loop(T, basis, cost, ncol, max_iter)
        if T[basis >= n + m_rows, -1].sum() > 1e-9 * max(1.0, np.abs(d).max()):
            raise LpInfeasible("infeasible")
        # pivot remaining (zero-level) artificials out of the basis
        for r in range(m_rows):
            if basis[r] >= n + m_rows:
                cands = np.nonzero(np.abs(T[r, : n + m_rows]) > PIVOT_TOL)[0]
                if cands.size:
                    _pivot(T, basis, r, int(cands[0]))
        T = np.delete(T, art_cols, axis=1)
        ncol = n + m_rows
        keep = basis < ncol
        if not np.all(keep):
            T = T[keep]
            basis = basis[keep]
            sign = sign[keep]
    cost = np.zeros(ncol)
    cost[:n] = c
    iters += _simplex_loop(T, basis, cost, ncol, max_iter)

    x_full = np.zeros(ncol)
    x_full[basis] = T[:, -1]
    x = x_full[:n].copy()
    x[np.abs(x) < 1e-13] = 0.0
    value = float(c @ x)

    # duals y solve B^T y = c_B on the original (unflipped) rows
    Afull = np.hstack([A, np.eye(m_rows)])
    cfull = np.concatenate([c, np.zeros(m_rows)])
    duals = np.zeros(m_rows)
    if basis.size:
        B = Afull[:, basis]
        try:
            y = np.linalg.solve(B.T, cfull[basis])
        except np.linalg.LinAlgError:
            y = np.linalg.lstsq(B.T, cfull[basis], rcond=None)[0]
        duals = y
    duals = np.where(np.abs(duals) < 1e-12, 0.0, duals)
    duals = np.maximum(duals, 0.0)
    return SimplexResult(x=x, value=value, duals=duals, iterations=iters)


def _pivot(T, basis, row, col):
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * T[row]
    basis[row] = col


def _simplex_loop(T, basis, cost, ncol, max_iter) -> int:
    it = 0
    while True:
        cb = cost[basis]
        reduced = cost[:ncol] - cb @ T[:, :ncol]
        reduced[basis] = 0.0
        enter = np.nonzero(reduced > PIVOT_TOL)[0]
        if enter.size == 0:
            return it
        col = int(enter[0])  # Bland: lowest index
        colv = T[:, col]
        pos = np.nonzero(colv > PIVOT_TOL)[0]
        if pos.size == 0:
            raise LpUnbounded("unbounded")
        ratios = T[pos, -1] / colv[pos]
        best = ratios.min()
        tied = pos[ratios <= best + 1e-12 * max(1.0, abs(best))]
        row = int(tied[np.argmin(basis[tied])])  # Bland: lowest basic index leaves
        _pivot(T, basis, row, col)
        it += 1
        if it > max_iter:
            raise RuntimeError("simplex iteration limit reached")


# --------------------------------------------------------------------------
# network LP
# --------------------------------------------------------------------------


def solve_network_lp(
    sc: Scenario, horizon: float = math.inf, shrink: float = 1.0, keep: list[np.ndarray] | None = None
) -> LpSolution:
    """Solve the network acceptance LP over variables alpha_ij.

    ``keep`` optionally masks allocations per class; masked ones are fixed
    at zero (their dual constraints are not part of the LP).
    """
    if shrink < 1:
        raise ValueError("shrink must be >= 1")
    rho = sc.rho
    r = sc.reward
    caps = class_caps(sc, horizon)
    cols = []  # (i, j)
    for i, cl in enumerate(sc.classes):
        for j in range(len(cl.allocations)):
            if keep is None or keep[i][j]:
                cols.append((i, j))
    nv = len(cols)
    rhs_cap = sc.cap / shrink
    A = np.zeros((sc.s + sc.m, nv))
    c = np.zeros(nv)
    for k, (i, j) in enumerate(cols):
        bij = np.asarray(sc.classes[i].allocations[j], float)
        A[: sc.s, k] = rho[i] * bij
        A[sc.s + i, k] = 1.0
        c[k] = r[i] * rho[i]
    d = np.concatenate([rhs_cap, caps])
    finite_rows = np.isfinite(d)
    res = solve_simplex(c, A[finite_rows], d[finite_rows])
    duals = np.zeros(d.size)
    duals[finite_rows] = res.duals
    alpha_ij = [np.zeros(len(cl.allocations)) for cl in sc.classes]
    for k, (i, j) in enumerate(cols):
        alpha_ij[i][j] = res.x[k]
    return LpSolution(
        alpha_ij=tuple(alpha_ij),
        value=res.value,
        dual_u=duals[: sc.s],
        dual_v=duals[sc.s :],
        caps=caps,
        rhs=rhs_cap,
    )


def solve_lp(sc: Scenario, horizon: float = math.inf, shrink: float = 1.0) -> LpSolution:
    """Dispatch to the greedy solver when the scenario is a knapsack."""
    if sc.single_resource:
        return solve_knapsack(sc, horizon, shrink)
    return solve_network_lp(sc, horizon, shrink)


# --------------------------------------------------------------------------
# epsilon_0
# --------------------------------------------------------------------------


def _dual_still_optimal(sc: Scenario, star: LpSolution, eps: float, tol: float = 1e-9) -> bool:
    shrink = 1 + 4 * eps
    pert = solve_lp(sc, math.inf, shrink)
    dual_obj = float(star.dual_u @ (sc.cap / shrink) + star.dual_v.sum())
    return abs(dual_obj - pert.value) <= tol * (1 + abs(pert.value))


def epsilon_zero(sc: Scenario, tol: float = 1e-6) -> float:
    """Largest eps in (0, 1/4] keeping the steady dual optimal for the perturbed LP.

    The steady dual stays feasible for every eps, so it is optimal exactly
    when its objective matches the perturbed primal optimum.  The set of
    such eps is an interval containing 0, found by bisection.  For network
    scenarios this is an analogy without a guarantee (degenerate duals).
    """
    star = solve_lp(sc)
    if _dual_still_optimal(sc, star, 0.25):
        return 0.25
    lo, hi = 0.0, 0.25
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _dual_still_optimal(sc, star, mid):
            lo = mid
        else:
            hi = mid
    return lo
