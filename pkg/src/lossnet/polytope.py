"""Keeping the accepted state inside a polytope {0 <= x <= rho, Dx <= h}.

The controller splits D into positive and negative parts, tracks rejected
requests in a fictitious system y, and admits when the exponential penalty
over the lifted rows grows more slowly along x than along y.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Scenario
from .lp import LpInfeasible, solve_simplex
from .policy import PolicyDecision, RejectCause, SimState, fits, polytope_admits


class AssumptionViolation(ValueError):
    pass


@dataclass(frozen=True)
class Polytope:
    D: np.ndarray  # (rows, m)
    h: np.ndarray  # (rows,)

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.D, float))
        h = np.asarray(self.h, float).reshape(-1)
        if D.shape[0] != h.size:
            raise ValueError("D must have one row per entry of h")
        if np.any(h < 0):
            raise ValueError("h must be nonnegative")
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "h", h)

    @property
    def rows(self) -> int:
        return self.D.shape[0]

    @property
    def Dplus(self) -> np.ndarray:
        return np.maximum(self.D, 0.0)

    @property
    def Dminus(self) -> np.ndarray:
        return np.maximum(-self.D, 0.0)

    def denominators(self, rho) -> np.ndarray:
        """h_j + d_j^- rho: the lifted right-hand side."""
        return self.h + self.Dminus @ np.asarray(rho, float)

    def scaled(self, n: float) -> "Polytope":
        """Target set for the n-th scaled system, where loads grow by n."""
        return Polytope(self.D, self.h * n)

    def interior_margin(self, rho) -> float:
        """max over 0 <= x <= rho of min_j (h_j - d_j x); positive iff the interior is nonempty."""
        rho = np.asarray(rho, float)
        m = rho.size
        J = self.rows
        # variables (x, t): maximize t s.t. D x + t <= h
        A = np.hstack([self.D, np.ones((J, 1))])
        ub = np.concatenate([rho, [max(1.0, float(self.h.max()) + 1.0)]])
        try:
            res = solve_simplex(np.r_[np.zeros(m), 1.0], A, self.h, ub)
        except LpInfeasible:
            return 0.0
        return res.value

    def to_json(self) -> dict:
        return {"D": self.D.tolist(), "h": self.h.tolist()}


def polytope_from_json(obj: dict) -> Polytope:
    extra = set(obj) - {"D", "h"}
    if extra:
        raise ValueError(f"unknown polytope keys: {sorted(extra)}")
    return Polytope(np.asarray(obj["D"], float), np.asarray(obj["h"], float))


def load_polytope(path: str) -> Polytope:
    with open(path) as fh:
        return polytope_from_json(json.load(fh))


@dataclass(frozen=True)
class Lifted:
    Dplus: np.ndarray
    Dminus: np.ndarray
    rhs: np.ndarray
    rho: np.ndarray

    def contains(self, x, y, tol: float = 1e-9) -> bool:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        box = np.all(x >= -tol) and np.all(y >= -tol) and np.all(x <= self.rho + tol) and np.all(y <= self.rho + tol)
        return bool(box and np.all(self.Dplus @ x + self.Dminus @ y <= self.rhs + tol))


def lift(P: Polytope, rho) -> Lifted:
    rho = np.asarray(rho, float)
    return Lifted(P.Dplus, P.Dminus, P.denominators(rho), rho)


def gamma_star(P: Polytope, rho, on_slice: bool = True) -> tuple[float, np.ndarray, np.ndarray]:
    """Minimax normalized row load of the best lifted point.

    ``on_slice`` restricts the search to ``y = rho - x`` (the points that
    come from the target set itself); otherwise the whole lifted set is
    searched, where the origin always gives zero.
    """
    rho = np.asarray(rho, float)
    m = rho.size
    H = P.denominators(rho)
    if np.any(H <= 0):
        raise ValueError("row with h_j + d_j^- rho = 0: target set has empty interior")
    Dp, Dm = P.Dplus, P.Dminus
    J = P.rows
    if on_slice:
        # vars (x, g): max -g  s.t.  D_j x / H_j - g <= -d-_j rho / H_j,  D x <= h
        A = np.vstack([np.hstack([P.D / H[:, None], -np.ones((J, 1))]), np.hstack([P.D, np.zeros((J, 1))])])
        d = np.concatenate([-(Dm @ rho) / H, P.h])
        ub = np.concatenate([rho, [np.inf]])
        try:
            res = solve_simplex(np.r_[np.zeros(m), -1.0], A, d, ub)
        except LpInfeasible as exc:
            raise ValueError("the slice y = rho - x misses the lifted set") from exc
        x = res.x[:m]
        y = rho - x
    else:
        # vars (x, y, g): max -g  s.t.  (d+_j x + d-_j y)/H_j - g <= 0, D+ x + D- y <= H
        A = np.vstack(
            [np.hstack([Dp / H[:, None], Dm / H[:, None], -np.ones((J, 1))]), np.hstack([Dp, Dm, np.zeros((J, 1))])]
        )
        d = np.concatenate([np.zeros(J), H])
        ub = np.concatenate([rho, rho, [np.inf]])
        res = solve_simplex(np.r_[np.zeros(2 * m), -1.0], A, d, ub)
        x, y = res.x[:m], res.x[m : 2 * m]
    g = float(np.max((Dp @ x + Dm @ y) / H))
    return max(g, 0.0), x, y


def log_penalty(P: Polytope, rho, beta: float, x, y) -> float:
    """log Psi(x, y) with Psi = sum_j exp(beta (d+_j x + d-_j y) / H_j)."""
    H = P.denominators(rho)
    a = beta * (P.Dplus @ np.asarray(x, float) + P.Dminus @ np.asarray(y, float)) / H
    top = a.max()
    return float(top + math.log(np.exp(a - top).sum()))


@dataclass(frozen=True)
class TrackingConfig:
    polytope: Polytope
    rho: np.ndarray
    mu: np.ndarray
    eps: float
    beta: float
    beta_cap: float
    gamma_star: float
    x_star: np.ndarray
    y_star: np.ndarray
    log_psi_star: float
    y0: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def psi_star(self) -> float:
        return math.exp(self.log_psi_star)

    def kernel_arrays(self):
        P = self.polytope
        return P.Dplus.copy(), P.Dminus.copy(), P.denominators(self.rho)


def build_tracking_config(P: Polytope, sc: Scenario, eps: float, beta: float | None = None) -> TrackingConfig:
    if not 0 < eps <= 0.25:
        raise ValueError(f"eps must be in (0, 0.25], got {eps}")
    rho, mu = sc.rho, sc.mu
    if P.D.shape[1] != sc.m:
        raise ValueError("polytope columns must match the number of classes")
    if P.interior_margin(rho) <= 1e-12:
        raise ValueError("target set has empty interior")
    g, xs, ys = gamma_star(P, rho)
    ratio = float(mu.min() / mu.max())
    if ratio < g:
        raise AssumptionViolation(f"rate ratio mu_min/mu_max = {ratio:.6g} is below gamma* = {g:.6g}")
    H = P.denominators(rho)
    cap = eps * float(H.min())
    if beta is None:
        beta = cap
    elif beta > cap * (1 + 1e-12):
        raise ValueError(f"beta={beta:.6g} exceeds admissible bound {cap:.6g}")
    kappa = (1 + 3 * eps) * mu.max() / mu.min()
    lps = log_penalty(P, rho, beta, kappa * xs, kappa * ys)
    y0, adjusted = initial_load_lp(P, sc, lps, beta)
    if log_penalty(P, rho, beta, np.zeros(sc.m), y0) > lps + 1e-12:
        raise ValueError("initial fictitious load breaks the penalty budget")
    meta = {"initial_load_constraint": "d-_j y <= H_j log(Psi*/s)/beta", "rounding_adjustments": adjusted}
    return TrackingConfig(P, rho, mu, eps, float(beta), cap, g, xs, ys, lps, y0, meta)


def initial_load_lp(P: Polytope, sc: Scenario, log_psi_star: float, beta: float) -> tuple[np.ndarray, int]:
    """Initial fictitious load minimizing the worst row tracking error at t = 0.

    minimize max_j d_j M (rho - y) over 0 <= y <= rho with
    d-_j y <= H_j log(Psi*/s) / beta, which keeps every term of
    Psi(0, y) below Psi*/s.  The LP point is rounded to integers and then
    lowered one unit at a time until Psi(0, y) <= Psi* holds exactly.
    Returns the integer load and the number of unit reductions.
    """
    rho, mu = sc.rho, sc.mu
    m = rho.size
    J = P.rows
    H = P.denominators(rho)
    budget = max(log_psi_star - math.log(J), 0.0) / beta
    DM = P.D * mu[None, :]
    # vars (y, tp, tn), tau = tp - tn: max -tp + tn
    A = np.vstack(
        [
            np.hstack([-DM, -np.ones((J, 1)), np.ones((J, 1))]),
            np.hstack([P.Dminus, np.zeros((J, 2))]),
        ]
    )
    d = np.concatenate([-(DM @ rho), H * budget])
    big = float(np.abs(DM).sum() * rho.max() + 1.0)
    ub = np.concatenate([rho, [big, big]])
    try:
        res = solve_simplex(np.r_[np.zeros(m), -1.0, 1.0], A, d, ub)
    except LpInfeasible as exc:
        raise ValueError("no initial load satisfies the penalty budget") from exc
    y = np.clip(np.rint(res.x[:m]), 0, np.floor(rho)).astype(np.int64)
    adjusted = 0
    zero = np.zeros(m)
    while log_penalty(P, rho, beta, zero, y) > log_psi_star + 1e-12:
        a = beta * (P.Dminus @ y) / H
        grad = P.Dminus.T @ (np.exp(a - a.max()) / H)
        cand = np.where(y > 0, grad, -np.inf)
        i = int(np.argmax(cand))
        if not np.isfinite(cand[i]):
            raise ValueError("cannot repair the rounded initial load")
        y[i] -= 1
        adjusted += 1
    return y, adjusted


def tracking_error(P: Polytope, sc: Scenario, y) -> float:
    return float(np.max((P.D * sc.mu[None, :]) @ (sc.rho - np.asarray(y, float))))


def inflated_membership(P: Polytope, sc: Scenario, eps: float, beta: float, y0, xbar, t, form: str = "mean") -> np.ndarray:
    """Per-row slack of ``xbar`` against the eps-inflated target set at time t.

    ``form="mean"`` uses zeta = log(rows)/beta + 3 eps (ensemble-mean
    bound); ``form="limit"`` uses 4 eps (large-scale limit).  Negative
    slack means inside.
    """
    rho, mu = sc.rho, sc.mu
    H = P.denominators(rho)
    if form == "mean":
        zeta = math.log(P.rows) / beta + 3 * eps
    elif form == "limit":
        zeta = 4 * eps
    else:
        raise ValueError("form must be 'mean' or 'limit'")
    decay = np.exp(-mu * float(t)) * (rho - np.asarray(y0, float))
    rhs = P.h + zeta * H + P.Dminus @ decay
    return P.D @ np.asarray(xbar, float) - rhs


def polytope_penalty_decide(cfg: TrackingConfig, sc: Scenario, state: SimState, i: int) -> PolicyDecision:
    if not 0 <= i < sc.m:
        raise IndexError(f"unknown class index {i}")
    Dp, Dm, H = cfg.kernel_arrays()
    xc = state.x[:, 0].astype(np.float64)
    yc = state.y.astype(np.float64)
    if not polytope_admits(xc, yc, i, Dp, Dm, H, cfg.beta):
        return PolicyDecision(cause=RejectCause.PENALTY)
    alloc, _ = sc.alloc_array()
    if fits(state.x, alloc, sc.cap, i, 0):
        return PolicyDecision(allocation=0)
    return PolicyDecision(cause=RejectCause.CAPACITY)
