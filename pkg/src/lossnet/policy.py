"""Admission policies: exponential-penalty (single resource and network),
thinning and greedy.

The per-arrival rules live in small ``@njit`` helpers so the simulator
kernel and the Python-level ``*_decide`` functions evaluate the exact same
floating-point expressions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from numba import njit

from .core import Scenario
from .lp import LpSolution, solve_lp, solve_network_lp

# relative slack on the capacity test; b_ij are decimal fractions so running
# sums are not exact in binary floating point
CAP_TOL = 1e-9

# decision codes shared with the kernel: j >= 0 accepts on allocation j
REJECT_PENALTY = -1
REJECT_CAPACITY = -2
REJECT_THINNED = -3


class RejectCause(IntEnum):
    PENALTY = 1
    CAPACITY = 2
    THINNED = 3


@dataclass(frozen=True)
class PolicyDecision:
    allocation: int | None = None  # 0-based allocation index when accepted
    cause: RejectCause | None = None

    @property
    def accepted(self) -> bool:
        return self.allocation is not None

    @classmethod
    def from_code(cls, code: int) -> "PolicyDecision":
        if code >= 0:
            return cls(allocation=int(code))
        return cls(cause=RejectCause(-int(code)))


# --------------------------------------------------------------------------
# state
# --------------------------------------------------------------------------


@dataclass
class SimState:
    """Mutable engine state: accepted counts per (class, allocation), fictitious counts, counters."""

    x: np.ndarray  # (m, L) int64
    y: np.ndarray  # (m,) int64
    xi: np.ndarray  # penalty-rule rejections
    eta: np.ndarray  # capacity rejections
    thinned: np.ndarray
    clock: float = 0.0

    @classmethod
    def empty(cls, sc: Scenario, y0=None) -> "SimState":
        m, L = sc.m, sc.max_alloc
        y = np.zeros(m, np.int64) if y0 is None else np.asarray(y0, np.int64).copy()
        z = lambda: np.zeros(m, np.int64)  # noqa: E731
        return cls(np.zeros((m, L), np.int64), y, z(), z(), z())

    def occupied(self, sc: Scenario) -> np.ndarray:
        alloc, _ = sc.alloc_array()
        return np.einsum("ij,ijk->k", self.x.astype(float), alloc)

    def class_counts(self) -> np.ndarray:
        return self.x.sum(axis=1)


# --------------------------------------------------------------------------
# jitted primitives
# --------------------------------------------------------------------------


@njit(cache=True)
def fits(x, alloc, cap, i, j):
    m, L, s = alloc.shape
    for k in range(s):
        if alloc[i, j, k] == 0.0 or cap[k] == np.inf:
            continue
        load = 0.0
        for a in range(m):
            for b in range(L):
                if x[a, b] != 0:
                    load += x[a, b] * alloc[a, b, k]
        if load + alloc[i, j, k] > cap[k] + CAP_TOL * max(1.0, cap[k]):
            return False
    return True


@njit(cache=True)
def first_fit(x, alloc, nalloc, cap, i):
    for j in range(nalloc[i]):
        if fits(x, alloc, cap, i, j):
            return j
    return -1


@njit(cache=True)
def penalty_admits(x_i, y_i, c0_i, c1_i, beta, b_i):
    """Single-resource rule in log form; c1 = 0 means rejection is never preferred."""
    if c0_i <= 0.0:
        return False
    if c1_i <= 0.0:
        return True
    return x_i / c0_i <= y_i / c1_i + math.log(c0_i / c1_i) / (beta * b_i)


@njit(cache=True)
def network_choice(x, y_i, i, alloc, nalloc, keep, C0, c1_i, beta):
    """Argmin allocation of the marginal accepted-state penalty, or -1 if rejection is cheaper.

    Each candidate's marginal penalty sum_k (b_ij(k)/C0_ik) exp(beta w_ik / C0_ik)
    is compared in the log domain (logsumexp over k); the common beta factor
    cancels against the rejection side.
    """
    m, L, s = alloc.shape
    best = np.inf
    best_j = -1
    for j in range(nalloc[i]):
        if not keep[i, j]:
            continue
        top = -np.inf
        ok = True
        for k in range(s):
            bk = alloc[i, j, k]
            if bk <= 0.0:
                continue
            if C0[i, k] <= 0.0:
                ok = False
                break
            w = 0.0
            for jj in range(nalloc[i]):
                w += x[i, jj] * alloc[i, jj, k]
            e = math.log(bk / C0[i, k]) + beta * w / C0[i, k]
            if e > top:
                top = e
        if not ok:
            continue
        acc = 0.0
        for k in range(s):
            bk = alloc[i, j, k]
            if bk <= 0.0:
                continue
            w = 0.0
            for jj in range(nalloc[i]):
                w += x[i, jj] * alloc[i, jj, k]
            acc += math.exp(math.log(bk / C0[i, k]) + beta * w / C0[i, k] - top)
        val = top + math.log(acc)
        if val < best:
            best = val
            best_j = j
    if best_j < 0:
        return -1
    if c1_i <= 0.0:
        return best_j
    if best <= -math.log(c1_i) + beta * y_i / c1_i:
        return best_j
    return -1


@njit(cache=True)
def polytope_admits(xc, yc, i, Dp, Dm, H, beta):
    """d Psi/dx_i <= d Psi/dy_i for Psi = sum_j exp(beta (d+_j x + d-_j y)/H_j)."""
    J = Dp.shape[0]
    top = -np.inf
    expo = np.empty(J)
    for r in range(J):
        a = 0.0
        for c in range(Dp.shape[1]):
            a += Dp[r, c] * xc[c] + Dm[r, c] * yc[c]
        expo[r] = beta * a / H[r]
        if expo[r] > top:
            top = expo[r]
    gx = 0.0
    gy = 0.0
    for r in range(J):
        w = math.exp(expo[r] - top) / H[r]
        gx += Dp[r, i] * w
        gy += Dm[r, i] * w
    return gx <= gy


KIND_GREEDY = 0
KIND_THINNING = 1
KIND_PENALTY = 2
KIND_NETWORK = 3
KIND_POLYTOPE = 4


@njit(cache=True)
def decide(kind, i, u, x, y, alloc, nalloc, cap, alpha, c0, c1, bsize, keep, beta, Dp, Dm, H):
    """Return a decision code for a class-i arrival seeing state (x, y)."""
    if kind == KIND_GREEDY:
        j = first_fit(x, alloc, nalloc, cap, i)
        return j if j >= 0 else REJECT_CAPACITY
    if kind == KIND_THINNING:
        if not u < alpha[i]:
            return REJECT_THINNED
        j = first_fit(x, alloc, nalloc, cap, i)
        return j if j >= 0 else REJECT_CAPACITY
    if kind == KIND_PENALTY:
        if not penalty_admits(float(x[i, 0]), float(y[i]), c0[i, 0], c1[i], beta, bsize[i]):
            return REJECT_PENALTY
        return 0 if fits(x, alloc, cap, i, 0) else REJECT_CAPACITY
    if kind == KIND_NETWORK:
        j = network_choice(x, float(y[i]), i, alloc, nalloc, keep, c0, c1[i], beta)
        if j < 0:
            return REJECT_PENALTY
        return j if fits(x, alloc, cap, i, j) else REJECT_CAPACITY
    # polytope: one allocation per class, state is per-class counts
    xc = x[:, 0].astype(np.float64)
    yc = y.astype(np.float64)
    if not polytope_admits(xc, yc, i, Dp, Dm, H, beta):
        return REJECT_PENALTY
    return 0 if fits(x, alloc, cap, i, 0) else REJECT_CAPACITY


# --------------------------------------------------------------------------
# penalty configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PenaltyConfig:
    eps: float
    beta: float
    c0: np.ndarray  # (m,) single resource, (m, s) network
    c1: np.ndarray  # (m,)
    y0: np.ndarray  # (m,) int64
    alpha_eps: LpSolution
    active: np.ndarray  # (m,) bool; inactive classes are always rejected
    beta_cap: float
    network: bool = False
    nu: np.ndarray | None = None
    keep: tuple[np.ndarray, ...] | None = None  # retained allocations per class
    meta: dict = field(default_factory=dict)


def _check_eps(eps):
    if not 0 < eps <= 0.25:
        raise ValueError(f"eps must be in (0, 0.25], got {eps}")


def _active(sc: Scenario, active):
    if active is None:
        return solve_lp(sc).alpha > 1e-12
    return np.asarray(active, bool)


def beta_max(sc: Scenario, eps: float, lp_eps: LpSolution, active=None) -> float:
    """Largest admissible beta for the penalty policy built on ``lp_eps``.

    ``active`` masks the classes kept in the policy (default: positive
    steady-state acceptance).  An active class squeezed to zero acceptance
    by the perturbation is an error.
    """
    _check_eps(eps)
    act = _active(sc, active)
    ae = lp_eps.alpha
    if np.any(ae[act] <= 1e-12):
        bad = int(np.nonzero(act & (ae <= 1e-12))[0][0])
        raise ValueError(f"class {bad} has zero perturbed acceptance; drop it first")
    rho = sc.rho
    if sc.single_resource:
        terms = list(ae[act] * rho[act])
        part = act & (ae < 1 - 1e-12)
        terms += list((1 - ae[part]) * rho[part])
        return float(eps * (1 + 4 * eps) * min(terms))
    C0, c1, _ = _network_capacities(sc, eps, lp_eps, act)
    alloc, nalloc = sc.alloc_array()
    terms = []
    for i in np.nonzero(act)[0]:
        for j in range(nalloc[i]):
            if lp_eps.alpha_ij[i][j] <= 1e-12:
                continue
            for k in range(sc.s):
                if alloc[i, j, k] > 0:
                    terms.append(C0[i, k] / alloc[i, j, k])
        if ae[i] < 1 - 1e-12:
            terms.append(c1[i])
    return float(eps * min(terms))


def _network_capacities(sc, eps, lp_eps, act):
    alloc, nalloc = sc.alloc_array()
    rho = sc.rho
    load = np.zeros((sc.m, sc.s))  # sum_j alpha_ij b_ij(k)
    for i in range(sc.m):
        if act[i]:
            for j in range(nalloc[i]):
                load[i] += lp_eps.alpha_ij[i][j] * alloc[i, j]
    tot = (load * rho[:, None]).sum(axis=0)
    nu = np.where(tot > 0, (sc.cap / (1 + 4 * eps)) / np.where(tot > 0, tot, 1.0), 1.0)
    C0 = (1 + 4 * eps) * nu[None, :] * load * rho[:, None]
    ae = np.where(act, lp_eps.alpha, 0.0)
    c1 = np.where(act, (1 + 4 * eps) * (1 - ae) * rho, 0.0)
    return C0, np.maximum(c1, 0.0), nu


def _y0(alpha_eps, rho, act):
    return np.where(act, np.rint((1 - np.clip(alpha_eps, 0, 1)) * rho), 0).astype(np.int64)


def _resolve_beta(beta, cap, check):
    if isinstance(beta, str):
        if beta != "max":
            raise ValueError(f"beta must be a number or 'max', got {beta!r}")
        return cap
    beta = float(beta)
    if not beta > 0:
        raise ValueError("beta must be positive")
    if check and beta > cap * (1 + 1e-12):
        raise ValueError(f"beta={beta:.6g} exceeds admissible bound {cap:.6g}")
    return beta


def _check_initial_penalty(cfg_b, c1, y0, beta, eps, act):
    """Psi_i(0, y0) <= 2 exp((1 - eps/2) beta) after rounding, in log form."""
    lim = math.log(2.0) + (1 - eps / 2) * beta
    for i in np.nonzero(act)[0]:
        if c1[i] <= 0:
            continue
        a = beta * cfg_b[i] * y0[i] / c1[i]
        if np.logaddexp(0.0, a) > lim + 1e-12:
            raise ValueError(f"class {i}: rounded initial load {y0[i]} breaks the initial penalty budget")


def build_penalty_config(sc: Scenario, eps: float, beta="max", active=None) -> PenaltyConfig:
    if not sc.single_resource:
        raise ValueError("multi-resource scenario: use build_network_penalty_config")
    _check_eps(eps)
    act = _active(sc, active)
    lp_eps = solve_lp(sc, shrink=1 + 4 * eps)
    cap = beta_max(sc, eps, lp_eps, act)
    return _single_config(sc, eps, _resolve_beta(beta, cap, True), lp_eps, act, cap)


def penalty_config_from_alpha(sc: Scenario, alpha, eps: float, beta: float, check_beta: bool = True) -> PenaltyConfig:
    """Penalty policy tracking an explicit acceptance vector (load balancing).

    ``alpha`` plays the role of the perturbed LP solution.  The admissible
    beta bound is enforced unless ``check_beta`` is off.
    """
    if not sc.single_resource:
        raise ValueError("explicit targets need a single-resource scenario")
    _check_eps(eps)
    alpha = np.asarray(alpha, float)
    if alpha.shape != (sc.m,) or np.any(alpha < 0) or np.any(alpha > 1):
        raise ValueError("alpha must be a per-class vector in [0, 1]")
    act = alpha > 0
    lp = LpSolution(
        alpha_ij=tuple(np.array([a]) for a in alpha),
        value=float(np.sum(sc.reward * sc.rho * alpha)),
        dual_u=np.zeros(1),
        dual_v=np.zeros(sc.m),
        caps=np.ones(sc.m),
        rhs=sc.cap,
    )
    cap = beta_max(sc, eps, lp, act)
    return _single_config(sc, eps, _resolve_beta(beta, cap, check_beta), lp, act, cap, check=check_beta)


LOAD_BALANCING_EPS = 0.01


def load_balancing_penalty(sc: Scenario, fractions, eps: float = LOAD_BALANCING_EPS) -> PenaltyConfig:
    """Penalty policy steering class loads to ``fractions * b``.

    The admissible-beta bound shrinks with the smallest rejected load, which
    for lopsided targets leaves a beta so small that the log offset in the
    admission rule swamps the target ratio.  The large-scale choice
    ``(2/eps) log(2/eps) + 4`` is used instead, with the bound check off.
    """
    from .bounds import halfin_whitt_beta
    from .core import load_balancing_alphas

    alpha = load_balancing_alphas(sc, fractions)
    return penalty_config_from_alpha(sc, alpha, eps, halfin_whitt_beta(eps), check_beta=False)


def _single_config(sc, eps, beta, lp_eps, act, cap, check=True):
    b = sc.sizes()
    rho = sc.rho
    ae = np.where(act, lp_eps.alpha, 0.0)
    c0 = (1 + 4 * eps) * ae * b * rho
    c1 = np.where(act, (1 + 4 * eps) * (1 - ae) * b * rho, 0.0)
    c1 = np.where(c1 < 1e-12 * np.maximum(c0, 1e-300), 0.0, c1)
    y0 = _y0(ae, rho, act)
    if check:
        _check_initial_penalty(b, c1, y0, beta, eps, act)
    return PenaltyConfig(eps, beta, c0, c1, y0, lp_eps, act, cap)


def build_network_penalty_config(sc: Scenario, eps: float, beta="max") -> PenaltyConfig:
    """Network penalty capacities over the allocations used by the steady LP."""
    _check_eps(eps)
    star = solve_network_lp(sc)
    keep = [a > 1e-12 for a in star.alpha_ij]
    act = np.array([k.any() for k in keep])
    lp_eps = solve_network_lp(sc, shrink=1 + 4 * eps, keep=keep)
    cap = beta_max(sc, eps, lp_eps, act)
    beta = _resolve_beta(beta, cap, True)
    C0, c1, nu = _network_capacities(sc, eps, lp_eps, act)
    c1 = np.where(c1 < 1e-12 * np.maximum(C0.max(axis=1), 1e-300), 0.0, c1)
    y0 = _y0(np.where(act, lp_eps.alpha, 0.0), sc.rho, act)
    _check_initial_penalty(np.ones(sc.m), c1, y0, beta, eps, act)
    return PenaltyConfig(
        eps, beta, C0, c1, y0, lp_eps, act, cap, network=True, nu=nu, keep=tuple(np.asarray(k) for k in keep)
    )


# --------------------------------------------------------------------------
# Python-level decisions
# --------------------------------------------------------------------------


def _check_class(sc_m, i):
    if not (isinstance(i, (int, np.integer)) and 0 <= i < sc_m):
        raise IndexError(f"unknown class index {i}")


def penalty_decide(cfg: PenaltyConfig, sc: Scenario, state: SimState, i: int) -> PolicyDecision:
    _check_class(sc.m, i)
    if cfg.network:
        raise ValueError("network config: use network_penalty_decide")
    alloc, _ = sc.alloc_array()
    b = sc.sizes()
    if not penalty_admits(float(state.x[i, 0]), float(state.y[i]), cfg.c0[i], cfg.c1[i], cfg.beta, b[i]):
        return PolicyDecision(cause=RejectCause.PENALTY)
    if fits(state.x, alloc, sc.cap, i, 0):
        return PolicyDecision(allocation=0)
    return PolicyDecision(cause=RejectCause.CAPACITY)


def network_penalty_decide(cfg: PenaltyConfig, sc: Scenario, state: SimState, i: int) -> PolicyDecision:
    _check_class(sc.m, i)
    if not cfg.network:
        raise ValueError("single-resource config: use penalty_decide")
    alloc, nalloc = sc.alloc_array()
    keep = keep_matrix(cfg, sc)
    j = network_choice(state.x, float(state.y[i]), i, alloc, nalloc, keep, cfg.c0, cfg.c1[i], cfg.beta)
    if j < 0:
        return PolicyDecision(cause=RejectCause.PENALTY)
    if fits(state.x, alloc, sc.cap, i, j):
        return PolicyDecision(allocation=int(j))
    return PolicyDecision(cause=RejectCause.CAPACITY)


def thinning_decide(alpha, sc: Scenario, state: SimState, i: int, draw: float) -> PolicyDecision:
    _check_class(sc.m, i)
    if not 0 <= draw < 1:
        raise ValueError("draw must lie in [0, 1)")
    if not draw < alpha[i]:
        return PolicyDecision(cause=RejectCause.THINNED)
    return greedy_decide(sc, state, i)


def greedy_decide(sc: Scenario, state: SimState, i: int) -> PolicyDecision:
    _check_class(sc.m, i)
    alloc, nalloc = sc.alloc_array()
    j = first_fit(state.x, alloc, nalloc, sc.cap, i)
    if j < 0:
        return PolicyDecision(cause=RejectCause.CAPACITY)
    return PolicyDecision(allocation=int(j))


def keep_matrix(cfg: PenaltyConfig, sc: Scenario) -> np.ndarray:
    L = sc.max_alloc
    out = np.zeros((sc.m, L), np.bool_)
    for i in range(sc.m):
        n = len(sc.classes[i].allocations)
        if cfg.keep is None:
            out[i, :n] = True
        else:
            out[i, :n] = cfg.keep[i]
    return out


# --------------------------------------------------------------------------
# policy handles for the simulator
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Policy:
    """What the simulator runs: a kind plus its parameters."""

    kind: str
    alpha: np.ndarray | None = None
    penalty: PenaltyConfig | None = None
    tracking: object | None = None  # polytope.TrackingConfig
    label: str = ""

    @classmethod
    def greedy(cls) -> "Policy":
        return cls("greedy", label="greedy")

    @classmethod
    def thinning(cls, alpha) -> "Policy":
        return cls("thinning", alpha=np.asarray(alpha, float), label="thinning")

    @classmethod
    def from_penalty(cls, cfg: PenaltyConfig) -> "Policy":
        return cls("network" if cfg.network else "penalty", penalty=cfg, label="penalty")

    @classmethod
    def from_tracking(cls, tcfg) -> "Policy":
        return cls("polytope", tracking=tcfg, label="polytope")

    def initial_load(self, m: int) -> np.ndarray:
        if self.penalty is not None:
            return self.penalty.y0
        if self.tracking is not None:
            return np.asarray(self.tracking.y0, np.int64)
        return np.zeros(m, np.int64)

    def describe(self) -> dict:
        out = {"policy": self.kind}
        if self.penalty is not None:
            out.update(eps=self.penalty.eps, beta=self.penalty.beta)
        if self.tracking is not None:
            out.update(eps=self.tracking.eps, beta=self.tracking.beta)
        return out
